//! Read the interpolation coefficients out of trained models: each block
//! carries one number saying how far it sits from the residual end (0 pure
//! shortcut, 1 no shortcut at all). The report is recounted here directly
//! from a reloaded parameter file, so the statistics can always be audited
//! independently of the code that produced them.
//!
//! ```text
//! cargo run --example coefficient_stats
//! ```

use donet::blocks::coeff::{coefficient_of, coefficient_report, ACTIVE_THRESHOLD};
use donet::blocks::{serialize, BlockKind, InputShape, Model, ModelConfig};
use donet::harness::data::DatasetSpec;
use donet::harness::{sgd_train, TrainConfig};
use donet::util::named_seed;
use donet::Tensor;

fn main() -> donet::Result<()> {
    let mut cfg = TrainConfig {
        kind: BlockKind::In,
        depth: 6,
        width: 12,
        lambda_init: (0.2, 0.25),
        dataset: "moons:300:0.08".to_string(),
        seed: 13,
        epochs: 12,
        batch_size: 32,
        lr0: 0.1,
        lr_drops: vec![(8, 10.0)],
        momentum: 0.9,
        weight_decay: 1e-4,
        test_fraction: 0.25,
    };
    let data = DatasetSpec::parse(&cfg.dataset)?.load(named_seed(cfg.seed, "dataset"))?;

    // -- Learned ReLU coefficients vs learned sigmoid coefficients -----------
    for kind in [BlockKind::In, BlockKind::InSig] {
        cfg.kind = kind;
        let mut out = sgd_train(&cfg, &data)?;
        let rep = coefficient_report(&mut out.model, None)?;
        let list: Vec<String> = rep.coefficients.iter().map(|c| format!("{c:.3}")).collect();
        println!("{kind:?} after training:");
        println!("  per block      [{}]", list.join(", "));
        println!(
            "  active (> {ACTIVE_THRESHOLD}): {:.0}% of blocks; histogram [0,1] | (1,2] | (2,inf) = {:?}",
            100.0 * rep.fraction_active,
            rep.bins
        );

        // -- Independent recount from the serialized file --------------------
        // Reload the weights and recompute every coefficient from the raw
        // per-block parameter with the same activation; the report must match
        // bit for bit.
        let path = std::env::temp_dir().join(format!("coeff_stats_{kind:?}.donet"));
        serialize::save(&out.model, &path)?;
        let reloaded = serialize::load(&path)?;
        let recount: Vec<f64> = reloaded
            .blocks
            .iter()
            .map(|b| coefficient_of(kind, b.lambda_raw.as_ref().unwrap().value.item()))
            .collect();
        println!("  recount from reloaded file matches: {}\n", recount == rep.coefficients);
        std::fs::remove_file(&path)?;
    }

    // -- Gated kinds need a probe ----------------------------------------------
    // Their coefficient is a function of the input, so the report takes the
    // batch mean over a probe; without one it refuses rather than guess.
    let gated = ModelConfig {
        kind: BlockKind::InGatingSig,
        input: InputShape::Dense { features: 2 },
        width: 12,
        depth: 6,
        classes: 2,
        lambda_init: (0.2, 0.25),
    };
    let mut m = Model::build(&gated, 13)?;
    println!("InGatingSig without a probe: {:?}", coefficient_report(&mut m, None).err().unwrap());
    let (x, _) = data.full_batch();
    let probe = Tensor::new(vec![8, 2], x.data()[..16].to_vec())?;
    let rep = coefficient_report(&mut m, Some(&probe))?;
    let list: Vec<String> = rep.coefficients.iter().map(|c| format!("{c:.3}")).collect();
    println!("with an 8-sample probe: [{}] (batch means)", list.join(", "));

    // -- The fixed ends of the family -------------------------------------------
    for kind in [BlockKind::Residual, BlockKind::NonResidual] {
        let mut m = Model::build(&ModelConfig { kind, ..gated.clone() }, 13)?;
        let rep = coefficient_report(&mut m, None)?;
        println!("{kind:?}: every block at {}", rep.coefficients[0]);
    }
    Ok(())
}
