//! Attack a trained classifier with the three gradient attacks — one-step
//! FGSM, its iterated form, and projected gradient descent from a random
//! start — and check the structural facts that make them trustworthy:
//! every adversarial point stays inside the epsilon-ball and the unit box,
//! and the one-iteration special cases collapse into each other exactly.
//!
//! ```text
//! cargo run --example adversarial_attacks
//! ```

use donet::blocks::BlockKind;
use donet::harness::data::DatasetSpec;
use donet::harness::{evaluate, sgd_train, TrainConfig};
use donet::perturb::{fgsm, ifgsm_from, pgd, AttackConfig, AttackKind};
use donet::util::named_seed;

fn main() -> donet::Result<()> {
    let cfg = TrainConfig {
        kind: BlockKind::In,
        depth: 4,
        width: 16,
        lambda_init: (0.2, 0.25),
        dataset: "moons:400:0.08".to_string(),
        seed: 3,
        epochs: 14,
        batch_size: 32,
        lr0: 0.1,
        lr_drops: vec![(10, 10.0)],
        momentum: 0.9,
        weight_decay: 1e-4,
        test_fraction: 0.25,
    };
    let data = DatasetSpec::parse(&cfg.dataset)?.load(named_seed(cfg.seed, "dataset"))?;
    let out = sgd_train(&cfg, &data)?;
    println!(
        "trained to {:.1}% train accuracy; attacking the {}-sample held-out split\n",
        out.record.epoch_train_acc.last().unwrap(),
        out.test.len()
    );

    // -- Accuracy vs attack strength ----------------------------------------
    println!("{:>8} {:>8} {:>8} {:>8}", "epsilon", "fgsm", "ifgsm", "pgd");
    for eps_255 in [2.0, 4.0, 8.0, 16.0] {
        let eps = eps_255 / 255.0;
        let attacks = [
            AttackConfig::new(AttackKind::Fgsm, eps),
            AttackConfig::new(AttackKind::Ifgsm, eps),
            AttackConfig::new(AttackKind::Pgd, eps),
        ];
        let scored = evaluate(&out.model, &out.test, &[], &attacks)?;
        let acc = |k: AttackKind| {
            let key = AttackConfig::new(k, eps).label();
            scored.metrics.attack_acc[&key]
        };
        println!(
            "  {eps_255:>2}/255 {:>7.2}% {:>7.2}% {:>7.2}%",
            acc(AttackKind::Fgsm),
            acc(AttackKind::Ifgsm),
            acc(AttackKind::Pgd)
        );
    }

    // -- Constraint sets -------------------------------------------------------
    let (x, y) = out.test.full_batch();
    let mut model = out.model.clone();
    let eps = 8.0 / 255.0;
    let adv = pgd(&mut model, &x, &y, eps, eps / 4.0, 10, 42)?;
    let mut max_dev = 0.0f64;
    let mut in_box = true;
    for (a, b) in adv.data().iter().zip(x.data()) {
        max_dev = max_dev.max((a - b).abs());
        in_box &= (0.0..=1.0).contains(a);
    }
    println!("\npgd at eps = 8/255: largest |x' - x| = {max_dev:.6} (bound {eps:.6}), inside [0,1]: {in_box}");

    // -- Degenerate cases coincide bit for bit ----------------------------------
    // One iteration with step size eps is FGSM; PGD differs from iterated
    // FGSM only by its random start, so launching it from the clean point
    // reproduces it exactly.
    let one_step = ifgsm_from(&mut model, &x, x.data().to_vec(), &y, eps, eps, 1)?.0;
    let fg = fgsm(&mut model, &x, &y, eps)?;
    println!("ifgsm(1 iter, alpha=eps) == fgsm: {}", one_step.data() == fg.data());
    let from_clean = ifgsm_from(&mut model, &x, x.data().to_vec(), &y, eps, eps / 4.0, 10)?.0;
    let iterated = donet::perturb::ifgsm(&mut model, &x, &y, eps, eps / 4.0, 10)?;
    println!("ifgsm_from(clean start) == ifgsm: {}", from_clean.data() == iterated.data());
    Ok(())
}
