//! Train several models that differ only in their seed, fuse them into an
//! ensemble that averages softmax probabilities, and compare it with its
//! members on one shared held-out split — clean, under noise, and under an
//! attack that differentiates through the whole ensemble at once.
//!
//! ```text
//! cargo run --example ensemble_runs
//! ```

use donet::blocks::BlockKind;
use donet::harness::data::DatasetSpec;
use donet::harness::ensemble::{ensemble_evaluate, improvement_over_singles, Ensemble};
use donet::harness::{evaluate, sgd_train, TrainConfig};
use donet::perturb::{AttackConfig, AttackKind, NoiseConfig, NoiseKind};
use donet::util::named_seed;

fn main() -> donet::Result<()> {
    let base = TrainConfig {
        kind: BlockKind::In,
        depth: 4,
        width: 16,
        lambda_init: (0.2, 0.25),
        dataset: "moons:400:0.08".to_string(),
        seed: 7,
        epochs: 14,
        batch_size: 32,
        lr0: 0.1,
        lr_drops: vec![(10, 10.0)],
        momentum: 0.9,
        weight_decay: 1e-4,
        test_fraction: 0.25,
    };
    // One dataset for everybody; members differ only in seed (init order,
    // batch shuffling, and their internal train/test split).
    let data = DatasetSpec::parse(&base.dataset)?.load(named_seed(base.seed, "dataset"))?;
    let (_, shared_test) = data.split(base.test_fraction, base.seed)?;

    let mut members = Vec::new();
    for seed in [7, 8, 9] {
        let mut cfg = base.clone();
        cfg.seed = seed;
        members.push(sgd_train(&cfg, &data)?.model);
        println!("member seed {seed} trained");
    }

    let noise = [NoiseConfig::new(NoiseKind::Gaussian, 5)];
    let attacks = [AttackConfig::new(AttackKind::Fgsm, 8.0 / 255.0)];

    // Score every member on the same split the ensemble is scored on.
    let mut single_metrics = Vec::new();
    for (i, m) in members.iter().enumerate() {
        let scored = evaluate(m, &shared_test, &noise, &attacks)?;
        println!(
            "  member {i}: clean {:.2}%, noisy {:.2}%, attacked {:.2}%",
            scored.metrics.clean_acc,
            scored.metrics.noise_acc.values().next().unwrap(),
            scored.metrics.attack_acc.values().next().unwrap()
        );
        single_metrics.push(scored.metrics);
    }

    let ens = Ensemble::new(members)?;
    let scored = ensemble_evaluate(&ens, &shared_test, &noise, &attacks)?;
    println!(
        "  ensemble: clean {:.2}%, noisy {:.2}%, attacked {:.2}%",
        scored.metrics.clean_acc,
        scored.metrics.noise_acc.values().next().unwrap(),
        scored.metrics.attack_acc.values().next().unwrap()
    );

    println!("\n{:<22} {:>9} {:>12} {:>12}", "metric", "ensemble", "single mean", "improvement");
    for row in improvement_over_singles(&scored.metrics, &single_metrics) {
        println!(
            "{:<22} {:>8.2}% {:>11.2}% {:>+11.2}",
            row.metric, row.ensemble, row.single_mean, row.improvement
        );
    }
    println!(
        "\n(the attack row pits the ensemble against a gradient taken through\n all {} members jointly, not against transferred single-model noise)",
        ens.len()
    );
    Ok(())
}
