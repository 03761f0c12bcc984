use donet::blocks::BlockKind;
use donet::harness::sweep::{init_sweep, summarize_cell};
use donet::harness::TrainConfig;
use donet::perturb::{NoiseConfig, NoiseKind};

fn main() -> donet::Result<()> {
    let base = TrainConfig {
        kind: BlockKind::In,
        depth: 8, width: 8, lambda_init: (0.0, 0.1),
        dataset: "idx:crates/donet/data/digits-images.idx3:crates/donet/data/digits-labels.idx1".into(),
        seed: 7, epochs: 8, batch_size: 32, lr0: 0.05,
        lr_drops: vec![(6, 10.0)], momentum: 0.9, weight_decay: 1e-4,
        test_fraction: 0.25,
    };
    let intervals = [(0.0, 0.1), (0.1, 0.2), (0.2, 0.25)];
    let seeds = [7u64, 8, 9, 10, 11];
    let noise: Vec<NoiseConfig> = [0.08, 0.16, 0.24].iter().map(|&s| {
        let mut g = NoiseConfig::new(NoiseKind::Gaussian, 5);
        g.severity = Some(s);
        g
    }).collect();
    for (d, ep, drop) in [(12usize, 8usize, 6usize), (16, 10, 8)] {
        let mut cfg = base.clone();
        cfg.depth = d;
        cfg.epochs = ep;
        cfg.lr_drops = vec![(drop, 10.0)];
        let cells = init_sweep(&cfg, &intervals, &seeds, &noise, &[])?;
        println!("== depth {d} epochs {ep}");
        println!("{:<12} {:>7} {:>7} {:>7} {:>7}", "interval", "clean", "n0.08", "n0.16", "n0.24");
        for cell in &cells {
            let rows = summarize_cell(cell);
            let f = |n: &str| rows.iter().find(|r| r.metric == n).map(|r| r.mean).unwrap_or(f64::NAN);
            println!("{:<12} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
                format!("[{},{}]", cell.interval.0, cell.interval.1),
                f("clean"), f("noise:gaussian@0.08"), f("noise:gaussian@0.16"), f("noise:gaussian@0.24"));
        }
    }
    Ok(())
}
