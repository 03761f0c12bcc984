//! Map the loss surface around one test input: the first axis is the
//! signed attack gradient (the direction FGSM pushes along), the second a
//! seeded random direction orthogonalized against it. The scan renders as
//! an ASCII heat map with the decision written underneath.
//!
//! ```text
//! cargo run --example loss_landscape
//! ```

use donet::blocks::BlockKind;
use donet::harness::data::DatasetSpec;
use donet::harness::landscape::landscape_scan;
use donet::harness::{sgd_train, TrainConfig};
use donet::util::named_seed;
use donet::Tensor;

fn main() -> donet::Result<()> {
    let cfg = TrainConfig {
        kind: BlockKind::In,
        depth: 4,
        width: 16,
        lambda_init: (0.2, 0.25),
        dataset: "moons:400:0.08".to_string(),
        seed: 5,
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

    // Scan a 2g+1 square grid around sample 0 of the held-out split, moving
    // in steps of 4/255 so the window spans a realistic attack budget.
    let sample = 0;
    let (xs, ys) = out.test.full_batch();
    let width = xs.shape()[1];
    let x = Tensor::new(
        vec![1, width],
        xs.data()[sample * width..(sample + 1) * width].to_vec(),
    )?;
    let y = vec![ys[sample]];
    let grid = landscape_scan(&out.model, &x, &y, 12, 4.0 / 255.0, 99)?;

    println!(
        "loss around test sample {sample} (label {lab}), {side}x{side} grid, step {step:.4}:",
        lab = y[0],
        side = grid.side(),
        step = grid.step
    );
    println!("rows: attack direction; columns: seeded orthogonal direction\n");

    // Bucket the losses into a fixed palette; the center is marked 'o'.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &l in &grid.loss {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let palette: &[u8] = b" .:-=+*#%@";
    let g = grid.g as isize;
    for i in -g..=g {
        let mut line = String::new();
        for j in -g..=g {
            if i == 0 && j == 0 {
                line.push('o');
                continue;
            }
            let t = (grid.loss_at(i, j) - lo) / (hi - lo).max(1e-300);
            let idx = ((t * (palette.len() - 1) as f64).round() as usize).min(palette.len() - 1);
            line.push(palette[idx] as char);
        }
        println!("  {line}");
    }
    println!("\nloss range [{lo:.4}, {hi:.4}], center {:.4}", grid.center_loss);

    // The same grid, but showing where the predicted class flips.
    println!("\npredicted class over the same window:");
    for i in -g..=g {
        let mut line = String::new();
        for j in -g..=g {
            let flat = ((i + g) * grid.side() as isize + (j + g)) as usize;
            line.push(char::from_digit(grid.pred[flat] as u32 % 10, 10).unwrap());
        }
        println!("  {line}");
    }

    // Structural checks the scan guarantees by construction.
    let dot: f64 = grid.d1.iter().zip(&grid.d2).map(|(a, b)| a * b).sum();
    println!("\n<d1, d2> = {dot:.2e} (orthogonal by construction)");
    println!("grid[0,0] equals the unperturbed loss: {}", grid.loss_at(0, 0) == grid.center_loss);
    Ok(())
}
