//! Loss-landscape scans over a 2-d input slice: one axis is the signed
//! attack gradient direction, the other a seeded random direction with the
//! attack component projected out, both at unit L∞ norm so a grid step moves
//! every pixel by at most one `step` unit.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::blocks::Model;
use crate::error::{Error, Result};
use crate::perturb::AttackModel;
use crate::tensor::{Graph, Mode, Tensor};
use crate::util::{named_seed, parallel_map, rng_from};

/// One grid axis unit, matching the attack-radius scale.
pub const DEFAULT_GRID_STEP: f64 = 1.0 / 255.0;

/// A scanned (2G+1)×(2G+1) loss/prediction surface. Matrices are row-major
/// with the first axis along `d1` (the attack direction) and the second
/// along `d2`; index `[G][G]` is the unperturbed center.
#[derive(Debug, Clone)]
pub struct LandscapeGrid {
    pub g: usize,
    pub step: f64,
    pub seed: u64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub loss: Vec<f64>,
    pub pred: Vec<usize>,
    pub center_loss: f64,
}

impl LandscapeGrid {
    pub fn side(&self) -> usize {
        2 * self.g + 1
    }

    /// Loss at offsets `(i, j)` with `i, j ∈ [-G, G]`.
    pub fn loss_at(&self, i: isize, j: isize) -> f64 {
        let side = self.side() as isize;
        let (a, b) = (i + self.g as isize, j + self.g as isize);
        assert!((0..side).contains(&a) && (0..side).contains(&b), "offset out of grid");
        self.loss[(a * side + b) as usize]
    }

    fn matrix_csv<T: std::fmt::Display>(&self, cells: &[T]) -> String {
        let side = self.side();
        let mut out = String::new();
        for row in cells.chunks(side) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn loss_csv(&self) -> String {
        self.matrix_csv(&self.loss)
    }

    pub fn pred_csv(&self) -> String {
        self.matrix_csv(&self.pred)
    }

    /// JSON sidecar: grid shape, seed, and SHA-256 checksums of the two
    /// direction vectors (little-endian f64 bytes).
    pub fn sidecar_json(&self) -> String {
        let digest = |d: &[f64]| {
            let mut h = Sha256::new();
            for v in d {
                h.update(v.to_le_bytes());
            }
            format!("{:x}", h.finalize())
        };
        serde_json::to_string_pretty(&serde_json::json!({
            "g": self.g,
            "step": self.step,
            "seed": self.seed,
            "center_loss": self.center_loss,
            "d1_sha256": digest(&self.d1),
            "d2_sha256": digest(&self.d2),
        }))
        .expect("sidecar serializes")
    }
}

fn eval_loss_and_pred(model: &mut Model, x: &Tensor, y: &[usize]) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let pass = model.forward(&mut g, x, Mode::Eval)?;
    let loss = g.softmax_cross_entropy(&pass.logits, y)?;
    let preds = crate::harness::argmax_rows(&pass.logits);
    Ok((loss.item(), preds[0]))
}

/// Scan with caller-provided directions (both must match the input volume).
pub fn landscape_scan_with_directions(
    model: &Model,
    x: &Tensor,
    y: &[usize],
    g: usize,
    step: f64,
    seed: u64,
    d1: Vec<f64>,
    d2: Vec<f64>,
) -> Result<LandscapeGrid> {
    if d1.len() != x.numel() || d2.len() != x.numel() {
        return Err(Error::invalid(format!(
            "directions of length {}/{} for an input of {} entries",
            d1.len(),
            d2.len(),
            x.numel()
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::config(format!("grid step must be positive, got {step}")));
    }
    let mut center = model.clone();
    let (center_loss, _) = eval_loss_and_pred(&mut center, x, y)?;

    let side = 2 * g as isize + 1;
    let rows: Vec<isize> = (-(g as isize)..=g as isize).collect();
    let scanned: Vec<Result<Vec<(f64, usize)>>> = parallel_map(&rows, |_, i| {
        let mut m = model.clone();
        let mut out = Vec::with_capacity(side as usize);
        for j in -(g as isize)..=g as isize {
            let data: Vec<f64> = x
                .data()
                .iter()
                .zip(d1.iter().zip(&d2))
                .map(|(xv, (a, b))| {
                    (xv + *i as f64 * step * a + j as f64 * step * b).clamp(0.0, 1.0)
                })
                .collect();
            let xt = Tensor::new(x.shape().to_vec(), data)?;
            out.push(eval_loss_and_pred(&mut m, &xt, y)?);
        }
        Ok(out)
    });

    let mut loss = Vec::with_capacity((side * side) as usize);
    let mut pred = Vec::with_capacity((side * side) as usize);
    for row in scanned {
        for (l, p) in row? {
            loss.push(l);
            pred.push(p);
        }
    }
    Ok(LandscapeGrid { g, step, seed, d1, d2, loss, pred, center_loss })
}

/// Full scan: `d1` is the signed attack gradient at the center (aborting
/// with an explicit signal when the gradient vanishes everywhere), `d2` a
/// seeded standard-normal vector orthogonalized against `d1` (two projection
/// passes) and rescaled to unit L∞ norm.
pub fn landscape_scan(
    model: &Model,
    x: &Tensor,
    y: &[usize],
    g: usize,
    step: f64,
    seed: u64,
) -> Result<LandscapeGrid> {
    let mut probe = model.clone();
    let (_, grad) = probe.loss_and_input_grad(x, y)?;
    if grad.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroGradient);
    }
    let d1: Vec<f64> = grad
        .iter()
        .map(|v| {
            if *v > 0.0 {
                1.0
            } else if *v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();

    let mut rng = rng_from(named_seed(seed, "landscape-d2"));
    let mut d2: Vec<f64> = (0..d1.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let d1_sq: f64 = d1.iter().map(|v| v * v).sum();
    for _ in 0..2 {
        let dot: f64 = d1.iter().zip(&d2).map(|(a, b)| a * b).sum();
        let c = dot / d1_sq;
        for (b, a) in d2.iter_mut().zip(&d1) {
            *b -= c * a;
        }
    }
    let max = d2.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Err(Error::ZeroGradient);
    }
    for b in &mut d2 {
        *b /= max;
    }
    landscape_scan_with_directions(model, x, y, g, step, seed, d1, d2)
}
