//! Input perturbations: signed-gradient attacks (FGSM, iterated FGSM, PGD)
//! and four stochastic noise families (Gaussian, shot, impulse, speckle).
//!
//! All perturbations operate on batches whose entries live in `[0,1]` and
//! guarantee the output stays in that range. Attacks additionally keep the
//! output inside the L∞ ball of radius ε around the original input; the ball
//! projection is applied before the range clamp. Randomized perturbations
//! derive one generator per sample from `(seed, row)`, so results do not
//! depend on evaluation order or worker count.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blocks::Model;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, Tensor};
use crate::util::{rng_from, sample_seed};

/// Anything that can report a scalar loss and its gradient with respect to
/// the input batch (flattened, row-major). Attacks are generic over this so
/// they drive single models and ensembles alike.
pub trait AttackModel {
    fn loss_and_input_grad(&mut self, x: &Tensor, y: &[usize]) -> Result<(f64, Vec<f64>)>;
}

impl AttackModel for Model {
    /// Mean cross-entropy under evaluation-mode normalization; the gradient
    /// comes from a fresh backward pass every call (no stale-graph reuse).
    fn loss_and_input_grad(&mut self, x: &Tensor, y: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let pass = self.forward(&mut g, x, Mode::Eval)?;
        let loss = g.softmax_cross_entropy(&pass.logits, y)?;
        let grads = g.backward(&loss)?;
        Ok((loss.item(), grads.wrt(&pass.input)?.to_vec()))
    }
}

/// sign with the convention sign(0) = 0: zero-gradient components are left
/// untouched by every attack.
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_finite(loss: f64, grad: &[f64], step: usize) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step });
    }
    Ok(())
}

/// Fast gradient sign attack: `clamp(x + ε·sign(∇ₓL))` with exactly one
/// gradient evaluation.
pub fn fgsm<M: AttackModel + ?Sized>(
    model: &mut M,
    x: &Tensor,
    y: &[usize],
    epsilon: f64,
) -> Result<Tensor> {
    let (loss, grad) = model.loss_and_input_grad(x, y)?;
    check_finite(loss, &grad, 0)?;
    let data = x
        .data()
        .iter()
        .zip(&grad)
        .map(|(xi, gi)| (xi + epsilon * sign0(*gi)).clamp(0.0, 1.0))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Shared iteration core: starting from `start` (an arbitrary point of the
/// ε-ball around `origin`), take `iters` signed-gradient steps of size
/// `alpha`, each projected into `[origin−ε, origin+ε] ∩ [0,1]`. Returns the
/// final iterate and the loss observed at the beginning of every step.
///
/// Iterated FGSM is this routine started at the origin itself; PGD is this
/// routine started at a random point of the ball. Running it with `start`
/// equal to the origin's data therefore reproduces iterated FGSM bit for
/// bit.
pub fn ifgsm_from<M: AttackModel + ?Sized>(
    model: &mut M,
    origin: &Tensor,
    start: Vec<f64>,
    y: &[usize],
    epsilon: f64,
    alpha: f64,
    iters: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let mut cur = start;
    let mut losses = Vec::with_capacity(iters);
    for m in 0..iters {
        let xt = Tensor::new(origin.shape().to_vec(), cur.clone())?;
        let (loss, grad) = model.loss_and_input_grad(&xt, y)?;
        check_finite(loss, &grad, m)?;
        losses.push(loss);
        for ((c, gi), oi) in cur.iter_mut().zip(&grad).zip(origin.data()) {
            let stepped = *c + alpha * sign0(*gi);
            *c = stepped.clamp(oi - epsilon, oi + epsilon).clamp(0.0, 1.0);
        }
    }
    Ok((Tensor::new(origin.shape().to_vec(), cur)?, losses))
}

/// Iterated FGSM with per-step ball-and-range projection.
pub fn ifgsm<M: AttackModel + ?Sized>(
    model: &mut M,
    x: &Tensor,
    y: &[usize],
    epsilon: f64,
    alpha: f64,
    iters: usize,
) -> Result<Tensor> {
    Ok(ifgsm_from(model, x, x.data().to_vec(), y, epsilon, alpha, iters)?.0)
}

/// Iterated FGSM that also returns the loss at the start of each step, for
/// monitoring attack progress.
pub fn ifgsm_with_losses<M: AttackModel + ?Sized>(
    model: &mut M,
    x: &Tensor,
    y: &[usize],
    epsilon: f64,
    alpha: f64,
    iters: usize,
) -> Result<(Tensor, Vec<f64>)> {
    ifgsm_from(model, x, x.data().to_vec(), y, epsilon, alpha, iters)
}

/// Projected gradient descent: iterated FGSM started from
/// `clamp(x + δ)` with `δ ~ U[−ε, ε]` drawn i.i.d. per component from one
/// generator per sample.
pub fn pgd<M: AttackModel + ?Sized>(
    model: &mut M,
    x: &Tensor,
    y: &[usize],
    epsilon: f64,
    alpha: f64,
    iters: usize,
    seed: u64,
) -> Result<Tensor> {
    let rows = x.shape()[0].max(1);
    let per = x.numel() / rows;
    let mut start = x.data().to_vec();
    for row in 0..rows {
        let mut rng = rng_from(sample_seed(seed, row));
        for v in &mut start[row * per..(row + 1) * per] {
            let delta: f64 = rng.gen_range(-epsilon..=epsilon);
            *v = (*v + delta).clamp(0.0, 1.0);
        }
    }
    Ok(ifgsm_from(model, x, start, y, epsilon, alpha, iters)?.0)
}

/// The three attack families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Fgsm,
    Ifgsm,
    Pgd,
}

impl AttackKind {
    pub fn tag(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Ifgsm => "ifgsm",
            AttackKind::Pgd => "pgd",
        }
    }
}

/// One attack evaluation: kind, L∞ radius, step size, iteration count and
/// the seed for the PGD initialization. FGSM ignores `alpha`, `iters` and
/// `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    2.0 / 255.0
}

fn default_iters() -> usize {
    20
}

impl AttackConfig {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        AttackConfig { kind, epsilon, alpha: default_alpha(), iters: default_iters(), seed: 0 }
    }

    /// Radius must lie in (0,1]; the iterated kinds additionally need a
    /// positive step size no larger than 2ε and at least one iteration.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config(format!(
                "attack radius must lie in (0,1], got {}",
                self.epsilon
            )));
        }
        if matches!(self.kind, AttackKind::Ifgsm | AttackKind::Pgd) {
            if self.iters < 1 {
                return Err(Error::config("iterated attacks need iters >= 1"));
            }
            if !(self.alpha > 0.0 && self.alpha <= 2.0 * self.epsilon) {
                return Err(Error::config(format!(
                    "step size {} outside (0, 2*epsilon = {}]",
                    self.alpha,
                    2.0 * self.epsilon
                )));
            }
        }
        Ok(())
    }

    /// Run the configured attack on a batch.
    pub fn apply<M: AttackModel + ?Sized>(
        &self,
        model: &mut M,
        x: &Tensor,
        y: &[usize],
    ) -> Result<Tensor> {
        match self.kind {
            AttackKind::Fgsm => fgsm(model, x, y, self.epsilon),
            AttackKind::Ifgsm => ifgsm(model, x, y, self.epsilon, self.alpha, self.iters),
            AttackKind::Pgd => pgd(model, x, y, self.epsilon, self.alpha, self.iters, self.seed),
        }
    }

    /// Metric key, e.g. `fgsm@0.00784313725490196`.
    pub fn label(&self) -> String {
        format!("{}@{}", self.kind.tag(), self.epsilon)
    }
}

/// The four stochastic noise families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Shot,
    Impulse,
    Speckle,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] =
        [NoiseKind::Gaussian, NoiseKind::Shot, NoiseKind::Impulse, NoiseKind::Speckle];

    pub fn tag(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Shot => "shot",
            NoiseKind::Impulse => "impulse",
            NoiseKind::Speckle => "speckle",
        }
    }

    /// Default severity: σ for Gaussian/speckle, photon scale for shot, flip
    /// probability for impulse.
    pub fn default_severity(self) -> f64 {
        match self {
            NoiseKind::Gaussian => 0.08,
            NoiseKind::Shot => 60.0,
            NoiseKind::Impulse => 0.03,
            NoiseKind::Speckle => 0.15,
        }
    }
}

/// One noise evaluation. `severity` is the family's single parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    #[serde(default)]
    pub severity: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        NoiseConfig { kind, severity: None, seed }
    }

    pub fn severity(&self) -> f64 {
        self.severity.unwrap_or_else(|| self.kind.default_severity())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.severity();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::config(format!("noise severity must be positive, got {s}")));
        }
        if self.kind == NoiseKind::Impulse && s > 0.5 {
            return Err(Error::config(format!("impulse probability {s} exceeds 0.5")));
        }
        Ok(())
    }

    /// Metric key, e.g. `gaussian@0.08`.
    pub fn label(&self) -> String {
        format!("{}@{}", self.kind.tag(), self.severity())
    }
}

/// Corrupt a batch with the configured noise family. One generator per
/// sample; every output entry is clamped to `[0,1]`.
pub fn apply_noise(x: &Tensor, cfg: &NoiseConfig) -> Tensor {
    let shape = x.shape().to_vec();
    let rows = shape[0].max(1);
    let per = x.numel() / rows;
    let sev = cfg.severity();
    let mut out = x.data().to_vec();
    for row in 0..rows {
        let mut rng = rng_from(sample_seed(cfg.seed, row));
        let chunk = &mut out[row * per..(row + 1) * per];
        match cfg.kind {
            NoiseKind::Gaussian => {
                for v in chunk {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (*v + sev * z).clamp(0.0, 1.0);
                }
            }
            NoiseKind::Speckle => {
                for v in chunk {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (*v + *v * sev * z).clamp(0.0, 1.0);
                }
            }
            NoiseKind::Shot => {
                for v in chunk {
                    *v = (sample_poisson(&mut rng, *v * sev) / sev).clamp(0.0, 1.0);
                }
            }
            NoiseKind::Impulse => {
                for v in chunk {
                    if rng.gen::<f64>() < sev {
                        *v = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                    }
                }
            }
        }
    }
    Tensor::new(shape, out).expect("noise preserves shape")
}

/// Poisson draw: sequential-search inversion below mean 30, rounded normal
/// approximation above (clamped at zero). Returns the count as a float.
pub fn sample_poisson(rng: &mut impl Rng, mu: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    if mu < 30.0 {
        let u: f64 = rng.gen();
        let mut p = (-mu).exp();
        let mut cdf = p;
        let mut k = 0.0;
        // The tail beyond k = 200 at mu < 30 is below f64 resolution.
        while u > cdf && k < 200.0 {
            k += 1.0;
            p *= mu / k;
            cdf += p;
        }
        k
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (mu + mu.sqrt() * z).round().max(0.0)
    }
}
