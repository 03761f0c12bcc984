//! Batch normalization kernels (axis-1 channels of 2-d or 4-d tensors).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Mode;

/// Variance guard. The substrate is f64 throughout, so a tiny epsilon keeps
/// the zero-variance batch finite while leaving the unit-variance eval case
/// an identity to within 1e-12.
pub const BN_EPS: f64 = 1e-12;

/// Per-channel running statistics, updated by EMA in train mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    /// Fresh statistics: mean 0, variance 1, EMA momentum 0.1.
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels], momentum: 0.1 }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// What backward needs from the forward pass.
pub(crate) enum BnSaved {
    Train { xhat: Vec<f64>, invstd: Vec<f64> },
    Eval { mean: Vec<f64>, invstd: Vec<f64> },
}

/// Channel geometry of a normalized tensor: (batch, channels, inner extent).
fn geometry(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(Error::invalid(format!("batch_norm needs a 2-d or 4-d tensor, got {shape:?}"))),
    }
}

fn for_each_channel(shape: &[usize], c: usize, mut f: impl FnMut(usize)) {
    let (n, channels, inner) = geometry(shape).expect("validated shape");
    for i in 0..n {
        let base = (i * channels + c) * inner;
        for j in 0..inner {
            f(base + j);
        }
    }
}

/// Scaled normalization `gamma * xhat` (the beta shift is applied by the
/// caller). Train mode uses biased batch statistics and EMA-updates `stats`.
pub(crate) fn forward(
    x: &[f64],
    shape: &[usize],
    gamma: &[f64],
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<(Vec<f64>, BnSaved)> {
    let (n, channels, inner) = geometry(shape)?;
    if gamma.len() != channels || stats.channels() != channels {
        return Err(Error::ShapeMismatch { left: shape.to_vec(), right: vec![gamma.len()] });
    }
    if n == 0 {
        return Err(Error::invalid("batch_norm needs at least one sample"));
    }
    let m = (n * inner) as f64;
    let mut out = vec![0.0; x.len()];
    match mode {
        Mode::Train => {
            let mut xhat = vec![0.0; x.len()];
            let mut invstd = vec![0.0; channels];
            for c in 0..channels {
                let mut sum = 0.0;
                for_each_channel(shape, c, |i| sum += x[i]);
                let mean = sum / m;
                let mut ss = 0.0;
                for_each_channel(shape, c, |i| {
                    let d = x[i] - mean;
                    ss += d * d;
                });
                let var = ss / m;
                let istd = 1.0 / (var + BN_EPS).sqrt();
                invstd[c] = istd;
                for_each_channel(shape, c, |i| {
                    xhat[i] = (x[i] - mean) * istd;
                    out[i] = gamma[c] * xhat[i];
                });
                let mom = stats.momentum;
                stats.mean[c] = (1.0 - mom) * stats.mean[c] + mom * mean;
                stats.var[c] = (1.0 - mom) * stats.var[c] + mom * var;
            }
            Ok((out, BnSaved::Train { xhat, invstd }))
        }
        Mode::Eval => {
            let mut invstd = vec![0.0; channels];
            for c in 0..channels {
                let istd = 1.0 / (stats.var[c] + BN_EPS).sqrt();
                invstd[c] = istd;
                for_each_channel(shape, c, |i| {
                    out[i] = gamma[c] * (x[i] - stats.mean[c]) * istd;
                });
            }
            Ok((out, BnSaved::Eval { mean: stats.mean.clone(), invstd }))
        }
    }
}

/// Adjoints of the scaled normalization w.r.t. input and gamma.
pub(crate) fn backward(
    d: &[f64],
    x: &[f64],
    shape: &[usize],
    gamma: &[f64],
    saved: &BnSaved,
    dx: &mut [f64],
    dgamma: &mut [f64],
) {
    let (n, channels, inner) = geometry(shape).expect("validated shape");
    let m = (n * inner) as f64;
    match saved {
        BnSaved::Train { xhat, invstd } => {
            for c in 0..channels {
                let mut sum_d = 0.0;
                let mut sum_dxhat = 0.0;
                for_each_channel(shape, c, |i| {
                    sum_d += d[i];
                    sum_dxhat += d[i] * xhat[i];
                });
                dgamma[c] += sum_dxhat;
                let scale = gamma[c] * invstd[c] / m;
                for_each_channel(shape, c, |i| {
                    dx[i] += scale * (m * d[i] - sum_d - xhat[i] * sum_dxhat);
                });
            }
        }
        BnSaved::Eval { mean, invstd } => {
            for c in 0..channels {
                let coeff = gamma[c] * invstd[c];
                let mut sum = 0.0;
                for_each_channel(shape, c, |i| {
                    dx[i] += d[i] * coeff;
                    sum += d[i] * (x[i] - mean[c]) * invstd[c];
                });
                dgamma[c] += sum;
            }
        }
    }
}
