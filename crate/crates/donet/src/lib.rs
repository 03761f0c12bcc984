//! donet — a numerical laboratory for damped-ODE interpolation between
//! residual and non-residual networks.
//!
//! The crate provides, at desk scale and in f64 throughout:
//!
//! * [`tensor`] — a tape-based reverse-mode autodiff substrate (dense ops,
//!   3x3 convolutions, batch norm, softmax cross-entropy);
//! * [`blocks`] — the interpolation block family `x + f(x)` ... `f(x)` with
//!   learned, sigmoid, and gated damping coefficients;
//! * [`ode`] — exponential and damped-Euler integrators for the underlying
//!   damped ODE, with closed-form and Runge-Kutta reference checks;
//! * [`stability`] — equilibria, Jacobians, QR eigenvalues, and the damped
//!   spectrum `rho(lambda) * nu - lambda`;
//! * [`perturb`] — FGSM/IFGSM/PGD attacks and stochastic noise families;
//! * [`harness`] — datasets, SGD training, robustness evaluation, loss
//!   landscapes, coefficient statistics, seed sweeps, and ensembles;
//! * [`cli`] — the config-file driven command layer behind the `donet` binary.
//!
//! Everything is deterministic given a top-level seed: sub-seeds are derived
//! by hashing `(seed, component name)` and per-sample streams by hashing
//! `(seed, sample index)`, so results do not depend on batching or on the
//! worker cap (`DONET_THREADS`).

pub mod blocks;
pub mod check;
pub mod cli;
pub mod error;
pub mod harness;
pub mod ode;
pub mod perturb;
pub mod stability;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Mode, Tensor};
