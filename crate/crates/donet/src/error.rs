//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]; the CLI maps variants onto
//! process exit codes (see `cli::exit_code`).

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ── tensor / graph ───────────────────────────────────────────────────
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("data length {len} does not match shape {shape:?}")]
    BadTensorData { shape: Vec<usize>, len: usize },

    #[error("matmul inner dimensions disagree: {left:?} x {right:?}")]
    MatmulDims { left: Vec<usize>, right: Vec<usize> },

    #[error("tensor is not attached to this graph")]
    DetachedTensor,

    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{0}")]
    InvalidArgument(String),

    // ── ode / stability ──────────────────────────────────────────────────
    #[error("dynamics produced a non-finite value at step {step}")]
    NonFiniteDynamics { step: usize },

    #[error("Newton iteration hit a singular Jacobian (condition estimate {cond:.3e})")]
    SingularJacobian { cond: f64 },

    #[error("Newton did not reach tolerance after {iters} iterations (residual {residual:.3e})")]
    NewtonStalled { iters: usize, residual: f64 },

    #[error("QR iteration did not converge within {sweeps} sweeps")]
    EigenNoConvergence { sweeps: usize },

    #[error("matrix dimension {dim} exceeds the supported maximum {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("stability frontier is undefined for Re(nu) == 0")]
    FrontierUndefined,

    // ── perturb / harness ────────────────────────────────────────────────
    #[error("attack gradient was non-finite at iteration {step}")]
    NonFiniteGradient { step: usize },

    #[error("attack gradient is identically zero; direction undefined")]
    ZeroGradient,

    #[error("gated block kinds need a probe batch to report coefficients")]
    GateNeedsProbe,

    #[error("interval is empty: [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },

    #[error("ensemble members are incompatible: {0}")]
    EnsembleMismatch(String),

    // ── formats / io / config ────────────────────────────────────────────
    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for precondition violations.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Convenience constructor for config-level problems.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Convenience constructor for malformed files.
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
