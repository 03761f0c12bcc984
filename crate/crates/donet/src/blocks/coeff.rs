//! Per-block coefficient statistics.
//!
//! A block's coefficient `a` measures how far it sits from the residual end
//! of the family: 0 is a pure residual step, 1 drops the shortcut entirely.
//! The report collects one value per block (a batch mean for the gating
//! kinds, which need a probe batch because their coefficient depends on the
//! input), the fraction of blocks whose coefficient exceeds the activity
//! threshold, and a coarse histogram.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, Tensor};

use super::{BlockKind, Model};

/// A block counts as active when its coefficient exceeds this.
pub const ACTIVE_THRESHOLD: f64 = 0.01;

/// Coefficient statistics for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub kind: BlockKind,
    /// One effective coefficient per block, in depth order.
    pub coefficients: Vec<f64>,
    /// Fraction of blocks with coefficient above [`ACTIVE_THRESHOLD`].
    pub fraction_active: f64,
    /// Histogram over [0,1], (1,2], (2,inf). Coefficients are nonnegative by
    /// construction, so the three bins partition the range.
    pub bins: [usize; 3],
}

impl CoefficientReport {
    /// CSV with header `block_index,coefficient`.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "block_index,coefficient")?;
        for (i, c) in self.coefficients.iter().enumerate() {
            writeln!(f, "{i},{c}")?;
        }
        Ok(())
    }
}

/// The coefficient a raw per-block parameter produces under its kind's
/// activation. Shared by the report and by anything recounting from a
/// parameter file.
pub fn coefficient_of(kind: BlockKind, raw: f64) -> f64 {
    match kind {
        BlockKind::Residual => 0.0,
        BlockKind::NonResidual => 1.0,
        BlockKind::In | BlockKind::LambdaIn | BlockKind::InGating => raw.max(0.0),
        BlockKind::InSig | BlockKind::InGatingSig => sigmoid(raw),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Build the report. Gating kinds require a probe batch (their coefficient
/// is input-dependent; the report takes the batch mean per block); all other
/// kinds read their parameters directly.
pub fn coefficient_report(model: &mut Model, probe: Option<&Tensor>) -> Result<CoefficientReport> {
    let kind = model.config().kind;
    let coefficients: Vec<f64> = if kind.has_gate() {
        let probe = probe.ok_or(Error::GateNeedsProbe)?;
        let mut g = Graph::new();
        model.forward(&mut g, probe, Mode::Eval)?.coefficients
    } else {
        model
            .blocks
            .iter()
            .map(|b| coefficient_of(kind, b.lambda_raw.as_ref().map_or(0.0, |p| p.value.item())))
            .collect()
    };
    Ok(summarize(kind, coefficients))
}

fn summarize(kind: BlockKind, coefficients: Vec<f64>) -> CoefficientReport {
    let n = coefficients.len();
    let active = coefficients.iter().filter(|&&a| a > ACTIVE_THRESHOLD).count();
    let mut bins = [0usize; 3];
    for &a in &coefficients {
        let b = if a <= 1.0 {
            0
        } else if a <= 2.0 {
            1
        } else {
            2
        };
        bins[b] += 1;
    }
    CoefficientReport {
        kind,
        coefficients,
        fraction_active: if n == 0 { 0.0 } else { active as f64 / n as f64 },
        bins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{InputShape, ModelConfig};

    fn model(kind: BlockKind, depth: usize) -> Model {
        Model::build(
            &ModelConfig {
                kind,
                input: InputShape::Dense { features: 3 },
                width: 4,
                depth,
                classes: 2,
                lambda_init: (0.0, 0.1),
            },
            13,
        )
        .unwrap()
    }

    fn with_lambdas(kind: BlockKind, raw: &[f64]) -> Model {
        let mut m = model(kind, raw.len());
        for (b, &v) in m.blocks.iter_mut().zip(raw) {
            b.lambda_raw.as_mut().unwrap().value = Tensor::scalar(v);
        }
        m
    }

    #[test]
    fn relu_kills_all_negative_raw_values() {
        let mut m = with_lambdas(BlockKind::In, &[-1.0, -1.0, -1.0]);
        let rep = coefficient_report(&mut m, None).unwrap();
        assert_eq!(rep.coefficients, vec![0.0, 0.0, 0.0]);
        assert_eq!(rep.fraction_active, 0.0);
        assert_eq!(rep.bins, [3, 0, 0]);
    }

    #[test]
    fn mixed_lambdas_bin_and_count_as_expected() {
        let mut m = with_lambdas(BlockKind::In, &[0.5, 0.005, 1.5]);
        let rep = coefficient_report(&mut m, None).unwrap();
        assert_eq!(rep.coefficients, vec![0.5, 0.005, 1.5]);
        assert!((rep.fraction_active - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.bins, [2, 1, 0]);
    }

    #[test]
    fn fixed_kinds_report_their_constants() {
        let mut m = model(BlockKind::Residual, 4);
        let rep = coefficient_report(&mut m, None).unwrap();
        assert_eq!(rep.coefficients, vec![0.0; 4]);
        assert_eq!(rep.fraction_active, 0.0);

        let mut m = model(BlockKind::NonResidual, 4);
        let rep = coefficient_report(&mut m, None).unwrap();
        assert_eq!(rep.coefficients, vec![1.0; 4]);
        assert_eq!(rep.fraction_active, 1.0);
        assert_eq!(rep.bins, [4, 0, 0]);
    }

    #[test]
    fn gating_kind_demands_a_probe() {
        let mut m = model(BlockKind::InGatingSig, 2);
        match coefficient_report(&mut m, None) {
            Err(Error::GateNeedsProbe) => {}
            other => panic!("expected probe error, got {:?}", other.map(|_| ())),
        }
        let probe = Tensor::new(vec![2, 3], vec![0.2, 0.8, 0.5, 0.1, 0.9, 0.3]).unwrap();
        let rep = coefficient_report(&mut m, Some(&probe)).unwrap();
        assert_eq!(rep.coefficients.len(), 2);
        for &a in &rep.coefficients {
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn csv_export_lists_block_index_and_value() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = with_lambdas(BlockKind::In, &[0.25, 1.75]);
        let rep = coefficient_report(&mut m, None).unwrap();
        let p = dir.path().join("coeff.csv");
        rep.to_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "block_index,coefficient\n0,0.25\n1,1.75\n");
    }

    #[test]
    fn sigmoid_kind_reports_sigmoid_of_raw() {
        let mut m = with_lambdas(BlockKind::InSig, &[0.0]);
        let rep = coefficient_report(&mut m, None).unwrap();
        assert_eq!(rep.coefficients, vec![0.5]);
    }
}
