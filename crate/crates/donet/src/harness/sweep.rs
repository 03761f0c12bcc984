//! Grid sweeps over interpolation-parameter initialization intervals: the
//! full (interval × seed) grid is trained, FAILED runs are excluded from the
//! aggregates but counted, and every table can be recomputed from the
//! emitted per-run rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::DatasetSpec;
use crate::harness::{run_one, RunRecord, TrainConfig};
use crate::perturb::{AttackConfig, NoiseConfig};
use crate::util::{named_seed, parallel_map};

/// All runs of one initialization interval, in seed order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub interval: (f64, f64),
    pub records: Vec<RunRecord>,
}

/// One aggregate line: mean/SD of a metric over the non-FAILED runs of a
/// cell. The SD is the sample standard deviation and is absent when fewer
/// than two runs survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub sd: Option<f64>,
    pub n_runs: usize,
    pub n_failed: usize,
}

/// Train the full (interval × seed) grid. Every run clones the base config
/// with its cell's initialization interval and its own seed; the dataset is
/// materialized once from the base seed so all runs see the same data.
pub fn init_sweep(
    base: &TrainConfig,
    intervals: &[(f64, f64)],
    seeds: &[u64],
    noise: &[NoiseConfig],
    attacks: &[AttackConfig],
) -> Result<Vec<SweepCell>> {
    if intervals.len() < 2 {
        return Err(Error::config("a sweep needs at least two intervals"));
    }
    if seeds.len() < 2 {
        return Err(Error::config("a sweep needs at least two seeds"));
    }
    let data = DatasetSpec::parse(&base.dataset)?.load(named_seed(base.seed, "dataset"))?;

    let grid: Vec<(usize, u64)> = intervals
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| seeds.iter().map(move |s| (ci, *s)))
        .collect();
    let results: Vec<Result<RunRecord>> = parallel_map(&grid, |_, (ci, seed)| {
        let mut cfg = base.clone();
        cfg.lambda_init = intervals[*ci];
        cfg.seed = *seed;
        Ok(run_one(&cfg, &data, noise, attacks)?.record)
    });

    let mut cells: Vec<SweepCell> = intervals
        .iter()
        .map(|iv| SweepCell { interval: *iv, records: Vec::new() })
        .collect();
    for ((ci, _), rec) in grid.iter().zip(results) {
        cells[*ci].records.push(rec?);
    }
    Ok(cells)
}

/// Aggregate one cell metric-by-metric over its non-FAILED runs.
pub fn summarize_cell(cell: &SweepCell) -> Vec<SummaryRow> {
    let n_failed = cell.records.iter().filter(|r| r.failed).count();
    let alive: Vec<&RunRecord> = cell.records.iter().filter(|r| !r.failed).collect();
    let mut rows = Vec::new();
    if let Some(first) = alive.first() {
        if let Some(m) = &first.metrics {
            for (metric, _) in m.flat() {
                let values: Vec<f64> = alive
                    .iter()
                    .filter_map(|r| r.metrics.as_ref())
                    .filter_map(|m| {
                        m.flat().into_iter().find(|(k, _)| *k == metric).map(|(_, v)| v)
                    })
                    .collect();
                let n = values.len();
                let mean = values.iter().sum::<f64>() / n as f64;
                let sd = if n >= 2 {
                    let var =
                        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                    Some(var.sqrt())
                } else {
                    None
                };
                rows.push(SummaryRow { metric, mean, sd, n_runs: n, n_failed });
            }
        }
    }
    rows
}

/// `metric,mean,sd,n_runs,n_failed` table; an absent SD renders as an empty
/// cell, never as zero.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("metric,mean,sd,n_runs,n_failed\n");
    for r in rows {
        let sd = r.sd.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.metric, r.mean, sd, r.n_runs, r.n_failed));
    }
    out
}

/// Flat per-run rows (`interval_lo,interval_hi,seed,failed,metric,value`),
/// the raw material for recomputing any aggregate independently.
pub fn runs_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("interval_lo,interval_hi,seed,failed,metric,value\n");
    for cell in cells {
        for rec in &cell.records {
            let base = format!(
                "{},{},{},{}",
                cell.interval.0, cell.interval.1, rec.config.seed, rec.failed
            );
            match &rec.metrics {
                Some(m) => {
                    for (metric, value) in m.flat() {
                        out.push_str(&format!("{base},{metric},{value}\n"));
                    }
                }
                None => out.push_str(&format!("{base},,\n")),
            }
        }
    }
    out
}
