//! Command-line surface binding the whole crate into reproducible
//! experiment runs.
//!
//! Every command is driven by a strict JSON config file (unknown keys are
//! fatal, so experiments cannot drift silently) plus a handful of flags; all
//! randomness flows from the single top-level seed through named sub-seeds.
//! Exit codes are a stable contract:
//!
//! * 0 — success
//! * 2 — config error (bad file, missing section, invalid value)
//! * 3 — a training run FAILED (loss went NaN or accuracy stayed pinned at
//!   chance)
//! * 4 — a referenced artifact (record, parameter file) is missing
//!
//! Artifacts land in `output_dir`, or `output_dir/seed<N>/` under
//! `--seed-override N`, so seed replicas never clobber each other. The env
//! var `DONET_THREADS` caps internal worker counts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::blocks::{serialize, BlockKind};
use crate::blocks::coeff::coefficient_report;
use crate::error::{Error, Result};
use crate::harness::data::{Dataset, DatasetSpec};
use crate::harness::ensemble::{
    ensemble_evaluate, improvement_csv, improvement_over_singles, Ensemble,
};
use crate::harness::landscape::{landscape_scan, DEFAULT_GRID_STEP};
use crate::harness::sweep::{init_sweep, runs_csv, summarize_cell, summary_csv};
use crate::harness::{evaluate, prediction_csv, sgd_train, Metrics, RunRecord, TrainConfig};
use crate::ode::{
    convergence_order, convergence_study, convergence_to_csv, euler_stability_probe,
    integrate_exponential, integrate_rk4, interpolation_limit_check, verify_closed_form,
    DampedOdeSpec, Dynamics, EulerVariant, ProbeVerdict, RhoKind, Scheme,
};
use crate::stability::eig::Mat;
use crate::stability::{analyze, DynamicsHandle};
use crate::util::named_seed;

// ─── argument surface ────────────────────────────────────────────────────

#[derive(Debug, Parser)]
#[command(name = "donet", version, about = "Interpolated-network numerical laboratory")]
pub struct Cli {
    /// JSON run config (strict: unknown keys are rejected).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Replace the config seed; artifacts go to `output_dir/seed<N>/`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed_override: Option<u64>,

    /// Replace the config `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,

    /// Suppress progress output (artifacts are still written).
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its record, parameters and loss curve.
    Train,
    /// Evaluate a trained run: clean, noise and attack accuracy tables.
    Eval,
    /// Run only the configured gradient attacks against a trained run.
    Attack,
    /// Scan the loss surface around one test sample on a 2-d grid.
    Landscape,
    /// Equilibrium, Jacobian spectrum and damped spectrum of a dynamics.
    Stability {
        /// Dynamics given as a matrix, e.g. `companion:z^3-6z^2+11z-6`,
        /// `diag:3,-1,0` or `matrix:0,1;-1,-0.5`.
        #[arg(long, value_name = "SPEC")]
        matrix: Option<String>,
        /// Named dynamics: `decay`, `cubic2d`, or any `--matrix` form.
        #[arg(long, value_name = "SPEC")]
        dynamics: Option<String>,
        /// Damping coefficient.
        #[arg(long)]
        lambda: Option<f64>,
        /// Weight function: `one` or `lambda-plus-one`.
        #[arg(long, value_parser = rho_from_str)]
        rho: Option<RhoKind>,
        /// Newton start point, comma separated, e.g. `0.4,-0.2`.
        #[arg(long, value_name = "X0,X1,..")]
        start: Option<String>,
    },
    /// Integrator report: closed-form residual, interpolation limits,
    /// convergence orders and the forward-Euler decay window.
    OdeCheck {
        /// Damping coefficient.
        #[arg(long)]
        lambda: Option<f64>,
        /// Weight function: `one` or `lambda-plus-one`.
        #[arg(long, value_parser = rho_from_str)]
        rho: Option<RhoKind>,
        /// Step size for the trajectory artifact and the exactness check.
        #[arg(long)]
        dt: Option<f64>,
        /// Integration horizon.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Combine trained runs into a mean-probability ensemble and evaluate it.
    Ensemble {
        /// Run-record JSON files (at least two).
        #[arg(long, num_args = 2.., required = true, value_name = "RECORD")]
        runs: Vec<PathBuf>,
    },
    /// Train the full (initialization interval x seed) grid and aggregate.
    Sweep {
        /// Comma-separated `lo:hi` pairs, e.g. `0:0.1,0.1:0.2`.
        #[arg(long, value_name = "LO:HI,..")]
        intervals: Option<String>,
        /// Comma-separated seed list, e.g. `1,2,3,4,5`.
        #[arg(long, value_name = "S,..")]
        seeds: Option<String>,
    },
}

// ─── config file ─────────────────────────────────────────────────────────

/// Top-level run config. Only `seed` and `output_dir` are mandatory; each
/// command checks for the sections it needs and fails with the section name
/// otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub landscape: Option<LandscapeSection>,
    #[serde(default)]
    pub ode: Option<OdeSection>,
    #[serde(default)]
    pub stability: Option<StabilitySection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: BlockKind,
    #[serde(default = "d_depth")]
    pub depth: usize,
    #[serde(default = "d_width")]
    pub width: usize,
    #[serde(default = "d_lambda_init")]
    pub lambda_init: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Dataset id: `moons:N:SD`, `spirals:N:SD` or `idx:IMAGES:LABELS`.
    pub dataset: String,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr0")]
    pub lr0: f64,
    #[serde(default = "d_drops")]
    pub lr_drops: Vec<(usize, f64)>,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_test_fraction")]
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub noise: Vec<crate::perturb::NoiseConfig>,
    #[serde(default)]
    pub attacks: Vec<crate::perturb::AttackConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSection {
    /// Grid radius: the scan covers `(2g+1) x (2g+1)` points.
    #[serde(default = "d_grid")]
    pub g: usize,
    /// Which held-out sample to center on.
    #[serde(default)]
    pub sample_index: usize,
    /// Offset per grid unit along each direction.
    #[serde(default = "d_step")]
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSection {
    #[serde(default = "d_ode_lambda")]
    pub lambda: f64,
    #[serde(default = "d_rho")]
    pub rho: RhoKind,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
}

impl Default for OdeSection {
    fn default() -> Self {
        OdeSection { lambda: d_ode_lambda(), rho: d_rho(), dt: d_dt(), t_end: d_t_end() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    /// Dynamics id, same grammar as the `--matrix`/`--dynamics` flags.
    pub dynamics: String,
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default = "d_stab_lambda")]
    pub lambda: f64,
    #[serde(default = "d_rho")]
    pub rho: RhoKind,
}

fn d_depth() -> usize {
    8
}
fn d_width() -> usize {
    32
}
fn d_lambda_init() -> (f64, f64) {
    (0.0, 0.1)
}
fn d_epochs() -> usize {
    30
}
fn d_batch() -> usize {
    32
}
fn d_lr0() -> f64 {
    0.1
}
fn d_drops() -> Vec<(usize, f64)> {
    vec![(20, 10.0)]
}
fn d_momentum() -> f64 {
    0.9
}
fn d_weight_decay() -> f64 {
    1e-4
}
fn d_test_fraction() -> f64 {
    0.25
}
fn d_grid() -> usize {
    20
}
fn d_step() -> f64 {
    DEFAULT_GRID_STEP
}
fn d_ode_lambda() -> f64 {
    0.7
}
fn d_stab_lambda() -> f64 {
    0.5
}
fn d_rho() -> RhoKind {
    RhoKind::One
}
fn d_dt() -> f64 {
    0.01
}
fn d_t_end() -> f64 {
    1.0
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<RunConfigFile> {
        if !path.exists() {
            return Err(Error::config(format!("config file not found: {}", path.display())));
        }
        let text = std::fs::read_to_string(path)?;
        let file: RunConfigFile = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(file)
    }

    /// The training config a run under this file uses, or the name of the
    /// first missing section.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| Error::config("config has no model section (required here)"))?;
        let t = self
            .train
            .as_ref()
            .ok_or_else(|| Error::config("config has no train section (required here)"))?;
        let cfg = TrainConfig {
            kind: m.kind,
            depth: m.depth,
            width: m.width,
            lambda_init: m.lambda_init,
            dataset: t.dataset.clone(),
            seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_drops: t.lr_drops.clone(),
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            test_fraction: t.test_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

// ─── shared plumbing ─────────────────────────────────────────────────────

/// Map an error onto the stable exit-code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Format(_)
        | Error::InvalidArgument(_)
        | Error::EmptyInterval { .. }
        | Error::EnsembleMismatch(_)
        | Error::Json(_) => 2,
        Error::MissingArtifact(_) => 4,
        _ => 1,
    }
}

/// Process entry point: parse, dispatch, map errors onto exit codes.
pub fn run() -> std::process::ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => std::process::ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(exit_code(&e) as u8)
        }
    }
}

/// Dispatch one parsed invocation; returns the process exit code.
pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Train => cmd_train(cli),
        Command::Eval => cmd_eval(cli, false),
        Command::Attack => cmd_eval(cli, true),
        Command::Landscape => cmd_landscape(cli),
        Command::Stability { matrix, dynamics, lambda, rho, start } => {
            cmd_stability(cli, matrix.as_deref().or(dynamics.as_deref()), *lambda, *rho, start.as_deref())
        }
        Command::OdeCheck { lambda, rho, dt, t_end } => {
            cmd_ode_check(cli, *lambda, *rho, *dt, *t_end)
        }
        Command::Ensemble { runs } => cmd_ensemble(cli, runs),
        Command::Sweep { intervals, seeds } => {
            cmd_sweep(cli, intervals.as_deref(), seeds.as_deref())
        }
    }
}

fn require_config(cli: &Cli) -> Result<RunConfigFile> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("this command needs --config PATH"))?;
    RunConfigFile::load(path)
}

fn effective_seed(cli: &Cli, file: &RunConfigFile) -> u64 {
    cli.seed_override.unwrap_or(file.seed)
}

/// Where this invocation's artifacts go: the config `output_dir` (or its
/// `--output` replacement), with a `seed<N>` leaf appended under
/// `--seed-override`.
fn run_dir(cli: &Cli, file: &RunConfigFile) -> PathBuf {
    let base = cli.output.clone().unwrap_or_else(|| file.output_dir.clone());
    match cli.seed_override {
        Some(s) => base.join(format!("seed{s}")),
        None => base,
    }
}

/// Read a run record back from disk.
fn load_record(path: &Path) -> Result<RunRecord> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let rec: RunRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(rec)
}

/// Resolve a recorded artifact path, falling back to the record's own
/// directory so moved output trees keep working.
fn resolve_artifact(p: &Path, record_dir: &Path) -> Result<PathBuf> {
    if p.exists() {
        return Ok(p.to_path_buf());
    }
    if let Some(name) = p.file_name() {
        let alt = record_dir.join(name);
        if alt.exists() {
            return Ok(alt);
        }
    }
    Err(Error::MissingArtifact(p.to_path_buf()))
}

/// Rebuild the exact train/test split a record's run used.
fn record_split(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let data = DatasetSpec::parse(&cfg.dataset)?.load(named_seed(cfg.seed, "dataset"))?;
    data.split(cfg.test_fraction, cfg.seed)
}

/// File-name-safe form of a metric key like `gaussian@0.08`.
fn slug(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '-' })
        .collect()
}

fn print_metrics(quiet: bool, m: &Metrics) {
    if quiet {
        return;
    }
    for (k, v) in m.flat() {
        println!("  {k}: {v:.2}");
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

// ─── train / eval / attack ───────────────────────────────────────────────

fn cmd_train(cli: &Cli) -> Result<i32> {
    let file = require_config(cli)?;
    let seed = effective_seed(cli, &file);
    let cfg = file.train_config(seed)?;
    let dir = run_dir(cli, &file);
    std::fs::create_dir_all(&dir)?;

    let data = DatasetSpec::parse(&cfg.dataset)?.load(named_seed(seed, "dataset"))?;
    if !cli.quiet {
        println!(
            "training {:?} (depth {}, width {}) on {} for {} epochs, seed {seed}",
            cfg.kind, cfg.depth, cfg.width, cfg.dataset, cfg.epochs
        );
    }
    let mut out = sgd_train(&cfg, &data)?;
    if !cli.quiet {
        for (e, (l, a)) in out.record.epoch_losses.iter().zip(&out.record.epoch_train_acc).enumerate()
        {
            println!("  epoch {:>3}: loss {l:.4}  train acc {a:.1}%", e + 1);
        }
    }

    if !out.record.failed {
        let model_path = dir.join("model.donet");
        serialize::save(&out.model, &model_path)?;
        out.record.model_path = Some(model_path);

        if let Some(eval) = &file.eval {
            let scored = evaluate(&out.model, &out.test, &eval.noise, &eval.attacks)?;
            out.record.metrics = Some(scored.metrics);
        }

        // Coefficient table; the gate kinds need a probe batch.
        let probe_rows: Vec<usize> = (0..data.len().min(16)).collect();
        let (px, _) = data.batch(&probe_rows);
        let report = coefficient_report(&mut out.model, Some(&px))?;
        report.to_csv(&dir.join("coefficients.csv"))?;
    }

    let mut curve = String::from("epoch,loss,train_acc\n");
    for (e, (l, a)) in out.record.epoch_losses.iter().zip(&out.record.epoch_train_acc).enumerate() {
        curve.push_str(&format!("{},{l},{a}\n", e + 1));
    }
    write_text(&dir.join("loss_curve.csv"), &curve)?;
    write_json(&dir.join("record.json"), &out.record)?;

    if out.record.failed {
        if !cli.quiet {
            println!("run FAILED (loss NaN or accuracy pinned at chance); record kept");
        }
        return Ok(3);
    }
    if !cli.quiet {
        println!("artifacts in {}", dir.display());
        if let Some(m) = &out.record.metrics {
            print_metrics(cli.quiet, m);
        }
    }
    Ok(0)
}

/// `eval` scores a trained run on clean, noise and attack inputs;
/// `attack` restricts the same pass to the configured attacks.
fn cmd_eval(cli: &Cli, attacks_only: bool) -> Result<i32> {
    let file = require_config(cli)?;
    let dir = run_dir(cli, &file);
    let record = load_record(&dir.join("record.json"))?;
    if record.failed {
        return Err(Error::config("recorded run FAILED; nothing to evaluate"));
    }
    let model_path = record
        .model_path
        .as_ref()
        .ok_or_else(|| Error::MissingArtifact(dir.join("model.donet")))?;
    let model = serialize::load(&resolve_artifact(model_path, &dir)?)?;
    let (_, test) = record_split(&record.config)?;

    let eval = file.eval.clone().unwrap_or_default();
    let (noise, attacks) = if attacks_only {
        if eval.attacks.is_empty() {
            return Err(Error::config(
                "config has no attacks to run (eval section, attacks list)",
            ));
        }
        (Vec::new(), eval.attacks)
    } else {
        (eval.noise, eval.attacks)
    };

    let out = evaluate(&model, &test, &noise, &attacks)?;
    let name = if attacks_only { "attack_metrics.json" } else { "metrics.json" };
    write_json(&dir.join(name), &out.metrics)?;
    for (key, rows) in &out.predictions {
        write_text(&dir.join(format!("predictions_{}.csv", slug(key))), &prediction_csv(rows))?;
    }
    if !cli.quiet {
        println!("evaluated {} held-out samples:", test.len());
        print_metrics(cli.quiet, &out.metrics);
        println!("artifacts in {}", dir.display());
    }
    Ok(0)
}

// ─── landscape ───────────────────────────────────────────────────────────

fn cmd_landscape(cli: &Cli) -> Result<i32> {
    let file = require_config(cli)?;
    let lsec = file
        .landscape
        .clone()
        .ok_or_else(|| Error::config("config has no landscape section (required here)"))?;
    let seed = effective_seed(cli, &file);
    let dir = run_dir(cli, &file);
    let record = load_record(&dir.join("record.json"))?;
    if record.failed {
        return Err(Error::config("recorded run FAILED; nothing to scan"));
    }
    let model_path = record
        .model_path
        .as_ref()
        .ok_or_else(|| Error::MissingArtifact(dir.join("model.donet")))?;
    let model = serialize::load(&resolve_artifact(model_path, &dir)?)?;
    let (_, test) = record_split(&record.config)?;
    if lsec.sample_index >= test.len() {
        return Err(Error::config(format!(
            "sample index {} out of range (test split has {} samples)",
            lsec.sample_index,
            test.len()
        )));
    }
    let (x, y) = test.batch(&[lsec.sample_index]);
    let grid = landscape_scan(&model, &x, &y, lsec.g, lsec.step, named_seed(seed, "landscape"))?;

    write_text(&dir.join("loss.csv"), &grid.loss_csv())?;
    write_text(&dir.join("pred.csv"), &grid.pred_csv())?;
    write_text(&dir.join("landscape.json"), &grid.sidecar_json())?;
    if !cli.quiet {
        let side = grid.side();
        println!(
            "scanned {side}x{side} grid around test sample {} (center loss {:.6})",
            lsec.sample_index, grid.center_loss
        );
        println!("artifacts in {}", dir.display());
    }
    Ok(0)
}

// ─── dynamics registry ───────────────────────────────────────────────────

/// Parse the coefficient list of a monic real polynomial in one variable,
/// written like `z^3-6z^2+11z-6`. Returns the ascending coefficients below
/// the leading term (the form the companion constructor takes); a
/// non-monic polynomial is normalized by its leading coefficient.
pub fn parse_monic_poly(text: &str) -> Result<Vec<f64>> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(Error::config("empty polynomial"));
    }
    // Split into signed terms; '+'/'-' only ever begins a term because
    // exponents are unsigned integers and coefficients plain decimals.
    let mut terms: Vec<String> = Vec::new();
    for (i, c) in s.char_indices() {
        if (c == '+' || c == '-') && i > 0 {
            terms.push(String::new());
        }
        if terms.is_empty() {
            terms.push(String::new());
        }
        terms.last_mut().expect("nonempty").push(c);
    }

    let mut var: Option<char> = None;
    let mut by_exp: BTreeMap<usize, f64> = BTreeMap::new();
    for term in &terms {
        let (sign, body) = match term.strip_prefix('-') {
            Some(rest) => (-1.0, rest),
            None => (1.0, term.strip_prefix('+').unwrap_or(term)),
        };
        if body.is_empty() {
            return Err(Error::config(format!("dangling sign in polynomial '{text}'")));
        }
        let bad = || Error::config(format!("cannot parse polynomial term '{term}'"));
        let split = body.find(|c: char| c.is_ascii_alphabetic());
        let (coeff, exp) = match split {
            None => (body.parse::<f64>().map_err(|_| bad())?, 0usize),
            Some(pos) => {
                let coeff = if pos == 0 { 1.0 } else { body[..pos].parse::<f64>().map_err(|_| bad())? };
                let mut rest = body[pos..].chars();
                let v = rest.next().expect("split lands on a letter");
                if *var.get_or_insert(v) != v {
                    return Err(Error::config(format!(
                        "polynomial mixes variables '{}' and '{v}'",
                        var.expect("set above")
                    )));
                }
                let tail = rest.as_str();
                let exp = if tail.is_empty() {
                    1
                } else {
                    tail.strip_prefix('^')
                        .and_then(|d| d.parse::<usize>().ok())
                        .ok_or_else(bad)?
                };
                (coeff, exp)
            }
        };
        *by_exp.entry(exp).or_insert(0.0) += sign * coeff;
    }

    let degree = by_exp
        .iter()
        .rev()
        .find(|(_, c)| **c != 0.0)
        .map(|(e, _)| *e)
        .ok_or_else(|| Error::config("polynomial is identically zero"))?;
    if degree == 0 {
        return Err(Error::config("polynomial must have degree at least 1"));
    }
    let lead = by_exp[&degree];
    Ok((0..degree).map(|e| by_exp.get(&e).copied().unwrap_or(0.0) / lead).collect())
}

fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("cannot parse number '{t}'")))
        })
        .collect()
}

/// Build a dynamics from its spec string. Returns the handle and a default
/// start point (callers may override the start).
pub fn parse_dynamics(spec: &str, dim_hint: Option<usize>) -> Result<(DynamicsHandle, Vec<f64>)> {
    if let Some(poly) = spec.strip_prefix("companion:") {
        let m = Mat::companion(&parse_monic_poly(poly)?)?;
        let n = m.dim();
        return Ok((DynamicsHandle::linear(&m), vec![0.0; n]));
    }
    if let Some(diag) = spec.strip_prefix("diag:") {
        let d = parse_floats(diag)?;
        let mut m = Mat::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.set(i, i, *v);
        }
        return Ok((DynamicsHandle::linear(&m), vec![0.0; d.len()]));
    }
    if let Some(rows) = spec.strip_prefix("matrix:") {
        let rows: Vec<Vec<f64>> =
            rows.split(';').map(parse_floats).collect::<Result<_>>()?;
        let m = Mat::from_rows(&rows)?;
        let n = m.dim();
        return Ok((DynamicsHandle::linear(&m), vec![0.0; n]));
    }
    match spec {
        "decay" => {
            let n = dim_hint.unwrap_or(1);
            let mut m = Mat::zeros(n);
            for i in 0..n {
                m.set(i, i, -1.0);
            }
            Ok((DynamicsHandle::linear(&m), vec![1.0; n]))
        }
        "cubic2d" => {
            let f = DynamicsHandle::new(2, |x: &[f64]| vec![x[1] - x[0].powi(3), -x[0] - x[1]]);
            Ok((f, vec![0.4, -0.2]))
        }
        _ => Err(Error::config(format!(
            "unknown dynamics '{spec}' (expected companion:POLY, diag:D0,.., matrix:R00,..;R10,.., decay or cubic2d)"
        ))),
    }
}

fn rho_from_str(s: &str) -> std::result::Result<RhoKind, String> {
    match s {
        "one" | "1" => Ok(RhoKind::One),
        "lambda-plus-one" | "lambda_plus_one" | "lambda+1" => Ok(RhoKind::LambdaPlusOne),
        _ => Err(format!("unknown weight function '{s}' (expected one or lambda-plus-one)")),
    }
}

// ─── stability ───────────────────────────────────────────────────────────

fn cmd_stability(
    cli: &Cli,
    spec_flag: Option<&str>,
    lambda_flag: Option<f64>,
    rho_flag: Option<RhoKind>,
    start_flag: Option<&str>,
) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => Some(RunConfigFile::load(p)?),
        None => None,
    };
    let sec = file.as_ref().and_then(|f| f.stability.clone());
    let spec_str = spec_flag
        .map(str::to_string)
        .or_else(|| sec.as_ref().map(|s| s.dynamics.clone()))
        .ok_or_else(|| {
            Error::config("no dynamics given: pass --matrix/--dynamics or add a stability section")
        })?;
    let start_given = match start_flag {
        Some(s) => Some(parse_floats(s)?),
        None => sec.as_ref().and_then(|s| s.start.clone()),
    };
    let lambda = lambda_flag
        .or(sec.as_ref().map(|s| s.lambda))
        .unwrap_or_else(d_stab_lambda);
    let rho = rho_flag.or(sec.as_ref().map(|s| s.rho)).unwrap_or_else(d_rho);
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
    }

    let (f, default_start) = parse_dynamics(&spec_str, start_given.as_ref().map(Vec::len))?;
    let x0 = start_given.unwrap_or(default_start);
    if x0.len() != f.dim() {
        return Err(Error::config(format!(
            "start point has {} components but the dynamics is {}-dimensional",
            x0.len(),
            f.dim()
        )));
    }

    let report = analyze(&f, &x0, lambda, rho)?;
    if let Some(file) = &file {
        let dir = run_dir(cli, file);
        std::fs::create_dir_all(&dir)?;
        write_json(&dir.join("stability.json"), &report)?;
        if !cli.quiet {
            println!("report written to {}", dir.join("stability.json").display());
        }
    } else if let Some(out) = &cli.output {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("stability.json"), &report)?;
        if !cli.quiet {
            println!("report written to {}", out.join("stability.json").display());
        }
    }
    if !cli.quiet {
        let fmt = |s: &[(f64, f64)]| {
            s.iter().map(|(re, im)| format!("{re:.6}{im:+.6}i")).collect::<Vec<_>>().join(", ")
        };
        println!("dynamics: {spec_str} (lambda {lambda}, rho {rho:?})");
        println!("equilibrium: {:?}", report.equilibrium);
        println!("raw spectrum:    [{}]  max Re {:.6}", fmt(&report.raw_spectrum), report.max_re_raw);
        println!(
            "damped spectrum: [{}]  max Re {:.6}",
            fmt(&report.damped_spectrum),
            report.max_re_damped
        );
        println!(
            "stable: raw {} | damped {}",
            if report.stable_raw { "yes" } else { "no" },
            if report.stable_damped { "yes" } else { "no" }
        );
    }
    Ok(0)
}

// ─── ode check ───────────────────────────────────────────────────────────

/// Step count for the closed-form residual trajectory.
const RESIDUAL_STEPS: usize = 100_000;

/// One forward-Euler decay probe row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayProbe {
    pub lambda_dt: f64,
    pub verdict: ProbeVerdict,
}

/// Everything `ode-check` measures on the built-in linear probe system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeCheckReport {
    pub lambda: f64,
    pub rho: RhoKind,
    pub dt: f64,
    pub t_end: f64,
    /// Residual of the damped-integral identity on a fine trajectory.
    pub residual: f64,
    pub residual_steps: usize,
    /// One-step gap to `x + f(x)` at vanishing damping (dt = 1).
    pub res_limit_gap: f64,
    /// One-step gap to `f(x)` at huge damping with weight `lambda+1` (dt = 1).
    pub nonres_limit_gap: f64,
    /// Terminal gap of the exponential scheme to the closed form on a
    /// constant field, at the configured dt.
    pub constant_field_gap: f64,
    /// Fitted log-log convergence orders against the fine-step oracle.
    pub euler_order: f64,
    pub exponential_order: f64,
    pub decay_probes: Vec<DecayProbe>,
    /// True when every measurement lands inside its expected window.
    pub pass: bool,
}

fn cmd_ode_check(
    cli: &Cli,
    lambda_flag: Option<f64>,
    rho_flag: Option<RhoKind>,
    dt_flag: Option<f64>,
    t_end_flag: Option<f64>,
) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => Some(RunConfigFile::load(p)?),
        None => None,
    };
    let sec = file.as_ref().and_then(|f| f.ode.clone()).unwrap_or_default();
    let lambda = lambda_flag.unwrap_or(sec.lambda);
    let rho = rho_flag.unwrap_or(sec.rho);
    let dt = dt_flag.unwrap_or(sec.dt);
    let t_end = t_end_flag.unwrap_or(sec.t_end);
    if !(lambda >= 0.0) || !(dt > 0.0) || !(t_end >= dt) {
        return Err(Error::config(format!(
            "need lambda >= 0, dt > 0 and t_end >= dt (got {lambda}, {dt}, {t_end})"
        )));
    }

    // Built-in probe: a mildly rotating affine field, plus a constant field
    // for the exactness check.
    let linear: Dynamics = Arc::new(|x: &[f64], _t: f64| {
        vec![x[1] + 0.5, -x[0] - 0.5 * x[1] - 0.25]
    });
    let constant: Dynamics = Arc::new(|_x: &[f64], _t: f64| vec![0.3, -0.8]);
    let x0 = vec![1.0, -0.5];

    let fine = DampedOdeSpec::new(lambda, rho, linear.clone(), x0.clone(), t_end, RESIDUAL_STEPS)?;
    let residual = verify_closed_form(&fine, &integrate_rk4(&fine)?)?;

    let (res_limit_gap, nonres_limit_gap) = interpolation_limit_check(&linear, &x0, 1.0)?;

    // Exponential exactness on the constant field: against the closed form
    // of the damped dynamics at the horizon.
    let steps = (t_end / dt).round().max(1.0) as usize;
    let const_spec = DampedOdeSpec::new(lambda, rho, constant.clone(), x0.clone(), t_end, steps)?;
    let traj = integrate_exponential(&const_spec)?;
    let c = constant(&x0, 0.0);
    let rho_v = rho.value(lambda);
    let constant_field_gap = x0
        .iter()
        .zip(&c)
        .zip(traj.last())
        .map(|((xi, ci), got)| {
            let want = if lambda > 0.0 {
                (-lambda * t_end).exp() * xi + (1.0 - (-lambda * t_end).exp()) * rho_v * ci / lambda
            } else {
                xi + t_end * rho_v * ci
            };
            (got - want).abs()
        })
        .fold(0.0f64, f64::max);

    let study_spec = DampedOdeSpec::new(lambda, rho, linear.clone(), x0.clone(), t_end, steps)?;
    let counts = [100usize, 200, 400, 800, 1600];
    let variant = match rho {
        RhoKind::One => EulerVariant::RhoOne,
        RhoKind::LambdaPlusOne => EulerVariant::RhoLambdaPlusOne,
    };
    let euler_pts = convergence_study(&study_spec, Scheme::Euler(variant), &counts, 100)?;
    let expo_pts = convergence_study(&study_spec, Scheme::Exponential, &counts, 100)?;
    let euler_order = convergence_order(&euler_pts);
    let exponential_order = convergence_order(&expo_pts);

    let decay_probes: Vec<DecayProbe> = [0.5, 1.0, 1.9, 2.0, 2.1, 2.5]
        .into_iter()
        .map(|z| DecayProbe { lambda_dt: z, verdict: euler_stability_probe(z, 1.0, 200) })
        .collect();
    let probes_ok = decay_probes.iter().all(|p| {
        p.verdict
            == if p.lambda_dt < 2.0 {
                ProbeVerdict::Decays
            } else if p.lambda_dt > 2.0 {
                ProbeVerdict::Diverges
            } else {
                ProbeVerdict::Boundary
            }
    });

    let pass = residual < 1e-6
        && res_limit_gap < 1e-6
        && nonres_limit_gap < 1e-3
        && constant_field_gap < 1e-10
        && (0.9..=1.1).contains(&euler_order)
        && probes_ok;

    let report = OdeCheckReport {
        lambda,
        rho,
        dt,
        t_end,
        residual,
        residual_steps: RESIDUAL_STEPS,
        res_limit_gap,
        nonres_limit_gap,
        constant_field_gap,
        euler_order,
        exponential_order,
        decay_probes,
        pass,
    };

    let outdir = match (&file, &cli.output) {
        (Some(f), _) => Some(run_dir(cli, f)),
        (None, Some(out)) => Some(out.clone()),
        (None, None) => None,
    };
    if let Some(dir) = outdir {
        std::fs::create_dir_all(&dir)?;
        write_json(&dir.join("ode_report.json"), &report)?;
        integrate_exponential(&study_spec)?.to_csv(&dir.join("trajectory.csv"))?;
        convergence_to_csv(&euler_pts, &dir.join("convergence_euler.csv"))?;
        convergence_to_csv(&expo_pts, &dir.join("convergence_exponential.csv"))?;
        if !cli.quiet {
            println!("artifacts in {}", dir.display());
        }
    }
    if !cli.quiet {
        println!("lambda {lambda}, rho {rho:?}, dt {dt}, horizon {t_end}");
        println!("closed-form residual: {residual:.3e} (N = {RESIDUAL_STEPS})");
        println!("limit gaps: residual-end {res_limit_gap:.3e}, non-residual-end {nonres_limit_gap:.3e}");
        println!("constant-field exactness gap: {constant_field_gap:.3e}");
        println!("convergence orders: euler {euler_order:.3}, exponential {exponential_order:.3}");
        for p in &report.decay_probes {
            println!("  decay probe lambda*dt = {:.1}: {:?}", p.lambda_dt, p.verdict);
        }
        println!("verdict: {}", if pass { "all checks passed" } else { "SOME CHECKS FAILED" });
    }
    Ok(0)
}

// ─── ensemble ────────────────────────────────────────────────────────────

fn cmd_ensemble(cli: &Cli, runs: &[PathBuf]) -> Result<i32> {
    if runs.len() < 2 {
        return Err(Error::config("an ensemble needs at least two --runs records"));
    }
    let file = match &cli.config {
        Some(p) => Some(RunConfigFile::load(p)?),
        None => None,
    };

    let mut records = Vec::new();
    for path in runs {
        let rec = load_record(path)?;
        if rec.failed {
            return Err(Error::config(format!(
                "{} records a FAILED run; it cannot join an ensemble",
                path.display()
            )));
        }
        records.push((path.clone(), rec));
    }
    let first = &records[0].1;
    for (p, rec) in &records[1..] {
        if rec.config.dataset != first.config.dataset {
            return Err(Error::config(format!(
                "{} was trained on '{}' but the first run used '{}'",
                p.display(),
                rec.config.dataset,
                first.config.dataset
            )));
        }
    }

    let mut members = Vec::new();
    for (path, rec) in &records {
        let record_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let model_path = rec.model_path.as_ref().ok_or_else(|| {
            Error::config(format!("{} references no parameter file", path.display()))
        })?;
        members.push(serialize::load(&resolve_artifact(model_path, &record_dir)?)?);
    }
    let ens = Ensemble::new(members)?;

    // The evaluation set: from the config when given (canonical data seed),
    // otherwise from the first record.
    let (data_seed, dataset_id, fraction) = match &file {
        Some(f) => {
            let seed = effective_seed(cli, f);
            match &f.train {
                Some(t) => (seed, t.dataset.clone(), t.test_fraction),
                None => (seed, first.config.dataset.clone(), first.config.test_fraction),
            }
        }
        None => (first.config.seed, first.config.dataset.clone(), first.config.test_fraction),
    };
    let data = DatasetSpec::parse(&dataset_id)?.load(named_seed(data_seed, "dataset"))?;
    let (_, test) = data.split(fraction, data_seed)?;

    let eval = file.as_ref().and_then(|f| f.eval.clone()).unwrap_or_default();
    let out = ensemble_evaluate(&ens, &test, &eval.noise, &eval.attacks)?;

    let singles: Vec<Metrics> = records
        .iter()
        .filter_map(|(_, r)| r.metrics.clone())
        .collect();
    let rows = if singles.len() == records.len() {
        improvement_over_singles(&out.metrics, &singles)
    } else {
        Vec::new()
    };

    let dir = match (&file, &cli.output) {
        (Some(f), _) => run_dir(cli, f),
        (None, Some(out)) => out.clone(),
        (None, None) => records[0].0.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("ensemble_metrics.json"), &out.metrics)?;
    write_text(&dir.join("ensemble.csv"), &improvement_csv(&rows))?;

    if !cli.quiet {
        println!("ensemble of {} members on {} held-out samples:", ens.len(), test.len());
        print_metrics(cli.quiet, &out.metrics);
        if rows.is_empty() {
            println!("(no improvement table: not every member record carries metrics)");
        } else {
            for r in &rows {
                println!(
                    "  {}: ensemble {:.2} vs single mean {:.2} ({:+.2})",
                    r.metric, r.ensemble, r.single_mean, r.improvement
                );
            }
        }
        println!("artifacts in {}", dir.display());
    }
    Ok(0)
}

// ─── sweep ───────────────────────────────────────────────────────────────

/// The reference initialization intervals a sweep covers when none are
/// given on the command line.
pub const DEFAULT_SWEEP_INTERVALS: [(f64, f64); 5] =
    [(0.0, 0.1), (0.1, 0.2), (0.2, 0.25), (0.25, 0.3), (0.3, 0.4)];

fn parse_intervals(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .split_once(':')
                .ok_or_else(|| Error::config(format!("interval '{pair}' is not LO:HI")))?;
            let lo = lo.trim().parse::<f64>().map_err(|_| {
                Error::config(format!("cannot parse interval bound '{lo}'"))
            })?;
            let hi = hi.trim().parse::<f64>().map_err(|_| {
                Error::config(format!("cannot parse interval bound '{hi}'"))
            })?;
            Ok((lo, hi))
        })
        .collect()
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::config(format!("cannot parse seed '{t}'")))
        })
        .collect()
}

fn cmd_sweep(cli: &Cli, intervals_flag: Option<&str>, seeds_flag: Option<&str>) -> Result<i32> {
    let file = require_config(cli)?;
    let seed = effective_seed(cli, &file);
    let base = file.train_config(seed)?;
    let dir = run_dir(cli, &file);

    let intervals = match intervals_flag {
        Some(t) => parse_intervals(t)?,
        None => DEFAULT_SWEEP_INTERVALS.to_vec(),
    };
    let seeds = match seeds_flag {
        Some(t) => parse_seeds(t)?,
        None => (seed..seed + 5).collect(),
    };
    let eval = file.eval.clone().unwrap_or_default();

    if !cli.quiet {
        println!(
            "sweeping {} intervals x {} seeds on {} ({} runs)",
            intervals.len(),
            seeds.len(),
            base.dataset,
            intervals.len() * seeds.len()
        );
    }
    let cells = init_sweep(&base, &intervals, &seeds, &eval.noise, &eval.attacks)?;

    std::fs::create_dir_all(&dir)?;
    write_text(&dir.join("runs.csv"), &runs_csv(&cells))?;
    write_json(&dir.join("sweep.json"), &cells)?;
    for cell in &cells {
        let rows = summarize_cell(cell);
        let name = format!("summary_{}_{}.csv", cell.interval.0, cell.interval.1);
        write_text(&dir.join(name), &summary_csv(&rows))?;
        if !cli.quiet {
            let failed = cell.records.iter().filter(|r| r.failed).count();
            println!(
                "interval [{}, {}] ({} runs, {} failed):",
                cell.interval.0,
                cell.interval.1,
                cell.records.len(),
                failed
            );
            for row in &rows {
                match row.sd {
                    Some(sd) => println!("  {}: {:.2} +/- {:.2}", row.metric, row.mean, sd),
                    None => println!("  {}: {:.2}", row.metric, row.mean),
                }
            }
        }
    }
    if !cli.quiet {
        println!("artifacts in {}", dir.display());
    }
    Ok(0)
}

// ─── tests ───────────────────────────────────────────────────────────────
