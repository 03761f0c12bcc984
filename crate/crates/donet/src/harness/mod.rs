//! Experimental protocol: SGD training with a momentum buffer and scheduled
//! learning-rate drops, evaluation under noise and attacks, initialization
//! sweeps, ensembles, and loss-landscape scans.
//!
//! Everything here is a pure function of (config, seed): shuffles, model
//! init, and every stochastic perturbation draw from named sub-seeds, and
//! parallel fan-out never changes results, only wall time.

pub mod data;
pub mod ensemble;
pub mod landscape;
pub mod sweep;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockKind, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::harness::data::{Dataset, DatasetSpec};
use crate::perturb::{apply_noise, AttackConfig, NoiseConfig};
use crate::tensor::{Graph, Mode, Tensor};
use crate::util::{named_seed, parallel_map, rng_from};

/// Epochs of chance-level training accuracy tolerated before a run is
/// declared FAILED.
const PINNED_EPOCHS: usize = 10;
/// Slack over exact chance accuracy, in percentage points.
const PINNED_SLACK: f64 = 5.0;

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: BlockKind,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    /// Uniform interval for the raw interpolation parameter at init.
    #[serde(default = "default_lambda_init")]
    pub lambda_init: (f64, f64),
    /// Dataset id, e.g. `moons:400:0.08` (see [`DatasetSpec::parse`]).
    pub dataset: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// `(epoch, divisor)` pairs; from each epoch on, the rate is divided.
    #[serde(default)]
    pub lr_drops: Vec<(usize, f64)>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_depth() -> usize {
    8
}

fn default_width() -> usize {
    32
}

fn default_lambda_init() -> (f64, f64) {
    (0.0, 0.1)
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_test_fraction() -> f64 {
    0.25
}

impl TrainConfig {
    /// A small dense baseline for the given dataset/kind; callers override
    /// fields as needed.
    pub fn desk_default(kind: BlockKind, dataset: &str, seed: u64) -> TrainConfig {
        TrainConfig {
            kind,
            depth: default_depth(),
            width: default_width(),
            lambda_init: default_lambda_init(),
            dataset: dataset.to_string(),
            seed,
            epochs: 30,
            batch_size: 32,
            lr0: 0.1,
            lr_drops: vec![(20, 10.0)],
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            test_fraction: default_test_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::config("epochs and batch size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(format!("initial learning rate {} must be positive", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0,1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight decay must be non-negative"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test fraction must lie strictly between 0 and 1"));
        }
        for w in self.lr_drops.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::config("learning-rate drops must be sorted by epoch"));
            }
        }
        if self.lr_drops.iter().any(|(_, d)| !(*d > 0.0)) {
            return Err(Error::config("learning-rate divisors must be positive"));
        }
        let (lo, hi) = self.lambda_init;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::EmptyInterval { lo, hi });
        }
        DatasetSpec::parse(&self.dataset)?;
        Ok(())
    }

    /// Learning rate in force during `epoch` (0-based): the initial rate
    /// divided by every divisor whose drop epoch has been reached.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.lr0;
        for (e, d) in &self.lr_drops {
            if epoch >= *e {
                lr /= d;
            }
        }
        lr
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            kind: self.kind,
            input: data.input,
            width: self.width,
            depth: self.depth,
            classes: data.classes,
            lambda_init: self.lambda_init,
        }
    }
}

/// Accuracy table of one evaluation: everything in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub clean_acc: f64,
    pub noise_acc: BTreeMap<String, f64>,
    pub attack_acc: BTreeMap<String, f64>,
}

impl Metrics {
    /// Flat `name -> accuracy` view in deterministic order, `clean` first.
    pub fn flat(&self) -> Vec<(String, f64)> {
        let mut rows = vec![("clean".to_string(), self.clean_acc)];
        rows.extend(self.noise_acc.iter().map(|(k, v)| (format!("noise:{k}"), *v)));
        rows.extend(self.attack_acc.iter().map(|(k, v)| (format!("attack:{k}"), *v)));
        rows
    }
}

/// The outcome of one training run: the row unit of every results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// Where the trained weights were serialized, if they were.
    pub model_path: Option<PathBuf>,
    pub failed: bool,
    pub epoch_losses: Vec<f64>,
    pub epoch_train_acc: Vec<f64>,
    pub metrics: Option<Metrics>,
    pub wall_time_s: f64,
}

/// A trained model together with its record.
pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: Model,
    /// The held-out split the run's metrics refer to.
    pub test: Dataset,
}

/// One momentum-SGD parameter update on raw slices:
/// `v <- mu*v + g`, `p <- p - lr*(v + wd*p)` (the decay term only when the
/// parameter participates in weight decay).
pub fn sgd_step(p: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, mu: f64, wd: f64, decay: bool) {
    for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = mu * *vi + gi;
        let step = if decay { *vi + wd * *pi } else { *vi };
        *pi -= lr * step;
    }
}

/// Row-wise argmax over a flat `[n, k]` score table, ties broken toward the
/// lowest class id.
pub fn argmax_rows_flat(n: usize, k: usize, data: &[f64]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = &data[i * k..(i + 1) * k];
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    out
}

/// Row-wise argmax with ties broken toward the lowest class id.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let s = logits.shape();
    argmax_rows_flat(s[0], s[1], logits.data())
}

/// Evaluation-mode class predictions for a batch.
pub fn predict(model: &mut Model, x: &Tensor) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let pass = model.forward(&mut g, x, Mode::Eval)?;
    Ok(argmax_rows(&pass.logits))
}

/// Train a model with momentum SGD. Runs are declared FAILED when a batch
/// loss turns NaN or training accuracy stays within [`PINNED_SLACK`] points
/// of chance for [`PINNED_EPOCHS`] consecutive epochs; a FAILED record keeps
/// its partial loss curve and carries no metrics.
pub fn sgd_train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let (train, test) = data.split(cfg.test_fraction, cfg.seed)?;
    let mut model = Model::build(&cfg.model_config(data), cfg.seed)?;

    let mut velocity: Vec<Vec<f64>> =
        model.params().iter().map(|p| vec![0.0; p.value.numel()]).collect();
    let chance = 100.0 / data.classes as f64;
    let mut epoch_losses = Vec::new();
    let mut epoch_train_acc = Vec::new();
    let mut pinned = 0usize;
    let mut failed = false;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from(named_seed(cfg.seed, &format!("shuffle-{epoch}"))));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch_rows in order.chunks(cfg.batch_size) {
            let (xb, yb) = train.batch(batch_rows);
            let mut g = Graph::new();
            let pass = model.forward(&mut g, &xb, Mode::Train)?;
            let loss = g.softmax_cross_entropy(&pass.logits, &yb)?;
            let loss_val = loss.item();
            if loss_val.is_nan() {
                failed = true;
                break 'epochs;
            }
            let grads = g.backward(&loss)?;
            correct += argmax_rows(&pass.logits)
                .iter()
                .zip(&yb)
                .filter(|(p, y)| p == y)
                .count();
            loss_sum += loss_val * batch_rows.len() as f64;

            for ((param, bound), vel) in
                model.params_mut().into_iter().zip(&pass.bound).zip(&mut velocity)
            {
                let grad = grads.wrt(bound)?;
                sgd_step(
                    param.value.data_mut(),
                    vel,
                    grad,
                    lr,
                    cfg.momentum,
                    cfg.weight_decay,
                    param.decay,
                );
            }
        }

        let acc = 100.0 * correct as f64 / train.len() as f64;
        epoch_losses.push(loss_sum / train.len() as f64);
        epoch_train_acc.push(acc);
        if acc <= chance + PINNED_SLACK {
            pinned += 1;
            if pinned >= PINNED_EPOCHS {
                failed = true;
                break;
            }
        } else {
            pinned = 0;
        }
    }

    let record = RunRecord {
        config: cfg.clone(),
        model_path: None,
        failed,
        epoch_losses,
        epoch_train_acc,
        metrics: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { record, model, test })
}

/// Per-sample prediction rows of one evaluation pass.
pub type PredRow = (usize, usize, usize);

/// Metrics plus the per-sample predictions backing every number, keyed like
/// [`Metrics::flat`] but without the `noise:`/`attack:` prefixes.
pub struct EvalOutcome {
    pub metrics: Metrics,
    pub predictions: BTreeMap<String, Vec<PredRow>>,
}

fn accuracy(rows: &[PredRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    100.0 * rows.iter().filter(|(_, y, p)| y == p).count() as f64 / rows.len() as f64
}

/// Anything that can be evaluated: predicts classes for a batch and exposes
/// itself to the gradient attacks. Evaluation clones the target per work
/// item, so implementations must be pure values.
pub trait EvalTarget: crate::perturb::AttackModel + Clone + Sync {
    fn predictions(&mut self, x: &Tensor) -> Result<Vec<usize>>;
}

impl EvalTarget for Model {
    fn predictions(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        predict(self, x)
    }
}

/// Evaluate a target on clean data plus every configured noise family and
/// attack. The whole set is perturbed as one batch so per-sample noise and
/// initialization seeds line up with global sample indices; the independent
/// work items (one per configuration) fan out across workers without
/// affecting results.
pub fn evaluate_with<T: EvalTarget>(
    target: &T,
    data: &Dataset,
    noise: &[NoiseConfig],
    attacks: &[AttackConfig],
) -> Result<EvalOutcome> {
    let (x, y) = data.full_batch();

    enum Item<'a> {
        Clean,
        Noise(&'a NoiseConfig),
        Attack(&'a AttackConfig),
    }
    let mut items = vec![Item::Clean];
    items.extend(noise.iter().map(Item::Noise));
    items.extend(attacks.iter().map(Item::Attack));

    let results: Vec<Result<(String, Vec<usize>)>> = parallel_map(&items, |_, item| {
        let mut m = target.clone();
        match item {
            Item::Clean => Ok(("clean".to_string(), m.predictions(&x)?)),
            Item::Noise(cfg) => {
                let noisy = apply_noise(&x, cfg);
                Ok((cfg.label(), m.predictions(&noisy)?))
            }
            Item::Attack(cfg) => {
                let adv = cfg.apply(&mut m, &x, &y)?;
                Ok((cfg.label(), m.predictions(&adv)?))
            }
        }
    });

    let mut predictions = BTreeMap::new();
    let mut clean_acc = 0.0;
    let mut noise_acc = BTreeMap::new();
    let mut attack_acc = BTreeMap::new();
    for (item, res) in items.iter().zip(results) {
        let (key, preds) = res?;
        let rows: Vec<PredRow> =
            preds.iter().enumerate().map(|(i, p)| (i, y[i], *p)).collect();
        let acc = accuracy(&rows);
        match item {
            Item::Clean => clean_acc = acc,
            Item::Noise(_) => {
                noise_acc.insert(key.clone(), acc);
            }
            Item::Attack(_) => {
                attack_acc.insert(key.clone(), acc);
            }
        }
        predictions.insert(key, rows);
    }
    Ok(EvalOutcome {
        metrics: Metrics { clean_acc, noise_acc, attack_acc },
        predictions,
    })
}

/// [`evaluate_with`] for a single model.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    noise: &[NoiseConfig],
    attacks: &[AttackConfig],
) -> Result<EvalOutcome> {
    evaluate_with(model, data, noise, attacks)
}

/// Render per-sample predictions as CSV.
pub fn prediction_csv(rows: &[PredRow]) -> String {
    let mut out = String::from("sample_index,label,prediction\n");
    for (i, y, p) in rows {
        out.push_str(&format!("{i},{y},{p}\n"));
    }
    out
}

/// Train, then (unless the run FAILED) evaluate on the held-out split and
/// attach the metrics to the record.
pub fn run_one(
    cfg: &TrainConfig,
    data: &Dataset,
    noise: &[NoiseConfig],
    attacks: &[AttackConfig],
) -> Result<TrainOutcome> {
    let mut out = sgd_train(cfg, data)?;
    if !out.record.failed {
        let eval = evaluate(&out.model, &out.test, noise, attacks)?;
        out.record.metrics = Some(eval.metrics);
    }
    Ok(out)
}
