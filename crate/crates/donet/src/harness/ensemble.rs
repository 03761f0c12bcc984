//! Model ensembles: prediction by the argmax of the mean of per-member
//! softmax probabilities, and attacks against the gradient of the ensemble
//! loss (cross-entropy of the mean probability), built on one joint graph
//! over all members.

use crate::blocks::Model;
use crate::error::{Error, Result};
use crate::harness::data::Dataset;
use crate::harness::{argmax_rows_flat, evaluate_with, EvalOutcome, EvalTarget, Metrics};
use crate::perturb::{AttackConfig, AttackModel, NoiseConfig};
use crate::tensor::{Graph, Mode, Tensor};

/// K ≥ 2 architecturally identical models acting as one classifier.
#[derive(Clone)]
pub struct Ensemble {
    members: Vec<Model>,
}

impl Ensemble {
    /// Members must agree on the full architecture config; the first
    /// mismatch is reported by index.
    pub fn new(members: Vec<Model>) -> Result<Ensemble> {
        if members.len() < 2 {
            return Err(Error::EnsembleMismatch(format!(
                "an ensemble needs at least two members, got {}",
                members.len()
            )));
        }
        let first = members[0].config().clone();
        for (i, m) in members.iter().enumerate().skip(1) {
            if *m.config() != first {
                return Err(Error::EnsembleMismatch(format!(
                    "member {i} architecture differs from member 0"
                )));
            }
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Mean of the members' evaluation-mode softmax probabilities, flattened
    /// `[n, classes]`.
    pub fn mean_softmax(&mut self, x: &Tensor) -> Result<Vec<f64>> {
        let n = x.shape()[0];
        let classes = self.members[0].config().classes;
        let mut acc = vec![0.0; n * classes];
        let k = self.members.len() as f64;
        for m in &mut self.members {
            let mut g = Graph::new();
            let pass = m.forward(&mut g, x, Mode::Eval)?;
            let p = g.softmax(&pass.logits)?;
            for (a, v) in acc.iter_mut().zip(p.data()) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= k;
        }
        Ok(acc)
    }

    /// Ensemble prediction: argmax of the mean probability, ties toward the
    /// lowest class id.
    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        let n = x.shape()[0];
        let classes = self.members[0].config().classes;
        let probs = self.mean_softmax(x)?;
        Ok(argmax_rows_flat(n, classes, &probs))
    }
}

impl AttackModel for Ensemble {
    /// Ensemble loss `-(1/N) Σᵢ log qᵢ[yᵢ]` with `q` the mean member softmax,
    /// differentiated through one joint graph holding every member's forward
    /// pass; the input gradient is the sum over the members' input leaves.
    fn loss_and_input_grad(&mut self, x: &Tensor, y: &[usize]) -> Result<(f64, Vec<f64>)> {
        let n = x.shape()[0];
        let classes = self.members[0].config().classes;
        if y.len() != n {
            return Err(Error::invalid(format!("{} labels for a batch of {n}", y.len())));
        }
        for &label in y {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }

        let mut g = Graph::new();
        let mut inputs = Vec::with_capacity(self.members.len());
        let mut mean: Option<Tensor> = None;
        for m in &mut self.members {
            let pass = m.forward(&mut g, x, Mode::Eval)?;
            let p = g.softmax(&pass.logits)?;
            mean = Some(match mean {
                None => p,
                Some(acc) => g.add(&acc, &p)?,
            });
            inputs.push(pass.input);
        }
        let inv_k = g.constant(1.0 / self.members.len() as f64);
        let q = g.mul(&mean.expect("at least two members"), &inv_k)?;

        // Pick each row's labelled probability with a one-hot mask and a
        // column of ones as the row-sum reducer.
        let mut mask = vec![0.0; n * classes];
        for (i, &label) in y.iter().enumerate() {
            mask[i * classes + label] = 1.0;
        }
        let mask = g.leaf(&Tensor::new(vec![n, classes], mask)?);
        let picked = g.mul(&q, &mask)?;
        let ones = g.leaf(&Tensor::new(vec![classes, 1], vec![1.0; classes])?);
        let per_row = g.matmul(&picked, &ones)?;
        let logp = g.log(&per_row)?;
        let total = g.sum(&logp)?;
        let scale = g.constant(-1.0 / n as f64);
        let loss = g.mul(&total, &scale)?;

        let grads = g.backward(&loss)?;
        let mut gx = vec![0.0; x.numel()];
        for leaf in &inputs {
            for (a, b) in gx.iter_mut().zip(grads.wrt(leaf)?) {
                *a += b;
            }
        }
        Ok((loss.item(), gx))
    }
}

impl EvalTarget for Ensemble {
    fn predictions(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        self.predict(x)
    }
}

/// Evaluate the ensemble exactly like a single model: clean, every noise
/// family, every attack (attacks drive the ensemble gradient).
pub fn ensemble_evaluate(
    ens: &Ensemble,
    data: &Dataset,
    noise: &[NoiseConfig],
    attacks: &[AttackConfig],
) -> Result<EvalOutcome> {
    evaluate_with(ens, data, noise, attacks)
}

/// Per-metric comparison row: ensemble score, mean of the members' single
/// scores, and the improvement (ensemble − single mean).
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementRow {
    pub metric: String,
    pub ensemble: f64,
    pub single_mean: f64,
    pub improvement: f64,
}

/// Compare ensemble metrics against the mean of the members' own metrics.
/// Metrics missing from any single run are skipped.
pub fn improvement_over_singles(ens: &Metrics, singles: &[Metrics]) -> Vec<ImprovementRow> {
    let mut rows = Vec::new();
    for (metric, value) in ens.flat() {
        let vals: Vec<f64> = singles
            .iter()
            .filter_map(|m| m.flat().into_iter().find(|(k, _)| *k == metric).map(|(_, v)| v))
            .collect();
        if vals.len() != singles.len() {
            continue;
        }
        let single_mean = vals.iter().sum::<f64>() / vals.len() as f64;
        rows.push(ImprovementRow {
            metric,
            ensemble: value,
            single_mean,
            improvement: value - single_mean,
        });
    }
    rows
}

/// `metric,ensemble,single_mean,improvement` table.
pub fn improvement_csv(rows: &[ImprovementRow]) -> String {
    let mut out = String::from("metric,ensemble,single_mean,improvement\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.metric, r.ensemble, r.single_mean, r.improvement
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{BlockKind, InputShape, ModelConfig};
    use crate::check::{max_rel_err, numerical_grad};
    use crate::harness::data::moons;
    use crate::harness::evaluate;
    use crate::perturb::{AttackKind, NoiseKind};
    use std::collections::BTreeMap;

    /// A model whose blocks are exact pass-throughs (residual skip with the
    /// final map zeroed) and whose stem is the identity, so the whole network
    /// computes `logits = x·W + b` with the head weights under our control.
    fn linear_probe(features: usize, classes: usize, w: &[f64], b: &[f64], seed: u64) -> Model {
        let cfg = ModelConfig {
            kind: BlockKind::Residual,
            input: InputShape::Dense { features },
            width: features,
            depth: 1,
            classes,
            lambda_init: (0.0, 0.0),
        };
        let mut m = Model::build(&cfg, seed).unwrap();
        let mut stem = vec![0.0; features * features];
        for i in 0..features {
            stem[i * features + i] = 1.0;
        }
        m.stem.weight.value = Tensor::new(vec![features, features], stem).unwrap();
        m.stem.bias.value = Tensor::zeros(vec![features]);
        let t = &mut m.blocks[0].transform;
        t.map2.weight.value = Tensor::zeros(t.map2.weight.value.shape().to_vec());
        t.map2.bias.value = Tensor::zeros(vec![features]);
        m.head.weight.value = Tensor::new(vec![features, classes], w.to_vec()).unwrap();
        m.head.bias.value = Tensor::new(vec![classes], b.to_vec()).unwrap();
        m
    }

    fn softmax2(a: f64, b: f64) -> (f64, f64) {
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        (ea / (ea + eb), eb / (ea + eb))
    }

    #[test]
    fn two_copies_of_one_model_equal_the_single_model_on_every_metric() {
        let data = moons(60, 0.06, 3).unwrap();
        let cfg = ModelConfig {
            kind: BlockKind::In,
            input: InputShape::Dense { features: 2 },
            width: 6,
            depth: 2,
            classes: 2,
            lambda_init: (0.1, 0.2),
        };
        let model = Model::build(&cfg, 8).unwrap();
        let noise = [NoiseConfig::new(NoiseKind::Gaussian, 4), NoiseConfig::new(NoiseKind::Impulse, 4)];
        let attacks = [
            AttackConfig::new(AttackKind::Fgsm, 0.03),
            AttackConfig { kind: AttackKind::Pgd, epsilon: 0.03, alpha: 0.01, iters: 4, seed: 2 },
        ];
        let single = evaluate(&model, &data, &noise, &attacks).unwrap();
        let ens = Ensemble::new(vec![model.clone(), model.clone()]).unwrap();
        let joint = ensemble_evaluate(&ens, &data, &noise, &attacks).unwrap();
        assert_eq!(single.metrics, joint.metrics);
        assert_eq!(single.predictions, joint.predictions);
    }

    #[test]
    fn mean_probability_decides_between_opposed_members() {
        // Sample e1: member A says class 0 with logits (2,0); member B says
        // class 1 with logits (0,1). The mean probability favors class 0.
        let a = linear_probe(3, 2, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 0.0], 1);
        let b = linear_probe(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 0.0], 2);
        let mut ens = Ensemble::new(vec![a, b]).unwrap();
        let x = Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let probs = ens.mean_softmax(&x).unwrap();
        let (pa0, _) = softmax2(2.0, 0.0);
        let (pb0, _) = softmax2(0.0, 1.0);
        let expect0 = (pa0 + pb0) / 2.0;
        assert!((probs[0] - expect0).abs() < 1e-12);
        assert!((probs[1] - (1.0 - expect0)).abs() < 1e-12);
        assert!(expect0 > 0.5);
        assert_eq!(ens.predict(&x).unwrap(), vec![0]);
    }

    #[test]
    fn disjoint_errors_average_out_to_a_perfect_ensemble() {
        // Three one-hot samples with labels 0, 1, 0. Member i is softly wrong
        // on sample i and confidently right elsewhere, so each member scores
        // 2/3 while the mean probability is right everywhere.
        let strong = 4.0;
        let soft = 0.4;
        let rows = |wrong: usize| -> Vec<f64> {
            let labels = [0usize, 1, 0];
            let mut w = vec![0.0; 6];
            for s in 0..3 {
                let right = labels[s];
                let (hi, lo) = if s == wrong { (1 - right, right) } else { (right, 1 - right) };
                let gap = if s == wrong { soft } else { strong };
                w[s * 2 + hi] = gap;
                w[s * 2 + lo] = 0.0;
            }
            w
        };
        let members: Vec<Model> = (0..3)
            .map(|i| linear_probe(3, 2, &rows(i), &[0.0, 0.0], i as u64))
            .collect();
        let data = Dataset {
            input: InputShape::Dense { features: 3 },
            xs: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            ys: vec![0, 1, 0],
            classes: 2,
        };
        let member_accs: Vec<f64> = members
            .iter()
            .map(|m| evaluate(m, &data, &[], &[]).unwrap().metrics.clean_acc)
            .collect();
        for acc in &member_accs {
            assert!((acc - 200.0 / 3.0).abs() < 1e-9, "member accuracy {acc}");
        }
        let ens = Ensemble::new(members).unwrap();
        let joint = ensemble_evaluate(&ens, &data, &[], &[]).unwrap();
        assert_eq!(joint.metrics.clean_acc, 100.0);
        let min_member = member_accs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(joint.metrics.clean_acc >= min_member);
    }

    #[test]
    fn ensemble_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            kind: BlockKind::InSig,
            input: InputShape::Dense { features: 3 },
            width: 5,
            depth: 1,
            classes: 2,
            lambda_init: (0.3, 0.3),
        };
        let a = Model::build(&cfg, 31).unwrap();
        let b = Model::build(&cfg, 32).unwrap();
        let mut ens = Ensemble::new(vec![a, b]).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.2, 0.7, 0.4, 0.9, 0.1, 0.5]).unwrap();
        let y = vec![1usize, 0];
        let (loss, grad) = ens.loss_and_input_grad(&x, &y).unwrap();
        assert!(loss.is_finite());

        let oracle = ens.clone();
        let numeric = numerical_grad(
            |v| {
                let xt = Tensor::new(vec![2, 3], v.to_vec()).unwrap();
                let probs = oracle.clone().mean_softmax(&xt).unwrap();
                -(probs[0 * 2 + y[0]].ln() + probs[1 * 2 + y[1]].ln()) / 2.0
            },
            x.data(),
            1e-5,
        );
        assert!(max_rel_err(&grad, &numeric) < 1e-5, "{grad:?} vs {numeric:?}");
    }

    #[test]
    fn mismatched_members_are_rejected() {
        let mk = |width: usize, seed: u64| {
            Model::build(
                &ModelConfig {
                    kind: BlockKind::In,
                    input: InputShape::Dense { features: 2 },
                    width,
                    depth: 1,
                    classes: 2,
                    lambda_init: (0.0, 0.1),
                },
                seed,
            )
            .unwrap()
        };
        assert!(matches!(
            Ensemble::new(vec![mk(4, 1), mk(6, 2)]),
            Err(Error::EnsembleMismatch(_))
        ));
        assert!(matches!(Ensemble::new(vec![mk(4, 1)]), Err(Error::EnsembleMismatch(_))));
        assert!(Ensemble::new(vec![mk(4, 1), mk(4, 2)]).is_ok());
    }

    #[test]
    fn improvement_rows_and_csv_are_plain_arithmetic() {
        let mk = |clean: f64, noise: f64| Metrics {
            clean_acc: clean,
            noise_acc: BTreeMap::from([(String::from("gaussian@0.08"), noise)]),
            attack_acc: BTreeMap::new(),
        };
        let rows = improvement_over_singles(&mk(90.0, 70.0), &[mk(88.0, 60.0), mk(84.0, 65.0)]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].metric, "clean");
        assert_eq!(rows[0].single_mean, 86.0);
        assert_eq!(rows[0].improvement, 4.0);
        let csv = improvement_csv(&rows);
        assert!(csv.starts_with("metric,ensemble,single_mean,improvement\n"));
        assert!(csv.contains("clean,90,86,4\n"));
        assert!(csv.contains("noise:gaussian@0.08,70,62.5,7.5\n"));
    }
}
