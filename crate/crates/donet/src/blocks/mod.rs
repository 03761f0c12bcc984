//! The block family: residual, non-residual, and the interpolated variants
//! in between, plus the small models built from them.
//!
//! Every block computes `f(x)` with the same shape-preserving pre-activation
//! transform (norm -> relu -> map -> norm -> relu -> map) and then combines
//! it with the shortcut according to its kind. Writing `a` for the block's
//! coefficient, the step is `(1 - a) x + f(x)` (plain interpolation) or
//! `(1 - a) x + (1 + a) f(x)` (the growing-weight variant); `a` comes from a
//! trainable per-block scalar through ReLU or sigmoid, or — for the gating
//! kinds — from a per-sample linear gate. The unit step size is absorbed
//! into the coefficient, so `a = 0` is exactly a residual block and `a = 1`
//! exactly drops the shortcut.

pub mod coeff;
pub mod serialize;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, RunningStats, Tensor};
use crate::util::{named_seed, rng_from};

/// The closed set of block kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// `x + f(x)`.
    Residual,
    /// `f(x)`.
    NonResidual,
    /// `(1 - relu(lambda)) x + f(x)`.
    In,
    /// `(1 - relu(lambda)) x + (1 + relu(lambda)) f(x)`.
    LambdaIn,
    /// `(1 - sigmoid(lambda)) x + f(x)`.
    InSig,
    /// `(1 - relu(w . g(x) + b)) x + f(x)` with a per-sample gate.
    InGating,
    /// `(1 - sigmoid(w . g(x) + b)) x + f(x)` with a per-sample gate.
    InGatingSig,
}

impl BlockKind {
    pub const ALL: [BlockKind; 7] = [
        BlockKind::Residual,
        BlockKind::NonResidual,
        BlockKind::In,
        BlockKind::LambdaIn,
        BlockKind::InSig,
        BlockKind::InGating,
        BlockKind::InGatingSig,
    ];

    /// Stable numeric tag used by the binary parameter format.
    pub fn tag(self) -> u8 {
        match self {
            BlockKind::Residual => 0,
            BlockKind::NonResidual => 1,
            BlockKind::In => 2,
            BlockKind::LambdaIn => 3,
            BlockKind::InSig => 4,
            BlockKind::InGating => 5,
            BlockKind::InGatingSig => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::format(format!("unknown block kind tag {tag}")))
    }

    /// Kinds whose coefficient is a trainable per-block scalar.
    pub fn has_lambda(self) -> bool {
        matches!(self, BlockKind::In | BlockKind::LambdaIn | BlockKind::InSig)
    }

    /// Kinds whose coefficient is a per-sample gate.
    pub fn has_gate(self) -> bool {
        matches!(self, BlockKind::InGating | BlockKind::InGatingSig)
    }
}

/// Shape-preserving map inside the transform: a dense pair or a 3x3 conv pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Dense,
    Conv,
}

/// Input geometry of a model; it also fixes the map kind of every block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum InputShape {
    Dense { features: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn map_kind(self) -> MapKind {
        match self {
            InputShape::Dense { .. } => MapKind::Dense,
            InputShape::Image { .. } => MapKind::Conv,
        }
    }

    /// Flat feature count of one sample.
    pub fn numel(self) -> usize {
        match self {
            InputShape::Dense { features } => features,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }

    /// Full tensor shape for a batch of `n` samples.
    pub fn batch_shape(self, n: usize) -> Vec<usize> {
        match self {
            InputShape::Dense { features } => vec![n, features],
            InputShape::Image { channels, height, width } => vec![n, channels, height, width],
        }
    }
}

/// Everything needed to build a model deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: BlockKind,
    pub input: InputShape,
    pub width: usize,
    pub depth: usize,
    pub classes: usize,
    /// Uniform interval the per-block coefficient parameters are drawn from.
    pub lambda_init: (f64, f64),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        if self.width == 0 || self.classes < 2 || self.input.numel() == 0 {
            return Err(Error::invalid("width, classes and input extent must be positive"));
        }
        let (lo, hi) = self.lambda_init;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::EmptyInterval { lo, hi });
        }
        Ok(())
    }
}

/// One trainable tensor with its optimizer metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Whether weight decay applies; false only for the coefficient scalars.
    pub decay: bool,
}

impl Param {
    fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param { name: name.into(), value, decay: true }
    }

    fn no_decay(name: impl Into<String>, value: Tensor) -> Self {
        Param { name: name.into(), value, decay: false }
    }
}

/// Normalization layer parameters plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnLayer {
    pub gamma: Param,
    pub beta: Param,
    pub stats: RunningStats,
}

impl BnLayer {
    fn new(name: &str, channels: usize) -> Self {
        BnLayer {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(vec![channels], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            stats: RunningStats::new(channels),
        }
    }
}

/// A dense or 3x3-conv map with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MapLayer {
    pub weight: Param,
    pub bias: Param,
}

impl MapLayer {
    /// Fan-in-scaled normal weights, zero bias.
    fn build(
        name: &str,
        kind: MapKind,
        from: usize,
        to: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (shape, fan_in) = match kind {
            MapKind::Dense => (vec![from, to], from),
            MapKind::Conv => (vec![to, from, 3, 3], from * 9),
        };
        let sd = (2.0 / fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let normal = rand_distr::Normal::new(0.0, sd).expect("positive sd");
        let data: Vec<f64> = (0..numel).map(|_| rng.sample(normal)).collect();
        MapLayer {
            weight: Param::new(format!("{name}.weight"), Tensor::new(shape, data).expect("shape")),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(vec![to])),
        }
    }

    fn apply(&self, g: &mut Graph, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let mapped = match self.weight.value.shape().len() {
            2 => g.matmul(x, w)?,
            4 => g.conv2d(x, w, 1, 1)?,
            _ => return Err(Error::format("map weight must be rank 2 or 4")),
        };
        g.add_bias(&mapped, b)
    }
}

/// The shape-preserving two-stage transform `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub bn1: BnLayer,
    pub map1: MapLayer,
    pub bn2: BnLayer,
    pub map2: MapLayer,
}

impl Transform {
    fn build(name: &str, kind: MapKind, width: usize, rng: &mut impl Rng) -> Self {
        Transform {
            bn1: BnLayer::new(&format!("{name}.bn1"), width),
            map1: MapLayer::build(&format!("{name}.map1"), kind, width, width, rng),
            bn2: BnLayer::new(&format!("{name}.bn2"), width),
            map2: MapLayer::build(&format!("{name}.map2"), kind, width, width, rng),
        }
    }
}

/// One block: the transform plus its kind-specific coefficient parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub transform: Transform,
    pub lambda_raw: Option<Param>,
    pub gate_w: Option<Param>,
    pub gate_b: Option<Param>,
}

/// A stem, a stack of same-width blocks, and a linear classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub stem: MapLayer,
    pub blocks: Vec<Block>,
    pub head: MapLayer,
}

/// Result of one forward pass. `bound` holds the graph-attached parameter
/// leaves in exactly the order of [`Model::params`], so gradients can be
/// fetched by position after `backward`.
pub struct ForwardPass {
    pub logits: Tensor,
    /// The graph-attached copy of the input batch; backward gradients with
    /// respect to the data are fetched through this handle.
    pub input: Tensor,
    pub bound: Vec<Tensor>,
    /// Per-block effective coefficient (batch mean for gating kinds).
    pub coefficients: Vec<f64>,
}

/// Cursor over pre-bound parameter leaves; consumption order must mirror
/// [`Model::params`].
struct Binder {
    bound: Vec<Tensor>,
    cursor: usize,
}

impl Binder {
    fn next(&mut self) -> Tensor {
        let t = self.bound[self.cursor].clone();
        self.cursor += 1;
        t
    }
}

impl Model {
    /// Deterministic construction from a config and a seed.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = rng_from(named_seed(seed, "model-init"));
        let map_kind = config.input.map_kind();
        let in_features = match config.input {
            InputShape::Dense { features } => features,
            InputShape::Image { channels, .. } => channels,
        };
        let stem = MapLayer::build("stem", map_kind, in_features, config.width, &mut rng);
        let (lo, hi) = config.lambda_init;
        let mut blocks = Vec::with_capacity(config.depth);
        for b in 0..config.depth {
            let name = format!("block{b}");
            let transform = Transform::build(&name, map_kind, config.width, &mut rng);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            };
            let lambda_raw = config.kind.has_lambda().then(|| {
                Param::no_decay(format!("{name}.lambda"), Tensor::scalar(draw(&mut rng)))
            });
            let (gate_w, gate_b) = if config.kind.has_gate() {
                (
                    Some(Param::new(
                        format!("{name}.gate_w"),
                        Tensor::zeros(vec![config.width, 1]),
                    )),
                    Some(Param::new(format!("{name}.gate_b"), Tensor::scalar(draw(&mut rng)))),
                )
            } else {
                (None, None)
            };
            blocks.push(Block { kind: config.kind, transform, lambda_raw, gate_w, gate_b });
        }
        let head = MapLayer::build("head", MapKind::Dense, config.width, config.classes, &mut rng);
        Ok(Model { config: config.clone(), stem, blocks, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// All trainable parameters in canonical traversal order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        out.push(&self.stem.weight);
        out.push(&self.stem.bias);
        for b in &self.blocks {
            let t = &b.transform;
            out.extend([&t.bn1.gamma, &t.bn1.beta, &t.map1.weight, &t.map1.bias]);
            out.extend([&t.bn2.gamma, &t.bn2.beta, &t.map2.weight, &t.map2.bias]);
            if let Some(l) = &b.lambda_raw {
                out.push(l);
            }
            if let Some(w) = &b.gate_w {
                out.push(w);
            }
            if let Some(bb) = &b.gate_b {
                out.push(bb);
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    /// Mutable view in the same order as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        out.push(&mut self.stem.weight);
        out.push(&mut self.stem.bias);
        for b in &mut self.blocks {
            let t = &mut b.transform;
            out.extend([&mut t.bn1.gamma, &mut t.bn1.beta, &mut t.map1.weight, &mut t.map1.bias]);
            out.extend([&mut t.bn2.gamma, &mut t.bn2.beta, &mut t.map2.weight, &mut t.map2.bias]);
            if let Some(l) = &mut b.lambda_raw {
                out.push(l);
            }
            if let Some(w) = &mut b.gate_w {
                out.push(w);
            }
            if let Some(bb) = &mut b.gate_b {
                out.push(bb);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Raw coefficient parameters (one per block) for lambda-carrying kinds.
    pub fn lambda_raw_values(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .filter_map(|b| b.lambda_raw.as_ref().map(|p| p.value.item()))
            .collect()
    }

    /// Forward pass over a batch. Train mode updates normalization running
    /// statistics as a side effect; eval mode leaves the model untouched.
    pub fn forward(&mut self, g: &mut Graph, x: &Tensor, mode: Mode) -> Result<ForwardPass> {
        let n = x.shape()[0];
        if x.shape() != self.config.input.batch_shape(n).as_slice() {
            return Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: self.config.input.batch_shape(n),
            });
        }
        let bound: Vec<Tensor> = self.params().iter().map(|p| g.leaf(&p.value)).collect();
        let mut binder = Binder { bound, cursor: 0 };

        let x = g.leaf(x);
        let (sw, sb) = (binder.next(), binder.next());
        let mut h = self.stem.apply(g, &x, &sw, &sb)?;
        let mut coefficients = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (out, a) = block_forward(g, block, &mut binder, &h, mode)?;
            coefficients.push(a);
            h = out;
        }
        // Collapse spatial extent before the classifier for image inputs.
        let features = if h.shape().len() == 4 { g.spatial_mean(&h)? } else { h };
        let (hw, hb) = (binder.next(), binder.next());
        let logits = self.head.apply(g, &features, &hw, &hb)?;
        debug_assert_eq!(binder.cursor, binder.bound.len(), "parameter bind order drift");
        Ok(ForwardPass { logits, input: x, bound: binder.bound, coefficients })
    }
}

/// Apply one block. Returns the output and the effective coefficient (batch
/// mean for gating kinds; 0 for residual, 1 for non-residual).
fn block_forward(
    g: &mut Graph,
    block: &mut Block,
    binder: &mut Binder,
    x: &Tensor,
    mode: Mode,
) -> Result<(Tensor, f64)> {
    // Transform parameters are consumed in canonical order.
    let t = &mut block.transform;
    let (g1, b1) = (binder.next(), binder.next());
    let (w1, bias1) = (binder.next(), binder.next());
    let (g2, b2) = (binder.next(), binder.next());
    let (w2, bias2) = (binder.next(), binder.next());

    let h = g.batch_norm(x, &g1, &b1, &mut t.bn1.stats, mode)?;
    let h = g.relu(&h)?;
    let h = t.map1.apply(g, &h, &w1, &bias1)?;
    let h = g.batch_norm(&h, &g2, &b2, &mut t.bn2.stats, mode)?;
    let h = g.relu(&h)?;
    let f = t.map2.apply(g, &h, &w2, &bias2)?;
    if f.shape() != x.shape() {
        return Err(Error::ShapeMismatch { left: x.shape().to_vec(), right: f.shape().to_vec() });
    }

    match block.kind {
        BlockKind::Residual => Ok((g.add(x, &f)?, 0.0)),
        BlockKind::NonResidual => Ok((f, 1.0)),
        BlockKind::In | BlockKind::LambdaIn | BlockKind::InSig => {
            let lraw = binder.next();
            let a = match block.kind {
                BlockKind::InSig => g.sigmoid(&lraw)?,
                _ => g.relu(&lraw)?,
            };
            let grow = block.kind == BlockKind::LambdaIn;
            let out = combine(g, x, &f, &a, grow)?;
            Ok((out, a.item()))
        }
        BlockKind::InGating | BlockKind::InGatingSig => {
            let (gw, gb) = (binder.next(), binder.next());
            // Gate input: the features themselves for dense blocks, the
            // spatial mean for image blocks — one scalar per sample.
            let feats = if x.shape().len() == 4 { g.spatial_mean(x)? } else { x.clone() };
            let pre = g.matmul(&feats, &gw)?;
            let pre = g.add_bias(&pre, &gb)?;
            let a = match block.kind {
                BlockKind::InGatingSig => g.sigmoid(&pre)?,
                _ => g.relu(&pre)?,
            };
            let mean_a = a.data().iter().sum::<f64>() / a.numel() as f64;
            let out = combine(g, x, &f, &a, false)?;
            Ok((out, mean_a))
        }
    }
}

/// The interpolation step `(1 - a) x + f` — or, when `grow` is set,
/// `(1 - a) x + (1 + a) f`. `a` is either a `[1]` scalar (broadcast) or a
/// `[N,1]` per-sample column (row scaling); gradient flows through it.
pub fn combine(g: &mut Graph, x: &Tensor, f: &Tensor, a: &Tensor, grow: bool) -> Result<Tensor> {
    let one = g.constant(1.0);
    let keep = g.sub(&one, a)?;
    let per_sample = a.shape().len() == 2;
    let kept = if per_sample { g.scale_rows(x, &keep)? } else { g.mul(&keep, x)? };
    let fed = if grow {
        let gain = g.add(&one, a)?;
        if per_sample {
            g.scale_rows(f, &gain)?
        } else {
            g.mul(&gain, f)?
        }
    } else {
        f.clone()
    };
    g.add(&kept, &fed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_config(kind: BlockKind) -> ModelConfig {
        ModelConfig {
            kind,
            input: InputShape::Dense { features: 3 },
            width: 4,
            depth: 2,
            classes: 2,
            lambda_init: (0.0, 0.1),
        }
    }

    fn conv_config(kind: BlockKind) -> ModelConfig {
        ModelConfig {
            kind,
            input: InputShape::Image { channels: 2, height: 5, width: 5 },
            width: 3,
            depth: 2,
            classes: 2,
            lambda_init: (0.0, 0.1),
        }
    }

    fn batch_for(config: &ModelConfig, seed: u64) -> Tensor {
        use rand::Rng;
        let n = 4;
        let shape = config.input.batch_shape(n);
        let numel: usize = shape.iter().product();
        let mut rng = rng_from(named_seed(seed, "block-test-batch"));
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    fn logits_of(model: &mut Model, x: &Tensor, mode: Mode) -> Vec<f64> {
        let mut g = Graph::new();
        model.forward(&mut g, x, mode).unwrap().logits.into_data()
    }

    /// Replace every block's coefficient parameter with a fixed raw value.
    fn set_lambda(model: &mut Model, v: f64) {
        for b in &mut model.blocks {
            if let Some(l) = &mut b.lambda_raw {
                l.value = Tensor::scalar(v);
            }
        }
    }

    /// Copy transform/stem/head weights from one model to another so kinds
    /// can be compared on identical weights.
    fn copy_shared_weights(from: &Model, to: &mut Model) {
        to.stem = from.stem.clone();
        to.head = from.head.clone();
        for (src, dst) in from.blocks.iter().zip(&mut to.blocks) {
            dst.transform = src.transform.clone();
        }
    }

    #[test]
    fn interpolated_block_with_nonpositive_lambda_bit_equals_residual() {
        for config in [dense_config(BlockKind::In), conv_config(BlockKind::In)] {
            let x = batch_for(&config, 1);
            let mut reference = Model::build(
                &ModelConfig { kind: BlockKind::Residual, ..config.clone() },
                9,
            )
            .unwrap();
            for raw in [0.0, -0.5, -3.0] {
                let mut m = Model::build(&config, 9).unwrap();
                copy_shared_weights(&reference, &mut m);
                set_lambda(&mut m, raw);
                let a = logits_of(&mut m, &x, Mode::Eval);
                let b = logits_of(&mut reference, &x, Mode::Eval);
                assert!(
                    a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
                    "raw={raw}: outputs differ"
                );
            }
        }
    }

    #[test]
    fn growing_variant_with_nonpositive_lambda_bit_equals_residual() {
        let config = dense_config(BlockKind::LambdaIn);
        let x = batch_for(&config, 2);
        let mut reference =
            Model::build(&ModelConfig { kind: BlockKind::Residual, ..config.clone() }, 4).unwrap();
        let mut m = Model::build(&config, 4).unwrap();
        copy_shared_weights(&reference, &mut m);
        set_lambda(&mut m, -1.0);
        let a = logits_of(&mut m, &x, Mode::Eval);
        let b = logits_of(&mut reference, &x, Mode::Eval);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn unit_coefficient_bit_equals_the_bare_transform() {
        // relu(lambda) = 1 must reproduce the non-residual output bit for bit
        // (generic data: no negative zeros in f).
        let config = dense_config(BlockKind::In);
        let x = batch_for(&config, 3);
        let mut bare =
            Model::build(&ModelConfig { kind: BlockKind::NonResidual, ..config.clone() }, 8)
                .unwrap();
        let mut m = Model::build(&config, 8).unwrap();
        copy_shared_weights(&bare, &mut m);
        set_lambda(&mut m, 1.0);
        let a = logits_of(&mut m, &x, Mode::Eval);
        let b = logits_of(&mut bare, &x, Mode::Eval);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn combine_matches_hand_arithmetic() {
        // a = 0.25, x = 2, f = 1, growing variant: 0.75*2 + 1.25*1 = 2.75.
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let f = g.leaf(&Tensor::new(vec![1, 1], vec![1.0]).unwrap());
        let a = g.leaf(&Tensor::scalar(0.25));
        let out = combine(&mut g, &x, &f, &a, true).unwrap();
        assert_eq!(out.data(), &[2.75]);
        // Plain variant: 0.75*2 + 1 = 2.5.
        let out = combine(&mut g, &x, &f, &a, false).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    /// Run just the first block of `m` on its own stem output and return
    /// `(stem_output, block_output, coefficient)`.
    fn first_block_output(m: &mut Model, x: &Tensor) -> (Tensor, Tensor, f64) {
        let mut g = Graph::new();
        let xb = g.leaf(x);
        let bound: Vec<Tensor> = m.params().iter().map(|p| g.leaf(&p.value)).collect();
        let mut binder = Binder { bound, cursor: 0 };
        let (sw, sb) = (binder.next(), binder.next());
        let h0 = m.stem.apply(&mut g, &xb, &sw, &sb).unwrap();
        let (out, a) =
            block_forward(&mut g, &mut m.blocks[0], &mut binder, &h0, Mode::Eval).unwrap();
        (h0, out, a)
    }

    #[test]
    fn interpolation_bracket_isolates_the_shortcut_term() {
        // In(x) - NonResidual(x) == (1 - a) x within f64 round-off, checked
        // at the single-block level on identical transforms.
        let config = ModelConfig { depth: 1, ..dense_config(BlockKind::In) };
        let x = batch_for(&config, 5);
        for raw in [0.0, 0.3, 0.7, 1.0] {
            let mut m = Model::build(&config, 11).unwrap();
            set_lambda(&mut m, raw);
            let mut bare =
                Model::build(&ModelConfig { kind: BlockKind::NonResidual, ..config.clone() }, 11)
                    .unwrap();
            copy_shared_weights(&m, &mut bare);

            let (h0, in_out, a) = first_block_output(&mut m, &x);
            let (_, bare_out, _) = first_block_output(&mut bare, &x);
            assert!((a - raw.max(0.0)).abs() < 1e-15);
            for i in 0..in_out.numel() {
                let got = in_out.data()[i] - bare_out.data()[i];
                let want = (1.0 - a) * h0.data()[i];
                assert!(
                    (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                    "raw={raw} i={i}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn lambda_gradients_match_finite_differences_for_all_owning_kinds() {
        for kind in [BlockKind::In, BlockKind::LambdaIn, BlockKind::InSig] {
            let config = dense_config(kind);
            let x = batch_for(&config, 7);
            let labels = vec![0usize, 1, 0, 1];
            let mut m = Model::build(&config, 21).unwrap();
            set_lambda(&mut m, 0.3); // interior point: relu and sigmoid differentiable

            // Autodiff gradient for each block's coefficient parameter.
            let mut g = Graph::new();
            let pass = m.forward(&mut g, &x, Mode::Eval).unwrap();
            let loss = g.softmax_cross_entropy(&pass.logits, &labels).unwrap();
            let grads = g.backward(&loss).unwrap();
            let mut auto = Vec::new();
            for (p, b) in m.params().iter().zip(&pass.bound) {
                if p.name.ends_with(".lambda") {
                    auto.push(grads.wrt(b).unwrap()[0]);
                }
            }
            assert_eq!(auto.len(), config.depth);

            // Central differences through a full re-forward per probe.
            let h = 1e-6;
            let loss_at = |m: &mut Model, block: usize, v: f64| -> f64 {
                let old = m.blocks[block].lambda_raw.as_ref().unwrap().value.item();
                m.blocks[block].lambda_raw.as_mut().unwrap().value = Tensor::scalar(v);
                let mut g = Graph::new();
                let pass = m.forward(&mut g, &x, Mode::Eval).unwrap();
                let loss = g.softmax_cross_entropy(&pass.logits, &labels).unwrap().item();
                m.blocks[block].lambda_raw.as_mut().unwrap().value = Tensor::scalar(old);
                loss
            };
            for b in 0..config.depth {
                let base = m.blocks[b].lambda_raw.as_ref().unwrap().value.item();
                let fd = (loss_at(&mut m, b, base + h) - loss_at(&mut m, b, base - h)) / (2.0 * h);
                let rel = (auto[b] - fd).abs() / (fd.abs() + 1e-8);
                assert!(rel < 1e-5, "{kind:?} block {b}: auto {} vs fd {fd}", auto[b]);
            }
        }
    }

    #[test]
    fn gate_gradients_match_finite_differences() {
        for kind in [BlockKind::InGating, BlockKind::InGatingSig] {
            let config = dense_config(kind);
            let x = batch_for(&config, 13);
            let labels = vec![0usize, 1, 1, 0];
            let mut m = Model::build(&config, 22).unwrap();
            // Nudge gate weights off zero so the relu gate is differentiable.
            for b in &mut m.blocks {
                let w = b.gate_w.as_mut().unwrap();
                let n = w.value.numel();
                w.value =
                    Tensor::new(w.value.shape().to_vec(), (0..n).map(|i| 0.05 + 0.01 * i as f64).collect())
                        .unwrap();
                b.gate_b.as_mut().unwrap().value = Tensor::scalar(0.2);
            }

            let mut g = Graph::new();
            let pass = m.forward(&mut g, &x, Mode::Eval).unwrap();
            let loss = g.softmax_cross_entropy(&pass.logits, &labels).unwrap();
            let grads = g.backward(&loss).unwrap();
            let mut auto_b = Vec::new();
            for (p, t) in m.params().iter().zip(&pass.bound) {
                if p.name.ends_with(".gate_b") {
                    auto_b.push(grads.wrt(t).unwrap()[0]);
                }
            }

            let h = 1e-6;
            for b in 0..config.depth {
                let base = m.blocks[b].gate_b.as_ref().unwrap().value.item();
                let loss_at = |m: &mut Model, v: f64| -> f64 {
                    m.blocks[b].gate_b.as_mut().unwrap().value = Tensor::scalar(v);
                    let mut g = Graph::new();
                    let pass = m.forward(&mut g, &x, Mode::Eval).unwrap();
                    let l = g.softmax_cross_entropy(&pass.logits, &labels).unwrap().item();
                    m.blocks[b].gate_b.as_mut().unwrap().value = Tensor::scalar(base);
                    l
                };
                let fd = (loss_at(&mut m, base + h) - loss_at(&mut m, base - h)) / (2.0 * h);
                let rel = (auto_b[b] - fd).abs() / (fd.abs() + 1e-8);
                assert!(rel < 1e-5, "{kind:?} block {b}: auto {} vs fd {fd}", auto_b[b]);
            }
        }
    }

    #[test]
    fn sigmoid_gate_coefficients_stay_strictly_inside_unit_interval() {
        let config = conv_config(BlockKind::InGatingSig);
        let mut m = Model::build(&config, 17).unwrap();
        // Push the gate hard in both directions; sigmoid never saturates to
        // exactly 0 or 1 in these ranges.
        for extreme in [-30.0, 0.0, 30.0] {
            for b in &mut m.blocks {
                b.gate_b.as_mut().unwrap().value = Tensor::scalar(extreme);
            }
            let x = batch_for(&config, 19);
            let mut g = Graph::new();
            let pass = m.forward(&mut g, &x, Mode::Eval).unwrap();
            for &a in &pass.coefficients {
                assert!(a > 0.0 && a < 1.0, "coefficient {a} left (0,1)");
            }
        }
    }

    #[test]
    fn build_respects_interval_depth_and_determinism() {
        let config = ModelConfig {
            lambda_init: (0.2, 0.25),
            depth: 16,
            ..dense_config(BlockKind::In)
        };
        let m = Model::build(&config, 5).unwrap();
        for v in m.lambda_raw_values() {
            assert!((0.2..=0.25).contains(&v));
        }
        // Bit-identical rebuild from the same seed.
        let m2 = Model::build(&config, 5).unwrap();
        for (a, b) in m.params().iter().zip(m2.params()) {
            assert_eq!(a.value.data(), b.value.data());
            assert_eq!(a.name, b.name);
        }
        // Different seed changes weights.
        let m3 = Model::build(&config, 6).unwrap();
        assert_ne!(m.stem.weight.value.data(), m3.stem.weight.value.data());

        // Alternate sanctioned interval.
        let c2 = ModelConfig { lambda_init: (0.3, 0.4), ..config.clone() };
        for v in Model::build(&c2, 5).unwrap().lambda_raw_values() {
            assert!((0.3..=0.4).contains(&v));
        }

        // Bad configs.
        assert!(Model::build(&ModelConfig { depth: 0, ..config.clone() }, 5).is_err());
        match Model::build(&ModelConfig { lambda_init: (0.5, 0.2), ..config }, 5) {
            Err(Error::EmptyInterval { lo, hi }) => assert_eq!((lo, hi), (0.5, 0.2)),
            other => panic!("expected empty-interval error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn only_lambda_is_exempt_from_weight_decay() {
        for kind in BlockKind::ALL {
            let m = Model::build(&dense_config(kind), 3).unwrap();
            for p in m.params() {
                assert_eq!(
                    p.decay,
                    !p.name.ends_with(".lambda"),
                    "{:?} param {} has wrong decay flag",
                    kind,
                    p.name
                );
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_mode_separates_statistics() {
        let config = conv_config(BlockKind::In);
        let x = batch_for(&config, 23);
        let mut m1 = Model::build(&config, 2).unwrap();
        let mut m2 = Model::build(&config, 2).unwrap();
        let a = logits_of(&mut m1, &x, Mode::Train);
        let b = logits_of(&mut m2, &x, Mode::Train);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        // Train mode moved the running stats; a fresh model differs.
        assert_ne!(
            m1.blocks[0].transform.bn1.stats.mean,
            Model::build(&config, 2).unwrap().blocks[0].transform.bn1.stats.mean
        );
        // Eval mode leaves statistics untouched.
        let before = m1.blocks[0].transform.bn1.stats.clone();
        let _ = logits_of(&mut m1, &x, Mode::Eval);
        assert_eq!(before, m1.blocks[0].transform.bn1.stats);
    }

    #[test]
    fn params_and_params_mut_agree_on_order() {
        for kind in BlockKind::ALL {
            let mut m = Model::build(&dense_config(kind), 1).unwrap();
            let names: Vec<String> = m.params().iter().map(|p| p.name.clone()).collect();
            let names_mut: Vec<String> = m.params_mut().iter().map(|p| p.name.clone()).collect();
            assert_eq!(names, names_mut);
        }
    }
}
