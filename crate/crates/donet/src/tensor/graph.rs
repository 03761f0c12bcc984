//! The autodiff tape: forward operations and reverse accumulation.

use crate::error::{Error, Result};

use super::conv;
use super::norm::{self, BnSaved, RunningStats};
use super::{Mode, Tensor};

/// Index of a node on the tape.
pub type NodeId = usize;

/// Tape operation. Parents are node ids and always precede the node itself.
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Matmul(NodeId, NodeId),
    AddBias { x: NodeId, bias: NodeId },
    ScaleRows { x: NodeId, scale: NodeId },
    SpatialMean(NodeId),
    Conv2d { x: NodeId, w: NodeId, stride: usize, pad: usize },
    BatchNorm { x: NodeId, gamma: NodeId, saved: BnSaved },
    Softmax(NodeId),
    SoftmaxXent { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    Sum(NodeId),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
}

/// Append-only computation tape.
///
/// A graph is built per forward pass and discarded afterwards; reverse-mode
/// gradients are accumulated strictly in descending node-id order, making
/// backward results bit-reproducible for a fixed build order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a graph, produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to node `id`.
    pub fn by_id(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).map(|g| g.as_slice())
    }

    /// Gradient with respect to the node that produced `t`.
    pub fn wrt(&self, t: &Tensor) -> Result<&[f64]> {
        let id = t.node_id().ok_or(Error::DetachedTensor)?;
        self.by_id(id).ok_or(Error::DetachedTensor)
    }
}

enum Broadcast {
    Equal,
    LeftScalar,
    RightScalar,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a value as a leaf node and return the attached tensor.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec())
    }

    /// Scalar constant leaf.
    pub fn constant(&mut self, v: f64) -> Tensor {
        self.leaf(&Tensor::scalar(v))
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Tensor {
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape: shape.clone(), value: value.clone() });
        Tensor::with_node(shape, value, id)
    }

    /// Resolve a tensor to its node id, verifying it belongs to this graph.
    fn id_of(&self, t: &Tensor) -> Result<NodeId> {
        let id = t.node_id().ok_or(Error::DetachedTensor)?;
        let node = self.nodes.get(id).ok_or(Error::DetachedTensor)?;
        if node.shape != t.shape() {
            return Err(Error::DetachedTensor);
        }
        Ok(id)
    }

    fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    // ── elementwise ──────────────────────────────────────────────────────

    fn broadcast(&self, a: &Tensor, b: &Tensor) -> Result<(Broadcast, Vec<usize>)> {
        if a.shape() == b.shape() {
            Ok((Broadcast::Equal, a.shape().to_vec()))
        } else if a.is_scalar_like() {
            Ok((Broadcast::LeftScalar, b.shape().to_vec()))
        } else if b.is_scalar_like() {
            Ok((Broadcast::RightScalar, a.shape().to_vec()))
        } else {
            Err(Error::ShapeMismatch { left: a.shape().to_vec(), right: b.shape().to_vec() })
        }
    }

    fn binary(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let ib = self.id_of(b)?;
        let (bc, shape) = self.broadcast(a, b)?;
        let (va, vb) = (self.value(ia), self.value(ib));
        let out = match bc {
            Broadcast::Equal => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::LeftScalar => vb.iter().map(|&y| f(va[0], y)).collect(),
            Broadcast::RightScalar => va.iter().map(|&x| f(x, vb[0])).collect(),
        };
        Ok(self.push(op(ia, ib), shape, out))
    }

    /// Elementwise sum; shapes must match or one operand must be a scalar.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    /// Elementwise difference; same broadcast rule as [`Graph::add`].
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product; same broadcast rule as [`Graph::add`].
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    /// Rectifier. The subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let out = self.value(ia).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        Ok(self.push(Op::Relu(ia), a.shape().to_vec(), out))
    }

    /// Logistic sigmoid, evaluated on the overflow-safe branch per sign.
    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let out = self.value(ia).iter().map(|&z| sigmoid_stable(z)).collect();
        Ok(self.push(Op::Sigmoid(ia), a.shape().to_vec(), out))
    }

    /// Natural log, elementwise.
    pub fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let out = self.value(ia).iter().map(|&x| x.ln()).collect();
        Ok(self.push(Op::Log(ia), a.shape().to_vec(), out))
    }

    // ── linear algebra ───────────────────────────────────────────────────

    /// 2-d matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let ib = self.id_of(b)?;
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::MatmulDims { left: sa.to_vec(), right: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(ia), self.value(ib));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let x = va[i * k + l];
                if x == 0.0 {
                    continue;
                }
                let row = &vb[l * n..(l + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (o, &w) in dst.iter_mut().zip(row) {
                    *o += x * w;
                }
            }
        }
        Ok(self.push(Op::Matmul(ia, ib), vec![m, n], out))
    }

    /// Broadcast a `[C]` bias across axis 1 of a 2-d `[N,C]` or 4-d
    /// `[N,C,H,W]` tensor.
    pub fn add_bias(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let ix = self.id_of(x)?;
        let ib = self.id_of(bias)?;
        let sx = x.shape().to_vec();
        let channels = *sx.get(1).unwrap_or(&0);
        if !(sx.len() == 2 || sx.len() == 4) || bias.shape() != [channels] {
            return Err(Error::ShapeMismatch { left: sx, right: bias.shape().to_vec() });
        }
        let inner: usize = sx[2..].iter().product();
        let (vx, vb) = (self.value(ix), self.value(ib));
        let mut out = vx.to_vec();
        for n in 0..sx[0] {
            for c in 0..channels {
                let base = (n * channels + c) * inner;
                for o in &mut out[base..base + inner] {
                    *o += vb[c];
                }
            }
        }
        Ok(self.push(Op::AddBias { x: ix, bias: ib }, sx, out))
    }

    /// Scale each sample (row of axis 0) of `x` by the matching entry of a
    /// per-sample `[N]` or `[N,1]` scale tensor.
    pub fn scale_rows(&mut self, x: &Tensor, scale: &Tensor) -> Result<Tensor> {
        let ix = self.id_of(x)?;
        let is = self.id_of(scale)?;
        let sx = x.shape().to_vec();
        let rows = sx[0];
        let ok = scale.shape() == [rows] || scale.shape() == [rows, 1];
        if sx.len() < 2 || !ok {
            return Err(Error::ShapeMismatch { left: sx, right: scale.shape().to_vec() });
        }
        let inner: usize = sx[1..].iter().product();
        let (vx, vs) = (self.value(ix), self.value(is));
        let mut out = vec![0.0; vx.len()];
        for n in 0..rows {
            let s = vs[n];
            for j in 0..inner {
                out[n * inner + j] = vx[n * inner + j] * s;
            }
        }
        Ok(self.push(Op::ScaleRows { x: ix, scale: is }, sx, out))
    }

    /// Mean over the two spatial axes: `[N,C,H,W] -> [N,C]`.
    pub fn spatial_mean(&mut self, x: &Tensor) -> Result<Tensor> {
        let ix = self.id_of(x)?;
        let sx = x.shape();
        if sx.len() != 4 {
            return Err(Error::invalid(format!("spatial_mean needs a 4-d tensor, got {sx:?}")));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let area = (h * w) as f64;
        let vx = self.value(ix);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                let base = (i * c + j) * h * w;
                out[i * c + j] = vx[base..base + h * w].iter().sum::<f64>() / area;
            }
        }
        Ok(self.push(Op::SpatialMean(ix), vec![n, c], out))
    }

    /// 3x3 convolution over `[N,C,H,W]` with kernel `[F,C,3,3]`,
    /// `stride` in {1,2} and zero `pad` in {0,1}.
    pub fn conv2d(&mut self, x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let ix = self.id_of(x)?;
        let iw = self.id_of(w)?;
        if ix == iw {
            return Err(Error::invalid("conv2d operands must be distinct nodes"));
        }
        conv::validate(x.shape(), w.shape(), stride, pad)?;
        let (out, shape) = conv::forward(self.value(ix), x.shape(), self.value(iw), w.shape(), stride, pad);
        Ok(self.push(Op::Conv2d { x: ix, w: iw, stride, pad }, shape, out))
    }

    /// Batch normalization over axis 1 of a 2-d or 4-d tensor.
    ///
    /// `Mode::Train` normalizes with batch statistics and updates `stats` by
    /// exponential moving average as a side effect; `Mode::Eval` uses the
    /// running statistics and leaves them untouched.
    pub fn batch_norm(
        &mut self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Tensor> {
        let ix = self.id_of(x)?;
        let ig = self.id_of(gamma)?;
        self.id_of(beta)?;
        let (value, saved) = norm::forward(self.value(ix), x.shape(), self.value(ig), stats, mode)?;
        let shape = x.shape().to_vec();
        // The node computes the scaled normalization gamma * xhat only; the
        // beta shift is routed through add_bias, which already provides the
        // per-channel sum rule beta needs in backward.
        let body = self.push(Op::BatchNorm { x: ix, gamma: ig, saved }, shape, value);
        self.add_bias(&body, beta)
    }

    // ── reductions and losses ────────────────────────────────────────────

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let total = self.value(ia).iter().sum();
        Ok(self.push(Op::Sum(ia), vec![1], vec![total]))
    }

    /// Row-wise softmax of a 2-d `[N,K]` tensor (max-subtracted).
    pub fn softmax(&mut self, logits: &Tensor) -> Result<Tensor> {
        let il = self.id_of(logits)?;
        let s = logits.shape();
        if s.len() != 2 {
            return Err(Error::invalid(format!("softmax needs a 2-d tensor, got {s:?}")));
        }
        let (n, k) = (s[0], s[1]);
        let v = self.value(il);
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = &v[i * k..(i + 1) * k];
            softmax_row(row, &mut out[i * k..(i + 1) * k]);
        }
        Ok(self.push(Op::Softmax(il), vec![n, k], out))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    ///
    /// Max-subtraction keeps the log-sum-exp finite; each per-sample term is
    /// floored at 0 so the saturated regime still reports a non-negative loss.
    pub fn softmax_cross_entropy(&mut self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let il = self.id_of(logits)?;
        let s = logits.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::invalid(format!(
                "cross-entropy needs [N,K] logits with N == labels ({} labels, shape {s:?})",
                labels.len()
            )));
        }
        let (n, k) = (s[0], s[1]);
        for &y in labels {
            if y >= k {
                return Err(Error::LabelOutOfRange { label: y, classes: k });
            }
        }
        let v = self.value(il);
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for i in 0..n {
            let row = &v[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &z) in row.iter().enumerate() {
                let e = (z - max).exp();
                probs[i * k + j] = e;
                sum += e;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= sum;
            }
            let term = sum.ln() - (row[labels[i]] - max);
            total += term.max(0.0);
        }
        let loss = total / n as f64;
        let op = Op::SoftmaxXent { logits: il, labels: labels.to_vec(), probs };
        Ok(self.push(op, vec![1], vec![loss]))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar root. Returns adjoints for every
    /// node; leaves' gradients are retrievable by node id or tensor.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        let rid = self.id_of(root)?;
        if self.nodes[rid].value.len() != 1 {
            return Err(Error::NonScalarRoot { shape: self.nodes[rid].shape.clone() });
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[rid][0] = 1.0;
        for id in (0..=rid).rev() {
            let d = std::mem::take(&mut grads[id]);
            if !d.iter().any(|&v| v != 0.0) {
                grads[id] = d;
                continue;
            }
            self.accumulate(id, &d, &mut grads)?;
            grads[id] = d;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, id: NodeId, d: &[f64], grads: &mut [Vec<f64>]) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.binary_adjoint(*a, *b, d, grads, |_, _| (1.0, 1.0));
            }
            Op::Sub(a, b) => {
                self.binary_adjoint(*a, *b, d, grads, |_, _| (1.0, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.binary_adjoint(*a, *b, d, grads, |i_a, i_b| (vb[i_b], va[i_a]));
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                for (i, &g) in d.iter().enumerate() {
                    if va[i] > 0.0 {
                        grads[*a][i] += g;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let s = self.value(id);
                for (i, &g) in d.iter().enumerate() {
                    grads[*a][i] += g * s[i] * (1.0 - s[i]);
                }
            }
            Op::Log(a) => {
                let va = self.value(*a);
                for (i, &g) in d.iter().enumerate() {
                    grads[*a][i] += g / va[i];
                }
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a), self.value(*b));
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += d[i * n + j] * vb[l * n + j];
                        }
                        grads[*a][i * k + l] += acc;
                    }
                }
                for l in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += va[i * k + l] * d[i * n + j];
                        }
                        grads[*b][l * n + j] += acc;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                let sx = self.shape(*x);
                let channels = sx[1];
                let inner: usize = sx[2..].iter().product();
                for (i, &g) in d.iter().enumerate() {
                    grads[*x][i] += g;
                }
                for nidx in 0..sx[0] {
                    for c in 0..channels {
                        let base = (nidx * channels + c) * inner;
                        let mut acc = 0.0;
                        for j in 0..inner {
                            acc += d[base + j];
                        }
                        grads[*bias][c] += acc;
                    }
                }
            }
            Op::ScaleRows { x, scale } => {
                let sx = self.shape(*x);
                let rows = sx[0];
                let inner: usize = sx[1..].iter().product();
                let (vx, vs) = (self.value(*x), self.value(*scale));
                for n in 0..rows {
                    let mut acc = 0.0;
                    for j in 0..inner {
                        let g = d[n * inner + j];
                        grads[*x][n * inner + j] += g * vs[n];
                        acc += g * vx[n * inner + j];
                    }
                    grads[*scale][n] += acc;
                }
            }
            Op::SpatialMean(x) => {
                let sx = self.shape(*x);
                let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
                let area = (h * w) as f64;
                for i in 0..n {
                    for j in 0..c {
                        let g = d[i * c + j] / area;
                        let base = (i * c + j) * h * w;
                        for t in 0..h * w {
                            grads[*x][base + t] += g;
                        }
                    }
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (sx, sw) = (self.shape(*x).to_vec(), self.shape(*w).to_vec());
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (dx, dw) = split_two(grads, *x, *w);
                conv::backward(d, vx, &sx, vw, &sw, *stride, *pad, dx, dw);
            }
            Op::BatchNorm { x, gamma, saved } => {
                let sx = self.shape(*x).to_vec();
                let (vx, vg) = (self.value(*x), self.value(*gamma));
                let (dx, dg) = split_two(grads, *x, *gamma);
                norm::backward(d, vx, &sx, vg, saved, dx, dg);
            }
            Op::Softmax(x) => {
                let s = self.shape(id);
                let (n, k) = (s[0], s[1]);
                let p = self.value(id);
                for i in 0..n {
                    let row_p = &p[i * k..(i + 1) * k];
                    let row_d = &d[i * k..(i + 1) * k];
                    let dot: f64 = row_p.iter().zip(row_d).map(|(&a, &b)| a * b).sum();
                    for j in 0..k {
                        grads[*x][i * k + j] += row_p[j] * (row_d[j] - dot);
                    }
                }
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let s = self.shape(*logits);
                let (n, k) = (s[0], s[1]);
                let scale = d[0] / n as f64;
                for i in 0..n {
                    for j in 0..k {
                        let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                        grads[*logits][i * k + j] += scale * (probs[i * k + j] - onehot);
                    }
                }
            }
            Op::Sum(a) => {
                for g in grads[*a].iter_mut() {
                    *g += d[0];
                }
            }
        }
        Ok(())
    }

    fn binary_adjoint(
        &self,
        a: NodeId,
        b: NodeId,
        d: &[f64],
        grads: &mut [Vec<f64>],
        coeff: impl Fn(usize, usize) -> (f64, f64),
    ) {
        let (la, lb) = (self.nodes[a].value.len(), self.nodes[b].value.len());
        for (i, &g) in d.iter().enumerate() {
            let ia = if la == 1 { 0 } else { i };
            let ib = if lb == 1 { 0 } else { i };
            let (ca, cb) = coeff(ia, ib);
            grads[a][ia] += g * ca;
            grads[b][ib] += g * cb;
        }
    }

}

/// Two distinct mutable gradient buffers out of the same slice.
fn split_two(grads: &mut [Vec<f64>], a: NodeId, b: NodeId) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b, "operands of a two-parent op must be distinct nodes");
    if a < b {
        let (lo, hi) = grads.split_at_mut(b);
        (lo[a].as_mut_slice(), hi[0].as_mut_slice())
    } else {
        let (lo, hi) = grads.split_at_mut(a);
        (hi[0].as_mut_slice(), lo[b].as_mut_slice())
    }
}

fn sigmoid_stable(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
