//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every primitive appends a node to a [`Tape`]; [`Tape::backward`] walks the
//! tape in reverse and accumulates gradients into every node that requires
//! them. Two node kinds carry registered backward rules instead of their true
//! (almost-everywhere zero) derivative: spike thresholds and pathway gates.
//!
//! ```
//! use sorsnn_core::autodiff::Tape;
//! use sorsnn_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).data(), &[6.0]);
//! ```

pub mod custom;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use custom::{SpikeRule, SurrogateCentering};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How custom nodes propagate gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CustomBackward {
    /// Use the registered surrogate rules.
    #[default]
    Surrogate,
    /// Use the true derivative of the hard forward, which is zero almost
    /// everywhere. Gradient checks against finite differences use this.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    L2Norm(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Compare,
    Conv2d(Var, Var, ConvGeometry),
    Spike(Var, SpikeRule),
    Gate(Var, Var, f64),
    SoftmaxXent(Var, Vec<usize>, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for a later backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    custom: CustomBackward,
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_custom_backward(custom: CustomBackward) -> Self {
        Self {
            custom,
            ..Self::default()
        }
    }

    pub fn custom_backward(&self) -> CustomBackward {
        self.custom
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient; zeros for nodes the loss never reached.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, k), rg)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a).map(|x| x + k);
        let rg = self.rg(a);
        self.push(t, Op::Offset(a), rg)
    }

    /// Adds `bias` (shape `[n]`) to every row of `a` (shape `[m, n]`).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(mismatch("add_bias", sa, sb));
        }
        let n = sa[1];
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(a).clone();
        for row in t.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(a, bias), rg))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                orow.iter_mut().zip(brow).for_each(|(o, &y)| *o += x * y);
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    /// Logistic sigmoid.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(custom::logistic);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(t, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / v.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(t, Op::Mean(a), rg)
    }

    /// Euclidean norm of all elements. The subgradient at zero is taken as zero.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).l2_norm());
        let rg = self.rg(a);
        self.push(t, Op::L2Norm(a), rg)
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| mismatch("concat", &[], &[]))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(mismatch("concat", self.shape(first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Elementwise `a >= b` indicator. Carries no gradient.
    pub fn ge(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("ge", a, b, |x, y| if x >= y { 1.0 } else { 0.0 })?;
        Ok(self.push(t, Op::Compare, false))
    }

    /// Cross-correlation. `input` is `[B, Cin, H, W]`, `weight` is
    /// `[Cout, Cin, K, K]`; zero padding on every side.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (si, sw) = (self.shape(input), self.shape(weight));
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] || sw[2] != sw[3] || stride == 0 {
            return Err(mismatch("conv2d", si, sw));
        }
        let g = ConvGeometry {
            batch: si[0],
            in_channels: si[1],
            out_channels: sw[0],
            in_h: si[2],
            in_w: si[3],
            kernel: sw[2],
            stride,
            padding,
        };
        if g.in_h + 2 * padding < g.kernel || g.in_w + 2 * padding < g.kernel {
            return Err(mismatch("conv2d", si, sw));
        }
        let (oh, ow) = (g.out_h(), g.out_w());
        let (x, w) = (self.value(input).data(), self.value(weight).data());
        let mut out = vec![0.0; g.batch * g.out_channels * oh * ow];
        conv_for_each(&g, |o, xi, wi| {
            out[o] += x[xi] * w[wi];
        });
        let t = Tensor::new(vec![g.batch, g.out_channels, oh, ow], out)?;
        let rg = self.rg(input) || self.rg(weight);
        Ok(self.push(t, Op::Conv2d(input, weight, g), rg))
    }

    /// Hard threshold `1[u >= v_th]` whose backward uses the triangular
    /// surrogate window.
    pub fn spike(&mut self, u: Var, rule: SpikeRule) -> Var {
        let t = self.value(u).map(|x| custom::heaviside(x, rule.v_th));
        let rg = self.rg(u);
        self.push(t, Op::Spike(u, rule), rg)
    }

    /// Hard gate `1[a >= a_tilde]` with a straight-through logistic backward.
    pub fn gate(&mut self, a: Var, a_tilde: Var, temperature: f64) -> Result<Var> {
        let t = self.zip("gate", a, a_tilde, custom::gate)?;
        let rg = self.rg(a) || self.rg(a_tilde);
        Ok(self.push(t, Op::Gate(a, a_tilde, temperature), rg))
    }

    /// Mean cross-entropy of row-wise softmax over `logits` (`[B, C]`).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch("softmax_cross_entropy", s, &[labels.len()]));
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label: bad, classes: c });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - row[label];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let t = Tensor::scalar(loss / b.max(1) as f64);
        let rg = self.rg(logits);
        Ok(self.push(t, Op::SoftmaxXent(logits, labels.to_vec(), probs), rg))
    }

    /// Accumulates `d loss / d node` into every node that requires gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.accumulate(loss, &[1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(up) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &up);
            self.grads[idx] = Some(up);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    fn accumulate_with(&mut self, v: Var, f: impl Fn(usize) -> f64) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().enumerate().for_each(|(i, a)| *a += f(i)),
            slot @ None => *slot = Some((0..n).map(f).collect()),
        }
    }

    fn propagate(&mut self, idx: usize, up: &[f64]) {
        // Borrow the op out of the node list so inputs can be mutated freely.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf | Op::Compare => {}
            Op::Add(a, b) => {
                self.accumulate(*a, up);
                self.accumulate(*b, up);
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, up);
                self.accumulate_with(*b, |i| -up[i]);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let vb = self.nodes[b.0].value.data().to_vec();
                    self.accumulate_with(*a, |i| up[i] * vb[i]);
                }
                if self.rg(*b) {
                    let va = self.nodes[a.0].value.data().to_vec();
                    self.accumulate_with(*b, |i| up[i] * va[i]);
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate_with(*a, |i| up[i] * k);
            }
            Op::Offset(a) | Op::Reshape(a) => self.accumulate(*a, up),
            Op::AddBias(a, bias) => {
                self.accumulate(*a, up);
                if self.rg(*bias) {
                    let n = self.nodes[bias.0].value.len();
                    let mut gb = vec![0.0; n];
                    for row in up.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(g, u)| *g += u);
                    }
                    self.accumulate(*bias, &gb);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].value.shape()[1];
                if self.rg(*a) {
                    let bd = self.nodes[b.0].value.data();
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let urow = &up[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] = urow.iter().zip(brow).map(|(u, v)| u * v).sum();
                        }
                    }
                    self.accumulate(*a, &ga);
                }
                if self.rg(*b) {
                    let ad = self.nodes[a.0].value.data();
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let urow = &up[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            gb[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(urow)
                                .for_each(|(g, u)| *g += x * u);
                        }
                    }
                    self.accumulate(*b, &gb);
                }
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.data().to_vec();
                self.accumulate_with(*a, |i| up[i] * (1.0 - y[i] * y[i]));
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data().to_vec();
                self.accumulate_with(*a, |i| up[i] * y[i] * (1.0 - y[i]));
            }
            Op::Sum(a) => {
                let u = up[0];
                self.accumulate_with(*a, |_| u);
            }
            Op::Mean(a) => {
                let u = up[0] / self.nodes[a.0].value.len().max(1) as f64;
                self.accumulate_with(*a, |_| u);
            }
            Op::L2Norm(a) => {
                let norm = self.nodes[idx].value.data()[0];
                if norm > 0.0 {
                    let x = self.nodes[a.0].value.data().to_vec();
                    let u = up[0] / norm;
                    self.accumulate_with(*a, |i| u * x[i]);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    self.accumulate(p, &up[offset..offset + n]);
                    offset += n;
                }
            }
            Op::Conv2d(input, weight, g) => {
                let g = *g;
                if self.rg(*input) {
                    let w = self.nodes[weight.0].value.data();
                    let mut gx = vec![0.0; self.nodes[input.0].value.len()];
                    conv_for_each(&g, |o, xi, wi| gx[xi] += up[o] * w[wi]);
                    self.accumulate(*input, &gx);
                }
                if self.rg(*weight) {
                    let x = self.nodes[input.0].value.data();
                    let mut gw = vec![0.0; self.nodes[weight.0].value.len()];
                    conv_for_each(&g, |o, xi, wi| gw[wi] += up[o] * x[xi]);
                    self.accumulate(*weight, &gw);
                }
            }
            Op::Spike(u, rule) => {
                if self.custom == CustomBackward::Surrogate {
                    let uv = self.nodes[u.0].value.data().to_vec();
                    let rule = *rule;
                    self.accumulate_with(*u, |i| up[i] * rule.local_grad(uv[i]));
                }
            }
            Op::Gate(a, at, temp) => {
                if self.custom == CustomBackward::Surrogate {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let tv = self.nodes[at.0].value.data().to_vec();
                    let d: Vec<f64> = av
                        .iter()
                        .zip(&tv)
                        .zip(up)
                        .map(|((&x, &y), &u)| u * custom::gate_surrogate(x, y, *temp))
                        .collect();
                    self.accumulate(*a, &d);
                    self.accumulate_with(*at, |i| -d[i]);
                }
            }
            Op::SoftmaxXent(logits, labels, probs) => {
                let c = self.nodes[logits.0].value.shape()[1];
                let b = labels.len().max(1) as f64;
                let u = up[0] / b;
                self.accumulate_with(*logits, |i| {
                    let onehot = if labels[i / c] == i % c { 1.0 } else { 0.0 };
                    u * (probs[i] - onehot)
                });
            }
        }
        self.nodes[idx].op = op;
    }
}

/// Visits every (output, input, weight) flat-index triple of a convolution.
fn conv_for_each(g: &ConvGeometry, mut f: impl FnMut(usize, usize, usize)) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = ((b * g.out_channels + co) * oh + oy) * ow + ox;
                    for ci in 0..g.in_channels {
                        for ky in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if ix < 0 || ix >= g.in_w as isize {
                                    continue;
                                }
                                let xi = ((b * g.in_channels + ci) * g.in_h + iy as usize) * g.in_w
                                    + ix as usize;
                                let wi = ((co * g.in_channels + ci) * k + ky) * k + kx;
                                f(o, xi, wi);
                            }
                        }
                    }
                }
            }
        }
    }
}
