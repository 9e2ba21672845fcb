use std::sync::Arc;

use super::conv::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Reflect,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max2x2,
    GlobalMean,
}

/// A differentiable operation defined outside the engine.
///
/// `backward` returns one gradient per input, each shaped like that input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
    /// For ops that are only piecewise smooth: a hash identifying which
    /// smooth piece every input element lies in. Two inputs with equal
    /// hashes must be joined by a segment on which the op is smooth.
    fn piece_hash(&self, _inputs: &[&Tensor]) -> Option<u64> {
        None
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalMean(Var),
    AvgPool2x2(Var),
    Affine {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Sum(Var),
    SliceChannels {
        input: Var,
        start: usize,
    },
    ConcatChannels(Vec<Var>),
    BoxFilter {
        input: Var,
        window: usize,
    },
    Reshape(Var),
    Custom {
        op: Arc<dyn CustomOp>,
        inputs: Vec<Var>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of executed operations. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    signature: Option<u64>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

pub(crate) fn fnv_mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0100_0000_01b3)
}

fn sign_hash(data: &[f64]) -> u64 {
    data.iter().fold(FNV_OFFSET, |h, &a| fnv_mix(h, (a > 0.0) as u64))
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            signature: None,
        }
    }

    /// A graph that also records its kink signature, see
    /// [`Graph::kink_signature`].
    pub fn with_kink_signature() -> Self {
        Self {
            nodes: Vec::new(),
            signature: Some(FNV_OFFSET),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of the branch taken by every non-smooth op acting on a value
    /// that requires grad: relu and abs signs, max-pool winners and custom op
    /// pieces. If two parameter settings share a signature the function is
    /// smooth between them along a straight line in practice. `None` unless
    /// the graph was built by [`Graph::with_kink_signature`].
    pub fn kink_signature(&self) -> Option<u64> {
        self.signature
    }

    fn note_branch(&mut self, rg: bool, hash: impl FnOnce(&Self) -> u64) {
        if rg {
            if let Some(sig) = self.signature {
                let h = hash(self);
                self.signature = Some(fnv_mix(sig, h));
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a learnable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (h, w, cin) = self.value(input).hwc()?;
        let ks = self.shape(kernel);
        let (k, kcin, cout) = match *ks {
            [k1, k2, ci, co] if k1 == k2 => (k1, ci, co),
            _ => return Err(Error::shape("conv2d", format!("kernel must be k×k×Cin×Cout, got {ks:?}"))),
        };
        if k % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel size {k} must be odd")));
        }
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but kernel expects {kcin}"),
            ));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} does not match Cout={cout}", self.shape(bias)),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidInput("conv2d stride must be positive".into()));
        }
        let pad = match padding {
            Padding::Reflect => {
                if h <= k / 2 || w <= k / 2 {
                    return Err(Error::shape(
                        "conv2d",
                        format!("{h}×{w} input too small to reflect-pad by {}", k / 2),
                    ));
                }
                k / 2
            }
            Padding::None => {
                if h < k || w < k {
                    return Err(Error::shape("conv2d", format!("{h}×{w} input smaller than {k}×{k} kernel")));
                }
                0
            }
        };
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            h,
            w,
            cin,
            cout,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let out = conv::conv_forward(self.value(input), self.value(kernel), self.value(bias), &geom);
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let rg = self.rg(x);
        match kind {
            Activation::Relu => {
                let out = self.value(x).map(|a| a.max(0.0));
                self.note_branch(rg, |g| sign_hash(g.value(x).data()));
                self.push(out, Op::Relu(x), rg)
            }
            Activation::Tanh => {
                let out = self.value(x).map(f64::tanh);
                self.push(out, Op::Tanh(x), rg)
            }
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::abs);
        let rg = self.rg(x);
        self.note_branch(rg, |g| sign_hash(g.value(x).data()));
        self.push(out, Op::Abs(x), rg)
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        match kind {
            PoolKind::Max2x2 => self.max_pool2x2(x),
            PoolKind::GlobalMean => self.global_mean(x),
        }
    }

    /// 2×2 max-pool over disjoint windows. A trailing odd row/column is
    /// cropped. Ties route the gradient to the first element in row-major
    /// order.
    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        if h < 2 || w < 2 {
            return Err(Error::shape("max_pool2x2", format!("{h}×{w} input too small")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(ho * wo * c);
        let mut argmax = Vec::with_capacity(ho * wo * c);
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let idx = [
                        ((2 * oy) * w + 2 * ox) * c + ch,
                        ((2 * oy) * w + 2 * ox + 1) * c + ch,
                        ((2 * oy + 1) * w + 2 * ox) * c + ch,
                        ((2 * oy + 1) * w + 2 * ox + 1) * c + ch,
                    ];
                    let mut best = idx[0];
                    for &i in &idx[1..] {
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(x);
        self.note_branch(rg, |_| argmax.iter().fold(FNV_OFFSET, |h, &i| fnv_mix(h, i as u64)));
        Ok(self.push(
            Tensor {
                shape: vec![ho, wo, c],
                data: out,
            },
            Op::MaxPool { input: x, argmax },
            rg,
        ))
    }

    /// Spatial mean of an `H × W × C` map, giving a length-`C` vector.
    pub fn global_mean(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; c];
        for px in src.chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(px) {
                *o += v;
            }
        }
        let n = (h * w) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: vec![c], data: out }, Op::GlobalMean(x), rg))
    }

    /// 2×2 mean-downsampling; a trailing odd row/column is cropped.
    pub fn avg_pool2x2(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        if h < 2 || w < 2 {
            return Err(Error::shape("avg_pool2x2", format!("{h}×{w} input too small")));
        }
        let v = self.value(x);
        let out = Tensor::image(h / 2, w / 2, c, |y, xx, ch| {
            0.25 * (v.at(2 * y, 2 * xx, ch)
                + v.at(2 * y, 2 * xx + 1, ch)
                + v.at(2 * y + 1, 2 * xx, ch)
                + v.at(2 * y + 1, 2 * xx + 1, ch))
        });
        let rg = self.rg(x);
        Ok(self.push(out, Op::AvgPool2x2(x), rg))
    }

    /// `weights · input + bias` for a length-`n` input and `m × n` weights.
    pub fn affine(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let n = self.value(input).len();
        let (m, wn) = match *self.shape(weights) {
            [m, wn] => (m, wn),
            ref s => return Err(Error::shape("affine", format!("weights must be m×n, got {s:?}"))),
        };
        if wn != n {
            return Err(Error::shape("affine", format!("weights are {m}×{wn} but input has {n} values")));
        }
        if self.value(bias).len() != m {
            return Err(Error::shape(
                "affine",
                format!("bias has {} values, expected {m}", self.value(bias).len()),
            ));
        }
        let (xv, wv, bv) = (self.value(input).data(), self.value(weights).data(), self.value(bias).data());
        let out: Vec<f64> = (0..m)
            .map(|i| {
                let row = &wv[i * n..(i + 1) * n];
                row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>() + bv[i]
            })
            .collect();
        let rg = self.rg(input) || self.rg(weights) || self.rg(bias);
        Ok(self.push(
            Tensor { shape: vec![m], data: out },
            Op::Affine { input, weights, bias },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v + s);
        let rg = self.rg(x);
        self.push(out, Op::Shift(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    /// Divides rather than scaling by `1/n`, so a mean of equal values is
    /// exact.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        let out = self.value(s).map(|v| v / n);
        let rg = self.rg(s);
        self.push(out, Op::Scale(s, 1.0 / n), rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{} out of {c} channels", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(h * w * len);
        for px in src.chunks_exact(c) {
            out.extend_from_slice(&px[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape: vec![h, w, len],
                data: out,
            },
            Op::SliceChannels { input: x, start },
            rg,
        ))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let (h, w, _) = self.value(first).hwc()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (ph, pw, pc) = self.value(p).hwc()?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("spatial {ph}×{pw} vs {h}×{w}"),
                ));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(h * w * total);
        for px in 0..h * w {
            for (&p, &c) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[px * c..(px + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor {
                shape: vec![h, w, total],
                data: out,
            },
            Op::ConcatChannels(parts.to_vec()),
            rg,
        ))
    }

    /// Appends zero channels so the result has `total` channels.
    pub fn pad_channels(&mut self, x: Var, total: usize) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        if total < c {
            return Err(Error::shape("pad_channels", format!("cannot pad {c} channels to {total}")));
        }
        if total == c {
            return Ok(x);
        }
        let zeros = self.constant(Tensor::zeros(&[h, w, total - c]));
        self.concat_channels(&[x, zeros])
    }

    pub fn box_filter(&mut self, x: Var, window: usize) -> Result<Var> {
        let (h, w, _) = self.value(x).hwc()?;
        if window.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("box window {window} must be odd")));
        }
        if h <= window / 2 || w <= window / 2 {
            return Err(Error::shape("box_filter", format!("{h}×{w} too small for window {window}")));
        }
        let out = conv::box_forward(self.value(x), window);
        let rg = self.rg(x);
        Ok(self.push(out, Op::BoxFilter { input: x, window }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.note_branch(rg, |g| {
            let values: Vec<&Tensor> = inputs.iter().map(|&v| g.value(v)).collect();
            op.piece_hash(&values).unwrap_or(0)
        });
        Ok(self.push(
            out,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let r = conv::conv_backward(self.value(*input), self.value(*kernel), g, geom, self.rg(*input));
                if let Some(dx) = r.input {
                    acc(*input, dx);
                }
                acc(*kernel, r.kernel);
                acc(*bias, r.bias);
            }
            Op::Relu(x) => {
                let d = self.value(*x).zip_map(g, |a, gg| if a > 0.0 { gg } else { 0.0 }).unwrap();
                acc(*x, d);
            }
            Op::Tanh(x) => {
                let d = node.value.zip_map(g, |y, gg| gg * (1.0 - y * y)).unwrap();
                acc(*x, d);
            }
            Op::Abs(x) => {
                let d = self.value(*x).zip_map(g, |a, gg| gg * sign(a)).unwrap();
                acc(*x, d);
            }
            Op::MaxPool { input, argmax } => {
                let mut d = Tensor::zeros(self.shape(*input));
                for (&i, gg) in argmax.iter().zip(g.data()) {
                    d.data[i] += gg;
                }
                acc(*input, d);
            }
            Op::GlobalMean(x) => {
                let (h, w, c) = self.value(*x).hwc().unwrap();
                let n = (h * w) as f64;
                let d = Tensor::from_fn(&[h, w, c], |i| g.data[i % c] / n);
                acc(*x, d);
            }
            Op::AvgPool2x2(x) => {
                let (h, w, c) = self.value(*x).hwc().unwrap();
                let mut d = Tensor::zeros(&[h, w, c]);
                for y in 0..h / 2 * 2 {
                    for xx in 0..w / 2 * 2 {
                        for ch in 0..c {
                            d.set(y, xx, ch, 0.25 * g.at(y / 2, xx / 2, ch));
                        }
                    }
                }
                acc(*x, d);
            }
            Op::Affine { input, weights, bias } => {
                let xv = self.value(*input);
                let wv = self.value(*weights);
                let n = xv.len();
                let m = g.len();
                let mut dx = Tensor::zeros(xv.shape());
                let mut dw = Tensor::zeros(wv.shape());
                for i in 0..m {
                    let gi = g.data[i];
                    for j in 0..n {
                        dx.data[j] += wv.data[i * n + j] * gi;
                        dw.data[i * n + j] = gi * xv.data[j];
                    }
                }
                acc(*input, dx);
                acc(*weights, dw);
                acc(*bias, g.clone());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gg, bv| gg * bv).unwrap());
                acc(*b, g.zip_map(self.value(*a), |gg, av| gg * av).unwrap());
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, g.zip_map(bv, |gg, d| gg / d).unwrap());
                let q = node.value.zip_map(bv, |q, d| q / d).unwrap();
                acc(*b, g.zip_map(&q, |gg, qq| -gg * qq).unwrap());
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Shift(x) => acc(*x, g.clone()),
            Op::Sum(x) => acc(*x, Tensor::filled(self.shape(*x), g.data[0])),
            Op::SliceChannels { input, start } => {
                let (h, w, c) = self.value(*input).hwc().unwrap();
                let len = node.value.shape[2];
                let mut d = Tensor::zeros(&[h, w, c]);
                for px in 0..h * w {
                    d.data[px * c + start..px * c + start + len].copy_from_slice(&g.data[px * len..(px + 1) * len]);
                }
                acc(*input, d);
            }
            Op::ConcatChannels(parts) => {
                let total = node.value.shape[2];
                let hw = node.value.shape[0] * node.value.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[2];
                    if self.rg(p) {
                        let mut d = Tensor::zeros(self.shape(p));
                        for px in 0..hw {
                            d.data[px * c..(px + 1) * c]
                                .copy_from_slice(&g.data[px * total + offset..px * total + offset + c]);
                        }
                        acc(p, d);
                    }
                    offset += c;
                }
            }
            Op::BoxFilter { input, window } => acc(*input, conv::box_backward(g, *window)),
            Op::Reshape(x) => acc(*x, g.clone().reshape(self.shape(*x)).unwrap()),
            Op::Custom { op, inputs } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let ds = op.backward(&values, &node.value, g);
                for (&v, d) in inputs.iter().zip(ds) {
                    acc(v, d);
                }
            }
        }
    }
}

#[inline]
fn sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Result of a backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled when `v` did not influence
    /// the loss.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }
}
