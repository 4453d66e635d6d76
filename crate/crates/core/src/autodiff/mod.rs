//! Reverse-mode automatic differentiation on dense `f64` tensors.
//!
//! A [`Tape`] records every operation; [`Tape::backward`] walks it in reverse
//! and returns the gradient of a scalar output with respect to every recorded
//! value. Parameters live in a [`ParamStore`] and enter a tape through
//! [`Tape::param`]; [`Grads::accumulate`] adds their gradients back into the
//! store.
//!
//! Most ops work on matrices. `add`, `sub` and `mul` broadcast their second
//! operand when it is a row (`[1, n]` or `[n]`), a column (`[m, 1]`) or a
//! single value.

mod check;
mod conv;
mod optim;
mod params;
mod tensor;

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

pub use check::{grad_check, grad_check_params, GradCheckReport};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{ParamId, ParamStore, CHECKPOINT_VERSION};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use conv::Geometry;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BnMode<'a> {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the given per-channel mean and (biased) variance.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel batch statistics from a training-mode batchnorm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    MulConst(Var, Rc<[f64]>),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Cos(Var),
    Atan2(Var, Var),
    Softmax(Var, usize),
    SumAll(Var),
    SumAxis(Var, usize),
    SmoothL1(Var, Var, f64),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    GatherRows(Var, Rc<[usize]>),
    ScatterSum(Var, Rc<[usize]>),
    ScatterSoftmax(Var, Rc<[usize]>),
    Reshape(Var),
    Conv2d(Var, Var, Geometry),
    Deconv2d(Var, Var, Geometry),
    ChannelBias(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Rc<[f64]>,
        inv_std: Rc<[f64]>,
        train: bool,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Single-owner record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn unary(v: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: v.shape.clone(),
        data: v.data.iter().map(|&x| f(x)).collect(),
    }
}

fn bcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape == b.shape {
        return Ok(Bcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Bcast::Scalar);
    }
    if a.ndim() == 2 {
        let (m, n) = (a.shape[0], a.shape[1]);
        if b.shape == [1, n] || b.shape == [n] {
            return Ok(Bcast::Row);
        }
        if b.shape == [m, 1] {
            return Ok(Bcast::Col);
        }
    }
    Err(Error::shape(op, format!("cannot broadcast {:?} to {:?}", b.shape, a.shape)))
}

/// Index into `b` for element `i` of `a` (`a` has `cols` columns).
fn bidx(kind: Bcast, i: usize, cols: usize) -> usize {
    match kind {
        Bcast::Same => i,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
        Bcast::Scalar => 0,
    }
}

fn segments_check(op: &'static str, rows: usize, seg: &[usize], n: usize) -> Result<()> {
    if seg.len() != rows {
        return Err(Error::shape(op, format!("{} segment ids for {rows} rows", seg.len())));
    }
    if let Some(&s) = seg.iter().find(|&&s| s >= n) {
        return Err(Error::shape(op, format!("segment id {s} out of range {n}")));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let trainable = store.is_trainable(id);
        self.push(store.value(id).clone(), Op::Param(id), trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).expect_2d("matmul")?;
        let (k2, n) = self.value(b).expect_2d("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let data = tensor::matmul_raw(m, k, n, &self.value(a).data, &self.value(b).data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a, b), ng))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Bcast)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let kind = bcast_kind(op, ta, tb)?;
        let cols = ta.shape.last().copied().unwrap_or(1).max(1);
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data[bidx(kind, i, cols)]))
            .collect();
        Ok((Tensor { shape: ta.shape.clone(), data }, kind))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, k) = self.binary("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b, k), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, k) = self.binary("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b, k), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, k) = self.binary("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b, k), ng))
    }

    /// Elementwise product with a fixed same-shape mask.
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.numel() {
            return Err(Error::shape("mul_const", format!("mask of {} for {} values", mask.len(), t.numel())));
        }
        let data = t.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor { shape: t.shape.clone(), data };
        let ng = self.ng(a);
        Ok(self.push(out, Op::MulConst(a, mask.into()), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = unary(self.value(a), |x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = unary(self.value(a), |x| x + s);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), |x| x.max(0.0));
        let ng = self.ng(a);
        self.push(t, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        let t = unary(self.value(a), |x| if x > 0.0 { x } else { alpha * x });
        let ng = self.ng(a);
        self.push(t, Op::LeakyRelu(a, alpha), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), Float::tanh);
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), Float::cos);
        let ng = self.ng(a);
        self.push(t, Op::Cos(a), ng)
    }

    /// Elementwise `atan2(y, x)`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        if self.shape(y) != self.shape(x) {
            return Err(Error::shape("atan2", format!("{:?} vs {:?}", self.shape(y), self.shape(x))));
        }
        let data = self.value(y).data.iter().zip(&self.value(x).data).map(|(&a, &b)| a.atan2(b)).collect();
        let t = Tensor { shape: self.shape(y).to_vec(), data };
        let ng = self.ng(y) || self.ng(x);
        Ok(self.push(t, Op::Atan2(y, x), ng))
    }

    /// Softmax of a matrix along `axis` (0: down columns, 1: along rows).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.value(a).expect_2d("softmax")?;
        if axis > 1 {
            return Err(Error::shape("softmax", format!("axis {axis}")));
        }
        let x = &self.value(a).data;
        let mut out = vec![0.0; m * n];
        let (outer, inner, so, si) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
        for o in 0..outer {
            let idx = |i: usize| o * so + i * si;
            let mx = (0..inner).map(|i| x[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..inner {
                let e = (x[idx(i)] - mx).exp();
                out[idx(i)] = e;
                z += e;
            }
            for i in 0..inner {
                out[idx(i)] /= z;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::Softmax(a, axis), ng))
    }

    /// Sum of all elements as a `[1, 1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Tensor { shape: vec![1, 1], data: vec![s] }, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of a matrix along `axis`, keeping the dimension.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.value(a).expect_2d("sum_axis")?;
        let x = &self.value(a).data;
        let t = match axis {
            0 => {
                let mut d = vec![0.0; n];
                for r in 0..m {
                    for c in 0..n {
                        d[c] += x[r * n + c];
                    }
                }
                Tensor { shape: vec![1, n], data: d }
            }
            1 => Tensor {
                shape: vec![m, 1],
                data: (0..m).map(|r| x[r * n..(r + 1) * n].iter().sum()).collect(),
            },
            _ => return Err(Error::shape("sum_axis", format!("axis {axis}"))),
        };
        let ng = self.ng(a);
        Ok(self.push(t, Op::SumAxis(a, axis), ng))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.value(a).expect_2d("mean_axis")?;
        let len = if axis == 0 { m } else { n };
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / len.max(1) as f64))
    }

    /// Elementwise smooth-L1 (Huber with transition `beta`) of `x - y`.
    pub fn smooth_l1(&mut self, x: Var, y: Var, beta: f64) -> Result<Var> {
        if self.shape(x) != self.shape(y) {
            return Err(Error::shape("smooth_l1", format!("{:?} vs {:?}", self.shape(x), self.shape(y))));
        }
        if beta <= 0.0 {
            return Err(Error::InvalidArgument(format!("smooth_l1 beta must be positive, got {beta}")));
        }
        let data = self
            .value(x)
            .data
            .iter()
            .zip(&self.value(y).data)
            .map(|(&a, &b)| {
                let d = (a - b).abs();
                if d < beta {
                    0.5 * d * d / beta
                } else {
                    d - 0.5 * beta
                }
            })
            .collect();
        let t = Tensor { shape: self.shape(x).to_vec(), data };
        let ng = self.ng(x) || self.ng(y);
        Ok(self.push(t, Op::SmoothL1(x, y, beta), ng))
    }

    /// Concatenates matrices along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "nothing to concatenate"));
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.value(p).expect_2d("concat")?);
        }
        let t = match axis {
            0 => {
                let n = dims[0].1;
                if dims.iter().any(|d| d.1 != n) {
                    return Err(Error::shape("concat", format!("column counts {dims:?}")));
                }
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(&self.value(p).data);
                }
                Tensor { shape: vec![dims.iter().map(|d| d.0).sum(), n], data }
            }
            1 => {
                let m = dims[0].0;
                if dims.iter().any(|d| d.0 != m) {
                    return Err(Error::shape("concat", format!("row counts {dims:?}")));
                }
                let total: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(m * total);
                for r in 0..m {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor { shape: vec![m, total], data }
            }
            _ => return Err(Error::shape("concat", format!("axis {axis}"))),
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).expect_2d("slice")?;
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || start + len > extent {
            return Err(Error::shape("slice", format!("{start}+{len} on axis {axis} of [{m}, {n}]")));
        }
        let x = &self.value(a).data;
        let t = if axis == 0 {
            Tensor {
                shape: vec![len, n],
                data: x[start * n..(start + len) * n].to_vec(),
            }
        } else {
            Tensor {
                shape: vec![m, len],
                data: (0..m).flat_map(|r| x[r * n + start..r * n + start + len].iter().copied()).collect(),
            }
        };
        let ng = self.ng(a);
        Ok(self.push(t, Op::Slice(a, axis, start), ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).expect_2d("gather_rows")?;
        if let Some(&i) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", format!("row {i} of {m}")));
        }
        let x = self.value(a);
        let data = idx.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
        let t = Tensor { shape: vec![idx.len(), n], data };
        let ng = self.ng(a);
        Ok(self.push(t, Op::GatherRows(a, idx.into()), ng))
    }

    /// Row `i` of the output sums the rows of `a` whose segment id is `i`.
    pub fn scatter_sum(&mut self, a: Var, seg: &[usize], n_out: usize) -> Result<Var> {
        let (m, n) = self.value(a).expect_2d("scatter_sum")?;
        segments_check("scatter_sum", m, seg, n_out)?;
        let x = &self.value(a).data;
        let mut data = vec![0.0; n_out * n];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..n {
                data[s * n + c] += x[r * n + c];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor { shape: vec![n_out, n], data }, Op::ScatterSum(a, seg.into()), ng))
    }

    /// Segment mean; empty segments give zero rows.
    pub fn scatter_mean(&mut self, a: Var, seg: &[usize], n_out: usize) -> Result<Var> {
        let s = self.scatter_sum(a, seg, n_out)?;
        let mut counts = vec![0.0; n_out];
        for &i in seg {
            counts[i] += 1.0;
        }
        let inv: Vec<f64> = counts.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
        let w = self.constant(Tensor { shape: vec![n_out, 1], data: inv });
        self.mul(s, w)
    }

    /// Softmax over the rows sharing a segment id, per column.
    pub fn scatter_softmax(&mut self, a: Var, seg: &[usize], n_seg: usize) -> Result<Var> {
        let (m, n) = self.value(a).expect_2d("scatter_softmax")?;
        segments_check("scatter_softmax", m, seg, n_seg)?;
        let x = &self.value(a).data;
        let mut mx = vec![f64::NEG_INFINITY; n_seg * n];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..n {
                mx[s * n + c] = mx[s * n + c].max(x[r * n + c]);
            }
        }
        let mut out = vec![0.0; m * n];
        let mut z = vec![0.0; n_seg * n];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..n {
                let e = (x[r * n + c] - mx[s * n + c]).exp();
                out[r * n + c] = e;
                z[s * n + c] += e;
            }
        }
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..n {
                out[r * n + c] /= z[s * n + c];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::ScatterSoftmax(a, seg.into()), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::shape("reshape", format!("{:?} to {shape:?}", t.shape)));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: t.data.clone(),
        };
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    fn expect_4d(&self, op: &'static str, v: Var) -> Result<[usize; 4]> {
        let s = self.shape(v);
        <[usize; 4]>::try_from(s).map_err(|_| Error::shape(op, format!("expected NCHW, got {s:?}")))
    }

    /// `x: [N, C, H, W]`, `w: [O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let [bn, c, h, wd] = self.expect_4d("conv2d", x)?;
        let [o, c2, k, k2] = self.expect_4d("conv2d", w)?;
        if c != c2 || k != k2 || stride == 0 {
            return Err(Error::shape("conv2d", format!("input {:?}, kernel {:?}", self.shape(x), self.shape(w))));
        }
        let g = Geometry::conv(c, h, wd, k, stride, pad)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {k} does not fit {h}x{wd} with pad {pad}")))?;
        let per_in = c * h * wd;
        let mut data = Vec::with_capacity(bn * o * g.ho * g.wo);
        for i in 0..bn {
            let xi = &self.value(x).data[i * per_in..(i + 1) * per_in];
            data.extend(conv::conv_forward(&g, o, xi, &self.value(w).data));
        }
        let t = Tensor { shape: vec![bn, o, g.ho, g.wo], data };
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(t, Op::Conv2d(x, w, g), ng))
    }

    /// Transposed convolution. `x: [N, C, H, W]`, `w: [C, O, k, k]`; the
    /// output is `[N, O, (H-1)·stride - 2·pad + k, …]`.
    pub fn deconv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let [bn, c, h, wd] = self.expect_4d("deconv2d", x)?;
        let [c2, o, k, k2] = self.expect_4d("deconv2d", w)?;
        if c != c2 || k != k2 || stride == 0 {
            return Err(Error::shape("deconv2d", format!("input {:?}, kernel {:?}", self.shape(x), self.shape(w))));
        }
        let ho = ((h - 1) * stride + k).checked_sub(2 * pad);
        let wo = ((wd - 1) * stride + k).checked_sub(2 * pad);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::shape("deconv2d", "padding larger than output"));
        };
        let g = Geometry::conv(o, ho, wo, k, stride, pad)
            .filter(|g| g.ho == h && g.wo == wd)
            .ok_or_else(|| Error::shape("deconv2d", "inconsistent geometry"))?;
        let per_in = c * h * wd;
        let mut data = Vec::with_capacity(bn * o * ho * wo);
        for i in 0..bn {
            let xi = &self.value(x).data[i * per_in..(i + 1) * per_in];
            data.extend(conv::deconv_forward(&g, c, xi, &self.value(w).data));
        }
        let t = Tensor { shape: vec![bn, o, ho, wo], data };
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(t, Op::Deconv2d(x, w, g), ng))
    }

    /// Adds `b[c]` to every element of channel `c` of an NCHW tensor.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [bn, c, h, w] = self.expect_4d("channel_bias", x)?;
        if self.value(b).numel() != c {
            return Err(Error::shape("channel_bias", format!("{} biases for {c} channels", self.value(b).numel())));
        }
        let hw = h * w;
        let bv = &self.value(b).data;
        let data = self
            .value(x)
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[(i / hw) % c])
            .collect();
        let t = Tensor { shape: vec![bn, c, h, w], data };
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(t, Op::ChannelBias(x, b), ng))
    }

    /// Per-channel batch normalization of an NCHW tensor.
    pub fn batchnorm2d(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Result<(Var, Option<BatchStats>)> {
        let [bn, c, h, w] = self.expect_4d("batchnorm2d", x)?;
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape("batchnorm2d", format!("affine parameters for {c} channels")));
        }
        let hw = h * w;
        let count = bn * hw;
        if count == 0 {
            return Err(Error::shape("batchnorm2d", "empty batch"));
        }
        let xs = &self.value(x).data;
        let ch = |i: usize| (i / hw) % c;
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                for (i, &v) in xs.iter().enumerate() {
                    mean[ch(i)] += v;
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; c];
                for (i, &v) in xs.iter().enumerate() {
                    let d = v - mean[ch(i)];
                    var[ch(i)] += d * d;
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batchnorm2d", "running statistics length"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xhat: Vec<f64> = xs.iter().enumerate().map(|(i, &v)| (v - mean[ch(i)]) * inv_std[ch(i)]).collect();
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let data = xhat.iter().enumerate().map(|(i, &v)| g[ch(i)] * v + b[ch(i)]).collect();
        let t = Tensor { shape: vec![bn, c, h, w], data };
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat: xhat.into(),
            inv_std: inv_std.into(),
            train: stats.is_some(),
        };
        Ok((self.push(t, op, ng), stats))
    }

    /// Inverted dropout: in training, zeroes each element with probability
    /// `p` and scales survivors by `1/(1-p)`; identity otherwise.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(a).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(a, mask)
    }

    /// Gradients of the one-element tensor `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        let ov = self.value(out);
        if ov.numel() != 1 {
            return Err(Error::shape("backward", format!("output has shape {:?}", ov.shape)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Tensor::full(&ov.shape, 1.0));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let t = slot.get_or_insert_with(|| Tensor::zeros(&self.value(v).shape));
        f(&mut t.data);
    }

    fn reduce_bcast(&self, kind: Bcast, a_shape: &[usize], b: Var, g: impl Fn(usize) -> f64) -> Tensor {
        let n = a_shape.iter().product::<usize>();
        let cols = a_shape.last().copied().unwrap_or(1).max(1);
        let mut out = Tensor::zeros(&self.value(b).shape);
        for i in 0..n {
            out.data[bidx(kind, i, cols)] += g(i);
        }
        out
    }

    fn backprop(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape[0], self.value(*a).shape[1]);
                let n = self.value(*b).shape[1];
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                self.acc_with(grads, *a, |da| {
                    tensor::gemm(m, n, k, &g.data, (n as isize, 1), bv, (1, n as isize), 1.0, da, (k as isize, 1));
                });
                self.acc_with(grads, *b, |db| {
                    tensor::gemm(k, m, n, av, (1, k as isize), &g.data, (n as isize, 1), 1.0, db, (n as isize, 1));
                });
            }
            Op::Add(a, b, kind) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    let t = self.reduce_bcast(*kind, &val.shape, *b, |i| g.data[i]);
                    self.acc(grads, *b, t);
                }
            }
            Op::Sub(a, b, kind) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    let t = self.reduce_bcast(*kind, &val.shape, *b, |i| -g.data[i]);
                    self.acc(grads, *b, t);
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = val.shape.last().copied().unwrap_or(1).max(1);
                if self.ng(*a) {
                    let data = g.data.iter().enumerate().map(|(i, &d)| d * bv.data[bidx(*kind, i, cols)]).collect();
                    self.acc(grads, *a, Tensor { shape: val.shape.clone(), data });
                }
                if self.ng(*b) {
                    let t = self.reduce_bcast(*kind, &val.shape, *b, |i| g.data[i] * av.data[i]);
                    self.acc(grads, *b, t);
                }
            }
            Op::MulConst(a, mask) => {
                let data = g.data.iter().zip(mask.iter()).map(|(d, m)| d * m).collect();
                self.acc(grads, *a, Tensor { shape: val.shape.clone(), data });
            }
            Op::Scale(a, s) => self.acc(grads, *a, unary(g, |d| d * s)),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Relu(a) => {
                let x = &self.value(*a).data;
                let data = g.data.iter().zip(x).map(|(&d, &x)| if x > 0.0 { d } else { 0.0 }).collect();
                self.acc(grads, *a, Tensor { shape: val.shape.clone(), data });
            }
            Op::LeakyRelu(a, alpha) => {
                let x = &self.value(*a).data;
                let data = g.data.iter().zip(x).map(|(&d, &x)| if x > 0.0 { d } else { alpha * d }).collect();
                self.acc(grads, *a, Tensor { shape: val.shape.clone(), data });
            }
            Op::Tanh(a) => {
                let data = g.data.iter().zip(&val.data).map(|(&d, &y)| d * (1.0 - y * y)).collect();
                self.acc(grads, *a, Tensor { shape: val.shape.clone(), data });
            }
            Op::Cos(a) => {
                let x = &self.value(*a).data;
                let data = g.data.iter().zip(x).map(|(&d, &x)| -d * x.sin()).collect();
                self.acc(grads, *a, Tensor { shape: val.shape.clone(), data });
            }
            Op::Atan2(y, x) => {
                let (yv, xv) = (&self.value(*y).data, &self.value(*x).data);
                let r2 = |i: usize| {
                    let r = xv[i] * xv[i] + yv[i] * yv[i];
                    if r > 0.0 {
                        r
                    } else {
                        f64::INFINITY
                    }
                };
                let dy = (0..g.numel()).map(|i| g.data[i] * xv[i] / r2(i)).collect();
                let dx = (0..g.numel()).map(|i| -g.data[i] * yv[i] / r2(i)).collect();
                self.acc(grads, *y, Tensor { shape: val.shape.clone(), data: dy });
                self.acc(grads, *x, Tensor { shape: val.shape.clone(), data: dx });
            }
            Op::Softmax(a, axis) => {
                let (m, n) = (val.shape[0], val.shape[1]);
                let (outer, inner, so, si) = if *axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
                let mut dx = vec![0.0; m * n];
                for o in 0..outer {
                    let idx = |i: usize| o * so + i * si;
                    let dot: f64 = (0..inner).map(|i| g.data[idx(i)] * val.data[idx(i)]).sum();
                    for i in 0..inner {
                        dx[idx(i)] = val.data[idx(i)] * (g.data[idx(i)] - dot);
                    }
                }
                self.acc(grads, *a, Tensor { shape: val.shape.clone(), data: dx });
            }
            Op::SumAll(a) => {
                let t = Tensor::full(&self.value(*a).shape, g.data[0]);
                self.acc(grads, *a, t);
            }
            Op::SumAxis(a, axis) => {
                let s = &self.value(*a).shape;
                let (m, n) = (s[0], s[1]);
                let data = (0..m * n)
                    .map(|i| if *axis == 0 { g.data[i % n] } else { g.data[i / n] })
                    .collect();
                self.acc(grads, *a, Tensor { shape: s.clone(), data });
            }
            Op::SmoothL1(x, y, beta) => {
                let (xv, yv) = (&self.value(*x).data, &self.value(*y).data);
                let d: Vec<f64> = (0..g.numel())
                    .map(|i| {
                        let diff = xv[i] - yv[i];
                        let dd = if diff.abs() < *beta { diff / beta } else { diff.signum() };
                        g.data[i] * dd
                    })
                    .collect();
                if self.ng(*y) {
                    self.acc(grads, *y, unary(&Tensor { shape: val.shape.clone(), data: d.clone() }, |v| -v));
                }
                self.acc(grads, *x, Tensor { shape: val.shape.clone(), data: d });
            }
            Op::Concat(parts, axis) => {
                let total_cols = val.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let (pm, pn) = (self.value(p).shape[0], self.value(p).shape[1]);
                    if self.ng(p) {
                        let data = if *axis == 0 {
                            g.data[offset * total_cols..(offset + pm) * total_cols].to_vec()
                        } else {
                            (0..pm)
                                .flat_map(|r| g.data[r * total_cols + offset..r * total_cols + offset + pn].iter().copied())
                                .collect()
                        };
                        self.acc(grads, p, Tensor { shape: vec![pm, pn], data });
                    }
                    offset += if *axis == 0 { pm } else { pn };
                }
            }
            Op::Slice(a, axis, start) => {
                let (n, len) = (self.value(*a).shape[1], if *axis == 0 { val.shape[0] } else { val.shape[1] });
                let (start, cols_out) = (*start, val.shape[1]);
                self.acc_with(grads, *a, |da| {
                    if *axis == 0 {
                        for (d, &v) in da[start * n..(start + len) * n].iter_mut().zip(&g.data) {
                            *d += v;
                        }
                    } else {
                        for r in 0..val.shape[0] {
                            for c in 0..len {
                                da[r * n + start + c] += g.data[r * cols_out + c];
                            }
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let n = val.shape[1];
                self.acc_with(grads, *a, |da| {
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..n {
                            da[i * n + c] += g.data[r * n + c];
                        }
                    }
                });
            }
            Op::ScatterSum(a, seg) => {
                let n = val.shape[1];
                let data = seg.iter().flat_map(|&s| g.data[s * n..(s + 1) * n].iter().copied()).collect();
                self.acc(grads, *a, Tensor { shape: vec![seg.len(), n], data });
            }
            Op::ScatterSoftmax(a, seg) => {
                let n = val.shape[1];
                let n_seg = seg.iter().max().map_or(0, |&s| s + 1);
                let mut dot = vec![0.0; n_seg * n];
                for (r, &s) in seg.iter().enumerate() {
                    for c in 0..n {
                        dot[s * n + c] += g.data[r * n + c] * val.data[r * n + c];
                    }
                }
                let data = (0..val.numel())
                    .map(|i| {
                        let (r, c) = (i / n, i % n);
                        val.data[i] * (g.data[i] - dot[seg[r] * n + c])
                    })
                    .collect();
                self.acc(grads, *a, Tensor { shape: val.shape.clone(), data });
            }
            Op::Reshape(a) => {
                let t = Tensor {
                    shape: self.value(*a).shape.clone(),
                    data: g.data.clone(),
                };
                self.acc(grads, *a, t);
            }
            Op::Conv2d(x, w, geo) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (bn, o) = (xv.shape[0], wv.shape[0]);
                let per_in = geo.c * geo.h * geo.w;
                let per_out = o * geo.ho * geo.wo;
                let mut dx = self.ng(*x).then(|| vec![0.0; xv.numel()]);
                let mut dw = self.ng(*w).then(|| vec![0.0; wv.numel()]);
                for i in 0..bn {
                    conv::conv_backward(
                        geo,
                        o,
                        &xv.data[i * per_in..(i + 1) * per_in],
                        &wv.data,
                        &g.data[i * per_out..(i + 1) * per_out],
                        dx.as_mut().map(|d| &mut d[i * per_in..(i + 1) * per_in]),
                        dw.as_deref_mut(),
                    );
                }
                if let Some(d) = dx {
                    self.acc(grads, *x, Tensor { shape: xv.shape.clone(), data: d });
                }
                if let Some(d) = dw {
                    self.acc(grads, *w, Tensor { shape: wv.shape.clone(), data: d });
                }
            }
            Op::Deconv2d(x, w, geo) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (bn, c_in) = (xv.shape[0], xv.shape[1]);
                let per_in = c_in * geo.ho * geo.wo;
                let per_out = geo.c * geo.h * geo.w;
                let mut dx = self.ng(*x).then(|| vec![0.0; xv.numel()]);
                let mut dw = self.ng(*w).then(|| vec![0.0; wv.numel()]);
                for i in 0..bn {
                    conv::deconv_backward(
                        geo,
                        c_in,
                        &xv.data[i * per_in..(i + 1) * per_in],
                        &wv.data,
                        &g.data[i * per_out..(i + 1) * per_out],
                        dx.as_mut().map(|d| &mut d[i * per_in..(i + 1) * per_in]),
                        dw.as_deref_mut(),
                    );
                }
                if let Some(d) = dx {
                    self.acc(grads, *x, Tensor { shape: xv.shape.clone(), data: d });
                }
                if let Some(d) = dw {
                    self.acc(grads, *w, Tensor { shape: wv.shape.clone(), data: d });
                }
            }
            Op::ChannelBias(x, b) => {
                self.acc(grads, *x, g.clone());
                let (c, hw) = (val.shape[1], val.shape[2] * val.shape[3]);
                self.acc_with(grads, *b, |db| {
                    for (i, &d) in g.data.iter().enumerate() {
                        db[(i / hw) % c] += d;
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (c, hw) = (val.shape[1], val.shape[2] * val.shape[3]);
                let ch = |i: usize| (i / hw) % c;
                let gv = &self.value(*gamma).data;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (i, &d) in g.data.iter().enumerate() {
                    sum_dy[ch(i)] += d;
                    sum_dy_xhat[ch(i)] += d * xhat[i];
                }
                self.acc_with(grads, *gamma, |dg| dg.iter_mut().zip(&sum_dy_xhat).for_each(|(a, b)| *a += b));
                self.acc_with(grads, *beta, |db| db.iter_mut().zip(&sum_dy).for_each(|(a, b)| *a += b));
                if self.ng(*x) {
                    let count = (val.numel() / c) as f64;
                    let data = g
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &d)| {
                            let k = ch(i);
                            if *train {
                                gv[k] * inv_std[k] * (d - sum_dy[k] / count - xhat[i] * sum_dy_xhat[k] / count)
                            } else {
                                gv[k] * inv_std[k] * d
                            }
                        })
                        .collect();
                    self.acc(grads, *x, Tensor { shape: val.shape.clone(), data });
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of a node, `None` if it does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate(&self, tape: &Tape, store: &mut ParamStore) {
        for (i, node) in tape.nodes.iter().enumerate().take(self.grads.len()) {
            if let (Op::Param(id), Some(g)) = (&node.op, &self.grads[i]) {
                store.grad_mut(*id).add_assign(g);
            }
        }
    }
}
