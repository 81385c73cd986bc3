//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes in reverse order. Nodes only ever reference earlier
//! nodes, so the append order is a topological order.

use serde::{Deserialize, Serialize};

use super::conv::{
    conv2d_backward_input, conv2d_backward_kernel, conv2d_forward, ConvGeom, Padding,
};
use super::gemm::{gemm, Layout};
use super::{as_matrix, as_nhwc, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Elu,
    /// Gated linear unit over the last axis: first half times sigmoid of
    /// the second half.
    Glu,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Elu,
    Softplus,
    Square,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::Softplus => softplus(x),
            Unary::Square => x * x,
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Square => 2.0 * x,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    Gap(Var),
    Unary(Var, Unary),
    Glu(Var),
    ConcatLast(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Upsample2(Var),
    AvgPool2(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulChannel(Var, Var),
    AddChannel(Var, Var),
    MulSampleChannel(Var, Var),
    AddSampleChannel(Var, Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Standardize {
        x: Var,
        inv_std: Vec<f64>,
    },
    SpectralNorm {
        w: Var,
        u: Vec<f64>,
        v: Vec<f64>,
        sigma: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Gap(_) => "gap",
            Op::Unary(_, u) => match u {
                Unary::Relu => "relu",
                Unary::Sigmoid => "sigmoid",
                Unary::Tanh => "tanh",
                Unary::Elu => "elu",
                Unary::Softplus => "softplus",
                Unary::Square => "square",
            },
            Op::Glu(_) => "glu",
            Op::ConcatLast(..) => "concat",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Upsample2(_) => "upsample_nearest",
            Op::AvgPool2(_) => "avgpool2",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MulChannel(..) => "mul_channel",
            Op::AddChannel(..) => "add_channel",
            Op::MulSampleChannel(..) => "mul_sample_channel",
            Op::AddSampleChannel(..) => "add_sample_channel",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Standardize { .. } => "standardize",
            Op::SpectralNorm { .. } => "spectral_normalize",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reachable from
    /// the loss and depends on a differentiable leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but materializes zeros for unreachable nodes.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Fails on the first node holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.value.all_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
        }
        Ok(())
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, rg)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Cross-correlation of `x: b x h x w x m` with `k: kh x kw x m x n`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: Padding) -> Result<Var> {
        if stride == 0 {
            return dim_err("conv2d", "stride must be positive");
        }
        let geom = ConvGeom::new(self.shape(x), self.shape(k), stride, padding)?;
        let y = conv2d_forward(&geom, self.value(x).data(), self.value(k).data());
        let out = Tensor::new(geom.output_shape(), y)?;
        Ok(self.push(out, Op::Conv2d { x, k, geom }, &[x, k]))
    }

    // ---- spatial --------------------------------------------------------

    /// Channel-wise global average pooling, `b x h x w x m -> b x m`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let (b, h, w, m) = as_nhwc("gap", self.value(x))?;
        if h == 0 || w == 0 {
            return dim_err("gap", "empty spatial extent");
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * m];
        for bi in 0..b {
            let o = &mut out[bi * m..(bi + 1) * m];
            for p in 0..h * w {
                let row = &xd[(bi * h * w + p) * m..(bi * h * w + p + 1) * m];
                for (acc, v) in o.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let inv = 1.0 / (h * w) as f64;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let out = Tensor::new(vec![b, m], out)?;
        Ok(self.push(out, Op::Gap(x), &[x]))
    }

    /// Nearest-neighbour upsampling by a factor of two.
    pub fn upsample_nearest(&mut self, x: Var) -> Result<Var> {
        let (b, h, w, m) = as_nhwc("upsample_nearest", self.value(x))?;
        let xd = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; b * h2 * w2 * m];
        for bi in 0..b {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let src = ((bi * h + y / 2) * w + xx / 2) * m;
                    let dst = ((bi * h2 + y) * w2 + xx) * m;
                    out[dst..dst + m].copy_from_slice(&xd[src..src + m]);
                }
            }
        }
        let out = Tensor::new(vec![b, h2, w2, m], out)?;
        Ok(self.push(out, Op::Upsample2(x), &[x]))
    }

    /// 2x2 mean pooling with stride 2.
    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let (b, h, w, m) = as_nhwc("avgpool2", self.value(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return dim_err("avgpool2", format!("spatial dims {h}x{w} must be even"));
        }
        let xd = self.value(x).data();
        let (h2, w2) = (h / 2, w / 2);
        let mut out = vec![0.0; b * h2 * w2 * m];
        for bi in 0..b {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let dst = ((bi * h2 + y) * w2 + xx) * m;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let src = ((bi * h + 2 * y + dy) * w + 2 * xx + dx) * m;
                        for c in 0..m {
                            out[dst + c] += 0.25 * xd[src + c];
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![b, h2, w2, m], out)?;
        Ok(self.push(out, Op::AvgPool2(x), &[x]))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => Ok(self.unary(x, Unary::Relu)),
            Activation::Sigmoid => Ok(self.unary(x, Unary::Sigmoid)),
            Activation::Tanh => Ok(self.unary(x, Unary::Tanh)),
            Activation::Elu => Ok(self.unary(x, Unary::Elu)),
            Activation::Glu => self.glu(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    fn unary(&mut self, x: Var, f: Unary) -> Var {
        let out = self.value(x).map(|v| f.apply(v));
        self.push(out, Op::Unary(x, f), &[x])
    }

    fn glu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = *t.shape().last().unwrap_or(&0);
        if t.rank() == 0 || c % 2 != 0 {
            return dim_err("glu", format!("last axis of {:?} must be even", t.shape()));
        }
        let half = c / 2;
        let rows = t.len() / c.max(1);
        let mut out = Vec::with_capacity(rows * half);
        for r in 0..rows {
            let row = &t.data()[r * c..(r + 1) * c];
            for j in 0..half {
                out.push(row[j] * sigmoid(row[half + j]));
            }
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = half;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Glu(x), &[x]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scale(c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    // ---- broadcasting ---------------------------------------------------

    fn channel_check(&self, op: &'static str, x: Var, v: Var) -> Result<usize> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(v) != [n] || self.value(x).rank() == 0 {
            return dim_err(
                op,
                format!(
                    "vector {:?} does not match last axis of {:?}",
                    self.shape(v),
                    self.shape(x)
                ),
            );
        }
        Ok(n)
    }

    /// `x[..., c] * v[c]`.
    pub fn mul_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let n = self.channel_check("mul_channel", x, v)?;
        let vd = self.value(v).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            row.iter_mut().zip(&vd).for_each(|(a, b)| *a *= b);
        }
        Ok(self.push(out, Op::MulChannel(x, v), &[x, v]))
    }

    /// `x[..., c] + v[c]`.
    pub fn add_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let n = self.channel_check("add_channel", x, v)?;
        let vd = self.value(v).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            row.iter_mut().zip(&vd).for_each(|(a, b)| *a += b);
        }
        Ok(self.push(out, Op::AddChannel(x, v), &[x, v]))
    }

    fn sample_channel_check(&self, op: &'static str, x: Var, s: Var) -> Result<(usize, usize)> {
        let xs = self.shape(x);
        let ss = self.shape(s);
        if xs.len() < 2 || ss.len() != 2 || ss[0] != xs[0] || ss[1] != xs[xs.len() - 1] {
            return dim_err(op, format!("per-sample vector {ss:?} does not fit {xs:?}"));
        }
        Ok((ss[0], ss[1]))
    }

    /// `x[i, ..., c] * s[i, c]`: a separate channel scaling per sample.
    pub fn mul_sample_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, n) = self.sample_channel_check("mul_sample_channel", x, s)?;
        let sd = self.value(s).data().to_vec();
        let mut out = self.value(x).clone();
        let per = out.len() / b.max(1);
        for (i, block) in out.data_mut().chunks_mut(per.max(1)).enumerate() {
            let srow = &sd[i * n..(i + 1) * n];
            for row in block.chunks_mut(n.max(1)) {
                row.iter_mut().zip(srow).for_each(|(a, c)| *a *= c);
            }
        }
        Ok(self.push(out, Op::MulSampleChannel(x, s), &[x, s]))
    }

    /// `x[i, ..., c] + s[i, c]`.
    pub fn add_sample_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, n) = self.sample_channel_check("add_sample_channel", x, s)?;
        let sd = self.value(s).data().to_vec();
        let mut out = self.value(x).clone();
        let per = out.len() / b.max(1);
        for (i, block) in out.data_mut().chunks_mut(per.max(1)).enumerate() {
            let srow = &sd[i * n..(i + 1) * n];
            for row in block.chunks_mut(n.max(1)) {
                row.iter_mut().zip(srow).for_each(|(a, c)| *a += c);
            }
        }
        Ok(self.push(out, Op::AddSampleChannel(x, s), &[x, s]))
    }

    // ---- structural -----------------------------------------------------

    /// Concatenation along the last axis (`a` first).
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return dim_err("concat", format!("{sa:?} vs {sb:?}"));
        }
        let p = sa[sa.len() - 1];
        let q = sb[sb.len() - 1];
        let rows: usize = sa[..sa.len() - 1].iter().product();
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = p + q;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            out.extend_from_slice(&da[r * p..(r + 1) * p]);
            out.extend_from_slice(&db[r * q..(r + 1) * q]);
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::ConcatLast(a, b), &[a, b]))
    }

    /// Concatenation along the leading (batch) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return dim_err("concat_rows", "no inputs"),
        };
        if first.is_empty() {
            return dim_err("concat_rows", "cannot stack scalars");
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[1..] != first[1..] {
                return dim_err("concat_rows", format!("{first:?} vs {s:?}"));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = first;
        shape[0] = rows;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return dim_err(
                "slice_rows",
                format!("rows {start}..{} of {s:?}", start + len),
            );
        }
        let per: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * per..(start + len) * per].to_vec();
        let mut shape = s;
        shape[0] = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(out, Op::Mean(x), &[x]))
    }

    // ---- normalization --------------------------------------------------

    /// Per-channel standardization over every axis but the last, using the
    /// biased batch variance plus `eps`. Returns the standardized tensor
    /// together with the batch mean and biased variance per channel.
    pub fn standardize(&mut self, x: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let t = self.value(x);
        let c = match t.shape().last() {
            Some(&c) if c > 0 => c,
            _ => return dim_err("standardize", format!("bad shape {:?}", t.shape())),
        };
        let rows = t.len() / c;
        if rows == 0 {
            return dim_err("standardize", "no rows");
        }
        let d = t.data();
        let mut mean = vec![0.0; c];
        for row in d.chunks(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in d.chunks(c) {
            for j in 0..c {
                let dv = row[j] - mean[j];
                var[j] += dv * dv;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = d.to_vec();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let v = self.push(out, Op::Standardize { x, inv_std }, &[x]);
        Ok((v, mean, var))
    }

    /// `w / sigma` with `sigma = u^T W v`, where `W` is `w` viewed as
    /// `(len / cols) x cols` and `u`, `v` are held constant.
    pub fn spectral_normalize(&mut self, w: Var, u: &[f64], v: &[f64]) -> Result<Var> {
        let t = self.value(w);
        let cols = *t.shape().last().unwrap_or(&0);
        if cols == 0 || t.len() % cols != 0 {
            return dim_err("spectral_normalize", format!("bad shape {:?}", t.shape()));
        }
        let rows = t.len() / cols;
        if u.len() != rows || v.len() != cols {
            return dim_err(
                "spectral_normalize",
                format!(
                    "u/v lengths {}/{} vs matrix {rows}x{cols}",
                    u.len(),
                    v.len()
                ),
            );
        }
        let d = t.data();
        let mut sigma = 0.0;
        for i in 0..rows {
            let wv: f64 = d[i * cols..(i + 1) * cols]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum();
            sigma += u[i] * wv;
        }
        if !(sigma.abs() > 0.0) || !sigma.is_finite() {
            return Err(Error::Normalization(format!(
                "spectral norm estimate {sigma} is not positive"
            )));
        }
        let out = t.scale(1.0 / sigma);
        let op = Op::SpectralNorm {
            w,
            u: u.to_vec(),
            v: v.to_vec(),
            sigma,
        };
        Ok(self.push(out, op, &[w]))
    }

    // ---- reverse pass ---------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, c) = as_matrix("matmul", ta).expect("recorded");
                let k = tb.shape()[1];
                if self.wants(*a) {
                    let mut da = vec![0.0; r * c];
                    gemm(
                        r,
                        k,
                        c,
                        g,
                        Layout::row_major(0, k),
                        tb.data(),
                        Layout::transposed(0, k),
                        0.0,
                        &mut da,
                        Layout::row_major(0, c),
                    );
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; c * k];
                    gemm(
                        c,
                        r,
                        k,
                        ta.data(),
                        Layout::transposed(0, c),
                        g,
                        Layout::row_major(0, k),
                        0.0,
                        &mut db,
                        Layout::row_major(0, k),
                    );
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Conv2d { x, k, geom } => {
                if self.wants(*x) {
                    let dx = conv2d_backward_input(geom, g, self.value(*k).data());
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*k) {
                    let dk = conv2d_backward_kernel(geom, g, self.value(*x).data());
                    self.accumulate(grads, *k, dk);
                }
            }
            Op::Gap(x) => {
                let (b, h, w, m) = as_nhwc("gap", self.value(*x)).expect("recorded");
                let inv = 1.0 / (h * w) as f64;
                let mut dx = vec![0.0; b * h * w * m];
                for bi in 0..b {
                    for p in 0..h * w {
                        let o = (bi * h * w + p) * m;
                        for c in 0..m {
                            dx[o + c] = g[bi * m + c] * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Unary(x, f) => {
                let xd = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(xd.iter().zip(y))
                    .map(|(gi, (&xi, &yi))| gi * f.derivative(xi, yi))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Glu(x) => {
                let t = self.value(*x);
                let c = *t.shape().last().unwrap();
                let half = c / 2;
                let mut dx = vec![0.0; t.len()];
                for r in 0..t.len() / c {
                    let row = &t.data()[r * c..(r + 1) * c];
                    for j in 0..half {
                        let s = sigmoid(row[half + j]);
                        let gj = g[r * half + j];
                        dx[r * c + j] = gj * s;
                        dx[r * c + half + j] = gj * row[j] * s * (1.0 - s);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatLast(a, b) => {
                let p = *self.shape(*a).last().unwrap();
                let q = *self.shape(*b).last().unwrap();
                let rows = self.value(*a).len() / p.max(1);
                let rows = if p == 0 {
                    self.value(*b).len() / q.max(1)
                } else {
                    rows
                };
                let mut da = Vec::with_capacity(rows * p);
                let mut db = Vec::with_capacity(rows * q);
                for r in 0..rows {
                    let row = &g[r * (p + q)..(r + 1) * (p + q)];
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let t = self.value(*x);
                let per: usize = t.shape()[1..].iter().product();
                let mut dx = vec![0.0; t.len()];
                dx[start * per..start * per + g.len()].copy_from_slice(g);
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample2(x) => {
                let (b, h, w, m) = as_nhwc("upsample", self.value(*x)).expect("recorded");
                let (h2, w2) = (2 * h, 2 * w);
                let mut dx = vec![0.0; b * h * w * m];
                for bi in 0..b {
                    for yy in 0..h2 {
                        for xx in 0..w2 {
                            let src = ((bi * h2 + yy) * w2 + xx) * m;
                            let dst = ((bi * h + yy / 2) * w + xx / 2) * m;
                            for c in 0..m {
                                dx[dst + c] += g[src + c];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::AvgPool2(x) => {
                let (b, h, w, m) = as_nhwc("avgpool2", self.value(*x)).expect("recorded");
                let (h2, w2) = (h / 2, w / 2);
                let mut dx = vec![0.0; b * h * w * m];
                for bi in 0..b {
                    for yy in 0..h {
                        for xx in 0..w {
                            let src = ((bi * h2 + yy / 2) * w2 + xx / 2) * m;
                            let dst = ((bi * h + yy) * w + xx) * m;
                            for c in 0..m {
                                dx[dst + c] = 0.25 * g[src + c];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().zip(db).map(|(x, y)| x * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().zip(da).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, g.iter().map(|v| v * c).collect());
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::MulChannel(x, v) => {
                let vd = self.value(*v).data();
                let n = vd.len();
                if self.wants(*x) {
                    let mut dx = g.to_vec();
                    for row in dx.chunks_mut(n.max(1)) {
                        row.iter_mut().zip(vd).for_each(|(a, b)| *a *= b);
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*v) {
                    let xd = self.value(*x).data();
                    let mut dv = vec![0.0; n];
                    for (grow, xrow) in g.chunks(n.max(1)).zip(xd.chunks(n.max(1))) {
                        for j in 0..n {
                            dv[j] += grow[j] * xrow[j];
                        }
                    }
                    self.accumulate(grads, *v, dv);
                }
            }
            Op::AddChannel(x, v) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.wants(*v) {
                    let n = self.value(*v).len();
                    let mut dv = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        dv.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    self.accumulate(grads, *v, dv);
                }
            }
            Op::MulSampleChannel(x, s) => {
                let ts = self.value(*s);
                let (b, n) = (ts.shape()[0], ts.shape()[1]);
                let sd = ts.data();
                let per = g.len() / b.max(1);
                if self.wants(*x) {
                    let mut dx = g.to_vec();
                    for (bi, block) in dx.chunks_mut(per.max(1)).enumerate() {
                        let srow = &sd[bi * n..(bi + 1) * n];
                        for row in block.chunks_mut(n.max(1)) {
                            row.iter_mut().zip(srow).for_each(|(a, c)| *a *= c);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*s) {
                    let xd = self.value(*x).data();
                    let mut ds = vec![0.0; b * n];
                    for bi in 0..b {
                        let gb = &g[bi * per..(bi + 1) * per];
                        let xb = &xd[bi * per..(bi + 1) * per];
                        let acc = &mut ds[bi * n..(bi + 1) * n];
                        for (grow, xrow) in gb.chunks(n.max(1)).zip(xb.chunks(n.max(1))) {
                            for j in 0..n {
                                acc[j] += grow[j] * xrow[j];
                            }
                        }
                    }
                    self.accumulate(grads, *s, ds);
                }
            }
            Op::AddSampleChannel(x, s) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.wants(*s) {
                    let ts = self.value(*s);
                    let (b, n) = (ts.shape()[0], ts.shape()[1]);
                    let per = g.len() / b.max(1);
                    let mut ds = vec![0.0; b * n];
                    for bi in 0..b {
                        let acc = &mut ds[bi * n..(bi + 1) * n];
                        for row in g[bi * per..(bi + 1) * per].chunks(n.max(1)) {
                            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    }
                    self.accumulate(grads, *s, ds);
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Standardize { x, inv_std } => {
                let c = inv_std.len();
                let rows = (y.len() / c) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gy = vec![0.0; c];
                for (grow, yrow) in g.chunks(c).zip(y.chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gy[j] += grow[j] * yrow[j];
                    }
                }
                let mut dx = vec![0.0; y.len()];
                for ((drow, grow), yrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                    for j in 0..c {
                        drow[j] =
                            inv_std[j] / rows * (rows * grow[j] - sum_g[j] - yrow[j] * sum_gy[j]);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let wd = self.value(*w).data();
                let cols = v.len();
                let inner: f64 = g.iter().zip(wd).map(|(a, b)| a * b).sum();
                let coef = inner / (sigma * sigma);
                let mut dw = Vec::with_capacity(wd.len());
                for (r, grow) in g.chunks(cols).enumerate() {
                    for (j, gv) in grow.iter().enumerate() {
                        dw.push(gv / sigma - coef * u[r] * v[j]);
                    }
                }
                self.accumulate(grads, *w, dw);
            }
        }
    }
}
