//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every operation applied to its variables. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse.

use std::collections::HashMap;

use super::kernels::{conv2d_backward, conv2d_forward, gemm, ConvGeom};
use super::tensor::compensated_sum;
use super::{NnError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBatch(Var, Vec<f64>),
    AddChannel(Var, Var),
    MulChannel(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, n: usize, cout: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, invstd: Vec<f64>, training: bool },
    Relu(Var),
    Silu(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    Softmax(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, dim: usize, start: usize },
    Upsample2(Var),
    MaxPool2(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    WeightedCe { logits: Var, target: Vec<usize>, coef: Vec<f64>, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleBatch(..) => "scale_batch",
            Op::AddChannel(..) => "add_channel",
            Op::MulChannel(..) => "mul_channel",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu(..) => "relu",
            Op::Silu(..) => "silu",
            Op::Linear { .. } => "linear",
            Op::Bmm { .. } => "bmm",
            Op::Softmax(..) => "softmax",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Upsample2(..) => "upsample",
            Op::MaxPool2(..) => "max_pool",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Mse(..) => "mse_loss",
            Op::WeightedCe { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::AddChannel(a, b) | Op::MulChannel(a, b) => vec![*a, *b],
            Op::Bmm { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::ScaleBatch(a, _)
            | Op::Relu(a)
            | Op::Silu(a)
            | Op::Softmax(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Upsample2(a)
            | Op::MaxPool2(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Narrow { x, .. } => vec![*x],
            Op::WeightedCe { logits, .. } => vec![*logits],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat(vs, _) => vs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    vars: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn var(&self, v: Var) -> Option<&Tensor> {
        self.vars.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

/// Batch statistics from a training-mode batch norm: per-channel mean and
/// biased variance, plus the element count per channel.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

pub enum BnMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    param_vars: HashMap<ParamId, Var>,
    leaf_params: HashMap<usize, ParamId>,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            param_vars: HashMap::new(),
            leaf_params: HashMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    /// A graph that records no gradient requirements; for inference.
    pub fn no_grad() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
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

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(op.name()));
        }
        let requires_grad = self.grad_enabled && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var, NnError> {
        if !t.all_finite() {
            return Err(NnError::NonFinite("leaf"));
        }
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: requires_grad && self.grad_enabled });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, NnError> {
        self.leaf(t, false)
    }

    /// A free input whose gradient is reported by [`Gradients::var`].
    pub fn input(&mut self, t: Tensor) -> Result<Var, NnError> {
        self.leaf(t, true)
    }

    /// Leaf bound to a stored parameter; one leaf per parameter per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, NnError> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let p = store.get(id);
        let v = self.leaf(p.tensor.clone(), !p.frozen)?;
        self.param_vars.insert(id, v);
        self.leaf_params.insert(v.0, id);
        Ok(v)
    }

    /// Queues a buffer (e.g. running statistics) update for the caller to apply.
    pub fn push_buffer_update(&mut self, id: ParamId, t: Tensor) {
        self.buffer_updates.push((id, t));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{op}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, name: &str) -> Result<Var, NnError> {
        self.same_shape(a, b, name)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape(), data)?;
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NnError> {
        let t = self.value(a).map(|v| v * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, NnError> {
        let t = self.value(a).map(|v| v + s);
        self.push(t, Op::AddScalar(a))
    }

    /// Multiplies slice `i` along the leading axis by the constant `gains[i]`.
    pub fn scale_batch(&mut self, a: Var, gains: &[f64]) -> Result<Var, NnError> {
        let x = self.value(a);
        let n = x.shape().first().copied().unwrap_or(0);
        if n != gains.len() {
            return Err(shape_err(format!("scale_batch: {} gains for leading dim {n}", gains.len())));
        }
        let inner = x.len() / n.max(1);
        let mut t = x.clone();
        for (chunk, &g) in t.data_mut().chunks_mut(inner.max(1)).zip(gains) {
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        self.push(t, Op::ScaleBatch(a, gains.to_vec()))
    }

    /// Maps a position of `x` (shape `(n, c, ...)`) to the broadcast index of
    /// a `(c)` or `(n, c)` operand.
    fn channel_layout(&self, x: Var, b: Var, op: &str) -> Result<(usize, usize, usize, bool), NnError> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if xs.len() < 2 {
            return Err(shape_err(format!("{op}: input rank {} < 2", xs.len())));
        }
        let (n, c) = (xs[0], xs[1]);
        let rest: usize = xs[2..].iter().product();
        let per_item = if bs == [c] {
            false
        } else if bs == [n, c] {
            true
        } else {
            return Err(shape_err(format!("{op}: operand {bs:?} does not broadcast over {xs:?}")));
        };
        Ok((n, c, rest, per_item))
    }

    fn channel_index(i: usize, c: usize, rest: usize, per_item: bool) -> usize {
        let nc = i / rest;
        if per_item {
            nc
        } else {
            nc % c
        }
    }

    /// `x + b` with `b` of shape `(c)` or `(n, c)` broadcast over trailing axes.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let (_, c, rest, per_item) = self.channel_layout(x, b, "add_channel")?;
        let bv = self.value(b).data();
        let mut t = self.value(x).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += bv[Self::channel_index(i, c, rest, per_item)];
        }
        self.push(t, Op::AddChannel(x, b))
    }

    /// `x * s` with `s` of shape `(c)` or `(n, c)` broadcast over trailing axes.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        let (_, c, rest, per_item) = self.channel_layout(x, s, "mul_channel")?;
        let sv = self.value(s).data();
        let mut t = self.value(x).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v *= sv[Self::channel_index(i, c, rest, per_item)];
        }
        self.push(t, Op::MulChannel(x, s))
    }

    /// Feature-wise affine modulation `x * (1 + scale) + shift`.
    pub fn modulate(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var, NnError> {
        let s1 = self.add_scalar(scale, 1.0)?;
        let y = self.mul_channel(x, s1)?;
        self.add_channel(y, shift)
    }

    /// Cross-correlation. `x`: `(n, cin, h, w)`, `w`: `(cout, cin, k, k)`, `b`: `(cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || xs[1] != ws[1] {
            return Err(shape_err(format!("conv2d: input {xs:?} with weight {ws:?}")));
        }
        if stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(shape_err(format!("conv2d: kernel {} too large for {xs:?} with pad {pad}", ws[2])));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err(format!("conv2d: bias {:?} for {} outputs", self.shape(b), ws[0])));
            }
        }
        let geom = ConvGeom { cin: xs[1], h: xs[2], w: xs[3], k: ws[2], stride, pad };
        let (n, cout) = (xs[0], ws[0]);
        let out = conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            cout,
            b.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(&[n, cout, geom.out_h(), geom.out_w()], out)?;
        self.push(t, Op::Conv2d { x, w, b, geom, n, cout })
    }

    /// Batch norm over axis 1 with epsilon `eps`. In training mode, also
    /// returns the batch statistics so the caller can update running values.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>), NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(shape_err(format!(
                "batch_norm: input {xs:?}, gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (n, c) = (xs[0], xs[1]);
        let rest: usize = xs[2..].iter().product();
        let count = n * rest;
        let xv = self.value(x).data();
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += xv[(b * c + ch) * rest..(b * c + ch + 1) * rest].iter().sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut q = 0.0;
                    for b in 0..n {
                        q += xv[(b * c + ch) * rest..(b * c + ch + 1) * rest].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = q / count as f64;
                }
                let stats = BatchStats { mean: mean.clone(), var: var.clone(), count };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err(format!("batch_norm: running stats for {} channels, input has {c}", mean.len())));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for (i, (&v, (xh, o))) in xv.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / rest) % c;
            *xh = (v - mean[ch]) * invstd[ch];
            *o = g[ch] * *xh + bt[ch];
        }
        let training = stats.is_some();
        let t = Tensor::new(&xs, out)?;
        let op = Op::BatchNorm { x, gamma, beta, xhat, invstd, training };
        Ok((self.push(t, op)?, stats))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.value(a).map(|v| v.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.value(a).map(|v| v / (1.0 + (-v).exp()));
        self.push(t, Op::Silu(a))
    }

    /// `x @ w^T + b` over the last axis. `x`: `(..., in)`, `w`: `(out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || *xs.last().unwrap() != ws[1] {
            return Err(shape_err(format!("linear: input {xs:?} with weight {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err(format!("linear: bias {:?} for {} outputs", self.shape(b), ws[0])));
            }
        }
        let (fin, fout) = (ws[1], ws[0]);
        let rows = self.value(x).len() / fin.max(1);
        let mut out = vec![0.0; rows * fout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in out.chunks_mut(fout) {
                r.copy_from_slice(bv);
            }
        }
        gemm(rows, fin, fout, self.value(x).data(), false, self.value(w).data(), true, &mut out, 1.0);
        let mut shape = xs;
        *shape.last_mut().unwrap() = fout;
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::Linear { x, w, b })
    }

    /// Batched matrix product. `a`: `(B, M, K)`; `b`: `(B, K, N)`, or `(B, N, K)` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, NnError> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        let ok = as_.len() == 3 && bs.len() == 3 && as_[0] == bs[0] && as_[2] == if trans_b { bs[2] } else { bs[1] };
        if !ok {
            return Err(shape_err(format!("bmm: {as_:?} x {bs:?} (trans_b={trans_b})")));
        }
        let (bn, m, k) = (as_[0], as_[1], as_[2]);
        let n = if trans_b { bs[1] } else { bs[2] };
        let mut out = vec![0.0; bn * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..bn {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                false,
                &bv[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let t = Tensor::new(&[bn, m, n], out)?;
        self.push(t, Op::Bmm { a, b, trans_b })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NnError> {
        let x = self.value(a);
        let d = *x.shape().last().ok_or_else(|| shape_err("softmax on a scalar".into()))?;
        let mut t = x.clone();
        for row in t.data_mut().chunks_mut(d.max(1)) {
            softmax_in_place(row);
        }
        self.push(t, Op::Softmax(a))
    }

    /// Scaled dot-product attention over `(batch, tokens, dim)` operands.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, NnError> {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 || qs[2] != ks[2] || ks[1] != vs[1] || qs[0] != ks[0] || ks[0] != vs[0] {
            return Err(shape_err(format!("attention: q {qs:?}, k {ks:?}, v {vs:?}")));
        }
        let scores = self.bmm(q, k, true)?;
        let scores = self.scale(scores, 1.0 / (qs[2] as f64).sqrt())?;
        let w = self.softmax(scores)?;
        self.bmm(w, v, false)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NnError> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, NnError> {
        let t = self.value(a).permute(perm)?;
        self.push(t, Op::Permute(a, perm.to_vec()))
    }

    pub fn concat(&mut self, vars: &[Var], dim: usize) -> Result<Var, NnError> {
        let first = self.shape(*vars.first().ok_or_else(|| shape_err("concat of nothing".into()))?).to_vec();
        if dim >= first.len() {
            return Err(shape_err(format!("concat: dim {dim} for rank {}", first.len())));
        }
        let mut total = 0;
        for &v in vars {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != dim && d != first[i]) {
                return Err(shape_err(format!("concat: {s:?} vs {first:?} along {dim}")));
            }
            total += s[dim];
        }
        let outer: usize = first[..dim].iter().product();
        let inner: usize = first[dim + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in vars {
                let chunk = self.shape(v)[dim] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[dim] = total;
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::Concat(vars.to_vec(), dim))
    }

    pub fn narrow(&mut self, a: Var, dim: usize, start: usize, len: usize) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if dim >= s.len() || start + len > s[dim] {
            return Err(shape_err(format!("narrow: [{start}, {}) of axis {dim} in {s:?}", start + len)));
        }
        let outer: usize = s[..dim].iter().product();
        let inner: usize = s[dim + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[dim] + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = s;
        shape[dim] = len;
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::Narrow { x: a, dim, start })
    }

    /// Nearest-neighbour 2x upsampling of `(n, c, h, w)`.
    pub fn upsample2(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!("upsample: rank {} input", s.len())));
        }
        let (h, w) = (s[2], s[3]);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len() * 4];
        for (p, plane) in x.chunks(h * w).enumerate() {
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let t = Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out)?;
        self.push(t, Op::Upsample2(a))
    }

    /// 2x2 max pooling with stride 2; spatial dims must be even.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(shape_err(format!("max_pool2 needs (n, c, even h, even w), got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(a).data();
        let planes = s[0] * s[1];
        let mut out = vec![0.0; planes * oh * ow];
        let mut arg = vec![0usize; planes * oh * ow];
        for p in 0..planes {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = p * h * w + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = p * h * w + (2 * y + dy) * w + 2 * xx + dx;
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                    let o = (p * oh + y) * ow + xx;
                    out[o] = x[best];
                    arg[o] = best;
                }
            }
        }
        let t = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        self.push(t, Op::MaxPool2(a, arg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NnError> {
        let x = self.value(a);
        let t = Tensor::scalar(x.sum() / x.len().max(1) as f64);
        self.push(t, Op::Mean(a))
    }

    /// Mean squared error.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "mse_loss")?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let s = compensated_sum(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)));
        let t = Tensor::scalar(s / x.len().max(1) as f64);
        self.push(t, Op::Mse(a, b))
    }

    /// Weighted cross-entropy over `(n, k, h, w)` logits:
    /// `sum_i class_weights[y_i] * pixel_weights[i] * -log softmax(z_i)[y_i] / (n*h*w)`.
    /// `pixel_weights` defaults to all ones.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        target: &[usize],
        class_weights: &[f64],
        pixel_weights: Option<&[f64]>,
    ) -> Result<Var, NnError> {
        let s = self.shape(logits).to_vec();
        if s.len() < 2 {
            return Err(shape_err(format!("cross_entropy: logits {s:?}")));
        }
        let (n, k) = (s[0], s[1]);
        let rest: usize = s[2..].iter().product();
        let m = n * rest;
        if target.len() != m || class_weights.len() != k || pixel_weights.is_some_and(|p| p.len() != m) {
            return Err(shape_err(format!(
                "cross_entropy: logits {s:?}, {} targets, {} class weights",
                target.len(),
                class_weights.len()
            )));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= k) {
            return Err(NnError::InvalidTarget { class: bad, classes: k });
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; x.len()];
        let mut coef = vec![0.0; m];
        let mut loss = 0.0;
        let mut row = vec![0.0; k];
        for b in 0..n {
            for p in 0..rest {
                let i = b * rest + p;
                for (c, r) in row.iter_mut().enumerate() {
                    *r = x[(b * k + c) * rest + p];
                }
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                for c in 0..k {
                    probs[(b * k + c) * rest + p] = (row[c] - lse).exp();
                }
                let wgt = class_weights[target[i]] * pixel_weights.map_or(1.0, |pw| pw[i]);
                coef[i] = wgt / m as f64;
                loss += wgt * (lse - row[target[i]]);
            }
        }
        let t = Tensor::scalar(loss / m as f64);
        self.push(t, Op::WeightedCe { logits, target: target.to_vec(), coef, probs })
    }

    /// Reverse pass from a scalar `loss`. Gradients are returned for leaves
    /// that require them; frozen parameters and constants get none.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.value(loss).len() != 1 {
            return Err(NnError::NonScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut out = Gradients::default();
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                let t = Tensor::new(node.value.shape(), g)?;
                match self.leaf_params.get(&i) {
                    Some(&pid) => {
                        out.params.insert(pid, t);
                    }
                    None => {
                        out.vars.insert(i, t);
                    }
                }
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let zeros = |v: Var| vec![0.0; self.nodes[v.0].value.len()];
        let mut push = |v: Var, delta: Vec<f64>| self.accumulate(grads, v, delta);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        push(v, g.to_vec());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    push(*a, g.to_vec());
                }
                if self.wants(*b) {
                    push(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    push(*a, g.iter().zip(val(*b)).map(|(gi, y)| gi * y).collect());
                }
                if self.wants(*b) {
                    push(*b, g.iter().zip(val(*a)).map(|(gi, x)| gi * x).collect());
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    push(*a, g.iter().map(|gi| gi * s).collect());
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if self.wants(*a) {
                    push(*a, g.to_vec());
                }
            }
            Op::ScaleBatch(a, gains) => {
                if self.wants(*a) {
                    let inner = (g.len() / gains.len().max(1)).max(1);
                    push(*a, g.iter().enumerate().map(|(i, gi)| gi * gains[i / inner]).collect());
                }
            }
            Op::AddChannel(x, b) | Op::MulChannel(x, b) => {
                let is_mul = matches!(node.op, Op::MulChannel(..));
                let xs = self.nodes[x.0].value.shape();
                let c = xs[1];
                let rest: usize = xs[2..].iter().product();
                let per_item = self.nodes[b.0].value.shape().len() == 2;
                let bv = val(*b);
                let idx = |i: usize| Self::channel_index(i, c, rest, per_item);
                if self.wants(*x) {
                    let d = if is_mul { g.iter().enumerate().map(|(i, gi)| gi * bv[idx(i)]).collect() } else { g.to_vec() };
                    push(*x, d);
                }
                if self.wants(*b) {
                    let xv = val(*x);
                    let mut d = zeros(*b);
                    for (i, &gi) in g.iter().enumerate() {
                        d[idx(i)] += if is_mul { gi * xv[i] } else { gi };
                    }
                    push(*b, d);
                }
            }
            Op::Conv2d { x, w, b, geom, n, cout } => {
                let mut dx = self.wants(*x).then(|| zeros(*x));
                let mut dw = self.wants(*w).then(|| zeros(*w));
                let mut db = b.filter(|b| self.wants(*b)).map(zeros);
                conv2d_backward(
                    val(*x),
                    *n,
                    geom,
                    val(*w),
                    *cout,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    push(*x, d);
                }
                if let Some(d) = dw {
                    push(*w, d);
                }
                if let (Some(b), Some(d)) = (b, db) {
                    push(*b, d);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, invstd, training } => {
                let xs = self.nodes[x.0].value.shape();
                let c = xs[1];
                let rest: usize = xs[2..].iter().product();
                let m = (g.len() / c) as f64;
                let ch = |i: usize| (i / rest) % c;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (i, (&gi, &xh)) in g.iter().zip(xhat).enumerate() {
                    sum_g[ch(i)] += gi;
                    sum_gx[ch(i)] += gi * xh;
                }
                if self.wants(*x) {
                    let gm = val(*gamma);
                    let d = if *training {
                        g.iter()
                            .enumerate()
                            .map(|(i, &gi)| {
                                let k = ch(i);
                                gm[k] * invstd[k] / m * (m * gi - sum_g[k] - xhat[i] * sum_gx[k])
                            })
                            .collect()
                    } else {
                        g.iter().enumerate().map(|(i, &gi)| gi * gm[ch(i)] * invstd[ch(i)]).collect()
                    };
                    push(*x, d);
                }
                if self.wants(*gamma) {
                    push(*gamma, sum_gx);
                }
                if self.wants(*beta) {
                    push(*beta, sum_g);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    push(*a, g.iter().zip(val(*a)).map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 }).collect());
                }
            }
            Op::Silu(a) => {
                if self.wants(*a) {
                    let d = g
                        .iter()
                        .zip(val(*a))
                        .map(|(&gi, &x)| {
                            let s = 1.0 / (1.0 + (-x).exp());
                            gi * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    push(*a, d);
                }
            }
            Op::Linear { x, w, b } => {
                let ws = self.nodes[w.0].value.shape();
                let (fout, fin) = (ws[0], ws[1]);
                let rows = g.len() / fout.max(1);
                if self.wants(*x) {
                    let mut d = zeros(*x);
                    gemm(rows, fout, fin, g, false, val(*w), false, &mut d, 0.0);
                    push(*x, d);
                }
                if self.wants(*w) {
                    let mut d = zeros(*w);
                    gemm(fout, rows, fin, g, true, val(*x), false, &mut d, 0.0);
                    push(*w, d);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut d = zeros(b);
                    for r in g.chunks(fout) {
                        d.iter_mut().zip(r).for_each(|(di, &gi)| *di += gi);
                    }
                    push(b, d);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let as_ = self.nodes[a.0].value.shape();
                let (bn, m, k) = (as_[0], as_[1], as_[2]);
                let n = g.len() / (bn * m).max(1);
                let (av, bv) = (val(*a), val(*b));
                if self.wants(*a) {
                    let mut d = zeros(*a);
                    for i in 0..bn {
                        // dA = dC * op(B)^T
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &bv[i * k * n..(i + 1) * k * n],
                            !trans_b,
                            &mut d[i * m * k..(i + 1) * m * k],
                            0.0,
                        );
                    }
                    push(*a, d);
                }
                if self.wants(*b) {
                    let mut d = zeros(*b);
                    for i in 0..bn {
                        let ga = &g[i * m * n..(i + 1) * m * n];
                        let aa = &av[i * m * k..(i + 1) * m * k];
                        let db = &mut d[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // dB (n x k) = dC^T * A
                            gemm(n, m, k, ga, true, aa, false, db, 0.0);
                        } else {
                            // dB (k x n) = A^T * dC
                            gemm(k, m, n, aa, true, ga, false, db, 0.0);
                        }
                    }
                    push(*b, d);
                }
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let y = node.value.data();
                    let dim = *node.value.shape().last().unwrap();
                    let mut d = vec![0.0; g.len()];
                    for ((dr, yr), gr) in d.chunks_mut(dim).zip(y.chunks(dim)).zip(g.chunks(dim)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((di, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                            *di = yi * (gi - dot);
                        }
                    }
                    push(*a, d);
                }
            }
            Op::Permute(a, perm) => {
                if self.wants(*a) {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let gt = Tensor::new(node.value.shape(), g.to_vec()).expect("grad shape");
                    push(*a, gt.permute(&inv).expect("inverse permutation").into_data());
                }
            }
            Op::Concat(vars, dim) => {
                let s = node.value.shape();
                let outer: usize = s[..*dim].iter().product();
                let inner: usize = s[dim + 1..].iter().product();
                let total = s[*dim] * inner;
                let mut offset = 0;
                for &v in vars {
                    let chunk = self.nodes[v.0].value.shape()[*dim] * inner;
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * total + offset..o * total + offset + chunk]);
                        }
                        push(v, d);
                    }
                    offset += chunk;
                }
            }
            Op::Narrow { x, dim, start } => {
                if self.wants(*x) {
                    let s = self.nodes[x.0].value.shape();
                    let len = node.value.shape()[*dim];
                    let outer: usize = s[..*dim].iter().product();
                    let inner: usize = s[dim + 1..].iter().product();
                    let mut d = zeros(*x);
                    for o in 0..outer {
                        let base = (o * s[*dim] + start) * inner;
                        d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    push(*x, d);
                }
            }
            Op::Upsample2(a) => {
                if self.wants(*a) {
                    let s = self.nodes[a.0].value.shape();
                    let (h, w) = (s[2], s[3]);
                    let mut d = zeros(*a);
                    for (p, plane) in d.chunks_mut(h * w).enumerate() {
                        let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                plane[(y / 2) * w + x / 2] += src[y * 2 * w + x];
                            }
                        }
                    }
                    push(*a, d);
                }
            }
            Op::MaxPool2(a, arg) => {
                if self.wants(*a) {
                    let mut d = zeros(*a);
                    for (&j, &gi) in arg.iter().zip(g) {
                        d[j] += gi;
                    }
                    push(*a, d);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    push(*a, vec![g[0]; self.nodes[a.0].value.len()]);
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let n = self.nodes[a.0].value.len();
                    push(*a, vec![g[0] / n.max(1) as f64; n]);
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let s = 2.0 * g[0] / av.len().max(1) as f64;
                if self.wants(*a) {
                    push(*a, av.iter().zip(bv).map(|(p, q)| s * (p - q)).collect());
                }
                if self.wants(*b) {
                    push(*b, av.iter().zip(bv).map(|(p, q)| -s * (p - q)).collect());
                }
            }
            Op::WeightedCe { logits, target, coef, probs } => {
                if self.wants(*logits) {
                    let s = self.nodes[logits.0].value.shape();
                    let k = s[1];
                    let rest: usize = s[2..].iter().product();
                    let mut d = zeros(*logits);
                    for (i, (&t, &cf)) in target.iter().zip(coef).enumerate() {
                        let (b, p) = (i / rest, i % rest);
                        for c in 0..k {
                            let j = (b * k + c) * rest + p;
                            let ind = if c == t { 1.0 } else { 0.0 };
                            d[j] = g[0] * cf * (probs[j] - ind);
                        }
                    }
                    push(*logits, d);
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
