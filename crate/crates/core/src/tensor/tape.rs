//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output; `backward` walks the
//! nodes in exact reverse order, so gradients are reproducible bit for bit.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::kernels::{gemm, gemm_nt, gemm_tn, gemm_view, View};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Multi-head scaled dot-product attention over `batch` independent blocks.
///
/// Queries have shape `[batch * q_len, d]`, keys and values
/// `[batch * k_len, d]`. `key_mask[b * k_len + j] == false` hides key `j` of
/// block `b`; a query with no visible key produces a zero row.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSpec {
    pub heads: usize,
    pub batch: usize,
    pub causal: bool,
    pub key_mask: Option<Vec<bool>>,
}

impl AttentionSpec {
    pub fn new(heads: usize, batch: usize) -> Self {
        Self { heads, batch, causal: false, key_mask: None }
    }

    pub fn causal(mut self) -> Self {
        self.causal = true;
        self
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.key_mask = Some(mask);
        self
    }
}

enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Gelu { x: Var, tanh: Vec<T> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    GroupPrefixSum { x: Var, group: usize, exclusive: bool },
    SlotLinear { x: Var, w: Var, b: Var, group: usize },
    Attention { q: Var, k: Var, v: Var, spec: AttentionSpec, probs: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T> },
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Gelu { x: a, .. } | Op::Softmax(a) | Op::Reshape(a) | Op::Sum(a) | Op::Mean(a) => vec![*a],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::GatherRows { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::GroupPrefixSum { x, .. } => vec![*x],
            Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
            Op::SlotLinear { x, w, b, .. } => vec![*x, *w, *b],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for one forward pass.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    params: Option<&'a ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
    nonfinite: Option<usize>,
}

/// Result of a backward pass: gradients of leaves and parameters reached
/// from the loss.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    param_nodes: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf or parameter node.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter the loss depends on.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.param_nodes.iter().filter_map(|&(id, n)| self.grads[n].as_ref().map(|g| (id, g)))
    }
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

/// GELU (tanh approximation) and the tanh it used.
#[inline]
fn gelu_forward<T: Scalar>(x: T) -> (T, T) {
    let u = T::from_f64(GELU_C) * (x + T::from_f64(GELU_A) * x * x * x);
    // tanh(u) = 1 - 2 / (e^{2u} + 1); saturates cleanly at both ends.
    let t = T::one() - T::from_f64(2.0) / ((u + u).exp() + T::one());
    (T::from_f64(0.5) * x * (T::one() + t), t)
}

#[inline]
fn gelu_derivative<T: Scalar>(x: T, t: T) -> T {
    let half = T::from_f64(0.5);
    let one = T::one();
    half * (one + t)
        + half * x * (one - t * t) * T::from_f64(GELU_C) * (one + T::from_f64(3.0 * GELU_A) * x * x)
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// A tape without parameters.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: None, param_vars: Vec::new(), grad_enabled: true, nonfinite: None }
    }

    /// A tape that reads parameters from `store` and tracks their gradients.
    pub fn with_params(store: &'a ParamStore<T>) -> Self {
        Self { nodes: Vec::new(), params: Some(store), param_vars: vec![None; store.len()], grad_enabled: true, nonfinite: None }
    }

    /// A forward-only tape: nothing needs a gradient and no backward state
    /// is kept.
    pub fn inference(store: &'a ParamStore<T>) -> Self {
        Self { nodes: Vec::new(), params: Some(store), param_vars: vec![None; store.len()], grad_enabled: false, nonfinite: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// First node (in debug builds) whose output went non-finite although
    /// all of its inputs were finite.
    pub fn first_nonfinite(&self) -> Option<Var> {
        self.nonfinite.map(Var)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let inputs = op.inputs();
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        if cfg!(debug_assertions)
            && self.nonfinite.is_none()
            && !value.is_finite()
            && inputs.iter().all(|&v| self.value(v).is_finite())
        {
            self.nonfinite = Some(self.nodes.len());
        }
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node { value: Cow::Owned(value), op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// The node for a stored parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let value = &store.get(id).value;
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Param, needs_grad: self.grad_enabled });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn zip_with(&self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same_shape(ta, tb, what)?;
        Ok(Tensor { shape: ta.shape.clone(), data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Adds a `[cols]` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let c = tx.cols();
        if tr.numel() != c {
            return Err(shape_err!("add_row: {:?} + {:?}", tx.shape(), tr.shape()));
        }
        let mut out = tx.clone();
        for r in out.data.chunks_mut(c) {
            for (o, &b) in r.iter_mut().zip(&tr.data) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x W + b` on the last dimension of `x`; `W` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.shape().len() != 2 || tx.cols() != tw.shape()[0] {
            return Err(shape_err!("linear: {:?} x {:?}", tx.shape(), tw.shape()));
        }
        let (m, k, n) = (tx.rows(), tw.shape()[0], tw.shape()[1]);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let mut data = match b {
            Some(b) => {
                let tb = self.value(b);
                if tb.numel() != n {
                    return Err(shape_err!("linear bias {:?} for width {n}", tb.shape()));
                }
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend_from_slice(&tb.data);
                }
                d
            }
            None => vec![T::zero(); m * n],
        };
        gemm(&tx.data, &tw.data, &mut data, m, k, n, b.is_some());
        Ok(self.push(Tensor { shape, data }, Op::Linear { x, w, b }))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let keep = self.grad_enabled && self.needs(x);
        let mut tanh = Vec::with_capacity(if keep { tx.numel() } else { 0 });
        let mut data = Vec::with_capacity(tx.numel());
        for &v in &tx.data {
            let (y, t) = gelu_forward(v);
            data.push(y);
            if keep {
                tanh.push(t);
            }
        }
        let out = Tensor { shape: tx.shape.clone(), data };
        self.push(out, Op::Gelu { x, tanh })
    }

    /// Layer normalization over the last dimension, `eps = 1e-5`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = tx.cols();
        if tg.numel() != c || tb.numel() != c {
            return Err(shape_err!("layer_norm: {:?} with {:?}/{:?}", tx.shape(), tg.shape(), tb.shape()));
        }
        let eps = T::from_f64(1e-5);
        let n = T::from_usize(c);
        let rows = tx.rows();
        let mut out = Vec::with_capacity(tx.numel());
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut rstd = Vec::with_capacity(rows);
        for r in tx.data.chunks(c) {
            let mean = r.iter().copied().sum::<T>() / n;
            let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + eps).sqrt();
            rstd.push(s);
            for (i, &v) in r.iter().enumerate() {
                let h = (v - mean) * s;
                xhat.push(h);
                out.push(h * tg.data[i] + tb.data[i]);
            }
        }
        let out = Tensor { shape: tx.shape.clone(), data: out };
        let keep = self.grad_enabled;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat: if keep { xhat } else { Vec::new() },
            rstd: if keep { rstd } else { Vec::new() },
        };
        Ok(self.push(out, op))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let c = tx.cols();
        let mut out = tx.clone();
        for r in out.data.chunks_mut(c) {
            softmax_in_place(r);
        }
        self.push(out, Op::Softmax(x))
    }

    /// Picks rows of `x` (viewed as `[rows, cols]`) by index; repeats are
    /// allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (rows, c) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(shape_err!("gather_rows: index {i} >= {rows}"));
            }
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor { shape: vec![idx.len(), c], data };
        Ok(self.push(out, Op::GatherRows { x, idx: idx.to_vec() }))
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err!("concat_cols of nothing"));
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err!("concat_cols: row counts differ"));
            }
            total += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor { shape: vec![rows, total], data }, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err!("concat_rows of nothing"));
        }
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err!("concat_rows: widths {} and {c}", t.cols()));
            }
            data.extend_from_slice(&t.data);
        }
        let rows = data.len() / c.max(1);
        Ok(self.push(Tensor { shape: vec![rows, c], data }, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        if start + len > tx.rows() {
            return Err(shape_err!("slice_rows {start}+{len} of {}", tx.rows()));
        }
        let out = Tensor { shape: vec![len, c], data: tx.data[start * c..(start + len) * c].to_vec() };
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        if start + len > c {
            return Err(shape_err!("slice_cols {start}+{len} of {c}"));
        }
        let rows = tx.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        Ok(self.push(Tensor { shape: vec![rows, len], data }, Op::SliceCols { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Running sums over consecutive groups of `group` rows. With
    /// `exclusive`, row `j` of a group holds the sum of rows `0..j`.
    pub fn group_prefix_sum(&mut self, x: Var, group: usize, exclusive: bool) -> Result<Var> {
        let tx = self.value(x);
        let (rows, c) = (tx.rows(), tx.cols());
        if group == 0 || rows % group != 0 {
            return Err(shape_err!("group_prefix_sum: {rows} rows in groups of {group}"));
        }
        let mut out = Tensor::zeros(&[rows, c]);
        let mut acc = vec![T::zero(); c];
        for r in 0..rows {
            if r % group == 0 {
                acc.fill(T::zero());
            }
            let src = tx.row(r);
            let dst = &mut out.data[r * c..(r + 1) * c];
            if exclusive {
                dst.copy_from_slice(&acc);
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += s;
                }
            } else {
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += s;
                }
                dst.copy_from_slice(&acc);
            }
        }
        Ok(self.push(out, Op::GroupPrefixSum { x, group, exclusive }))
    }

    /// Per-slot affine map: row `r` of `x` is multiplied by `w[r % group]`
    /// (`w` is `[group, in, out]`, `b` is `[group, out]`).
    pub fn slot_linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tw.shape().len() != 3 {
            return Err(shape_err!("slot_linear weight {:?}", tw.shape()));
        }
        let (group, k, n) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        let rows = tx.rows();
        if tx.cols() != k || tb.numel() != group * n || rows % group != 0 {
            return Err(shape_err!("slot_linear: {:?} x {:?} + {:?}", tx.shape(), tw.shape(), tb.shape()));
        }
        let per = rows / group;
        let mut out = Tensor::zeros(&[rows, n]);
        let mut xs = vec![T::zero(); per * k];
        let mut ys = vec![T::zero(); per * n];
        for s in 0..group {
            for i in 0..per {
                xs[i * k..(i + 1) * k].copy_from_slice(tx.row(i * group + s));
                ys[i * n..(i + 1) * n].copy_from_slice(&tb.data[s * n..(s + 1) * n]);
            }
            gemm(&xs, &tw.data[s * k * n..(s + 1) * k * n], &mut ys, per, k, n, true);
            for i in 0..per {
                let r = i * group + s;
                out.data[r * n..(r + 1) * n].copy_from_slice(&ys[i * n..(i + 1) * n]);
            }
        }
        Ok(self.push(out, Op::SlotLinear { x, w, b, group }))
    }

    /// Multi-head attention; returns `[batch * q_len, d]`. No projections
    /// are applied here.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: &AttentionSpec) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        let AttentionSpec { heads, batch, causal, .. } = *spec;
        if heads == 0 || batch == 0 || d % heads != 0 {
            return Err(shape_err!("attention: width {d} with {heads} heads, batch {batch}"));
        }
        if tk.cols() != d || tv.cols() != d || tk.rows() != tv.rows() {
            return Err(shape_err!("attention: q {:?} k {:?} v {:?}", tq.shape(), tk.shape(), tv.shape()));
        }
        if tq.rows() % batch != 0 || tk.rows() % batch != 0 {
            return Err(shape_err!("attention: rows not divisible by batch {batch}"));
        }
        let (sq, sk) = (tq.rows() / batch, tk.rows() / batch);
        if causal && sq != sk {
            return Err(shape_err!("causal attention needs equal lengths, got {sq} and {sk}"));
        }
        if let Some(m) = &spec.key_mask {
            if m.len() != batch * sk {
                return Err(shape_err!("key mask has {} entries, expected {}", m.len(), batch * sk));
            }
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).sqrt();
        let keep = self.grad_enabled && [q, k, v].iter().any(|&x| self.needs(x));
        let mut out = Tensor::zeros(&[batch * sq, d]);
        let mut probs = vec![T::zero(); if keep { batch * heads * sq * sk } else { sq * sk }];
        for b in 0..batch {
            for h in 0..heads {
                let p = if keep { &mut probs[(b * heads + h) * sq * sk..][..sq * sk] } else { &mut probs[..] };
                let (q0, k0) = (b * sq * d + h * dh, b * sk * d + h * dh);
                gemm_view(sq, dh, sk, &tq.data, View::rows(q0, d), &tk.data, View::transposed(k0, d), p, 0, sk, false);
                for i in 0..sq {
                    let limit = if causal { i + 1 } else { sk };
                    let visible = |j: usize| j < limit && spec.key_mask.as_ref().is_none_or(|m| m[b * sk + j]);
                    masked_softmax(&mut p[i * sk..(i + 1) * sk], scale, visible);
                }
                gemm_view(sq, sk, dh, p, View::rows(0, sk), &tv.data, View::rows(k0, d), &mut out.data, q0, d, false);
            }
        }
        if !keep {
            probs = Vec::new();
        }
        Ok(self.push(out, Op::Attention { q, k, v, spec: spec.clone(), probs }))
    }

    /// Weighted sum of per-row cross-entropies of `logits` (`[n, vocab]`)
    /// against `targets`. Without weights every row gets `1 / n`. The sum is
    /// accumulated in `f64`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: Option<&[T]>) -> Result<Var> {
        let tl = self.value(logits);
        let (n, vocab) = (tl.rows(), tl.cols());
        if targets.len() != n {
            return Err(shape_err!("cross_entropy: {n} rows, {} targets", targets.len()));
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let weights: Vec<T> = match weights {
            Some(w) if w.len() == n => w.to_vec(),
            Some(w) => return Err(shape_err!("cross_entropy: {n} rows, {} weights", w.len())),
            None => vec![T::one() / T::from_usize(n); n],
        };
        let keep = self.grad_enabled && self.needs(logits);
        let mut probs = if keep { Vec::with_capacity(n * vocab) } else { Vec::new() };
        let mut total = 0.0f64;
        let mut row = vec![T::zero(); vocab];
        for r in 0..n {
            let t = targets[r];
            if t >= vocab {
                return Err(Error::TargetOutOfRange { target: t, vocab });
            }
            let z = tl.row(r);
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (o, &v) in row.iter_mut().zip(z) {
                *o = (v - max).exp();
                sum += *o;
            }
            let lse = max.as_f64() + Float::ln(sum.as_f64());
            total += weights[r].as_f64() * (lse - z[t].as_f64());
            if keep {
                let inv = T::one() / sum;
                probs.extend(row.iter().map(|&e| e * inv));
            }
        }
        let out = Tensor::scalar(T::from_f64(total));
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), weights, probs }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().map(|v| v.as_f64()).sum::<f64>();
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data.iter().map(|v| v.as_f64()).sum::<f64>() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(x))
    }

    /// Backpropagates from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.numel()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
        }
        let param_nodes = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(p, v)| v.map(|v| (ParamId(p), v.0)))
            .collect();
        Ok(Gradients { grads, param_nodes })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = &g.data;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()));
            f(&mut slot.data);
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, gd));
                acc(*b, &mut |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, gd));
                acc(*b, &mut |d| {
                    for (o, &x) in d.iter_mut().zip(gd) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.value(*a).data, &self.value(*b).data);
                acc(*a, &mut |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(gd).zip(tb) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(gd).zip(ta) {
                        *o += x * y;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |d| {
                for (o, &x) in d.iter_mut().zip(gd) {
                    *o += x * *s;
                }
            }),
            Op::AddRow(x, row) => {
                acc(*x, &mut |d| add_into(d, gd));
                let c = g.cols();
                acc(*row, &mut |d| col_sum_into(d, gd, c));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |d| gemm_nt(gd, &tb.data, d, m, n, k, true));
                acc(*b, &mut |d| gemm_tn(&ta.data, gd, d, k, m, n, true));
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, k, n) = (tx.rows(), tw.shape()[0], tw.shape()[1]);
                acc(*x, &mut |d| gemm_nt(gd, &tw.data, d, m, n, k, true));
                acc(*w, &mut |d| gemm_tn(&tx.data, gd, d, k, m, n, true));
                if let Some(b) = b {
                    acc(*b, &mut |d| col_sum_into(d, gd, n));
                }
            }
            Op::Gelu { x, tanh } => {
                let tx = &self.value(*x).data;
                acc(*x, &mut |d| {
                    for (((o, &gv), &xv), &t) in d.iter_mut().zip(gd).zip(tx).zip(tanh) {
                        *o += gv * gelu_derivative(xv, t);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = g.cols();
                let tg = &self.value(*gamma).data;
                acc(*beta, &mut |d| col_sum_into(d, gd, c));
                acc(*gamma, &mut |d| {
                    for (gr, hr) in gd.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, &gv), &hv) in d.iter_mut().zip(gr).zip(hr) {
                            *o += gv * hv;
                        }
                    }
                });
                acc(*x, &mut |d| {
                    let n = T::from_usize(c);
                    let mut dh = vec![T::zero(); c];
                    for (r, ((dr, gr), hr)) in d.chunks_mut(c).zip(gd.chunks(c)).zip(xhat.chunks(c)).enumerate() {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            dh[j] = gr[j] * tg[j];
                            m1 += dh[j];
                            m2 += dh[j] * hr[j];
                        }
                        m1 /= n;
                        m2 /= n;
                        for j in 0..c {
                            dr[j] += rstd[r] * (dh[j] - m1 - hr[j] * m2);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &self.nodes[i].value;
                let c = y.cols();
                acc(*x, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(gd.chunks(c)).zip(y.data.chunks(c)) {
                        let s: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((o, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *o += yv * (gv - s);
                        }
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let c = g.cols();
                acc(*x, &mut |d| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut d[src * c..(src + 1) * c], &gd[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let rows = g.rows();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    acc(p, &mut |d| {
                        for r in 0..rows {
                            add_into(&mut d[r * c..(r + 1) * c], &gd[r * total + off..r * total + off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    acc(p, &mut |d| add_into(d, &gd[off..off + n]));
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let c = g.cols();
                acc(*x, &mut |d| add_into(&mut d[start * c..start * c + gd.len()], gd));
            }
            Op::SliceCols { x, start } => {
                let (len, rows) = (g.cols(), g.rows());
                let c = self.value(*x).cols();
                acc(*x, &mut |d| {
                    for r in 0..rows {
                        add_into(&mut d[r * c + start..r * c + start + len], &gd[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| add_into(d, gd)),
            Op::GroupPrefixSum { x, group, exclusive } => {
                let (rows, c) = (g.rows(), g.cols());
                acc(*x, &mut |d| {
                    // Reverse running sums within each group.
                    let mut run = vec![T::zero(); c];
                    for r in (0..rows).rev() {
                        if r % group == group - 1 {
                            run.fill(T::zero());
                        }
                        let gr = &gd[r * c..(r + 1) * c];
                        let dr = &mut d[r * c..(r + 1) * c];
                        if *exclusive {
                            add_into(dr, &run);
                            add_into(&mut run, gr);
                        } else {
                            add_into(&mut run, gr);
                            add_into(dr, &run);
                        }
                    }
                });
            }
            Op::SlotLinear { x, w, b, group } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (k, n) = (tw.shape()[1], tw.shape()[2]);
                let group = *group;
                let rows = tx.rows();
                let per = rows / group;
                let mut gs = vec![T::zero(); per * n];
                let mut xs = vec![T::zero(); per * k];
                for s in 0..group {
                    for r in 0..per {
                        let src = r * group + s;
                        gs[r * n..(r + 1) * n].copy_from_slice(&gd[src * n..(src + 1) * n]);
                    }
                    acc(*b, &mut |d| col_sum_into(&mut d[s * n..(s + 1) * n], &gs, n));
                    acc(*x, &mut |d| {
                        let mut gx = vec![T::zero(); per * k];
                        gemm_nt(&gs, &tw.data[s * k * n..(s + 1) * k * n], &mut gx, per, n, k, false);
                        for r in 0..per {
                            let dst = r * group + s;
                            add_into(&mut d[dst * k..(dst + 1) * k], &gx[r * k..(r + 1) * k]);
                        }
                    });
                    if self.needs(*w) {
                        for r in 0..per {
                            xs[r * k..(r + 1) * k].copy_from_slice(tx.row(r * group + s));
                        }
                        acc(*w, &mut |d| gemm_tn(&xs, &gs, &mut d[s * k * n..(s + 1) * k * n], k, per, n, true));
                    }
                }
            }
            Op::Attention { q, k, v, spec, probs } => {
                let (gq, gk, gv) = self.attention_backward(*q, *k, *v, spec, probs, g);
                acc(*q, &mut |d| add_into(d, &gq));
                acc(*k, &mut |d| add_into(d, &gk));
                acc(*v, &mut |d| add_into(d, &gv));
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let vocab = self.value(*logits).cols();
                let g0 = gd[0];
                acc(*logits, &mut |d| {
                    for (r, &t) in targets.iter().enumerate() {
                        let s = g0 * weights[r];
                        let dr = &mut d[r * vocab..(r + 1) * vocab];
                        for (o, &p) in dr.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                            *o += s * p;
                        }
                        dr[t] -= s;
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = gd[0];
                acc(*x, &mut |d| d.iter_mut().for_each(|o| *o += g0));
            }
            Op::Mean(x) => {
                let s = gd[0] / T::from_usize(self.value(*x).numel().max(1));
                acc(*x, &mut |d| d.iter_mut().for_each(|o| *o += s));
            }
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[T],
        g: &Tensor<T>,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        let AttentionSpec { heads, batch, .. } = *spec;
        let (sq, sk) = (tq.rows() / batch, tk.rows() / batch);
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).sqrt();
        let mut gq = vec![T::zero(); tq.numel()];
        let mut gk = vec![T::zero(); tk.numel()];
        let mut gv = vec![T::zero(); tv.numel()];
        let mut ds = vec![T::zero(); sq * sk];
        for b in 0..batch {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * sq * sk..][..sq * sk];
                let (q0, k0) = (b * sq * d + h * dh, b * sk * d + h * dh);
                // dP = dO Vᵀ, dV += Pᵀ dO
                gemm_view(sq, dh, sk, &g.data, View::rows(q0, d), &tv.data, View::transposed(k0, d), &mut ds, 0, sk, false);
                gemm_view(sk, sq, dh, p, View::transposed(0, sk), &g.data, View::rows(q0, d), &mut gv, k0, d, true);
                // dS = P ⊙ (dP − rowsum(P ⊙ dP)), scaled
                for (dr, pr) in ds.chunks_mut(sk).zip(p.chunks(sk)) {
                    let weighted: T = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    for (x, &pv) in dr.iter_mut().zip(pr) {
                        *x = pv * (*x - weighted) * scale;
                    }
                }
                gemm_view(sq, sk, dh, &ds, View::rows(0, sk), &tk.data, View::rows(k0, d), &mut gq, q0, d, true);
                gemm_view(sk, sq, dh, &ds, View::transposed(0, sk), &tq.data, View::rows(q0, d), &mut gk, k0, d, true);
            }
        }
        (gq, gk, gv)
    }
}

/// Softmax of `scale * row` over the entries where `visible(j)`; hidden
/// entries become exactly zero, and a row with nothing visible is all zero.
fn masked_softmax<T: Scalar>(row: &mut [T], scale: T, visible: impl Fn(usize) -> bool) {
    let mut max = T::neg_infinity();
    for (j, x) in row.iter_mut().enumerate() {
        if visible(j) {
            *x *= scale;
            if *x > max {
                max = *x;
            }
        }
    }
    if max == T::neg_infinity() {
        row.fill(T::zero());
        return;
    }
    let mut sum = T::zero();
    for (j, x) in row.iter_mut().enumerate() {
        if visible(j) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = T::zero();
        }
    }
    let inv = T::one() / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

fn col_sum_into<T: Scalar>(dst: &mut [T], src: &[T], cols: usize) {
    for r in src.chunks(cols) {
        add_into(dst, r);
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(r: &mut [T]) {
    let max = r.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in r.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in r.iter_mut() {
        *v *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn linear_forward_and_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 3.0]));
        let b = tape.leaf(t(&[2], &[0.5, -0.5]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 5.5]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 3.0]);
        assert_eq!(g.wrt(w).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(4))));
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut tape: Tape<f64> = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[3, 33]));
        let l = tape.cross_entropy(z, &[0, 5, 32], None).unwrap();
        assert!((tape.value(l).item().unwrap() - 33f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn fully_masked_query_is_zero() {
        let mut tape: Tape<f64> = Tape::new();
        let q = tape.leaf(Tensor::full(&[2, 4], 1.0));
        let k = tape.leaf(Tensor::full(&[2, 4], 1.0));
        let v = tape.leaf(Tensor::full(&[2, 4], 2.0));
        let spec = AttentionSpec::new(2, 1).with_mask(vec![false, false]);
        let o = tape.attention(q, k, v, &spec).unwrap();
        assert!(tape.value(o).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn causal_prefix_outputs_do_not_depend_on_later_rows() {
        let rows = |n: usize| Tensor::from_fn(&[n, 4], |i| ((i * 7 % 5) as f32) * 0.3 - 0.4);
        let run = |n: usize| {
            let mut tape: Tape<f32> = Tape::new();
            let x = tape.leaf(rows(n));
            let o = tape.attention(x, x, x, &AttentionSpec::new(2, 1).causal()).unwrap();
            tape.value(o).clone()
        };
        let short = run(3);
        let long = run(6);
        assert_eq!(short.data(), &long.data()[..12]);
    }

    #[test]
    fn parameters_are_shared_and_accumulated() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[1], &[3.0]), false);
        let grads = {
            let mut tape = Tape::with_params(&store);
            let a = tape.param(id);
            let b = tape.param(id);
            assert_eq!(a, b);
            let y = tape.mul(a, b).unwrap();
            let l = tape.sum(y);
            tape.backward(l).unwrap()
        };
        store.accumulate(&grads);
        assert_eq!(store.get(id).grad.data(), &[6.0]);
        store.accumulate(&grads);
        assert_eq!(store.get(id).grad.data(), &[12.0]);
    }

    #[test]
    fn inference_tape_keeps_no_gradient_state() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let mut tape = Tape::inference(&store);
        let w = tape.param(id);
        let l = tape.cross_entropy(w, &[0, 1], None).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.params().count(), 0);
    }
}
