//! Dynamic reverse-mode tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Nodes are created in topological order, so
//! `backward` is a single reverse sweep. A tape lives for one forward pass.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::float::{gemm, Float, MatRef};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean attention mask of shape `[queries × keys]`; `true` means visible.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnMask {
    pub queries: usize,
    pub keys: usize,
    pub allowed: Vec<bool>,
}

impl AttnMask {
    pub fn new(queries: usize, keys: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(allowed.len(), queries * keys);
        AttnMask { queries, keys, allowed }
    }

    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|i| i % n <= i / n).collect();
        AttnMask { queries: n, keys: n, allowed }
    }

    #[inline]
    pub fn get(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: F },
    Gelu { a: Var },
    Softmax { a: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, rstd: Vec<F> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<F>, count: usize },
    Attention { q: Var, k: Var, v: Var, heads: usize, scale: F },
    ConcatRows { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    MeanRows { a: Var },
    Sum { a: Var },
    Mse { a: Var, b: Var },
    Embedding { table: Var, ids: Vec<usize> },
    Reshape { a: Var },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    /// Persistent gradient; only kept for leaves.
    grad: Option<Vec<F>>,
    param: Option<ParamId>,
    /// Attention probabilities `[heads × queries × keys]`, kept for inspection.
    probs: Option<Vec<F>>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grad_enabled: bool,
    bound: HashMap<ParamId, Var>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn matrix_dims(shape: &[usize]) -> Option<(usize, usize)> {
    (shape.len() == 2).then(|| (shape[0], shape[1]))
}

fn gelu_parts<F: Float>(x: F) -> (F, F) {
    // tanh approximation; returns (value, derivative)
    let c = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let one = F::one();
    let three = F::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let value = half * x * (one + t);
    let du = c * (one + three * k * x * x);
    let deriv = half * (one + t) + half * x * (one - t * t) * du;
    (value, deriv)
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true, bound: HashMap::new() }
    }

    /// A tape on which parameters are bound without gradient tracking.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false, bound: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if it has received one.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Attention probabilities recorded by [`Tape::attention`],
    /// laid out as `[heads × queries × keys]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].probs.as_deref()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None, param: None, probs: None });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter as a leaf; repeated binds return the same node.
    pub fn param(&mut self, params: &ParamSet<F>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = params.get(id);
        let rg = self.grad_enabled && !p.frozen;
        let v = self.push(p.value.clone(), Op::Leaf, rg);
        self.nodes[v.0].param = Some(id);
        self.bound.insert(id, v);
        v
    }

    /// Adds leaf gradients of bound parameters into the parameter set.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet<F>) {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_ref()) {
                let p = params.get_mut(id);
                if p.frozen {
                    continue;
                }
                for (dst, src) in p.grad.iter_mut().zip(g) {
                    *dst += *src;
                }
            }
        }
    }

    /// Clears persistent leaf gradients on this tape.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    // ---- forward operations -------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || TensorError::Shape { op: "matmul", lhs: sa.clone(), rhs: sb.clone() };
        let (m, k) = matrix_dims(&sa).ok_or_else(err)?;
        let (br, bc) = matrix_dims(&sb).ok_or_else(err)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(err());
        }
        let mut out = vec![F::zero(); m * n];
        let bm = if trans_b { MatRef::dense(br, bc).t() } else { MatRef::dense(br, bc) };
        gemm(
            F::one(),
            self.value(a).data(),
            MatRef::dense(m, k),
            self.value(b).data(),
            bm,
            F::zero(),
            &mut out,
            MatRef::dense(m, n),
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, trans_b }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// Adds a length-`n` vector to every row of an `[m × n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let n = *sa.last().unwrap_or(&0);
        if self.value(row).numel() != n {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: sa,
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (x, &b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(out, Op::AddRow { a, row }, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = F::from_f64(s);
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x *= s);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale { a, s }, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = gelu_parts(*x).0);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Gelu { a }, rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { op: "softmax", axis, rank: shape.len() });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![F::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = F::neg_infinity();
                for j in 0..len {
                    mx = mx.max(x[idx(j)]);
                }
                let mut sum = F::zero();
                for j in 0..len {
                    let e = (x[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a, outer, len, inner }, rg))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(TensorError::Param(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        for p in [gamma, beta] {
            if self.value(p).numel() != d {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let eps = F::from_f64(eps);
        let dn = F::from_f64(d as f64);
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xs.len() / d;
        let mut out = vec![F::zero(); xs.len()];
        let mut xhat = vec![F::zero(); xs.len()];
        let mut rstd = vec![F::zero(); rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Mean negative log-likelihood over positions whose target is not
    /// `ignore_index`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: usize) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let (l, v) = matrix_dims(&shape).ok_or_else(|| TensorError::Shape {
            op: "cross_entropy",
            lhs: shape.clone(),
            rhs: vec![targets.len()],
        })?;
        if l != targets.len() {
            return Err(TensorError::Shape { op: "cross_entropy", lhs: shape, rhs: vec![targets.len()] });
        }
        let mut tgt = Vec::with_capacity(l);
        for (position, &t) in targets.iter().enumerate() {
            if t == ignore_index {
                tgt.push(None);
            } else if t >= v {
                return Err(TensorError::Target { position, target: t, vocab: v });
            } else {
                tgt.push(Some(t));
            }
        }
        let count = tgt.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(TensorError::EmptySupervision);
        }
        let x = self.value(logits).data();
        let mut probs = vec![F::zero(); x.len()];
        let mut total = F::zero();
        for (r, t) in tgt.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = &x[r * v..(r + 1) * v];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for j in 0..v {
                let e = (row[j] - mx).exp();
                probs[r * v + j] = e;
                sum += e;
            }
            for j in 0..v {
                probs[r * v + j] /= sum;
            }
            total += sum.ln() + mx - row[t];
        }
        let loss = total / F::from_f64(count as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: tgt, probs, count }, rg))
    }

    /// Scaled dot-product attention, split into `heads` column blocks.
    ///
    /// `q: [Lq × D]`, `k: [Lk × D]`, `v: [Lk × D]`; scores are scaled by
    /// `1/√(D/heads)`. Probabilities are stored on the output node.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Option<&Rc<AttnMask>>,
    ) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        let sk = self.shape(k).to_vec();
        let sv = self.shape(v).to_vec();
        let err = |rhs: &Vec<usize>| TensorError::Shape { op: "attention", lhs: sq.clone(), rhs: rhs.clone() };
        let (lq, d) = matrix_dims(&sq).ok_or_else(|| err(&sk))?;
        let (lk, dk) = matrix_dims(&sk).ok_or_else(|| err(&sk))?;
        let (lv, dv) = matrix_dims(&sv).ok_or_else(|| err(&sv))?;
        if dk != d || dv != d || lv != lk {
            return Err(err(&sk));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Param(format!("{d} columns not divisible into {heads} heads")));
        }
        if let Some(m) = mask {
            if m.queries != lq || m.keys != lk {
                return Err(TensorError::Shape {
                    op: "attention mask",
                    lhs: vec![lq, lk],
                    rhs: vec![m.queries, m.keys],
                });
            }
        }
        let dh = d / heads;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let mut probs = vec![F::zero(); heads * lq * lk];
        let mut out = vec![F::zero(); lq * d];
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        for h in 0..heads {
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            gemm(
                scale,
                qd,
                MatRef::col_block(lq, d, h * dh, dh),
                kd,
                MatRef::col_block(lk, d, h * dh, dh).t(),
                F::zero(),
                p,
                MatRef::dense(lq, lk),
            );
            for r in 0..lq {
                let row = &mut p[r * lk..(r + 1) * lk];
                let allowed = |c: usize| mask.map_or(true, |m| m.get(r, c));
                let mut mx = F::neg_infinity();
                for (c, &s) in row.iter().enumerate() {
                    if allowed(c) {
                        mx = mx.max(s);
                    }
                }
                let mut sum = F::zero();
                for (c, s) in row.iter_mut().enumerate() {
                    if allowed(c) {
                        *s = (*s - mx).exp();
                        sum += *s;
                    } else {
                        *s = F::zero();
                    }
                }
                if sum > F::zero() {
                    row.iter_mut().for_each(|s| *s /= sum);
                }
            }
            gemm(
                F::one(),
                p,
                MatRef::dense(lq, lk),
                vd,
                MatRef::col_block(lk, d, h * dh, dh),
                F::zero(),
                &mut out,
                MatRef::col_block(lq, d, h * dh, dh),
            );
        }
        let rg = self.any_grad(&[q, k, v]);
        let var = self.push(Tensor::new(vec![lq, d], out)?, Op::Attention { q, k, v, heads, scale }, rg);
        self.nodes[var.0].probs = Some(probs);
        Ok(var)
    }

    /// Stacks rank-2 tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Param("concat_rows of nothing".into()));
        };
        let cols = self.shape(first).get(1).copied().unwrap_or(0);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows { parts: parts.to_vec() }, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || start + len > s[0] || len == 0 {
            return Err(TensorError::Shape { op: "slice_rows", lhs: s, rhs: vec![start, len] });
        }
        let cols = s[1];
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(vec![len, cols], data)?, Op::SliceRows { a, start }, rg))
    }

    /// Column means of a rank-2 tensor, as `[1 × cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (rows, cols) = matrix_dims(&s).ok_or(TensorError::Shape { op: "mean_rows", lhs: s.clone(), rhs: vec![] })?;
        let mut out = vec![F::zero(); cols];
        for row in self.value(a).data().chunks(cols) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let n = F::from_f64(rows as f64);
        out.iter_mut().for_each(|o| *o /= n);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(vec![1, cols], out)?, Op::MeanRows { a }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum::<F>();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(total), Op::Sum { a }, rg)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).numel();
        let total = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<F>();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(total / F::from_f64(n as f64)), Op::Mse { a, b }, rg))
    }

    /// Gathers rows of `table` (`[vocab × d]`).
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        let (vocab, d) = matrix_dims(&s).ok_or(TensorError::Shape { op: "embedding", lhs: s.clone(), rhs: vec![] })?;
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for (position, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(TensorError::Target { position, target: id, vocab });
            }
            data.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        if ids.is_empty() {
            return Err(TensorError::Param("embedding of empty id list".into()));
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(Tensor::new(vec![ids.len(), d], data)?, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    // ---- backward -------------------------------------------------------

    /// Back-propagates from a scalar `loss`. Leaf gradients accumulate
    /// across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalar(self.shape(loss).to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        // Returns the gradient buffer of `v` (allocated on first use), or
        // `None` when `v` needs no gradient.
        fn slot<'a, F: Float>(
            nodes: &[Node<F>],
            grads: &'a mut [Option<Vec<F>>],
            v: Var,
        ) -> Option<&'a mut Vec<F>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let n = nodes[v.0].value.numel();
            Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
        }
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = matrix_dims(nodes[a.0].value.shape()).unwrap();
                let n = node.value.shape()[1];
                let bshape = nodes[b.0].value.shape();
                let bm = MatRef::dense(bshape[0], bshape[1]);
                if let Some(ga) = slot(nodes, grads, *a) {
                    // dA = dC · Bᵀ  (or dC · B when b was transposed)
                    let bt = if *trans_b { bm } else { bm.t() };
                    gemm(F::one(), g, MatRef::dense(m, n), val(*b), bt, F::one(), ga, MatRef::dense(m, k));
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    if *trans_b {
                        // B is [n × k]: dB = dCᵀ · A
                        gemm(F::one(), g, MatRef::dense(m, n).t(), val(*a), MatRef::dense(m, k), F::one(), gb, MatRef::dense(n, k));
                    } else {
                        gemm(F::one(), val(*a), MatRef::dense(m, k).t(), g, MatRef::dense(m, n), F::one(), gb, MatRef::dense(k, n));
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(gv) = slot(nodes, grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += *y);
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += *y);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= *y);
                }
            }
            Op::AddRow { a, row } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += *y);
                }
                if let Some(gr) = slot(nodes, grads, *row) {
                    let n = gr.len();
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += *y);
                    }
                }
            }
            Op::Mul { a, b } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, y), bv) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *x += *y * *bv;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((x, y), av) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *x += *y * *av;
                    }
                }
            }
            Op::Scale { a, s } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += *y * *s);
                }
            }
            Op::Gelu { a } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, y), &inp) in ga.iter_mut().zip(g).zip(val(*a)) {
                        *x += *y * gelu_parts(inp).1;
                    }
                }
            }
            Op::Softmax { a, outer, len, inner } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let y = node.value.data();
                    for o in 0..*outer {
                        for c in 0..*inner {
                            let idx = |j: usize| (o * len + j) * inner + c;
                            let dot = (0..*len).map(|j| g[idx(j)] * y[idx(j)]).sum::<F>();
                            for j in 0..*len {
                                ga[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = nodes[gamma.0].value.numel();
                let gam = val(*gamma);
                if let Some(gg) = slot(nodes, grads, *gamma) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *beta) {
                    for gr in g.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(x, y)| *x += *y);
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let dn = F::from_f64(d as f64);
                    for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut mean_dh = F::zero();
                        let mut mean_dhh = F::zero();
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            mean_dh += dh;
                            mean_dhh += dh * hr[j];
                        }
                        mean_dh /= dn;
                        mean_dhh /= dn;
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            gx[r * d + j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if let Some(gl) = slot(nodes, grads, *logits) {
                    let v = nodes[logits.0].value.shape()[1];
                    let s = g[0] / F::from_f64(*count as f64);
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..v {
                            gl[r * v + j] += s * probs[r * v + j];
                        }
                        gl[r * v + t] -= s;
                    }
                }
            }
            Op::Attention { q, k, v, heads, scale } => {
                let probs = node.probs.as_ref().expect("attention probabilities");
                let (lq, d) = matrix_dims(nodes[q.0].value.shape()).unwrap();
                let lk = nodes[k.0].value.shape()[0];
                let dh = d / heads;
                let mut dp = vec![F::zero(); lq * lk];
                for h in 0..*heads {
                    let p = &probs[h * lq * lk..(h + 1) * lq * lk];
                    let qb = MatRef::col_block(lq, d, h * dh, dh);
                    let kb = MatRef::col_block(lk, d, h * dh, dh);
                    if let Some(gv) = slot(nodes, grads, *v) {
                        gemm(F::one(), p, MatRef::dense(lq, lk).t(), g, qb, F::one(), gv, kb);
                    }
                    // dP = dO · Vᵀ
                    gemm(F::one(), g, qb, val(*v), kb.t(), F::zero(), &mut dp, MatRef::dense(lq, lk));
                    for r in 0..lq {
                        let pr = &p[r * lk..(r + 1) * lk];
                        let dr = &mut dp[r * lk..(r + 1) * lk];
                        let dot = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum::<F>();
                        for (x, &pv) in dr.iter_mut().zip(pr) {
                            *x = pv * (*x - dot);
                        }
                    }
                    if let Some(gq) = slot(nodes, grads, *q) {
                        gemm(*scale, &dp, MatRef::dense(lq, lk), val(*k), kb, F::one(), gq, qb);
                    }
                    if let Some(gk) = slot(nodes, grads, *k) {
                        gemm(*scale, &dp, MatRef::dense(lq, lk).t(), val(*q), qb, F::one(), gk, kb);
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.numel();
                    if let Some(gp) = slot(nodes, grads, *p) {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(x, y)| *x += *y);
                    }
                    offset += n;
                }
            }
            Op::SliceRows { a, start } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let cols = node.value.shape()[1];
                    let off = start * cols;
                    ga[off..off + g.len()].iter_mut().zip(g).for_each(|(x, y)| *x += *y);
                }
            }
            Op::MeanRows { a } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let cols = g.len();
                    let rows = ga.len() / cols;
                    let s = F::one() / F::from_f64(rows as f64);
                    for chunk in ga.chunks_mut(cols) {
                        chunk.iter_mut().zip(g).for_each(|(x, y)| *x += *y * s);
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mse { a, b } => {
                let n = F::from_f64(nodes[a.0].value.numel() as f64);
                let two = F::from_f64(2.0);
                let diff: Vec<F> = val(*a).iter().zip(val(*b)).map(|(x, y)| two * (*x - *y) * g[0] / n).collect();
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(&diff).for_each(|(x, y)| *x += *y);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gb.iter_mut().zip(&diff).for_each(|(x, y)| *x -= *y);
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(gt) = slot(nodes, grads, *table) {
                    let d = node.value.shape()[1];
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(x, y)| *x += *y);
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += *y);
                }
            }
        }
    }
}

/// Row-wise log-softmax of a `[rows × cols]` buffer.
pub fn log_softmax_rows<F: Float>(x: &[F], cols: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = row.iter().map(|&v| (v - mx).exp()).sum::<F>().ln() + mx;
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}
