//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value and the
//! information its backward rule needs. Nodes only ever reference earlier
//! nodes, so the tape is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.

use rand::Rng;

use super::gemm::gemm;
use super::kernels::{exp_affine, exp_rows, score_grad_rows, softmax_rows};
use super::{permute_data, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `batch` independent `m×k · k×n` products; `shared_rhs` when `b` is one matrix.
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add(Var, Var),
    /// `b`'s shape is a trailing suffix of `a`'s; `b` is tiled over the leading axes.
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    /// `softmax(scale · Q Kᵀ) V` per leading index; `lse` holds each score
    /// row's log-sum-exp so the weights can be rebuilt in the reverse sweep.
    Attention {
        q: Var,
        k: Var,
        v: Var,
        len: usize,
        dim: usize,
        scale: f64,
        lse: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mean {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of tensor operations supporting one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable input: gradients are kept for it after [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    /// Gradient of the last [`Tape::backward`] loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- forward operations ------------------------------------------------

    /// Matrix product.
    ///
    /// Accepts `[.., m, k] · [k, n]` (right operand shared across the leading
    /// axes) and `[B.., m, k] · [B.., k, n]` with identical leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || Error::dim("matmul", &sa, &sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(err());
        }
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && (sb.len() != sa.len() || &sb[..sb.len() - 2] != lead) {
            return Err(err());
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![0.0; batch * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if shared_rhs {
            gemm(batch * m, k, n, av, false, bv, false, 0.0, &mut out);
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    false,
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::MatMul { a, b, batch, m, k, n, shared_rhs },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b), rg))
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a`'s shape
    /// (bias vectors, positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim("add_broadcast", sa, sb));
        }
        let bv = self.value(b).data();
        let width = bv.len();
        let data = self
            .value(a)
            .data()
            .chunks_exact(width)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let shape = sa.to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::AddBroadcast(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let value = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| x * c).collect(),
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| x.max(0.0)).collect(),
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Softmax over the last axis, max-shifted per row.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let width = *t
            .shape()
            .last()
            .ok_or_else(|| Error::Contract("softmax of a scalar".into()))?;
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(width) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Softmax(a), rg))
    }

    /// Layer normalization over the last axis followed by `gain ⊙ · + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let sx = self.shape(x);
        let d = *sx.last().ok_or_else(|| Error::Contract("layer_norm of a scalar".into()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm", sx, self.shape(gain)));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = sx.to_vec();
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
            rg,
        ))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::Contract(format!("mean axis {axis} out of range for {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let av = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &av[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += v;
                }
            }
            for d in dst.iter_mut() {
                *d /= len as f64;
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Mean { x: a, outer, len, inner },
            rg,
        ))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Axis permutation: output axis `j` is input axis `perm[j]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", s, perm));
        }
        let (data, shape) = permute_data(self.value(a).data(), s, perm);
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor { shape, data },
            Op::Permute { x: a, perm: perm.to_vec() },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::dim("transpose", self.shape(a), &[]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    /// Scaled dot-product attention `softmax(scale · Q Kᵀ) V`.
    ///
    /// `q`, `k` and `v` share one shape `[B.., T, dh]`; every leading index is
    /// an independent sequence. The `T × T` weights are never stored: each
    /// block is rebuilt from the saved row log-sum-exp during backward.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Result<Var> {
        let s = self.shape(q).to_vec();
        if s.len() < 2 || self.shape(k) != s.as_slice() || self.shape(v) != s.as_slice() {
            return Err(Error::dim("attention", &s, self.shape(k)));
        }
        let (len, dim) = (s[s.len() - 2], s[s.len() - 1]);
        let blocks = s[..s.len() - 2].iter().product::<usize>();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; blocks * len * dim];
        let mut lse = vec![0.0; blocks * len];
        let mut weights = vec![0.0; len * len];
        let span = len * dim;
        for b in 0..blocks {
            let r = b * span..(b + 1) * span;
            gemm(len, dim, len, &qv[r.clone()], false, &kv[r.clone()], true, 0.0, &mut weights);
            softmax_rows(&mut weights, len, scale, &mut lse[b * len..(b + 1) * len]);
            gemm(len, len, dim, &weights, false, &vv[r.clone()], false, 0.0, &mut out[r]);
        }
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(Tensor { shape: s, data: out }, Op::Attention { q, k, v, len, dim, scale, lse }, rg))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout p must lie in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Dropout { x: a, mask }, rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, via log-sum-exp.
    pub fn sparse_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::dim("cross_entropy", s, &[labels.len()]));
        }
        let (n, k) = (s[0], s[1]);
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Contract(format!(
                "label {l} at row {i} outside [0, {k})"
            )));
        }
        let lv = self.value(logits).data();
        let mut probs = lv.to_vec();
        let mut total = 0.0;
        for (i, row) in probs.chunks_exact_mut(k).enumerate() {
            let top = argmax(row);
            let max = row[top];
            let rest: f64 = row.iter().enumerate().filter(|&(j, _)| j != top).map(|(_, v)| (v - max).exp()).sum();
            let lse = max + rest.ln_1p();
            total += (max - row[labels[i]]) + rest.ln_1p();
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            rg,
        ))
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Populates gradients of the scalar `loss` with respect to every
    /// reachable node that requires them. Earlier gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Intermediate gradients are released once propagated.
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_node(i, &g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let value = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, batch, m, k, n, shared_rhs } => {
                if let Some(ga) = slot(grads, nodes, a) {
                    let bv = value(b);
                    if shared_rhs {
                        gemm(batch * m, n, k, g, false, bv, true, 1.0, ga);
                    } else {
                        for t in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                &bv[t * k * n..(t + 1) * k * n],
                                true,
                                1.0,
                                &mut ga[t * m * k..(t + 1) * m * k],
                            );
                        }
                    }
                }
                if let Some(gb) = slot(grads, nodes, b) {
                    let av = value(a);
                    if shared_rhs {
                        gemm(k, batch * m, n, av, true, g, false, 1.0, gb);
                    } else {
                        for t in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &av[t * m * k..(t + 1) * m * k],
                                true,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                1.0,
                                &mut gb[t * k * n..(t + 1) * k * n],
                            );
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(acc) = slot(grads, nodes, v) {
                        add_into(acc, g);
                    }
                }
            }
            &Op::AddBroadcast(a, b) => {
                if let Some(acc) = slot(grads, nodes, a) {
                    add_into(acc, g);
                }
                if let Some(acc) = slot(grads, nodes, b) {
                    let w = acc.len();
                    for chunk in g.chunks_exact(w) {
                        add_into(acc, chunk);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if let Some(acc) = slot(grads, nodes, a) {
                    for ((d, gi), y) in acc.iter_mut().zip(g).zip(value(b)) {
                        *d += gi * y;
                    }
                }
                if let Some(acc) = slot(grads, nodes, b) {
                    for ((d, gi), x) in acc.iter_mut().zip(g).zip(value(a)) {
                        *d += gi * x;
                    }
                }
            }
            &Op::Scale(a, c) => {
                if let Some(acc) = slot(grads, nodes, a) {
                    for (d, gi) in acc.iter_mut().zip(g) {
                        *d += gi * c;
                    }
                }
            }
            &Op::Relu(a) => {
                if let Some(acc) = slot(grads, nodes, a) {
                    for ((d, gi), y) in acc.iter_mut().zip(g).zip(nodes[i].value.data()) {
                        if *y > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Softmax(a) => {
                if let Some(acc) = slot(grads, nodes, a) {
                    let y = nodes[i].value.data();
                    let w = *nodes[i].value.shape().last().unwrap_or(&1);
                    for ((dr, gr), yr) in acc.chunks_exact_mut(w).zip(g.chunks_exact(w)).zip(y.chunks_exact(w)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, len, dim, scale, lse } => {
                let (len, dim, scale) = (*len, *dim, *scale);
                let span = len * dim;
                let blocks = g.len() / span;
                let (qv, kv, vv) = (value(*q), value(*k), value(*v));
                let mut gq = take_grad(grads, nodes, *q);
                let mut gk = take_grad(grads, nodes, *k);
                let mut gv = take_grad(grads, nodes, *v);
                let mut p = vec![0.0; len * len];
                let mut dp = vec![0.0; len * len];
                for b in 0..blocks {
                    let r = b * span..(b + 1) * span;
                    let go = &g[r.clone()];
                    gemm(len, dim, len, &qv[r.clone()], false, &kv[r.clone()], true, 0.0, &mut p);
                    exp_rows(&mut p, len, scale, &lse[b * len..(b + 1) * len]);
                    if let Some(acc) = gv.as_deref_mut() {
                        gemm(len, len, dim, &p, true, go, false, 1.0, &mut acc[r.clone()]);
                    }
                    if gq.is_none() && gk.is_none() {
                        continue;
                    }
                    gemm(len, dim, len, go, false, &vv[r.clone()], true, 0.0, &mut dp);
                    score_grad_rows(&mut dp, &p, len, scale);
                    if let Some(acc) = gq.as_deref_mut() {
                        gemm(len, len, dim, &dp, false, &kv[r.clone()], false, 1.0, &mut acc[r.clone()]);
                    }
                    if let Some(acc) = gk.as_deref_mut() {
                        gemm(len, len, dim, &dp, true, &qv[r.clone()], false, 1.0, &mut acc[r.clone()]);
                    }
                }
                for (var, buf) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if let Some(buf) = buf {
                        restore_grad(grads, var, buf);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = value(*gain);
                let d = gv.len();
                if let Some(acc) = slot(grads, nodes, *gain) {
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            acc[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(acc) = slot(grads, nodes, *bias) {
                    for gr in g.chunks_exact(d) {
                        add_into(acc, gr);
                    }
                }
                if let Some(acc) = slot(grads, nodes, *x) {
                    let df = d as f64;
                    let mut dh = vec![0.0; d];
                    for (r, ((ar, gr), hr)) in acc
                        .chunks_exact_mut(d)
                        .zip(g.chunks_exact(d))
                        .zip(xhat.chunks_exact(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            dh[j] = gr[j] * gv[j];
                        }
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for j in 0..d {
                            ar[j] += inv / df * (df * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                }
            }
            &Op::Mean { x, outer, len, inner } => {
                if let Some(acc) = slot(grads, nodes, x) {
                    let scale = 1.0 / len as f64;
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut acc[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s * scale;
                            }
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(acc) = slot(grads, nodes, a) {
                    for d in acc.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            &Op::Reshape(a) => {
                if let Some(acc) = slot(grads, nodes, a) {
                    add_into(acc, g);
                }
            }
            Op::Permute { x, perm } => {
                if let Some(acc) = slot(grads, nodes, *x) {
                    let mut inverse = vec![0; perm.len()];
                    for (j, &p) in perm.iter().enumerate() {
                        inverse[p] = j;
                    }
                    let (back, _) = permute_data(g, nodes[i].value.shape(), &inverse);
                    add_into(acc, &back);
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(acc) = slot(grads, nodes, *x) {
                    for ((d, gi), m) in acc.iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if let Some(acc) = slot(grads, nodes, *logits) {
                    let n = labels.len();
                    let k = probs.len() / n;
                    let scale = g[0] / n as f64;
                    for (r, (ar, pr)) in acc.chunks_exact_mut(k).zip(probs.chunks_exact(k)).enumerate() {
                        for j in 0..k {
                            let onehot = if j == labels[r] { 1.0 } else { 0.0 };
                            ar[j] += scale * (pr[j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` when `v` needs no gradient.
fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut [f64]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

/// Moves the gradient buffer of `v` out so several can be borrowed at once.
fn take_grad(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<Vec<f64>> {
    slot(grads, nodes, v)?;
    grads[v.0].take()
}

/// Returns a buffer taken with [`take_grad`], summing if `v` already has one
/// (the same node passed as more than one operand).
fn restore_grad(grads: &mut [Option<Vec<f64>>], v: Var, buf: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => add_into(acc, &buf),
        empty => *empty = Some(buf),
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (d, s) in acc.iter_mut().zip(g) {
        *d += s;
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Numerically stable softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum = exp_affine(row, 1.0, max);
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Central differences of `f` around `x`, with `h = 1e-5`.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.numel())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape.to_vec(), 1.0, &mut rng)
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1., 2., 3., 4.]);

        let a = tape.constant(t(&[1, 2], &[1., 2.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[1, 1]);
        assert_eq!(tape.value(c).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        match tape.matmul(a, b).unwrap_err() {
            Error::Dimension { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn grad_of_sum_of_product_is_row_sums_of_b() {
        let a0 = random(&[3, 4], 1);
        let b0 = random(&[4, 5], 2);
        let mut tape = Tape::new();
        let a = tape.param(a0.clone());
        let b = tape.constant(b0.clone());
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        let ga = tape.grad(a).unwrap();
        for i in 0..3 {
            for p in 0..4 {
                let row_sum: f64 = (0..5).map(|j| b0.at(&[p, j])).sum();
                assert!((ga.at(&[i, p]) - row_sum).abs() < 1e-12);
            }
        }
        let fd = numeric_grad(&a0, |x| {
            let mut tp = Tape::new();
            let a = tp.constant(x.clone());
            let b = tp.constant(b0.clone());
            let c = tp.matmul(a, b).unwrap();
            tp.value(c).data().iter().sum()
        });
        assert!(max_rel_err(ga.data(), &fd) < 1e-6);
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[0., 0.]));
        let s = tape.softmax(a).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let b = tape.constant(t(&[3], &[1., 2., 3.]));
        let s = tape.softmax(b).unwrap();
        let want = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (x, y) in tape.value(s).data().iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }

        let c = tape.constant(t(&[2], &[1000., 0.]));
        let s = tape.softmax(c).unwrap();
        let v = tape.value(s).data();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::ones([4]));
        let b = tape.constant(Tensor::zeros([4]));
        let x = tape.constant(t(&[1, 4], &[5., 5., 5., 5.]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0., 0., 0., 0.]);

        let g = tape.constant(Tensor::ones([2]));
        let b = tape.constant(Tensor::zeros([2]));
        let x = tape.constant(t(&[2], &[1., 3.]));
        let y = tape.layer_norm(x, g, b, 1e-15).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

        assert!(matches!(tape.layer_norm(x, g, b, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn relu_mean_dropout_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[-1., 2.]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0., 2.]);

        let ones = tape.constant(Tensor::ones([3, 4]));
        let m = tape.mean(ones, 1).unwrap();
        assert_eq!(tape.value(m).shape(), &[3]);
        assert!(tape.value(m).data().iter().all(|&v| v == 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = tape.dropout(ones, 0.0, true, &mut rng).unwrap();
        assert_eq!(d, ones);
        let d = tape.dropout(ones, 0.5, false, &mut rng).unwrap();
        assert_eq!(d, ones);
        assert!(matches!(tape.dropout(ones, 1.0, true, &mut rng), Err(Error::Parameter(_))));
        assert!(matches!(tape.dropout(ones, -0.1, true, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_rescales_survivors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones([100, 100]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = tape.dropout(x, 0.25, true, &mut rng).unwrap();
        let v = tape.value(d).data();
        let zeros = v.iter().filter(|&&x| x == 0.0).count();
        assert!(v.iter().all(|&x| x == 0.0 || (x - 1.0 / 0.75).abs() < 1e-15));
        let frac = zeros as f64 / v.len() as f64;
        assert!((frac - 0.25).abs() < 0.02, "{frac}");
    }

    #[test]
    fn backward_simple_cases() {
        let x0 = random(&[2, 3], 9);
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), Tensor::ones([2, 3]));

        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        for (gi, xi) in g.data().iter().zip(x0.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty() {
        let mut tape = Tape::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::Contract(_))));
        let x = tape.param(Tensor::ones([2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x + x + 3x) -> grad 5
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones([3]));
        let a = tape.add(x, x).unwrap();
        let b = tape.scale(x, 3.0);
        let c = tape.add(a, b).unwrap();
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[5., 5., 5.]);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros([2, 2]));
        assert!(matches!(tape.sparse_cross_entropy(l, &[0, 2]), Err(Error::Contract(_))));
        assert!(matches!(tape.sparse_cross_entropy(l, &[0]), Err(Error::Dimension { .. })));
    }

    /// Each differentiable op in isolation against central differences.
    #[test]
    fn op_gradients_match_finite_differences() {
        type Build = fn(&mut Tape, Var, Var) -> Var;
        let cases: Vec<(&str, Vec<usize>, Vec<usize>, Build)> = vec![
            ("batched matmul", vec![2, 3, 4], vec![2, 4, 5], |t, a, b| t.matmul(a, b).unwrap()),
            ("shared matmul", vec![2, 3, 4], vec![4, 5], |t, a, b| t.matmul(a, b).unwrap()),
            ("add_broadcast", vec![2, 3, 4], vec![3, 4], |t, a, b| t.add_broadcast(a, b).unwrap()),
            ("mul", vec![3, 4], vec![3, 4], |t, a, b| t.mul(a, b).unwrap()),
            ("softmax", vec![3, 5], vec![3, 5], |t, a, b| {
                let s = t.softmax(a).unwrap();
                t.mul(s, b).unwrap()
            }),
            ("layer_norm", vec![3, 6], vec![6], |t, a, b| {
                let bias = t.scale(b, 0.5);
                t.layer_norm(a, b, bias, 1e-5).unwrap()
            }),
            ("mean", vec![2, 3, 4], vec![2, 4], |t, a, b| {
                let m = t.mean(a, 1).unwrap();
                t.mul(m, b).unwrap()
            }),
            ("permute", vec![2, 3, 4], vec![4, 2, 3], |t, a, b| {
                let p = t.permute(a, &[2, 0, 1]).unwrap();
                t.mul(p, b).unwrap()
            }),
            ("relu+reshape", vec![2, 6], vec![3, 4], |t, a, b| {
                let r = t.relu(a);
                let r = t.reshape(r, &[3, 4]).unwrap();
                t.mul(r, b).unwrap()
            }),
            ("attention", vec![2, 5, 3], vec![2, 5, 3], |t, a, b| {
                let v = t.mul(a, b).unwrap();
                t.attention(a, b, v, 0.7).unwrap()
            }),
            ("attention shared operand", vec![2, 4, 3], vec![2, 4, 3], |t, a, b| t.attention(a, b, b, 1.3).unwrap()),
            ("cross_entropy", vec![4, 3], vec![4, 3], |t, a, b| {
                let s = t.add(a, b).unwrap();
                t.sparse_cross_entropy(s, &[0, 2, 1, 2]).unwrap()
            }),
        ];
        for (seed, (name, sa, sb, build)) in cases.into_iter().enumerate() {
            let a0 = random(&sa, 100 + seed as u64);
            let b0 = random(&sb, 200 + seed as u64);
            let loss_of = |a: &Tensor, b: &Tensor| {
                let mut tp = Tape::new();
                let av = tp.constant(a.clone());
                let bv = tp.constant(b.clone());
                let out = build(&mut tp, av, bv);
                // weight outputs so the loss is not permutation-symmetric
                let w = Tensor::from_fn(tp.shape(out).to_vec(), |i| ((i + 1) as f64).sin());
                let wv = tp.constant(w);
                let p = tp.mul(out, wv).unwrap();
                tp.value(p).data().iter().sum::<f64>()
            };
            let mut tape = Tape::new();
            let av = tape.param(a0.clone());
            let bv = tape.param(b0.clone());
            let out = build(&mut tape, av, bv);
            let w = Tensor::from_fn(tape.shape(out).to_vec(), |i| ((i + 1) as f64).sin());
            let wv = tape.constant(w);
            let p = tape.mul(out, wv).unwrap();
            let s = tape.sum(p);
            tape.backward(s).unwrap();
            let fa = numeric_grad(&a0, |a| loss_of(a, &b0));
            let fb = numeric_grad(&b0, |b| loss_of(&a0, b));
            let ea = max_rel_err(tape.grad(av).unwrap().data(), &fa);
            let eb = max_rel_err(tape.grad(bv).unwrap().data(), &fb);
            assert!(ea < 1e-4 && eb < 1e-4, "{name}: {ea} {eb}");
        }
    }

    #[test]
    fn identical_inputs_give_bit_identical_grads() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.param(random(&[4, 6], 5));
            let b = tape.param(random(&[6, 3], 6));
            let c = tape.matmul(a, b).unwrap();
            let s = tape.softmax(c).unwrap();
            let l = tape.sum(s);
            let sq = tape.mul(c, c).unwrap();
            let l2 = tape.sum(sq);
            let tot = tape.add(l, l2).unwrap();
            tape.backward(tot).unwrap();
            (tape.grad(a).unwrap(), tape.grad(b).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fused_attention_matches_composed_ops() {
        let (q0, k0, v0) = (random(&[3, 2, 7, 4], 41), random(&[3, 2, 7, 4], 42), random(&[3, 2, 7, 4], 43));
        let w = random(&[3, 2, 7, 4], 44);
        let run = |fused: bool| {
            let mut tape = Tape::new();
            let (q, k, v) = (tape.param(q0.clone()), tape.param(k0.clone()), tape.param(v0.clone()));
            let out = if fused {
                tape.attention(q, k, v, 0.5).unwrap()
            } else {
                let kt = tape.permute(k, &[0, 1, 3, 2]).unwrap();
                let s = tape.matmul(q, kt).unwrap();
                let s = tape.scale(s, 0.5);
                let p = tape.softmax(s).unwrap();
                tape.matmul(p, v).unwrap()
            };
            let wv = tape.constant(w.clone());
            let prod = tape.mul(out, wv).unwrap();
            let loss = tape.sum(prod);
            tape.backward(loss).unwrap();
            let grads: Vec<Tensor> = [q, k, v].iter().map(|&x| tape.grad(x).unwrap()).collect();
            (tape.value(out).clone(), grads)
        };
        let (a, ga) = run(true);
        let (b, gb) = run(false);
        assert!(max_rel_err(a.data(), b.data()) < 1e-12);
        for (x, y) in ga.iter().zip(&gb) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| (p - q).abs() < 1e-12));
        }
        let mut tape = Tape::new();
        let q = tape.constant(q0);
        let k = tape.constant(Tensor::zeros([3, 2, 6, 4]));
        assert!(matches!(tape.attention(q, k, k, 1.0), Err(Error::Dimension { .. })));
    }
}
