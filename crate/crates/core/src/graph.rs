//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied. [`Graph::backward`]
//! walks the tape in reverse and returns gradients for every parameter that
//! took part in the pass.
//!
//! Ops are coarse (fused linear, layer norm, multi-head attention, losses) so
//! a transformer forward pass is a few hundred nodes.

#![allow(clippy::needless_range_loop)]

use crate::loss;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{gemm, Float, Tensor, View, ViewMut};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-6;

enum Op<T> {
    Const,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        dims: AttnDims,
        probs: Vec<Tensor<T>>,
    },
    AssembleTokens {
        patches: Var,
        global: Var,
        pos: Var,
        batch: usize,
    },
    TileRows {
        a: Var,
        times: usize,
    },
    GatherRows {
        a: Var,
        idx: Vec<usize>,
    },
    GatherCols {
        a: Var,
        idx: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    WeightedSum {
        a: Var,
        w: Tensor<T>,
    },
    Laplacian {
        mu: Var,
        raw: Var,
        gt: Tensor<T>,
        weights: Vec<f64>,
    },
    Euclidean {
        mu: Var,
        gt: Tensor<T>,
        weights: Vec<f64>,
    },
}

/// Batched multi-head attention layout: `batch` independent sequences of
/// `lq` queries and `lk` keys, stacked row-wise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnDims {
    pub batch: usize,
    pub heads: usize,
    pub lq: usize,
    pub lk: usize,
}

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'a, T: Float> {
    params: &'a ParamStore<T>,
    nodes: Vec<Node<'a, T>>,
}

fn gelu_parts<T: Float>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let one = T::one();
    let x2 = x * x;
    let inner = c * (x + k * x2 * x);
    let t = inner.tanh();
    let value = half * x * (one + t);
    let d = half * (one + t) + half * x * (one - t * t) * c * (one + T::of(3.0) * k * x2);
    (value, d)
}

impl<'a, T: Float> Graph<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'a ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    /// Row-stochastic attention matrices of an attention node, indexed
    /// `[sample * heads + head]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[Tensor<T>]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Const,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(self.params.get(id)),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x W + b`, with `b` a `1 x out` row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols(), wv.rows(), "linear: input width");
        let mut out = Tensor::zeros(xv.rows(), wv.cols());
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, wv.cols()), "linear: bias shape");
            for r in 0..out.rows() {
                out.row_mut(r).copy_from_slice(bv.row(0));
            }
        }
        gemm(T::one(), xv.view(), wv.view(), T::one(), out.view_mut());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Linear { x, w, b }, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| gelu_parts(x).0);
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), (1, cols), "layer_norm: gamma shape");
        assert_eq!(b.shape(), (1, cols), "layer_norm: beta shape");
        let n = T::of(cols as f64);
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * rs;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = xh[c] * g.get(0, c) + b.get(0, c);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Scaled dot-product attention with `dims.heads` heads. `q` is
    /// `(batch*lq) x D`, `k` and `v` are `(batch*lk) x D`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, dims: AttnDims) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert_eq!(d % dims.heads, 0, "attention: width not divisible by heads");
        assert_eq!(qv.rows(), dims.batch * dims.lq, "attention: query rows");
        assert_eq!(kv.rows(), dims.batch * dims.lk, "attention: key rows");
        assert_eq!(vv.shape(), kv.shape(), "attention: value shape");
        let dh = d / dims.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut out = Tensor::zeros(qv.rows(), d);
        let mut probs = Vec::with_capacity(dims.batch * dims.heads);
        for b in 0..dims.batch {
            for h in 0..dims.heads {
                let qs = head_view(qv, b * dims.lq, dims.lq, h * dh, dh);
                let ks = head_view(kv, b * dims.lk, dims.lk, h * dh, dh);
                let vs = head_view(vv, b * dims.lk, dims.lk, h * dh, dh);
                let mut p = Tensor::zeros(dims.lq, dims.lk);
                gemm(scale, qs, ks.t(), T::zero(), p.view_mut());
                for r in 0..dims.lq {
                    softmax_in_place(p.row_mut(r));
                }
                gemm(
                    T::one(),
                    p.view(),
                    vs,
                    T::zero(),
                    head_view_mut(&mut out, b * dims.lq, dims.lq, h * dh, dh),
                );
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, dims, probs }, &[q, k, v])
    }

    /// Per sample: patch tokens followed by the global token, plus positional
    /// encodings. `patches` is `(batch*P²) x D`, `pos` is `(P²+1) x D`.
    pub fn assemble_tokens(&mut self, patches: Var, global: Var, pos: Var, batch: usize) -> Var {
        let (pv, gv, posv) = (self.value(patches), self.value(global), self.value(pos));
        let d = pv.cols();
        let np = pv.rows() / batch;
        assert_eq!(np * batch, pv.rows(), "assemble_tokens: rows");
        assert_eq!(gv.shape(), (1, d), "assemble_tokens: global token shape");
        assert_eq!(posv.shape(), (np + 1, d), "assemble_tokens: positional shape");
        let l = np + 1;
        let mut out = Tensor::zeros(batch * l, d);
        for b in 0..batch {
            for t in 0..l {
                let src = if t < np { pv.row(b * np + t) } else { gv.row(0) };
                let p = posv.row(t);
                let o = out.row_mut(b * l + t);
                for c in 0..d {
                    o[c] = src[c] + p[c];
                }
            }
        }
        self.push(
            out,
            Op::AssembleTokens {
                patches,
                global,
                pos,
                batch,
            },
            &[patches, global, pos],
        )
    }

    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows() * times, av.cols());
        for t in 0..times {
            for r in 0..av.rows() {
                out.row_mut(t * av.rows() + r).copy_from_slice(av.row(r));
            }
        }
        self.push(out, Op::TileRows { a, times }, &[a])
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(idx.len(), av.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(i));
        }
        self.push(out, Op::GatherRows { a, idx }, &[a])
    }

    /// Output column `c` is input column `idx[c]`.
    pub fn gather_cols(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let out = Tensor::from_fn(av.rows(), idx.len(), |r, c| av.get(r, idx[c]));
        self.push(out, Op::GatherCols { a, idx }, &[a])
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols: row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let inputs = parts.clone();
        self.push(out, Op::ConcatCols(parts), &inputs)
    }

    /// `Σ a ⊙ w` as a `1 x 1` tensor.
    pub fn weighted_sum(&mut self, a: Var, w: Tensor<T>) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), w.shape(), "weighted_sum: shape");
        let s: T = av.data().iter().zip(w.data()).map(|(&x, &y)| x * y).sum();
        self.push(Tensor::full(1, 1, s), Op::WeightedSum { a, w }, &[a])
    }

    /// Batch mean of the weighted Laplacian NLL. `mu`/`gt` are `B x 2N`
    /// (x, y interleaved), `raw` is `B x 3N`, `weights` has `N` entries.
    pub fn laplacian_loss(&mut self, mu: Var, raw: Var, gt: Tensor<T>, weights: Vec<f64>) -> Var {
        let (m, r) = (self.value(mu), self.value(raw));
        let n = weights.len();
        assert_eq!(m.cols(), 2 * n, "laplacian_loss: mu width");
        assert_eq!(r.cols(), 3 * n, "laplacian_loss: cholesky width");
        assert_eq!(m.shape(), gt.shape(), "laplacian_loss: ground truth shape");
        assert_eq!(m.rows(), r.rows(), "laplacian_loss: batch");
        let batch = m.rows();
        let mut total = 0.0;
        for b in 0..batch {
            for (k, &w) in weights.iter().enumerate() {
                let (mu_k, raw_k, gt_k) = landmark_slices(m, r, &gt, b, k);
                let f = loss::decode_cholesky(raw_k);
                total += w * loss::laplacian_nll(mu_k, &f, gt_k);
            }
        }
        let value = Tensor::full(1, 1, T::of(total / batch as f64));
        self.push(value, Op::Laplacian { mu, raw, gt, weights }, &[mu, raw])
    }

    /// Batch mean of the weighted Euclidean distance.
    pub fn euclidean_loss(&mut self, mu: Var, gt: Tensor<T>, weights: Vec<f64>) -> Var {
        let m = self.value(mu);
        assert_eq!(m.cols(), 2 * weights.len(), "euclidean_loss: mu width");
        assert_eq!(m.shape(), gt.shape(), "euclidean_loss: ground truth shape");
        let batch = m.rows();
        let mut total = 0.0;
        for b in 0..batch {
            for (k, &w) in weights.iter().enumerate() {
                let p = [m.get(b, 2 * k).f64(), m.get(b, 2 * k + 1).f64()];
                let g = [gt.get(b, 2 * k).f64(), gt.get(b, 2 * k + 1).f64()];
                total += w * loss::euclidean_grad(p, g).0;
            }
        }
        let value = Tensor::full(1, 1, T::of(total / batch as f64));
        self.push(value, Op::Euclidean { mu, gt, weights }, &[mu])
    }

    /// Gradients of the `1 x 1` node `root` with respect to all parameters.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward: root must be scalar");
        self.backward_with(root, Tensor::full(1, 1, T::one()))
    }

    /// Vector-Jacobian product seeded with `seed` at `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(self.value(root).shape(), seed.shape(), "backward: seed shape");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::new(self.params.len());
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i, g, &mut grads, &mut out);
        }
        out
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(
        &self,
        i: usize,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Gradients<T>,
    ) {
        let acc = |grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[i].op {
            Op::Const => {}
            Op::Param(id) => out.accumulate_owned(*id, g),
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    gemm(T::one(), g.view(), wv.view().t(), T::zero(), dx.view_mut());
                    acc(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = Tensor::zeros(wv.rows(), wv.cols());
                    gemm(T::one(), xv.view().t(), g.view(), T::zero(), dw.view_mut());
                    acc(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        acc(grads, *b, col_sums(&g));
                    }
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, g);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let mut d = g;
                for (dv, &x) in d.data_mut().iter_mut().zip(av.data()) {
                    if x <= T::zero() {
                        *dv = T::zero();
                    }
                }
                acc(grads, *a, d);
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let mut d = g;
                for (dv, &x) in d.data_mut().iter_mut().zip(av.data()) {
                    *dv *= gelu_parts(x).1;
                }
                acc(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma);
                let (rows, cols) = xhat.shape();
                if self.needs(*gamma) {
                    let mut dg = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let v = dg.get(0, c) + g.get(r, c) * xhat.get(r, c);
                            dg.set(0, c, v);
                        }
                    }
                    acc(grads, *gamma, dg);
                }
                if self.needs(*beta) {
                    acc(grads, *beta, col_sums(&g));
                }
                if self.needs(*x) {
                    let n = T::of(cols as f64);
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..cols {
                            let dxh = gr[c] * gv.get(0, c);
                            m1 += dxh;
                            m2 += dxh * xh[c];
                        }
                        m1 /= n;
                        m2 /= n;
                        let o = dx.row_mut(r);
                        for c in 0..cols {
                            let dxh = gr[c] * gv.get(0, c);
                            o[c] = rstd[r] * (dxh - m1 - xh[c] * m2);
                        }
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::Attention { q, k, v, dims, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.cols();
                let dh = d / dims.heads;
                let scale = T::one() / T::of(dh as f64).sqrt();
                let mut dq = Tensor::zeros(qv.rows(), d);
                let mut dk = Tensor::zeros(kv.rows(), d);
                let mut dv = Tensor::zeros(vv.rows(), d);
                let mut dp = Tensor::zeros(dims.lq, dims.lk);
                for b in 0..dims.batch {
                    for h in 0..dims.heads {
                        let p = &probs[b * dims.heads + h];
                        let go = head_view(&g, b * dims.lq, dims.lq, h * dh, dh);
                        let qs = head_view(qv, b * dims.lq, dims.lq, h * dh, dh);
                        let ks = head_view(kv, b * dims.lk, dims.lk, h * dh, dh);
                        let vs = head_view(vv, b * dims.lk, dims.lk, h * dh, dh);
                        // dV = Pᵀ dO
                        gemm(
                            T::one(),
                            p.view().t(),
                            go,
                            T::one(),
                            head_view_mut(&mut dv, b * dims.lk, dims.lk, h * dh, dh),
                        );
                        // dP = dO Vᵀ, then softmax backward in place
                        gemm(T::one(), go, vs.t(), T::zero(), dp.view_mut());
                        for r in 0..dims.lq {
                            let pr = p.row(r);
                            let dr = dp.row_mut(r);
                            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                            for c in 0..dims.lk {
                                dr[c] = pr[c] * (dr[c] - dot);
                            }
                        }
                        gemm(
                            scale,
                            dp.view(),
                            ks,
                            T::one(),
                            head_view_mut(&mut dq, b * dims.lq, dims.lq, h * dh, dh),
                        );
                        gemm(
                            scale,
                            dp.view().t(),
                            qs,
                            T::one(),
                            head_view_mut(&mut dk, b * dims.lk, dims.lk, h * dh, dh),
                        );
                    }
                }
                if self.needs(*q) {
                    acc(grads, *q, dq);
                }
                if self.needs(*k) {
                    acc(grads, *k, dk);
                }
                if self.needs(*v) {
                    acc(grads, *v, dv);
                }
            }
            Op::AssembleTokens {
                patches,
                global,
                pos,
                batch,
            } => {
                let d = g.cols();
                let l = g.rows() / batch;
                let np = l - 1;
                if self.needs(*patches) {
                    let mut dp = Tensor::zeros(batch * np, d);
                    for b in 0..*batch {
                        for t in 0..np {
                            dp.row_mut(b * np + t).copy_from_slice(g.row(b * l + t));
                        }
                    }
                    acc(grads, *patches, dp);
                }
                if self.needs(*global) {
                    let mut dg = Tensor::zeros(1, d);
                    for b in 0..*batch {
                        for (o, &x) in dg.row_mut(0).iter_mut().zip(g.row(b * l + np)) {
                            *o += x;
                        }
                    }
                    acc(grads, *global, dg);
                }
                if self.needs(*pos) {
                    let mut dpos = Tensor::zeros(l, d);
                    for b in 0..*batch {
                        for t in 0..l {
                            for (o, &x) in dpos.row_mut(t).iter_mut().zip(g.row(b * l + t)) {
                                *o += x;
                            }
                        }
                    }
                    acc(grads, *pos, dpos);
                }
            }
            Op::TileRows { a, times } => {
                let rows = g.rows() / times;
                let mut da = Tensor::zeros(rows, g.cols());
                for t in 0..*times {
                    for r in 0..rows {
                        for (o, &x) in da.row_mut(r).iter_mut().zip(g.row(t * rows + r)) {
                            *o += x;
                        }
                    }
                }
                acc(grads, *a, da);
            }
            Op::GatherRows { a, idx } => {
                let av = self.value(*a);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, &x) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(grads, *a, da);
            }
            Op::GatherCols { a, idx } => {
                let av = self.value(*a);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    for (c, &src) in idx.iter().enumerate() {
                        let v = da.get(r, src) + g.get(r, c);
                        da.set(r, src, v);
                    }
                }
                acc(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let dp = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, off + c));
                        acc(grads, p, dp);
                    }
                    off += w;
                }
            }
            Op::WeightedSum { a, w } => {
                let s = g.get(0, 0);
                acc(grads, *a, w.map(|x| x * s));
            }
            Op::Laplacian {
                mu,
                raw,
                gt,
                weights,
            } => {
                let (m, r) = (self.value(*mu), self.value(*raw));
                let batch = m.rows();
                let upstream = g.get(0, 0).f64() / batch as f64;
                let mut dmu = Tensor::zeros(m.rows(), m.cols());
                let mut draw = Tensor::zeros(r.rows(), r.cols());
                for b in 0..batch {
                    for (k, &w) in weights.iter().enumerate() {
                        let (mu_k, raw_k, gt_k) = landmark_slices(m, r, gt, b, k);
                        let (_, gm, gr) = loss::laplacian_nll_grad(mu_k, raw_k, gt_k);
                        let s = upstream * w;
                        for t in 0..2 {
                            dmu.set(b, 2 * k + t, T::of(s * gm[t]));
                        }
                        for t in 0..3 {
                            draw.set(b, 3 * k + t, T::of(s * gr[t]));
                        }
                    }
                }
                if self.needs(*mu) {
                    acc(grads, *mu, dmu);
                }
                if self.needs(*raw) {
                    acc(grads, *raw, draw);
                }
            }
            Op::Euclidean { mu, gt, weights } => {
                let m = self.value(*mu);
                let batch = m.rows();
                let upstream = g.get(0, 0).f64() / batch as f64;
                let mut dmu = Tensor::zeros(m.rows(), m.cols());
                for b in 0..batch {
                    for (k, &w) in weights.iter().enumerate() {
                        let p = [m.get(b, 2 * k).f64(), m.get(b, 2 * k + 1).f64()];
                        let q = [gt.get(b, 2 * k).f64(), gt.get(b, 2 * k + 1).f64()];
                        let (_, gm) = loss::euclidean_grad(p, q);
                        for t in 0..2 {
                            dmu.set(b, 2 * k + t, T::of(upstream * w * gm[t]));
                        }
                    }
                }
                acc(grads, *mu, dmu);
            }
        }
    }
}

fn landmark_slices<T: Float>(
    m: &Tensor<T>,
    r: &Tensor<T>,
    gt: &Tensor<T>,
    b: usize,
    k: usize,
) -> ([f64; 2], [f64; 3], [f64; 2]) {
    (
        [m.get(b, 2 * k).f64(), m.get(b, 2 * k + 1).f64()],
        [
            r.get(b, 3 * k).f64(),
            r.get(b, 3 * k + 1).f64(),
            r.get(b, 3 * k + 2).f64(),
        ],
        [gt.get(b, 2 * k).f64(), gt.get(b, 2 * k + 1).f64()],
    )
}

fn head_view<T>(t: &Tensor<T>, row0: usize, rows: usize, col0: usize, cols: usize) -> View<'_, T>
where
    T: Float,
{
    View {
        data: t.data(),
        offset: row0 * t.cols() + col0,
        rows,
        cols,
        rs: t.cols(),
        cs: 1,
    }
}

fn head_view_mut<T>(t: &mut Tensor<T>, row0: usize, rows: usize, col0: usize, cols: usize) -> ViewMut<'_, T>
where
    T: Float,
{
    let stride = t.cols();
    ViewMut {
        data: t.data_mut(),
        offset: row0 * stride + col0,
        rows,
        cols,
        rs: stride,
        cs: 1,
    }
}

fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn col_sums<T: Float>(g: &Tensor<T>) -> Tensor<T> {
    let mut s = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &x) in s.row_mut(0).iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    s
}
