//! Reverse-mode differentiation over a linear tape of 2-D values.
//!
//! Every value on the tape is a `rows x cols` matrix (vectors are one row,
//! scalars are 1x1). Parameters are borrowed from a [`ParamStore`] rather
//! than copied; [`Tape::backward`] returns their gradients keyed by
//! [`ParamId`].

use std::borrow::Cow;

use crate::scalar::Scalar;

use super::params::{GradMap, ParamId, ParamStore};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<T>,
        denom: T,
    },
    Sum(Var),
    SumSquares(Var),
    Sqrt(Var),
    Row(Var, usize),
}

struct Node<'a, T: Clone> {
    rows: usize,
    cols: usize,
    value: Cow<'a, [T]>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for one backward pass.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NnError {
    NnError::ShapeMismatch {
        op,
        lhs: vec![a.0, a.1],
        rhs: vec![b.0, b.1],
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s = s + a[i] * b[i];
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn acc<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], v: Var, len: usize) -> &'g mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Cow<'a, [T]>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    /// The single value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, NnError> {
        if rows * cols != data.len() {
            return Err(mismatch("constant", (rows, cols), (data.len(), 1)));
        }
        Ok(self.push(rows, cols, Cow::Owned(data), Op::Leaf, false))
    }

    /// Binds a parameter by reference; it receives a gradient when the store
    /// marks it trainable.
    pub fn param(&mut self, store: &'a ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let (rows, cols) = t.rows_cols();
        self.push(
            rows,
            cols,
            Cow::Borrowed(t.data()),
            Op::Param(id),
            t.requires_grad,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(mismatch("matmul", (m, k), (k2, n)));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let crow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip != T::zero() {
                    axpy(aip, &bv[p * n..(p + 1) * n], crow);
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, Cow::Owned(out), Op::MatMul(a, b), ng))
    }

    fn elementwise(&mut self, a: Var, b: Var, op: &'static str, sign: T) -> Result<Var, NnError> {
        if self.dims(a) != self.dims(b) {
            return Err(mismatch(op, self.dims(a), self.dims(b)));
        }
        let (r, c) = self.dims(a);
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + sign * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        let node = if sign > T::zero() { Op::Add(a, b) } else { Op::Sub(a, b) };
        Ok(self.push(r, c, Cow::Owned(out), node, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.elementwise(a, b, "add", T::one())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.elementwise(a, b, "sub", -T::one())
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.dims(a) != self.dims(b) {
            return Err(mismatch("mul", self.dims(a), self.dims(b)));
        }
        let (r, c) = self.dims(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, Cow::Owned(out), Op::Mul(a, b), ng))
    }

    /// `x + b` with the single-row `b` broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let (r, c) = self.dims(x);
        if self.dims(b) != (1, c) {
            return Err(mismatch("add_row", (r, c), self.dims(b)));
        }
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            for (o, &bj) in row.iter_mut().zip(bv) {
                *o = *o + bj;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(r, c, Cow::Owned(out), Op::AddRow(x, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let (r, cols) = self.dims(x);
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let ng = self.ng(x);
        self.push(r, cols, Cow::Owned(out), Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let ng = self.ng(x);
        self.push(r, c, Cow::Owned(out), Op::Relu(x), ng)
    }

    /// Row-wise layer normalization with learned `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return Err(mismatch("layer_norm", (r, c), self.dims(gamma)));
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let bt = self.value(beta);
        let cn = T::from_usize_lossy(c);
        let eps = T::lit(LN_EPS);
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + bt[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            r,
            c,
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Gathers rows of `table` for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let (vocab, d) = self.dims(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(NnError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: vocab,
                });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            ids.len(),
            d,
            Cow::Owned(out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let ng = self.ng(x);
        self.push(r, c, Cow::Owned(out), Op::Softmax(x), ng)
    }

    /// Multi-head scaled dot-product attention. `q` is `[Lq, d]`, `k` and
    /// `v` are `[Lk, d]`; head `h` uses columns `h*d/heads..(h+1)*d/heads`.
    /// With `causal`, query `i` attends only to keys `j <= i`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
    ) -> Result<Var, NnError> {
        let (lq, d) = self.dims(q);
        let (lk, dk) = self.dims(k);
        if dk != d || self.dims(v) != (lk, d) {
            return Err(mismatch("attention", (lq, d), (lk, dk)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(mismatch("attention heads", (d, heads), (d, heads)));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); heads * lq * lk];
        let mut out = vec![T::zero(); lq * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..lq {
                let qi = &qv[i * d + off..i * d + off + dh];
                let row = &mut probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                let limit = if causal { (i + 1).min(lk) } else { lk };
                for (j, p) in row.iter_mut().enumerate().take(limit) {
                    *p = dot(qi, &kv[j * d + off..j * d + off + dh]) * scale;
                }
                softmax_in_place(&mut row[..limit]);
                let orow = &mut out[i * d + off..i * d + off + dh];
                for (j, &p) in row.iter().enumerate().take(limit) {
                    axpy(p, &vv[j * d + off..j * d + off + dh], orow);
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            lq,
            d,
            Cow::Owned(out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        ))
    }

    /// Softmax cross-entropy of each logit row against its target id.
    /// Rows whose target equals `ignore` are excluded; `Mean` averages over
    /// the remaining rows (0 when none remain).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
        reduction: Reduction,
    ) -> Result<Var, NnError> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(mismatch("cross_entropy", (r, c), (targets.len(), 1)));
        }
        let lv = self.value(logits);
        let mut probs = lv.to_vec();
        let mut total = T::zero();
        let mut count = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            if Some(t) == ignore {
                continue;
            }
            if t >= c {
                return Err(NnError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    bound: c,
                });
            }
            let row = &mut probs[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            total = total + (lse - row[t]);
            count += 1;
            softmax_in_place(row);
        }
        let denom = match reduction {
            Reduction::Mean if count > 0 => T::from_usize_lossy(count),
            _ => T::one(),
        };
        let ng = self.ng(logits);
        Ok(self.push(
            1,
            1,
            Cow::Owned(vec![total / denom]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                denom,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let ng = self.ng(x);
        self.push(1, 1, Cow::Owned(vec![s]), Op::Sum(x), ng)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|&v| v * v).sum();
        let ng = self.ng(x);
        self.push(1, 1, Cow::Owned(vec![s]), Op::SumSquares(x), ng)
    }

    /// Elementwise square root. The gradient at exactly 0 is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).iter().map(|v| v.sqrt()).collect();
        let ng = self.ng(x);
        self.push(r, c, Cow::Owned(out), Op::Sqrt(x), ng)
    }

    /// Row `i` of `x` as a `1 x cols` value.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var, NnError> {
        let (r, c) = self.dims(x);
        if i >= r {
            return Err(NnError::IndexOutOfRange {
                op: "row",
                index: i,
                bound: r,
            });
        }
        let out = self.value(x)[i * c..(i + 1) * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(1, c, Cow::Owned(out), Op::Row(x, i), ng))
    }

    /// Back-propagates `seed * d(loss)` and returns parameter gradients.
    pub fn backward(&self, loss: Var, seed: T) -> Result<GradMap<T>, NnError> {
        if self.dims(loss) != (1, 1) {
            let (r, c) = self.dims(loss);
            return Err(NnError::NonScalarLoss(vec![r, c]));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![seed]);
        let mut out = GradMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match out.get_mut(id) {
                    Some(buf) => axpy(T::one(), &g, buf),
                    None => {
                        out.insert(*id, g);
                    }
                },
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = node.cols;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.ng(*a) {
                        let da = acc(&mut grads, *a, m * k);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                da[i * k + p] = da[i * k + p] + dot(grow, &bv[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    if self.ng(*b) {
                        let db = acc(&mut grads, *b, k * n);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = av[i * k + p];
                                if aip != T::zero() {
                                    axpy(aip, grow, &mut db[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Add(..)) { T::one() } else { -T::one() };
                    if self.ng(*a) {
                        axpy(T::one(), &g, acc(&mut grads, *a, g.len()));
                    }
                    if self.ng(*b) {
                        axpy(sign, &g, acc(&mut grads, *b, g.len()));
                    }
                }
                Op::Mul(a, b) => {
                    for (this, other) in [(*a, *b), (*b, *a)] {
                        if self.ng(this) {
                            let ov = self.value(other);
                            let d = acc(&mut grads, this, g.len());
                            for ((di, &gi), &oi) in d.iter_mut().zip(&g).zip(ov) {
                                *di = *di + gi * oi;
                            }
                        }
                    }
                }
                Op::AddRow(x, b) => {
                    if self.ng(*x) {
                        axpy(T::one(), &g, acc(&mut grads, *x, g.len()));
                    }
                    if self.ng(*b) {
                        let c = node.cols;
                        let db = acc(&mut grads, *b, c);
                        for row in g.chunks(c) {
                            axpy(T::one(), row, db);
                        }
                    }
                }
                Op::Scale(x, c) => {
                    axpy(*c, &g, acc(&mut grads, *x, g.len()));
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let dx = acc(&mut grads, *x, g.len());
                    for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(xv) {
                        if xi > T::zero() {
                            *d = *d + gi;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (r, c) = (node.rows, node.cols);
                    let gv = self.value(*gamma);
                    if self.ng(*gamma) {
                        let dg = acc(&mut grads, *gamma, c);
                        for i in 0..r {
                            for j in 0..c {
                                dg[j] = dg[j] + g[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    if self.ng(*beta) {
                        let db = acc(&mut grads, *beta, c);
                        for row in g.chunks(c) {
                            axpy(T::one(), row, db);
                        }
                    }
                    if self.ng(*x) {
                        let cn = T::from_usize_lossy(c);
                        let dx = acc(&mut grads, *x, r * c);
                        let mut dxhat = vec![T::zero(); c];
                        for i in 0..r {
                            let mut mean_d = T::zero();
                            let mut mean_dx = T::zero();
                            for j in 0..c {
                                let v = g[i * c + j] * gv[j];
                                dxhat[j] = v;
                                mean_d = mean_d + v;
                                mean_dx = mean_dx + v * xhat[i * c + j];
                            }
                            mean_d = mean_d / cn;
                            mean_dx = mean_dx / cn;
                            for j in 0..c {
                                let h = xhat[i * c + j];
                                dx[i * c + j] =
                                    dx[i * c + j] + rstd[i] * (dxhat[j] - mean_d - h * mean_dx);
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let (rows, d) = self.dims(*table);
                    let dt = acc(&mut grads, *table, rows * d);
                    for (i, &id) in ids.iter().enumerate() {
                        axpy(T::one(), &g[i * d..(i + 1) * d], &mut dt[id * d..(id + 1) * d]);
                    }
                }
                Op::Softmax(x) => {
                    let c = node.cols;
                    let y = &node.value;
                    let dx = acc(&mut grads, *x, g.len());
                    for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                        let s = dot(yr, gr);
                        for j in 0..c {
                            dr[j] = dr[j] + yr[j] * (gr[j] - s);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    self.attention_backward(&mut grads, &g, node, *q, *k, *v, *heads, probs);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    probs,
                    denom,
                } => {
                    let c = self.dims(*logits).1;
                    let w = g[0] / *denom;
                    let dl = acc(&mut grads, *logits, probs.len());
                    for (i, &t) in targets.iter().enumerate() {
                        if Some(t) == *ignore {
                            continue;
                        }
                        let row = &probs[i * c..(i + 1) * c];
                        let drow = &mut dl[i * c..(i + 1) * c];
                        axpy(w, row, drow);
                        drow[t] = drow[t] - w;
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    let dx = acc(&mut grads, *x, n);
                    for d in dx.iter_mut() {
                        *d = *d + g[0];
                    }
                }
                Op::SumSquares(x) => {
                    let xv = self.value(*x);
                    let two_g = g[0] + g[0];
                    axpy(two_g, xv, acc(&mut grads, *x, xv.len()));
                }
                Op::Sqrt(x) => {
                    let y = &node.value;
                    let dx = acc(&mut grads, *x, y.len());
                    let two = T::lit(2.0);
                    for ((d, &gi), &yi) in dx.iter_mut().zip(&g).zip(y.iter()) {
                        if yi > T::zero() {
                            *d = *d + gi / (two * yi);
                        }
                    }
                }
                Op::Row(x, i) => {
                    let (r, c) = self.dims(*x);
                    let dx = acc(&mut grads, *x, r * c);
                    axpy(T::one(), &g, &mut dx[i * c..(i + 1) * c]);
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        grads: &mut [Option<Vec<T>>],
        g: &[T],
        node: &Node<'a, T>,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
    ) {
        let (lq, d) = (node.rows, node.cols);
        let lk = self.dims(k).0;
        let dh = d / heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        // Masked (causal) entries have probability exactly 0 and are skipped.
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![T::zero(); lq * d];
        let mut dk = vec![T::zero(); lk * d];
        let mut dv = vec![T::zero(); lk * d];
        let mut ds = vec![T::zero(); lk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..lq {
                let p = &probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                let gi = &g[i * d + off..i * d + off + dh];
                let mut weighted = T::zero();
                for j in 0..lk {
                    if p[j] == T::zero() {
                        ds[j] = T::zero();
                        continue;
                    }
                    let dp = dot(gi, &vv[j * d + off..j * d + off + dh]);
                    ds[j] = dp;
                    weighted = weighted + p[j] * dp;
                    axpy(p[j], gi, &mut dv[j * d + off..j * d + off + dh]);
                }
                for j in 0..lk {
                    if p[j] == T::zero() {
                        continue;
                    }
                    let s = p[j] * (ds[j] - weighted) * scale;
                    axpy(s, &kv[j * d + off..j * d + off + dh], &mut dq[i * d + off..i * d + off + dh]);
                    axpy(s, &qv[i * d + off..i * d + off + dh], &mut dk[j * d + off..j * d + off + dh]);
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.ng(var) {
                axpy(T::one(), &buf, acc(grads, var, buf.len()));
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}
