//! Tape-based reverse-mode autodiff over 2-D tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! gradients for every parameter and input leaf that contributed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Real, Tensor};

/// Handle to a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.iter().any(|n| *n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Node handle in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    MulConst(Var, Tensor<T>),
    Relu(Var),
    Sigmoid(Var),
    Swish(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Unfold {
        x: Var,
        kernel: usize,
        pad: usize,
    },
    DepthwiseConv {
        x: Var,
        w: Var,
        pad: usize,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    L1Mean {
        pred: Var,
        target: Tensor<T>,
        valid_rows: usize,
    },
    BceLogitsSum {
        logits: Var,
        target: Vec<T>,
    },
    NegSqDist(Var, Var),
    /// Scalar loss whose gradient w.r.t. its single input was computed in
    /// the forward pass.
    Fused {
        x: Var,
        grad: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

/// Probability floor applied inside BCE logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Recorded computation.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    dropout: Option<Dropout>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            dropout: None,
        }
    }

    /// Enables inverted dropout with masks drawn from `rng`.
    pub fn with_dropout(mut self, rate: f64, rng: ChaCha8Rng) -> Self {
        if rate > 0.0 {
            self.dropout = Some(Dropout { rate, rng });
        }
        self
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.get(*id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Tensor::zeros(0, 0), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols(),
            bv.rows(),
            "matmul {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let out = av.matmul(bv);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_nt width");
        let (n, d, m) = (av.rows(), av.cols(), bv.rows());
        let mut out = Tensor::zeros(n, m);
        T::gemm(
            n,
            d,
            m,
            av.data(),
            false,
            bv.data(),
            true,
            out.data_mut(),
            false,
        );
        self.push(out, Op::MatMulNT(a, b))
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1×C` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.shape(), (1, xv.cols()), "add_row shape");
        let mut out = xv.clone();
        let r = rv.data();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, row))
    }

    /// Multiplies every row of `x` elementwise by a `1×C` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.shape(), (1, xv.cols()), "mul_row shape");
        let mut out = xv.clone();
        let r = rv.data();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(x, row))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), c.shape());
        let data = xv
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let out = Tensor::from_vec(xv.rows(), xv.cols(), data);
        self.push(out, Op::MulConst(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Swish(x))
    }

    /// Row-wise softmax. Columns at or beyond `valid_cols` receive zero weight.
    pub fn softmax(&mut self, x: Var, valid_cols: Option<usize>) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let valid = valid_cols.unwrap_or(cols).min(cols);
        assert!(valid > 0, "softmax over an empty row");
        let mut out = Tensor::zeros(xv.rows(), cols);
        for r in 0..xv.rows() {
            let row = &xv.row(r)[..valid];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let o = out.row_mut(r);
            let mut total = T::zero();
            for (oi, &v) in o.iter_mut().zip(row) {
                *oi = (v - max).exp();
                total += *oi;
            }
            for oi in &mut o[..valid] {
                *oi /= total;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            for v in row {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let eps = T::lit(eps);
        let cn = T::from_usize(c).unwrap();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let inv = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm { x, inv_std })
    }

    /// im2col for a 1-D convolution: row `t` holds `x[t + j - pad]` for
    /// `j in 0..kernel`, zeros outside the sequence.
    pub fn unfold(&mut self, x: Var, kernel: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let mut out = Tensor::zeros(n, kernel * c);
        for t in 0..n {
            let o = out.row_mut(t);
            for j in 0..kernel {
                let src = t as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < n {
                    o[j * c..(j + 1) * c].copy_from_slice(xv.row(src as usize));
                }
            }
        }
        self.push(out, Op::Unfold { x, kernel, pad })
    }

    /// Channel-wise "same" convolution of `x` (N×C) with taps `w` (K×C).
    pub fn depthwise_conv(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, c) = xv.shape();
        let k = wv.rows();
        assert_eq!(wv.cols(), c, "depthwise taps width");
        assert!(k % 2 == 1, "depthwise kernel must be odd");
        let pad = k / 2;
        let mut out = Tensor::zeros(n, c);
        for t in 0..n {
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src < 0 || src as usize >= n {
                    continue;
                }
                let xs = xv.row(src as usize);
                let wj = wv.row(j);
                let o = out.row_mut(t);
                for ch in 0..c {
                    o[ch] += wj[ch] * xs[ch];
                }
            }
        }
        self.push(out, Op::DepthwiseConv { x, w, pad })
    }

    /// Row gather: output row `r` is `x[idx[r]]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::from_vec(idx.len(), c, data);
        self.push(
            out,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_rows(start, len);
        self.push(out, Op::SliceRows { x, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols());
        let out = Tensor::from_fn(xv.rows(), len, |r, c| xv.get(r, start + c));
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(x).clone().reshape(rows, cols);
        self.push(out, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_usize(n.max(1)).unwrap())
    }

    /// Mean absolute error over the first `valid_rows` rows.
    pub fn l1_mean(&mut self, pred: Var, target: Tensor<T>, valid_rows: usize) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.cols(), target.cols(), "l1 width");
        assert!(valid_rows <= pv.rows() && valid_rows <= target.rows());
        let c = pv.cols();
        let mut total = T::zero();
        for r in 0..valid_rows {
            for (&p, &t) in pv.row(r).iter().zip(target.row(r)) {
                total += (p - t).abs();
            }
        }
        let count = T::from_usize((valid_rows * c).max(1)).unwrap();
        self.push(
            Tensor::scalar(total / count),
            Op::L1Mean {
                pred,
                target,
                valid_rows,
            },
        )
    }

    /// Summed binary cross-entropy of sigmoid(logits) against `target`, with
    /// probabilities clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce_logits_sum(&mut self, logits: Var, target: &[T]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), target.len(), "bce length");
        let floor = T::lit(PROB_CLAMP.ln());
        let mut total = T::zero();
        for (&x, &t) in lv.data().iter().zip(target) {
            let log_p = (-softplus(-x)).max(floor);
            let log_q = (-softplus(x)).max(floor);
            total -= t * log_p + (T::one() - t) * log_q;
        }
        self.push(
            Tensor::scalar(total),
            Op::BceLogitsSum {
                logits,
                target: target.to_vec(),
            },
        )
    }

    /// `out[t, i] = -‖q_t - k_i‖²`.
    pub fn neg_sq_dist(&mut self, q: Var, k: Var) -> Var {
        let (qv, kv) = (self.value(q), self.value(k));
        assert_eq!(qv.cols(), kv.cols());
        let out = Tensor::from_fn(qv.rows(), kv.rows(), |t, i| {
            -qv.row(t)
                .iter()
                .zip(kv.row(i))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>()
        });
        self.push(out, Op::NegSqDist(q, k))
    }

    /// Records a scalar loss with a precomputed gradient w.r.t. `x`.
    pub fn fused_loss(&mut self, x: Var, value: T, grad: Tensor<T>) -> Var {
        assert_eq!(self.value(x).shape(), grad.shape());
        self.push(Tensor::scalar(value), Op::Fused { x, grad })
    }

    /// Inverted dropout; identity when dropout is disabled on this graph.
    pub fn dropout(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let Some(d) = self.dropout.as_mut() else {
            return x;
        };
        let keep = 1.0 - d.rate;
        let scale = T::lit(1.0 / keep);
        let mask = Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| {
                    if d.rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        );
        self.mul_const(x, mask)
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = av.shape();
                let m = bv.cols();
                let ga = buf(grads, *a, (n, k));
                T::gemm(
                    n,
                    m,
                    k,
                    g.data(),
                    false,
                    bv.data(),
                    true,
                    ga.data_mut(),
                    true,
                );
                let gb = buf(grads, *b, (k, m));
                T::gemm(
                    k,
                    n,
                    m,
                    av.data(),
                    true,
                    g.data(),
                    false,
                    gb.data_mut(),
                    true,
                );
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, d) = av.shape();
                let m = bv.rows();
                let ga = buf(grads, *a, (n, d));
                T::gemm(
                    n,
                    m,
                    d,
                    g.data(),
                    false,
                    bv.data(),
                    false,
                    ga.data_mut(),
                    true,
                );
                let gb = buf(grads, *b, (m, d));
                T::gemm(
                    m,
                    n,
                    d,
                    g.data(),
                    true,
                    av.data(),
                    false,
                    gb.data_mut(),
                    true,
                );
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g, |d, s| *d += s);
                accumulate(grads, *b, g, |d, s| *d += s);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g, |d, s| *d += s);
                accumulate(grads, *b, g, |d, s| *d -= s);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = buf(grads, *a, av.shape());
                for ((d, &s), &o) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                    *d += s * o;
                }
                let gb = buf(grads, *b, bv.shape());
                for ((d, &s), &o) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *d += s * o;
                }
            }
            Op::AddRow(x, r) => {
                accumulate(grads, *x, g, |d, s| *d += s);
                let cols = g.cols();
                let gr = buf(grads, *r, (1, cols));
                let gd = gr.data_mut();
                for row in 0..g.rows() {
                    for (d, &s) in gd.iter_mut().zip(g.row(row)) {
                        *d += s;
                    }
                }
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (self.value(*x), self.value(*r));
                let cols = g.cols();
                let gx = buf(grads, *x, xv.shape());
                for row in 0..g.rows() {
                    let dst = gx.row_mut(row);
                    for ((d, &s), &w) in dst.iter_mut().zip(g.row(row)).zip(rv.data()) {
                        *d += s * w;
                    }
                }
                let gr = buf(grads, *r, (1, cols));
                let gd = gr.data_mut();
                for row in 0..g.rows() {
                    for ((d, &s), &xi) in gd.iter_mut().zip(g.row(row)).zip(xv.row(row)) {
                        *d += s * xi;
                    }
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate(grads, *x, g, |d, v| *d += v * s);
            }
            Op::MulConst(x, c) => {
                let gx = buf(grads, *x, c.shape());
                for ((d, &s), &m) in gx.data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                    *d += s * m;
                }
            }
            Op::Relu(x) => {
                let gx = buf(grads, *x, y.shape());
                for ((d, &s), &o) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    if o > T::zero() {
                        *d += s;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let gx = buf(grads, *x, y.shape());
                for ((d, &s), &o) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *d += s * o * (T::one() - o);
                }
            }
            Op::Swish(x) => {
                let xv = self.value(*x);
                let gx = buf(grads, *x, y.shape());
                for ((d, &s), &xi) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    let sg = sigmoid(xi);
                    *d += s * (sg + xi * sg * (T::one() - sg));
                }
            }
            Op::Softmax(x) => {
                let gx = buf(grads, *x, y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yi), &gi) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d += yi * (gi - dot);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let gx = buf(grads, *x, y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let total: T = gr.iter().copied().sum();
                    for ((d, &yi), &gi) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d += gi - yi.exp() * total;
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let cn = T::from_usize(y.cols()).unwrap();
                let gx = buf(grads, *x, y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mean_g = gr.iter().copied().sum::<T>() / cn;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / cn;
                    let inv = inv_std[r];
                    for ((d, &yi), &gi) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d += inv * (gi - mean_g - yi * mean_gy);
                    }
                }
            }
            Op::Unfold { x, kernel, pad } => {
                let (n, c) = self.value(*x).shape();
                let gx = buf(grads, *x, (n, c));
                for t in 0..n {
                    let gr = g.row(t);
                    for j in 0..*kernel {
                        let src = t as isize + j as isize - *pad as isize;
                        if src >= 0 && (src as usize) < n {
                            let dst = gx.row_mut(src as usize);
                            for (d, &s) in dst.iter_mut().zip(&gr[j * c..(j + 1) * c]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::DepthwiseConv { x, w, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, c) = xv.shape();
                let k = wv.rows();
                let mut gx = Tensor::zeros(n, c);
                let mut gw = Tensor::zeros(k, c);
                for t in 0..n {
                    let gr = g.row(t);
                    for j in 0..k {
                        let src = t as isize + j as isize - *pad as isize;
                        if src < 0 || src as usize >= n {
                            continue;
                        }
                        let src = src as usize;
                        let (xs, wj) = (xv.row(src), wv.row(j));
                        {
                            let dx = gx.row_mut(src);
                            for ch in 0..c {
                                dx[ch] += wj[ch] * gr[ch];
                            }
                        }
                        let dw = gw.row_mut(j);
                        for ch in 0..c {
                            dw[ch] += xs[ch] * gr[ch];
                        }
                    }
                }
                accumulate(grads, *x, &gx, |d, s| *d += s);
                accumulate(grads, *w, &gw, |d, s| *d += s);
            }
            Op::Gather { x, idx } => {
                let shape = self.value(*x).shape();
                let gx = buf(grads, *x, shape);
                for (r, &src) in idx.iter().enumerate() {
                    for (d, &s) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let shape = self.value(*x).shape();
                let gx = buf(grads, *x, shape);
                for r in 0..g.rows() {
                    for (d, &s) in gx.row_mut(start + r).iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let shape = self.value(*x).shape();
                let gx = buf(grads, *x, shape);
                let w = g.cols();
                for r in 0..g.rows() {
                    for (d, &s) in gx.row_mut(r)[*start..start + w].iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape();
                let gx = buf(grads, *x, shape);
                for (d, &s) in gx.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
            Op::Sum(x) => {
                let s = g.item();
                let shape = self.value(*x).shape();
                let gx = buf(grads, *x, shape);
                for d in gx.data_mut() {
                    *d += s;
                }
            }
            Op::L1Mean {
                pred,
                target,
                valid_rows,
            } => {
                let pv = self.value(*pred);
                let c = pv.cols();
                let scale = g.item() / T::from_usize((valid_rows * c).max(1)).unwrap();
                let gp = buf(grads, *pred, pv.shape());
                for r in 0..*valid_rows {
                    let dst = gp.row_mut(r);
                    for ((d, &p), &t) in dst.iter_mut().zip(pv.row(r)).zip(target.row(r)) {
                        let diff = p - t;
                        if diff > T::zero() {
                            *d += scale;
                        } else if diff < T::zero() {
                            *d -= scale;
                        }
                    }
                }
            }
            Op::BceLogitsSum { logits, target } => {
                let lv = self.value(*logits);
                let up = g.item();
                let floor = T::lit(PROB_CLAMP.ln());
                let gl = buf(grads, *logits, lv.shape());
                for ((d, &x), &t) in gl.data_mut().iter_mut().zip(lv.data()).zip(target) {
                    let p = sigmoid(x);
                    let mut dx = T::zero();
                    if -softplus(-x) > floor {
                        dx -= t * (T::one() - p);
                    }
                    if -softplus(x) > floor {
                        dx += (T::one() - t) * p;
                    }
                    *d += up * dx;
                }
            }
            Op::NegSqDist(q, k) => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let (tn, d) = qv.shape();
                let ln = kv.rows();
                let two = T::lit(2.0);
                // dq = -2 (rowsum(g) ⊙ q - g·K)
                let mut gq = Tensor::zeros(tn, d);
                T::gemm(
                    tn,
                    ln,
                    d,
                    g.data(),
                    false,
                    kv.data(),
                    false,
                    gq.data_mut(),
                    false,
                );
                for t in 0..tn {
                    let rs: T = g.row(t).iter().copied().sum();
                    for (o, &qi) in gq.row_mut(t).iter_mut().zip(qv.row(t)) {
                        *o = two * (*o - rs * qi);
                    }
                }
                // dk = 2 (gᵀ·Q - colsum(g) ⊙ k)
                let mut gk = Tensor::zeros(ln, d);
                T::gemm(
                    ln,
                    tn,
                    d,
                    g.data(),
                    true,
                    qv.data(),
                    false,
                    gk.data_mut(),
                    false,
                );
                for i in 0..ln {
                    let cs: T = (0..tn).map(|t| g.get(t, i)).sum();
                    for (o, &ki) in gk.row_mut(i).iter_mut().zip(kv.row(i)) {
                        *o = two * (*o - cs * ki);
                    }
                }
                accumulate(grads, *q, &gq, |dst, s| *dst += s);
                accumulate(grads, *k, &gk, |dst, s| *dst += s);
            }
            Op::Fused { x, grad } => {
                let up = g.item();
                accumulate(grads, *x, grad, |d, s| *d += up * s);
            }
        }
    }
}

fn buf<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: (usize, usize)) -> &mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn accumulate<T: Real>(
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    src: &Tensor<T>,
    f: impl Fn(&mut T, T),
) {
    let dst = buf(grads, v, src.shape());
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        f(d, s);
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf (input or parameter node).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.param_vars[id.0].and_then(|v| self.grads[v.0].as_ref())
    }

    /// Adds `scale ×` every parameter gradient into `acc` (indexed by param).
    pub fn accumulate_into(&self, acc: &mut [Tensor<T>], scale: T) {
        for (i, slot) in acc.iter_mut().enumerate() {
            if let Some(g) = self.param(ParamId(i)) {
                for (d, &s) in slot.data_mut().iter_mut().zip(g.data()) {
                    *d += scale * s;
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + xs.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}
