//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! construction order, which is always a valid topological order, so the
//! backward pass is a single reverse sweep.
//!
//! Tensors are rank 1 (`[n]`) or rank 2 (`[rows, cols]`). Row-wise ops
//! (layer norm, log-softmax, entropy, concat) treat a rank-1 tensor as a
//! single row, which lets the same code serve single-step inference and
//! batched PPO evaluation.

use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(usize);

impl Value {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Value, Value),
    Linear { x: Value, w: Value, b: Value },
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Tanh(Value),
    Sigmoid(Value),
    Exp(Value),
    /// `scale * x + shift` with constant coefficients.
    Affine { x: Value, scale: f64 },
    /// Scalar node (or one scalar per row) times a tensor.
    Scale { s: Value, x: Value },
    Clamp { x: Value, lo: f64, hi: f64 },
    Minimum(Value, Value),
    LayerNorm {
        x: Value,
        gain: Value,
        bias: Value,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanPair(Value, Value),
    Concat(Value, Value),
    LogSoftmax(Value),
    Gather { x: Value, idx: Vec<usize> },
    Entropy(Value),
    Sum(Value),
    Mean(Value),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (1, shape.iter().product()),
    }
}

/// Numerically stable log-softmax of one row, in place.
pub fn log_softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<Option<Value>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].grad
    }

    /// First (usually only) entry of a node.
    pub fn scalar(&self, v: Value) -> f64 {
        self.nodes[v.0].data[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Value {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let grad = vec![0.0; data.len()];
        self.nodes.push(Node {
            shape,
            data,
            grad,
            op,
        });
        Value(self.nodes.len() - 1)
    }

    /// Constant input node.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Value> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.is_empty() || shape.len() > 2 {
            return Err(Error::shape("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf))
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Value {
        let n = data.len();
        self.push(vec![n], data, Op::Leaf)
    }

    /// Binds a stored parameter into this graph. Binding the same id twice
    /// returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Value {
        let i = id.index();
        if i >= self.bound.len() {
            self.bound.resize(i + 1, None);
        }
        if let Some(v) = self.bound[i] {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.shape().to_vec(), p.data().to_vec(), Op::Leaf);
        self.bound[i] = Some(v);
        v
    }

    /// `a · b`. A rank-1 `a` is treated as a single row and the result
    /// stays rank-1.
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, k2, n) = match (sa, sb) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            ([k], [k2, n]) => (1, *k, *k2, *n),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        if k != k2 {
            return Err(Error::shape("matmul", sa, sb));
        }
        let shape = if sa.len() == 1 { vec![n] } else { vec![m, n] };
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        Ok(self.push(shape, out, Op::MatMul(a, b)))
    }

    /// `x · W + b`, with `x` of shape `[in]` or `[rows, in]`, `W` of shape
    /// `[in, out]` and `b` of shape `[out]` added to every row.
    pub fn linear(&mut self, x: Value, w: Value, b: Value) -> Result<Value> {
        let (rows, k) = rows_cols(self.shape(x));
        let (k2, n) = match self.shape(w) {
            [k2, n] => (*k2, *n),
            s => return Err(Error::shape("linear", self.shape(x), s)),
        };
        if k != k2 || self.shape(x).len() > 2 {
            return Err(Error::shape("linear", self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [n] {
            return Err(Error::shape("linear", self.shape(w), self.shape(b)));
        }
        let mut out = matmul_raw(self.data(x), self.data(w), rows, k, n);
        let bias = self.data(b);
        for row in out.chunks_exact_mut(n) {
            for (o, bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let shape = if self.shape(x).len() == 1 {
            vec![n]
        } else {
            vec![rows, n]
        };
        Ok(self.push(shape, out, Op::Linear { x, w, b }))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Value,
        b: Value,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Value> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, op))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    /// `½(a + b)`.
    pub fn mean_pair(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("mean_pair", a, b, |x, y| 0.5 * (x + y), Op::MeanPair(a, b))
    }

    fn unary(&mut self, x: Value, f: impl Fn(f64) -> f64, op: Op) -> Value {
        let out = self.data(x).iter().map(|v| f(*v)).collect();
        self.push(self.shape(x).to_vec(), out, op)
    }

    pub fn tanh(&mut self, x: Value) -> Value {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Value) -> Value {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// `scale * x + shift` elementwise with constant coefficients.
    pub fn affine(&mut self, x: Value, scale: f64, shift: f64) -> Value {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn clamp(&mut self, x: Value, lo: f64, hi: f64) -> Value {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Multiplies `x` by a scalar node. `s` may also hold one scalar per row
    /// of a rank-2 `x`. Gradient flows to both `s` and `x`.
    pub fn scale(&mut self, s: Value, x: Value) -> Result<Value> {
        let (rows, cols) = rows_cols(self.shape(x));
        let ns = self.data(s).len();
        if ns != 1 && !(ns == rows && self.shape(x).len() == 2) {
            return Err(Error::shape("scale", self.shape(s), self.shape(x)));
        }
        let sd = self.data(s);
        let mut out = self.data(x).to_vec();
        for (r, row) in out.chunks_exact_mut(cols).enumerate() {
            let k = if ns == 1 { sd[0] } else { sd[r] };
            for v in row.iter_mut() {
                *v *= k;
            }
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::Scale { s, x }))
    }

    /// Row-wise layer normalization with a learnable affine:
    /// `gain ⊙ (x − mean) / sqrt(var + eps) + bias`, population variance.
    /// A constant row normalizes to exactly zero, so the output is `bias`.
    pub fn layer_norm(&mut self, x: Value, gain: Value, bias: Value, eps: f64) -> Result<Value> {
        let (rows, d) = rows_cols(self.shape(x));
        if self.shape(gain) != [d] || self.shape(bias) != [d] || d == 0 {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        if self.shape(bias) != self.shape(gain) {
            return Err(Error::shape("layer_norm", self.shape(gain), self.shape(bias)));
        }
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xd = self.data(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            let constant = row.iter().all(|v| *v == row[0]);
            for j in 0..d {
                let xh = if constant { 0.0 } else { (row[j] - mean) * is };
                xhat[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Concatenates along the last axis. Both operands must have the same
    /// rank and row count.
    pub fn concat(&mut self, a: Value, b: Value) -> Result<Value> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || (sa.len() == 2 && sa[0] != sb[0]) || sa.len() > 2 {
            return Err(Error::shape("concat", sa, sb));
        }
        let (rows, ca) = rows_cols(sa);
        let (_, cb) = rows_cols(sb);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let shape = if sa.len() == 1 {
            vec![ca + cb]
        } else {
            vec![rows, ca + cb]
        };
        Ok(self.push(shape, out, Op::Concat(a, b)))
    }

    /// Row-wise log-probabilities of a softmax over logits.
    pub fn log_softmax(&mut self, x: Value) -> Value {
        let (_, cols) = rows_cols(self.shape(x));
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(cols) {
            log_softmax_row(row);
        }
        self.push(self.shape(x).to_vec(), out, Op::LogSoftmax(x))
    }

    /// Picks one entry per row: `out[r] = x[r, idx[r]]`.
    pub fn gather(&mut self, x: Value, idx: &[usize]) -> Result<Value> {
        let (rows, cols) = rows_cols(self.shape(x));
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(Error::shape("gather", self.shape(x), &[idx.len()]));
        }
        let xd = self.data(x);
        let out: Vec<f64> = idx.iter().enumerate().map(|(r, &i)| xd[r * cols + i]).collect();
        Ok(self.push(vec![rows], out, Op::Gather { x, idx: idx.to_vec() }))
    }

    /// Row-wise entropy `−Σ p·log p` from log-probabilities.
    pub fn entropy(&mut self, logp: Value) -> Value {
        let (rows, cols) = rows_cols(self.shape(logp));
        let out = self
            .data(logp)
            .chunks_exact(cols)
            .map(|row| -row.iter().map(|l| l.exp() * l).sum::<f64>())
            .collect::<Vec<_>>();
        debug_assert_eq!(out.len(), rows);
        self.push(vec![rows], out, Op::Entropy(logp))
    }

    pub fn sum(&mut self, x: Value) -> Value {
        let s = self.data(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Value) -> Value {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(x))
    }

    /// Reverse sweep from a scalar root. Node gradients are *added to*, so
    /// calling this twice without [`Graph::zero_grad`] doubles every gradient.
    pub fn backward(&mut self, root: Value) -> Result<()> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            for (acc, gi) in self.nodes[i].grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of every bound parameter into the store.
    pub fn write_param_grads(&self, store: &mut ParamStore) {
        for (i, slot) in self.bound.iter().enumerate() {
            if let Some(v) = slot {
                let p = store.get_mut(ParamId::from_index(i));
                for (acc, g) in p.grad_mut().iter_mut().zip(&self.nodes[v.0].grad) {
                    *acc += g;
                }
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let data = |v: Value| self.nodes[v.0].data.as_slice();
        let shape = |v: Value| self.nodes[v.0].shape.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(shape(*a));
                let n = shape(*b)[1];
                let (da, db) = matmul_backward(g, data(*a), data(*b), m, k, n);
                accumulate(adj, *a, &da);
                accumulate(adj, *b, &db);
            }
            Op::Linear { x, w, b } => {
                let (m, k) = rows_cols(shape(*x));
                let n = shape(*w)[1];
                let (dx, dw) = matmul_backward(g, data(*x), data(*w), m, k, n);
                let mut dbias = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    for (acc, gi) in dbias.iter_mut().zip(row) {
                        *acc += gi;
                    }
                }
                accumulate(adj, *x, &dx);
                accumulate(adj, *w, &dw);
                accumulate(adj, *b, &dbias);
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g);
                accumulate(adj, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(adj, *b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(data(*b)).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = g.iter().zip(data(*a)).map(|(g, x)| g * x).collect();
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::MeanPair(a, b) => {
                let half: Vec<f64> = g.iter().map(|v| 0.5 * v).collect();
                accumulate(adj, *a, &half);
                accumulate(adj, *b, &half);
            }
            Op::Minimum(a, b) => {
                // Ties route to the first operand.
                let (xa, xb) = (data(*a), data(*b));
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for j in 0..g.len() {
                    if xa[j] <= xb[j] {
                        ga[j] = g[j];
                    } else {
                        gb[j] = g[j];
                    }
                }
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::Tanh(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(&node.data)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                accumulate(adj, *x, &gx);
            }
            Op::Sigmoid(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(&node.data)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                accumulate(adj, *x, &gx);
            }
            Op::Exp(x) => {
                let gx: Vec<f64> = g.iter().zip(&node.data).map(|(g, y)| g * y).collect();
                accumulate(adj, *x, &gx);
            }
            Op::Affine { x, scale } => {
                let gx: Vec<f64> = g.iter().map(|v| v * scale).collect();
                accumulate(adj, *x, &gx);
            }
            Op::Clamp { x, lo, hi } => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(data(*x))
                    .map(|(g, v)| if v < lo || v > hi { 0.0 } else { *g })
                    .collect();
                accumulate(adj, *x, &gx);
            }
            Op::Scale { s, x } => {
                let (_, cols) = rows_cols(shape(*x));
                let (sd, xd) = (data(*s), data(*x));
                let ns = sd.len();
                let mut gs = vec![0.0; ns];
                let mut gx = vec![0.0; g.len()];
                for (r, (grow, xrow)) in g.chunks_exact(cols).zip(xd.chunks_exact(cols)).enumerate() {
                    let si = if ns == 1 { 0 } else { r };
                    let mut dot = 0.0;
                    for j in 0..cols {
                        dot += grow[j] * xrow[j];
                        gx[r * cols + j] = grow[j] * sd[si];
                    }
                    gs[si] += dot;
                }
                accumulate(adj, *s, &gs);
                accumulate(adj, *x, &gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, d) = rows_cols(shape(*x));
                let gd = data(*gain);
                let mut gx = vec![0.0; rows * d];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        ggain[j] += gr[j] * xr[j];
                        gbias[j] += gr[j];
                        let dxh = gr[j] * gd[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xr[j];
                    }
                    let k = inv_std[r] / d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gd[j];
                        gx[r * d + j] = k * (d as f64 * dxh - sum_dxh - xr[j] * sum_dxh_xh);
                    }
                }
                accumulate(adj, *x, &gx);
                accumulate(adj, *gain, &ggain);
                accumulate(adj, *bias, &gbias);
            }
            Op::Concat(a, b) => {
                let (rows, ca) = rows_cols(shape(*a));
                let (_, cb) = rows_cols(shape(*b));
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for row in g.chunks_exact(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::LogSoftmax(x) => {
                let (_, cols) = rows_cols(shape(*x));
                let mut gx = vec![0.0; g.len()];
                for (r, (grow, lrow)) in g.chunks_exact(cols).zip(node.data.chunks_exact(cols)).enumerate() {
                    let total: f64 = grow.iter().sum();
                    for j in 0..cols {
                        gx[r * cols + j] = grow[j] - lrow[j].exp() * total;
                    }
                }
                accumulate(adj, *x, &gx);
            }
            Op::Gather { x, idx } => {
                let (_, cols) = rows_cols(shape(*x));
                let mut gx = vec![0.0; data(*x).len()];
                for (r, &i) in idx.iter().enumerate() {
                    gx[r * cols + i] += g[r];
                }
                accumulate(adj, *x, &gx);
            }
            Op::Entropy(logp) => {
                // H = −Σ e^l·l, dH/dl_j = −e^l_j (l_j + 1)
                let (_, cols) = rows_cols(shape(*logp));
                let ld = data(*logp);
                let mut gl = vec![0.0; ld.len()];
                for (r, row) in ld.chunks_exact(cols).enumerate() {
                    for j in 0..cols {
                        gl[r * cols + j] = -g[r] * row[j].exp() * (row[j] + 1.0);
                    }
                }
                accumulate(adj, *logp, &gl);
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; data(*x).len()];
                accumulate(adj, *x, &gx);
            }
            Op::Mean(x) => {
                let n = data(*x).len();
                let gx = vec![g[0] / n as f64; n];
                accumulate(adj, *x, &gx);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Value, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Returns `(G·Bᵀ, Aᵀ·G)`.
fn matmul_backward(g: &[f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; m * k];
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            let aip = a[i * k + p];
            if aip != 0.0 {
                let dbrow = &mut db[p * n..(p + 1) * n];
                for (d, gv) in dbrow.iter_mut().zip(grow) {
                    *d += aip * gv;
                }
            }
        }
    }
    (da, db)
}
