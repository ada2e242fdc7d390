//! Dense `f64` matrices, a named parameter store and a reverse-mode tape.
//!
//! Every forward pass records its operations on a [`Graph`]. Parameters are
//! referenced from the graph rather than copied, and [`Graph::backward`]
//! returns one gradient matrix per trainable parameter that took part in the
//! computation.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Matrix { rows: 1, cols, data }
    }

    pub fn scalar(value: f64) -> Self {
        Matrix::from_vec(1, 1, vec![value])
    }

    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Scalar value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                out.data[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

/// Named model tensors, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            trainable: true,
        });
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    /// Sets the trainable flag on every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalars in parameters matching `prefix`.
    pub fn count_scalars(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn trainable_ids(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable && p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Param(ParamId),
    Owned(Matrix),
}

enum Op {
    Constant,
    Param(ParamId),
    Gather { src: Var, rows: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    SliceCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Nll { probs: Var, targets: Vec<usize>, eps: f64 },
    Bce { probs: Var, targets: Matrix, eps: f64 },
    Sum(Vec<Var>),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// A recorded forward computation over a borrowed [`ParamStore`].
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Param(id) => self.store.get(*id),
            Value::Owned(m) => m,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.requires(v));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: self.store.is_trainable(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Selects rows of `src` (with repetition allowed).
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Var {
        let m = self.value(src);
        let mut out = Matrix::zeros(rows.len(), m.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(m.row(r));
        }
        self.push(out, Op::Gather { src, rows: rows.to_vec() }, &[src])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`; with `b` a weight matrix stored as `out x in` this is a linear map.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        assert_eq!(b.cols(), self.value(a).cols(), "bias width");
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias), &[a, bias])
    }

    /// `x W^T + b` for a weight stored as `out x in` and a `1 x out` bias.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let h = self.matmul_t(x, weight);
        self.add_row(h, bias)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a), &[a])
    }

    /// Row-wise layer normalisation with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let m = self.value(src);
        assert!(start + len <= m.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(m.rows(), len);
        for r in 0..m.rows() {
            out.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { src, start }, &[src])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let out = Matrix::from_vec(rows, cols, data);
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols());
        for r in 0..m.rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(m.row(r)) {
                *o += v;
            }
        }
        let n = m.rows() as f64;
        let out = out.map(|v| v / n);
        self.push(out, Op::MeanRows(a), &[a])
    }

    /// Mean negative log-probability of `targets[i]` in row `i` of `probs`;
    /// probabilities are clamped to `eps` before the log.
    pub fn nll(&mut self, probs: Var, targets: &[usize], eps: f64) -> Var {
        let p = self.value(probs);
        assert_eq!(p.rows(), targets.len(), "nll target count");
        let n = targets.len() as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -p.get(i, t).max(eps).ln())
            .sum::<f64>()
            / n;
        self.push(
            Matrix::scalar(loss),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                eps,
            },
            &[probs],
        )
    }

    /// Mean binary cross-entropy over all entries; clamped like [`Graph::nll`].
    pub fn bce(&mut self, probs: Var, targets: Matrix, eps: f64) -> Var {
        let p = self.value(probs);
        assert_eq!(p.shape(), targets.shape(), "bce target shape");
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &y)| -(y * p.max(eps).ln() + (1.0 - y) * (1.0 - p).max(eps).ln()))
            .sum::<f64>()
            / n;
        self.push(Matrix::scalar(loss), Op::Bce { probs, targets, eps }, &[probs])
    }

    /// Sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(out, Op::Sum(parts.to_vec()), parts)
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Matrix>> = (0..self.store.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            let out = match &node.value {
                Value::Owned(m) => m,
                Value::Param(id) => self.store.get(*id),
            };
            let send = |v: Var, g: Matrix, grads: &mut Vec<Option<Matrix>>| {
                if self.requires(v) {
                    accumulate(&mut grads[v.0], g);
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => accumulate(&mut param_grads[id.0], grad),
                Op::Gather { src, rows } => {
                    if !self.requires(*src) {
                        continue;
                    }
                    let (src_rows, cols) = self.shape(*src);
                    // embedding lookups go straight into the parameter gradient
                    let target = match self.nodes[src.0].op {
                        Op::Param(id) => &mut param_grads[id.0],
                        _ => &mut grads[src.0],
                    };
                    let acc = target.get_or_insert_with(|| Matrix::zeros(src_rows, cols));
                    for (i, &r) in rows.iter().enumerate() {
                        for (a, g) in acc.row_mut(r).iter_mut().zip(grad.row(i)) {
                            *a += g;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.requires(*a) {
                        send(*a, grad.matmul_t(self.value(*b)), &mut grads);
                    }
                    if self.requires(*b) {
                        send(*b, self.value(*a).t_matmul(&grad), &mut grads);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.requires(*a) {
                        send(*a, grad.matmul(self.value(*b)), &mut grads);
                    }
                    if self.requires(*b) {
                        send(*b, grad.t_matmul(self.value(*a)), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, grad.clone(), &mut grads);
                    send(*b, grad, &mut grads);
                }
                Op::AddRow(a, bias) => {
                    if self.requires(*bias) {
                        let mut gb = Matrix::zeros(1, grad.cols());
                        for r in 0..grad.rows() {
                            for (o, g) in gb.row_mut(0).iter_mut().zip(grad.row(r)) {
                                *o += g;
                            }
                        }
                        send(*bias, gb, &mut grads);
                    }
                    send(*a, grad, &mut grads);
                }
                Op::Scale(a, s) => send(*a, grad.map(|g| g * s), &mut grads),
                Op::Softmax(a) => {
                    let mut gx = Matrix::zeros(grad.rows(), grad.cols());
                    for r in 0..grad.rows() {
                        let y = out.row(r);
                        let dy = grad.row(r);
                        let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = y[c] * (dy[c] - dot);
                        }
                    }
                    send(*a, gx, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let mut gx = grad;
                    for (g, y) in gx.data_mut().iter_mut().zip(out.data()) {
                        *g *= y * (1.0 - y);
                    }
                    send(*a, gx, &mut grads);
                }
                Op::Tanh(a) => {
                    let mut gx = grad;
                    for (g, y) in gx.data_mut().iter_mut().zip(out.data()) {
                        *g *= 1.0 - y * y;
                    }
                    send(*a, gx, &mut grads);
                }
                Op::Gelu(a) => {
                    let mut gx = grad;
                    for (g, x) in gx.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *g *= gelu_grad(*x);
                    }
                    send(*a, gx, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = grad.shape();
                    let g = self.value(*gamma).data();
                    if self.requires(*gamma) || self.requires(*beta) {
                        let mut gg = Matrix::zeros(1, cols);
                        let mut gbeta = Matrix::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                gg.data_mut()[c] += grad.get(r, c) * xhat.get(r, c);
                                gbeta.data_mut()[c] += grad.get(r, c);
                            }
                        }
                        send(*gamma, gg, &mut grads);
                        send(*beta, gbeta, &mut grads);
                    }
                    if self.requires(*x) {
                        let n = cols as f64;
                        let mut gx = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            let dxhat: Vec<f64> = (0..cols).map(|c| grad.get(r, c) * g[c]).collect();
                            let sum: f64 = dxhat.iter().sum();
                            let dot: f64 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                            for c in 0..cols {
                                let v = inv_std[r] / n * (n * dxhat[c] - sum - xhat.get(r, c) * dot);
                                gx.set(r, c, v);
                            }
                        }
                        send(*x, gx, &mut grads);
                    }
                }
                Op::SliceCols { src, start } => {
                    let (rows, cols) = self.shape(*src);
                    let mut gx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        gx.row_mut(r)[*start..*start + grad.cols()].copy_from_slice(grad.row(r));
                    }
                    send(*src, gx, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.shape(p);
                        if self.requires(p) {
                            let mut gp = Matrix::zeros(rows, cols);
                            for r in 0..rows {
                                gp.row_mut(r).copy_from_slice(&grad.row(r)[offset..offset + cols]);
                            }
                            send(p, gp, &mut grads);
                        }
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.shape(p);
                        if self.requires(p) {
                            let data = grad.data()[offset * cols..(offset + rows) * cols].to_vec();
                            send(p, Matrix::from_vec(rows, cols, data), &mut grads);
                        }
                        offset += rows;
                    }
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let mut gx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        for (o, g) in gx.row_mut(r).iter_mut().zip(grad.row(0)) {
                            *o = g / rows as f64;
                        }
                    }
                    send(*a, gx, &mut grads);
                }
                Op::Nll { probs, targets, eps } => {
                    let p = self.value(*probs);
                    let scale = grad.item() / targets.len() as f64;
                    let mut gx = Matrix::zeros(p.rows(), p.cols());
                    for (i, &t) in targets.iter().enumerate() {
                        let v = p.get(i, t);
                        if v > *eps {
                            gx.set(i, t, -scale / v);
                        }
                    }
                    send(*probs, gx, &mut grads);
                }
                Op::Bce { probs, targets, eps } => {
                    let p = self.value(*probs);
                    let scale = grad.item() / p.len() as f64;
                    let mut gx = Matrix::zeros(p.rows(), p.cols());
                    for ((g, &pv), &y) in gx.data_mut().iter_mut().zip(p.data()).zip(targets.data()) {
                        let mut d = 0.0;
                        if pv > *eps {
                            d -= y / pv;
                        }
                        if 1.0 - pv > *eps {
                            d += (1.0 - y) / (1.0 - pv);
                        }
                        *g = scale * d;
                    }
                    send(*probs, gx, &mut grads);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        send(p, grad.clone(), &mut grads);
                    }
                }
            }
        }
        Gradients { grads: param_grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` w.r.t. every entry of parameter `id`.
    fn numeric_grad(store: &mut ParamStore, id: ParamId, f: &dyn Fn(&ParamStore) -> f64) -> Matrix {
        let eps = 1e-5;
        let (r, c) = store.get(id).shape();
        let mut out = Matrix::zeros(r, c);
        for i in 0..r * c {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = f(store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = f(store);
            store.get_mut(id).data_mut()[i] = orig;
            out.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        out
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.norm().max(b.norm()).max(1e-12);
        assert!(diff / scale < tol, "rel err {} ({a:?} vs {b:?})", diff / scale);
    }

    fn check(store: &mut ParamStore, f: &dyn Fn(&mut Graph) -> Var) {
        let ids: Vec<ParamId> = store.ids().collect();
        let analytic = {
            let mut g = Graph::new(store);
            let loss = f(&mut g);
            g.backward(loss)
        };
        let eval = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let loss = f(&mut g);
            g.value(loss).item()
        };
        for id in ids {
            let numeric = numeric_grad(store, id, &eval);
            let a = analytic.get(id).cloned().unwrap_or_else(|| Matrix::zeros(numeric.rows(), numeric.cols()));
            assert_close(&a, &numeric, 1e-6);
        }
    }

    fn store_with(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for &(name, r, c) in shapes {
            s.add(name, Matrix::randn(r, c, 0.7, &mut rng));
        }
        s
    }

    #[test]
    fn matrix_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::randn(3, 4, 1.0, &mut rng);
        let b = Matrix::randn(5, 4, 1.0, &mut rng);
        assert_close(&a.matmul_t(&b), &a.matmul(&b.transpose()), 1e-12);
        let c = Matrix::randn(3, 2, 1.0, &mut rng);
        assert_close(&a.t_matmul(&c), &a.transpose().matmul(&c), 1e-12);
    }

    #[test]
    fn linear_softmax_nll_gradients() {
        let mut s = store_with(&[("x", 4, 3), ("w", 5, 3), ("b", 1, 5)], 2);
        check(&mut s, &|g| {
            let st = g.store();
            let (x, w, b) = (g.param(st.id("x").unwrap()), g.param(st.id("w").unwrap()), g.param(st.id("b").unwrap()));
            let h = g.linear(x, w, b);
            let p = g.softmax_rows(h);
            g.nll(p, &[0, 4, 2, 2], 1e-12)
        });
    }

    #[test]
    fn layer_norm_gelu_tanh_gradients() {
        let mut s = store_with(&[("x", 3, 4), ("g", 1, 4), ("b", 1, 4), ("w", 2, 4)], 3);
        check(&mut s, &|g| {
            let st = g.store();
            let x = g.param(st.id("x").unwrap());
            let gm = g.param(st.id("g").unwrap());
            let bt = g.param(st.id("b").unwrap());
            let w = g.param(st.id("w").unwrap());
            let y = g.layer_norm(x, gm, bt, 1e-5);
            let y = g.gelu(y);
            let z = g.matmul_t(y, w);
            let z = g.tanh(z);
            let p = g.sigmoid(z);
            let t = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]]);
            g.bce(p, t, 1e-12)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut s = store_with(&[("e", 6, 4), ("v", 1, 2)], 4);
        check(&mut s, &|g| {
            let st = g.store();
            let e = g.param(st.id("e").unwrap());
            let v = g.param(st.id("v").unwrap());
            let rows = g.gather_rows(e, &[1, 3, 1]);
            let left = g.slice_cols(rows, 0, 2);
            let right = g.slice_cols(rows, 2, 2);
            let shifted = g.add_row(right, v);
            let both = g.concat_cols(&[shifted, left]);
            let stacked = g.concat_rows(&[both, rows]);
            let m = g.mean_rows(stacked);
            let m2 = g.scale(m, 0.5);
            let sq = g.matmul_t(m2, m);
            let p = g.sigmoid(sq);
            let q = g.sum(&[p, sq]);
            let r = g.matmul(q, m);
            let r = g.add(r, m2);
            g.matmul_t(r, m2)
        });
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut s = store_with(&[("a.w", 2, 2), ("b.w", 2, 2)], 5);
        s.set_trainable("a.", false);
        let mut g = Graph::new(&s);
        let a = g.param(s.id("a.w").unwrap());
        let b = g.param(s.id("b.w").unwrap());
        let c = g.matmul(a, b);
        let m = g.mean_rows(c);
        let m = g.mean_rows(m);
        let p = g.sigmoid(m);
        let loss = g.bce(p, Matrix::zeros(1, 2), 1e-12);
        let grads = g.backward(loss);
        assert!(grads.get(s.id("a.w").unwrap()).is_none());
        assert!(grads.get(s.id("b.w").unwrap()).is_some());
    }

    #[test]
    fn clamped_log_is_finite() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let p = g.constant(Matrix::from_rows(&[vec![0.0, 1.0]]));
        let loss = g.nll(p, &[0], 1e-12);
        assert!((g.value(loss).item() - (-(1e-12f64).ln())).abs() < 1e-9);
        let loss = g.bce(p, Matrix::from_rows(&[vec![1.0, 0.0]]), 1e-12);
        assert!(g.value(loss).item().is_finite());
    }
}
