//! Define-by-run reverse-mode differentiation over dense row-major matrices.
//!
//! Every op evaluates eagerly when it is recorded, so a [`Graph`] doubles as
//! the inference path: rollouts build a graph and never call
//! [`Graph::backward`]. Per-row results never depend on the other rows of a
//! batch (matmul accumulates over the inner dimension in ascending order), so
//! a row computed alone is bitwise identical to the same row computed inside
//! a larger batch.

use crate::scalar::{log_logistic, logistic, Scalar};

use super::params::{ParamGrads, ParamId, ParamStore};
use super::TensorError;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn column(data: Vec<T>) -> Self {
        Matrix { rows: data.len(), cols: 1, data }
    }

    pub fn scalar(x: T) -> Self {
        Matrix { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Matrix<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One term of [`Graph::combine_rows`]: `out[dst] += coef * input[src]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowTerm<T> {
    pub src: usize,
    pub dst: usize,
    pub coef: T,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Logistic(Var),
    LogLogistic(Var),
    Exp(Var),
    Square(Var),
    Clip(Var, T, T),
    Mean(Var),
    Sum(Var),
    Gather(Var, Vec<usize>),
    Embedding(Var, Vec<usize>),
    Concat(Vec<Var>),
    CombineRows(Var, Vec<RowTerm<T>>),
    LogSoftmax(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
}

/// Recorded computation. Nodes are appended in evaluation order, which is a
/// topological order by construction.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn check_finite<T: Scalar>(op: &'static str, m: &Matrix<T>) -> Result<(), TensorError> {
    if m.data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFiniteInput(op))
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<(), TensorError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch { op, left: a.shape(), right: b.shape() })
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Constant input (no gradient is propagated to a caller).
    pub fn input(&mut self, m: Matrix<T>) -> Result<Var, TensorError> {
        check_finite("input", &m)?;
        Ok(self.push(Op::Input, m))
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var, TensorError> {
        let p = store.get(id);
        let m = Matrix { rows: p.rows, cols: p.cols, data: p.values.clone() };
        check_finite("param", &m)?;
        Ok(self.push(Op::Param(id), m))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(TensorError::ShapeMismatch { op: "matmul", left: x.shape(), right: y.shape() });
        }
        let mut out = Matrix::zeros(x.rows, y.cols);
        for i in 0..x.rows {
            let orow = &mut out.data[i * y.cols..(i + 1) * y.cols];
            for k in 0..x.cols {
                let xik = x.data[i * x.cols + k];
                let yrow = &y.data[k * y.cols..(k + 1) * y.cols];
                for (o, w) in orow.iter_mut().zip(yrow) {
                    *o += xik * *w;
                }
            }
        }
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Elementwise sum of equal shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data.iter().zip(&y.data).map(|(p, q)| *p + *q).collect();
        let out = Matrix { rows: x.rows, cols: x.cols, data };
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a `1 x cols` row (a bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows != 1 || r.cols != x.cols {
            return Err(TensorError::ShapeMismatch { op: "add_row", left: x.shape(), right: r.shape() });
        }
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(x.cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r.data) {
                *o += *b;
            }
        }
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data.iter().zip(&y.data).map(|(p, q)| *p - *q).collect();
        let out = Matrix { rows: x.rows, cols: x.cols, data };
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data.iter().zip(&y.data).map(|(p, q)| *p * *q).collect();
        let out = Matrix { rows: x.rows, cols: x.cols, data };
        Ok(self.push(Op::Mul(a, b), out))
    }

    /// Elementwise minimum; the gradient goes to `a` on ties.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("minimum", x, y)?;
        let data = x.data.iter().zip(&y.data).map(|(p, q)| if *p <= *q { *p } else { *q }).collect();
        let out = Matrix { rows: x.rows, cols: x.cols, data };
        Ok(self.push(Op::Minimum(a, b), out))
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let x = self.value(a);
        let out = Matrix { rows: x.rows, cols: x.cols, data: x.data.iter().map(|v| f(*v)).collect() };
        self.push(op, out)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |v| v * c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), T::tanh)
    }

    pub fn logistic(&mut self, a: Var) -> Var {
        self.unary(a, Op::Logistic(a), logistic)
    }

    /// `log(logistic(a))`, evaluated stably.
    pub fn log_logistic(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogLogistic(a), log_logistic)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.unary(a, Op::Exp(a), T::exp);
        check_finite("exp", self.value(v))?;
        Ok(v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |v| v * v)
    }

    /// Clamps into `[lo, hi]`; zero gradient outside the interval.
    pub fn clip(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, Op::Clip(a, lo, hi), |v| v.max(lo).min(hi))
    }

    /// Mean of all elements, as a 1x1 node.
    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.data.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let s: T = x.data.iter().copied().sum();
        let out = Matrix::scalar(s / T::of_usize(x.data.len()));
        Ok(self.push(Op::Mean(a), out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data.iter().copied().sum();
        self.push(Op::Sum(a), Matrix::scalar(s))
    }

    /// Picks one column per row: `out[i, 0] = a[i, index[i]]`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if index.len() != x.rows {
            return Err(TensorError::ShapeMismatch { op: "gather", left: x.shape(), right: (index.len(), 1) });
        }
        if let Some(bad) = index.iter().find(|c| **c >= x.cols) {
            return Err(TensorError::IndexOutOfRange { op: "gather", index: *bad, bound: x.cols });
        }
        let data = index.iter().enumerate().map(|(i, c)| x.at(i, *c)).collect();
        let out = Matrix::column(data);
        Ok(self.push(Op::Gather(a, index), out))
    }

    /// Row lookup into a `vocab x dim` table.
    pub fn embedding(&mut self, table: Var, ids: Vec<usize>) -> Result<Var, TensorError> {
        let t = self.value(table);
        if let Some(bad) = ids.iter().find(|i| **i >= t.rows) {
            return Err(TensorError::IndexOutOfRange { op: "embedding", index: *bad, bound: t.rows });
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols);
        for i in &ids {
            data.extend_from_slice(t.row(*i));
        }
        let out = Matrix { rows: ids.len(), cols: t.cols, data };
        Ok(self.push(Op::Embedding(table, ids), out))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat"))?;
        let rows = self.value(*first).rows;
        for p in parts {
            let m = self.value(*p);
            if m.rows != rows {
                return Err(TensorError::ShapeMismatch { op: "concat", left: (rows, 0), right: m.shape() });
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Matrix { rows, cols, data };
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    /// Sparse linear map over rows: starts from `out_rows` zero rows and
    /// applies each term in order. Used for pooling, segment sums and the
    /// per-pair reward margins.
    pub fn combine_rows(&mut self, a: Var, out_rows: usize, terms: Vec<RowTerm<T>>) -> Result<Var, TensorError> {
        let x = self.value(a);
        let mut out = Matrix::zeros(out_rows, x.cols);
        for t in &terms {
            if t.src >= x.rows {
                return Err(TensorError::IndexOutOfRange { op: "combine_rows", index: t.src, bound: x.rows });
            }
            if t.dst >= out_rows {
                return Err(TensorError::IndexOutOfRange { op: "combine_rows", index: t.dst, bound: out_rows });
            }
            let src = &x.data[t.src * x.cols..(t.src + 1) * x.cols];
            let dst = &mut out.data[t.dst * x.cols..(t.dst + 1) * x.cols];
            for (o, v) in dst.iter_mut().zip(src) {
                *o += t.coef * *v;
            }
        }
        Ok(self.push(Op::CombineRows(a, terms), out))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols.max(1)) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|v| (*v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(Op::LogSoftmax(a), out)
    }

    /// Reverse sweep from a 1x1 loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let acc = |v: Var, d: Matrix<T>, grads: &mut Vec<Option<Matrix<T>>>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot => *slot = Some(d),
            };
            let map = |g: &Matrix<T>, f: &dyn Fn(usize, T) -> T| Matrix {
                rows: g.rows,
                cols: g.cols,
                data: g.data.iter().enumerate().map(|(i, d)| f(i, *d)).collect(),
            };
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    // dA = G * B^T
                    let mut da = Matrix::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        let grow = &g.data[i * y.cols..(i + 1) * y.cols];
                        for k in 0..x.cols {
                            let yrow = &y.data[k * y.cols..(k + 1) * y.cols];
                            let mut s = T::zero();
                            for (gv, yv) in grow.iter().zip(yrow) {
                                s += *gv * *yv;
                            }
                            da.data[i * x.cols + k] = s;
                        }
                    }
                    // dB = A^T * G
                    let mut db = Matrix::zeros(y.rows, y.cols);
                    for i in 0..x.rows {
                        let grow = &g.data[i * y.cols..(i + 1) * y.cols];
                        for k in 0..x.cols {
                            let xik = x.data[i * x.cols + k];
                            let drow = &mut db.data[k * y.cols..(k + 1) * y.cols];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += xik * *gv;
                            }
                        }
                    }
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.clone(), &mut grads);
                }
                Op::AddRow(a, r) => {
                    let cols = g.cols;
                    let mut dr = Matrix::zeros(1, cols);
                    for chunk in g.data.chunks(cols.max(1)) {
                        for (d, v) in dr.data.iter_mut().zip(chunk) {
                            *d += *v;
                        }
                    }
                    acc(*a, g.clone(), &mut grads);
                    acc(*r, dr, &mut grads);
                }
                Op::Sub(a, b) => {
                    let neg = map(&g, &|_, d| -d);
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, neg, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let da = map(&g, &|i, d| d * y.data[i]);
                    let db = map(&g, &|i, d| d * x.data[i]);
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Minimum(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let take_a = |i: usize| x.data[i] <= y.data[i];
                    let da = map(&g, &|i, d| if take_a(i) { d } else { T::zero() });
                    let db = map(&g, &|i, d| if take_a(i) { T::zero() } else { d });
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Scale(a, c) => acc(*a, map(&g, &|_, d| d * *c), &mut grads),
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, map(&g, &|i, d| d * (T::one() - y.data[i] * y.data[i])), &mut grads)
                }
                Op::Logistic(a) => {
                    let y = &node.value;
                    acc(*a, map(&g, &|i, d| d * y.data[i] * (T::one() - y.data[i])), &mut grads)
                }
                Op::LogLogistic(a) => {
                    // d/dz log σ(z) = σ(-z)
                    let x = self.value(*a);
                    acc(*a, map(&g, &|i, d| d * logistic(-x.data[i])), &mut grads)
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    acc(*a, map(&g, &|i, d| d * y.data[i]), &mut grads)
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    let two = T::of(2.0);
                    acc(*a, map(&g, &|i, d| d * two * x.data[i]), &mut grads)
                }
                Op::Clip(a, lo, hi) => {
                    let x = self.value(*a);
                    let inside = |v: T| v >= *lo && v <= *hi;
                    acc(*a, map(&g, &|i, d| if inside(x.data[i]) { d } else { T::zero() }), &mut grads)
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let d = g.data[0] / T::of_usize(x.data.len());
                    acc(*a, Matrix { rows: x.rows, cols: x.cols, data: vec![d; x.data.len()] }, &mut grads)
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    acc(*a, Matrix { rows: x.rows, cols: x.cols, data: vec![g.data[0]; x.data.len()] }, &mut grads)
                }
                Op::Gather(a, index) => {
                    let x = self.value(*a);
                    let mut da = Matrix::zeros(x.rows, x.cols);
                    for (i, c) in index.iter().enumerate() {
                        da.data[i * x.cols + c] += g.data[i];
                    }
                    acc(*a, da, &mut grads);
                }
                Op::Embedding(table, ids) => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (r, id) in ids.iter().enumerate() {
                        let src = &g.data[r * t.cols..(r + 1) * t.cols];
                        let dst = &mut dt.data[id * t.cols..(id + 1) * t.cols];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += *v;
                        }
                    }
                    acc(*table, dt, &mut grads);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let m = self.value(*p);
                        let mut dp = Matrix::zeros(m.rows, m.cols);
                        for r in 0..m.rows {
                            let src = &g.data[r * g.cols + offset..r * g.cols + offset + m.cols];
                            dp.data[r * m.cols..(r + 1) * m.cols].copy_from_slice(src);
                        }
                        offset += m.cols;
                        acc(*p, dp, &mut grads);
                    }
                }
                Op::CombineRows(a, terms) => {
                    let x = self.value(*a);
                    let mut da = Matrix::zeros(x.rows, x.cols);
                    for t in terms {
                        let src = &g.data[t.dst * x.cols..(t.dst + 1) * x.cols];
                        let dst = &mut da.data[t.src * x.cols..(t.src + 1) * x.cols];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += t.coef * *v;
                        }
                    }
                    acc(*a, da, &mut grads);
                }
                Op::LogSoftmax(a) => {
                    // dx = g - softmax * rowsum(g)
                    let y = &node.value;
                    let cols = y.cols.max(1);
                    let mut da = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let grow = &g.data[r * cols..(r + 1) * cols];
                        let yrow = &y.data[r * cols..(r + 1) * cols];
                        let gs: T = grow.iter().copied().sum();
                        for c in 0..cols {
                            da.data[r * cols + c] = grow[c] - yrow[c].exp() * gs;
                        }
                    }
                    acc(*a, da, &mut grads);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Sums node gradients into per-parameter gradients. A parameter used by
    /// several leaf nodes receives the total.
    pub fn param_grads(&self, store: &ParamStore<T>, grads: &Gradients<T>) -> ParamGrads<T> {
        let mut out = ParamGrads::zeros_like(store);
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_ref()) {
                for (o, v) in out.get_mut(*id).iter_mut().zip(&g.data) {
                    *o += *v;
                }
            }
        }
        out
    }
}
