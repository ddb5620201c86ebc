//! A small reverse-mode automatic differentiation tape over row-major
//! matrices.
//!
//! Every value on the tape is a 2-D matrix; row vectors are `1 x n` and
//! scalars are `1 x 1`. Parameters are recorded as borrowed leaves so a
//! forward pass never copies weights.

use std::borrow::Cow;

use ndarray::{s, Array2, Axis};

use crate::scalar::Scalar;

pub type Mat<T> = Array2<T>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    Abs(Var),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    SumAll(Var),
    Nll(Var, Vec<usize>),
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Mat<T>>,
    op: Op<T>,
}

/// Records a computation so that gradients can be pulled back from a
/// scalar output.
pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned input leaf.
    pub fn input(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Borrowed leaf, used for parameters.
    pub fn borrowed(&mut self, value: &'p Mat<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.input(Mat::zeros((rows, cols)))
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// `a (n x m) + b (1 x m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(b).0, 1);
        let out = self.value(a) + self.value(b);
        self.push(out, Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) / self.value(b);
        self.push(out, Op::Div(a, b))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let out = self.value(a).mapv(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: T) -> Var {
        self.affine(a, scale, T::zero())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(T::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(T::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(T::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        self.push(out, Op::LogSoftmax(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: col mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start, len))
    }

    /// Selects (and possibly repeats) rows of `a`; the embedding lookup.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), rows);
        self.push(out, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.gather_rows(a, &[i])
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::of(v.nrows() as f64);
        let out = v.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
        self.push(out, Op::MeanRows(a))
    }

    /// Column-wise maximum. Ties resolve to the first row, which is also
    /// the row that receives the (sub)gradient.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let cols = v.ncols();
        let mut arg = vec![0usize; cols];
        let mut out = Mat::zeros((1, cols));
        for c in 0..cols {
            let mut best = v[[0, c]];
            for r in 1..v.nrows() {
                if v[[r, c]] > best {
                    best = v[[r, c]];
                    arg[c] = r;
                }
            }
            out[[0, c]] = best;
        }
        self.push(out, Op::MaxRows(a, arg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Mat::from_elem((1, 1), total), Op::SumAll(a))
    }

    /// Mean negative log-likelihood of `targets` (one per row) under the
    /// row-wise softmax of `logits`.
    pub fn nll(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lp = log_softmax_rows(self.value(logits));
        assert_eq!(lp.nrows(), targets.len(), "nll: one target per row");
        let n = T::of(targets.len() as f64);
        let total = targets
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (r, &t)| acc - lp[[r, t]]);
        self.push(Mat::from_elem((1, 1), total / n), Op::Nll(logits, targets.to_vec()))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Mat::from_elem((1, 1), T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let node = &self.nodes[idx];
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(grads, *a, g.dot(&bv.t()));
                accumulate(grads, *b, av.t().dot(g));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g * self.value(*b));
                accumulate(grads, *b, g * self.value(*a));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                accumulate(grads, *a, g / bv);
                // d(a/b)/db = -(a/b)/b
                accumulate(grads, *b, -(g * y) / bv);
            }
            Op::Affine(a, scale) => {
                let scale = *scale;
                accumulate(grads, *a, g.mapv(|x| x * scale));
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                d.zip_mut_with(y, |d, &s| *d = *d * s * (T::one() - s));
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                d.zip_mut_with(y, |d, &t| *d = *d * (T::one() - t * t));
                accumulate(grads, *a, d);
            }
            Op::Sqrt(a) => {
                let two = T::of(2.0);
                let mut d = g.clone();
                d.zip_mut_with(y, |d, &r| *d = *d / (two * r));
                accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*a), |d, &x| {
                    *d = if x > T::zero() {
                        *d
                    } else if x < T::zero() {
                        -*d
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let dot = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = y * &(g - &dot);
                accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                let p = y.mapv(T::exp);
                let d = g - &(p * &gsum);
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    accumulate(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    accumulate(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceCols(a, start, len) => {
                let mut d = Mat::zeros(self.shape(*a));
                d.slice_mut(s![.., *start..*start + *len]).assign(g);
                accumulate(grads, *a, d);
            }
            Op::GatherRows(a, rows) => {
                let mut d = Mat::zeros(self.shape(*a));
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(i);
                }
                accumulate(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let (n, m) = self.shape(*a);
                let inv = T::one() / T::of(n as f64);
                let row = g.mapv(|x| x * inv);
                let d = row.broadcast((n, m)).expect("mean_rows broadcast").to_owned();
                accumulate(grads, *a, d);
            }
            Op::MaxRows(a, arg) => {
                let mut d = Mat::zeros(self.shape(*a));
                for (c, &r) in arg.iter().enumerate() {
                    d[[r, c]] = g[[0, c]];
                }
                accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let d = Mat::from_elem(self.shape(*a), g[[0, 0]]);
                accumulate(grads, *a, d);
            }
            Op::Nll(logits, targets) => {
                let mut d = softmax_rows(self.value(*logits));
                let scale = g[[0, 0]] / T::of(targets.len() as f64);
                for (r, &t) in targets.iter().enumerate() {
                    d[[r, t]] -= T::one();
                }
                d.mapv_inplace(|x| x * scale);
                accumulate(grads, *logits, d);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the output with respect to `v`, if `v` influenced it.
    pub fn wrt(&self, v: Var) -> Option<&Mat<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn wrt_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat<T> {
        self.wrt(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_rows<T: Scalar>(a: &Mat<T>) -> Mat<T> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

pub fn log_softmax_rows<T: Scalar>(a: &Mat<T>) -> Mat<T> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &x| m.max(x));
        let lse = row.fold(T::zero(), |acc, &x| acc + (x - max).exp()).ln() + max;
        row.mapv_inplace(|x| x - lse);
    }
    out
}
