//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters are pulled
//! in lazily from a [`ParamSet`]; [`Graph::backward`] returns gradients keyed
//! by [`ParamId`].

use ndarray::{s, Array2, Axis};

use super::params::{Grads, ParamId, ParamSet};

pub type Mat = Array2<f64>;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SelectSum(Var, Vec<(usize, usize)>),
    MaxPoolRows(Var, Vec<usize>),
    Unfold { x: Var, kernel: usize, pad_left: usize },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    /// Scalar whose gradient w.r.t. its input was computed alongside the value.
    Fused(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn row_sums(m: &Mat) -> Mat {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        debug_assert!(
            value.iter().all(|v| !v.is_nan()),
            "NaN produced on tape at node {}",
            self.nodes.len()
        );
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Mat::zeros((rows, cols)))
    }

    /// Brings a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a` (n×m) plus a 1×m row broadcast over every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Output row `k` is input row `idx[k]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let cols = src.ncols();
        let mut v = Mat::zeros((idx.len(), cols));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&src.row(i));
        }
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Repeats a 1×m row `n` times.
    pub fn broadcast_row(&mut self, row: Var, n: usize) -> Var {
        self.gather_rows(row, &vec![0; n])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Mat::from_elem((1, 1), m.sum() / m.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Sum of the selected `(row, col)` entries, as a 1×1 scalar.
    pub fn select_sum(&mut self, a: Var, idx: &[(usize, usize)]) -> Var {
        let m = self.value(a);
        let total: f64 = idx.iter().map(|&(r, c)| m[[r, c]]).sum();
        self.push(Mat::from_elem((1, 1), total), Op::SelectSum(a, idx.to_vec()))
    }

    /// Max over time windows of `width` rows advancing by `stride`.
    /// The output has `ceil(rows / stride)` rows; trailing windows are truncated.
    pub fn max_pool_rows(&mut self, a: Var, width: usize, stride: usize) -> Var {
        let m = self.value(a);
        let (rows, cols) = m.dim();
        let out_rows = rows.div_ceil(stride);
        let mut v = Mat::zeros((out_rows, cols));
        let mut arg = vec![0usize; out_rows * cols];
        for k in 0..out_rows {
            let start = k * stride;
            let end = (start + width).min(rows);
            for c in 0..cols {
                let mut best = start;
                for r in start + 1..end {
                    if m[[r, c]] > m[[best, c]] {
                        best = r;
                    }
                }
                v[[k, c]] = m[[best, c]];
                arg[k * cols + c] = best;
            }
        }
        self.push(v, Op::MaxPoolRows(a, arg))
    }

    /// Stacks `kernel` time-shifted copies of `x` side by side (zero padded),
    /// turning a 1-D convolution over rows into a single matmul.
    pub fn unfold(&mut self, x: Var, kernel: usize, pad_left: usize) -> Var {
        let m = self.value(x);
        let (rows, cols) = m.dim();
        let mut v = Mat::zeros((rows, kernel * cols));
        for t in 0..rows {
            for j in 0..kernel {
                let src = t as isize + j as isize - pad_left as isize;
                if src >= 0 && (src as usize) < rows {
                    v.slice_mut(s![t, j * cols..(j + 1) * cols])
                        .assign(&m.row(src as usize));
                }
            }
        }
        self.push(v, Op::Unfold { x, kernel, pad_left })
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let m = self.value(x);
        let (rows, cols) = m.dim();
        let mut v = Mat::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = m.row(r);
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                v[[r, c]] = (row[c] - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(v, Op::LayerNorm { x, inv_std })
    }

    /// Scalar node with a caller-supplied gradient w.r.t. `input`.
    pub fn fused_scalar(&mut self, input: Var, value: f64, grad: Mat) -> Var {
        assert_eq!(grad.dim(), self.shape(input));
        self.push(Mat::from_elem((1, 1), value), Op::Fused(input, grad))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = Grads::zeros_like(self.params);

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, r) => {
                    acc(&mut grads, *r, row_sums(&g));
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulRow(a, r) => {
                    let ga = &g * self.value(*r);
                    let gr = row_sums(&(&g * self.value(*a)));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *r, gr);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = &g * &node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &y| {
                            if y <= 0.0 {
                                *d = 0.0
                            }
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &node.value),
                Op::Square(a) => acc(&mut grads, *a, &g * self.value(*a) * 2.0),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = y * &(&g - &dot);
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let p = node.value.mapv(f64::exp);
                    let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &g - &(&p * &gs);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        acc(&mut grads, *p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        acc(&mut grads, *p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    let n = g.nrows();
                    ga.slice_mut(s![*start..*start + n, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    let n = g.ncols();
                    ga.slice_mut(s![.., *start..*start + n]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    for (k, &r) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => acc(&mut grads, *a, Mat::from_elem(self.shape(*a), g[[0, 0]])),
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let n = (shape.0 * shape.1) as f64;
                    acc(&mut grads, *a, Mat::from_elem(shape, g[[0, 0]] / n));
                }
                Op::SelectSum(a, idx) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    for &(r, c) in idx {
                        ga[[r, c]] += g[[0, 0]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaxPoolRows(a, arg) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    let cols = g.ncols();
                    for k in 0..g.nrows() {
                        for c in 0..cols {
                            ga[[arg[k * cols + c], c]] += g[[k, c]];
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Unfold { x, kernel, pad_left } => {
                    let (rows, cols) = self.shape(*x);
                    let mut ga = Mat::zeros((rows, cols));
                    for t in 0..rows {
                        for j in 0..*kernel {
                            let src = t as isize + j as isize - *pad_left as isize;
                            if src >= 0 && (src as usize) < rows {
                                let mut dst = ga.row_mut(src as usize);
                                dst += &g.slice(s![t, j * cols..(j + 1) * cols]);
                            }
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let cols = y.ncols() as f64;
                    let mut ga = Mat::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.sum() / cols;
                        let mean_gy = gr.dot(&yr) / cols;
                        for c in 0..y.ncols() {
                            ga[[r, c]] = inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::Fused(a, d) => acc(&mut grads, *a, d * g[[0, 0]]),
            }
        }
        out
    }
}

pub fn softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    out
}

pub fn log_softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}
