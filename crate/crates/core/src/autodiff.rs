//! A small reverse-mode differentiation tape over dense `f64` matrices.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Vectors are `1 x n`
//! matrices and scalars are `1 x 1`.

use ndarray::{concatenate, s, Array2, Axis};

pub type Matrix = Array2<f64>;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulTransB(Var, Var),
    Add(Var, Var),
    /// `a + row`, the `1 x c` row broadcast over every row of `a`.
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LogSigmoid(Var),
    Log(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    MeanRows(Var),
    BroadcastRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulTransB(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) * self.value(row);
        self.push(value, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(log_sigmoid);
        self.push(value, Op::LogSigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Log(a))
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let total = row.sum();
            row /= total;
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Zero-mean, unit-variance normalization of each row (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.fold(0.0, |acc, &x| acc + (x - mean) * (x - mean)) / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(value, Op::LayerNormRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        self.push(value, Op::SelectRows(a, rows.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_axis(Axis(0)).expect("mean_rows of empty matrix").insert_axis(Axis(0));
        self.push(value, Op::MeanRows(a))
    }

    /// Repeat a `1 x c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let row = self.value(a);
        let value = row.broadcast((rows, row.ncols())).expect("broadcast_rows needs 1 x c").to_owned();
        self.push(value, Op::BroadcastRows(a))
    }

    /// Adjoints of `root` (a `1 x 1` node) with respect to every node.
    pub fn backward(&self, root: Var) -> Adjoints {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulTransB(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulRow(a, row) => {
                    let ga = &g * self.value(*row);
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *row, gr);
                }
                Op::Scale(a, factor) => accumulate(&mut grads, *a, g * *factor),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = &g * &y.mapv(|v| v * (1.0 - v));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = &g * &y.mapv(|v| 1.0 - v * v);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSigmoid(a) => {
                    let ga = &g * &self.value(*a).mapv(|x| sigmoid(-x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = &g / self.value(*a);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut out, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = out.sum();
                        out.zip_mut_with(&yrow, |o, &yv| *o -= dot * yv);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNormRows(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.dim());
                    for r in 0..g.nrows() {
                        let n = x.ncols() as f64;
                        let mean = x.row(r).sum() / n;
                        let var = x.row(r).fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let g_mean = g.row(r).sum() / n;
                        let gy_mean = g.row(r).dot(&y.row(r)) / n;
                        for c in 0..g.ncols() {
                            ga[[r, c]] = inv * (g[[r, c]] - g_mean - y[[r, c]] * gy_mean);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let width = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., start..start + width]).to_owned());
                        start += width;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).dim();
                    let slot = grads[a.0].get_or_insert_with(|| Matrix::zeros((rows, cols)));
                    let mut target = slot.slice_mut(s![.., *start..*start + g.ncols()]);
                    target += &g;
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let height = self.value(p).nrows();
                        accumulate(&mut grads, p, g.slice(s![start..start + height, ..]).to_owned());
                        start += height;
                    }
                }
                Op::SelectRows(a, rows) => {
                    let dim = self.value(*a).dim();
                    let slot = grads[a.0].get_or_insert_with(|| Matrix::zeros(dim));
                    for (k, &r) in rows.iter().enumerate() {
                        let mut target = slot.row_mut(r);
                        target += &g.row(k);
                    }
                }
                Op::Sum(a) => {
                    let dim = self.value(*a).dim();
                    accumulate(&mut grads, *a, Matrix::from_elem(dim, g[[0, 0]]));
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).dim();
                    let ga = g.broadcast((rows, cols)).unwrap().mapv(|v| v / rows as f64);
                    accumulate(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    accumulate(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
        }
        Adjoints { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Adjoints of the input nodes produced by [`Tape::backward`]. Intermediate
/// adjoints are released during the sweep.
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Matrix>>,
}

impl Adjoints {
    /// `None` when `v` is not an input or the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
