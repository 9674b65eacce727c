//! Matrix-valued reverse-mode differentiation.
//!
//! Every primitive appends a node to the [`Tape`]. Node indices are assigned in
//! creation order, so the tape is already topologically sorted and the backward
//! pass is a single reverse scan.

use crate::error::{GraceError, Result};
use crate::numerics::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// Adds a constant matrix of the same shape.
    AddConst(Var, Matrix),
    /// Adds a `1 x c` row vector to every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    /// Entrywise product with a constant mask.
    MaskMul(Var, Matrix),
    Powf(Var, f64),
    /// `out_ij = v_i * a_ij` with `v` a column vector.
    ScaleRows(Var, Var),
    /// `out_ij = a_ij * v_j` with `v` a column vector.
    ScaleCols(Var, Var),
    /// Column vector of row sums.
    RowSums(Var),
    /// Row vector of column means.
    MeanRows(Var),
    SoftmaxRows(Var),
    /// `log(max(a, floor))`.
    LogFloor(Var, f64),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Recorded computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> GraceError {
    GraceError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Input or parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn add_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let value = self.value(a).add(&c)?;
        Ok(self.push(Op::AddConst(a, c), value))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = eval_add_row(self.value(a), self.value(row))?;
        Ok(self.push(Op::AddRow(a, row), value))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        self.push(Op::Scale(a, k), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), value)
    }

    pub fn mask_mul(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&mask)?;
        Ok(self.push(Op::MaskMul(a, mask), value))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|x| x.powf(p));
        self.push(Op::Powf(a, p), value)
    }

    pub fn scale_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        let value = eval_scale_rows(self.value(a), self.value(v))?;
        Ok(self.push(Op::ScaleRows(a, v), value))
    }

    pub fn scale_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        let value = eval_scale_cols(self.value(a), self.value(v))?;
        Ok(self.push(Op::ScaleCols(a, v), value))
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let value = eval_row_sums(self.value(a));
        self.push(Op::RowSums(a), value)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = eval_mean_rows(self.value(a));
        self.push(Op::MeanRows(a), value)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = eval_softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn log_floor(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|x| x.max(floor).ln());
        self.push(Op::LogFloor(a, floor), value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Recomputes every non-leaf node from the recorded leaves and ops.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut vals: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |x: &Var| &vals[x.0];
            let out = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::MatMul(a, b) => v(a).matmul(v(b))?,
                Op::Transpose(a) => v(a).transpose(),
                Op::Add(a, b) => v(a).add(v(b))?,
                Op::AddConst(a, c) => v(a).add(c)?,
                Op::AddRow(a, r) => eval_add_row(v(a), v(r))?,
                Op::Scale(a, k) => v(a).scale(*k),
                Op::Relu(a) => v(a).map(|x| x.max(0.0)),
                Op::Abs(a) => v(a).map(f64::abs),
                Op::MaskMul(a, m) => v(a).hadamard(m)?,
                Op::Powf(a, p) => v(a).map(|x| x.powf(*p)),
                Op::ScaleRows(a, s) => eval_scale_rows(v(a), v(s))?,
                Op::ScaleCols(a, s) => eval_scale_cols(v(a), v(s))?,
                Op::RowSums(a) => eval_row_sums(v(a)),
                Op::MeanRows(a) => eval_mean_rows(v(a)),
                Op::SoftmaxRows(a) => eval_softmax_rows(v(a)),
                Op::LogFloor(a, f) => v(a).map(|x| x.max(*f).ln()),
                Op::Sum(a) => Matrix::filled(1, 1, v(a).sum()),
            };
            vals.push(out);
        }
        Ok(vals)
    }

    /// Reverse pass from a `1 x 1` output. Visits each node once, in reverse creation order.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(GraceError::InvalidArgument(format!(
                "backward needs a scalar output, got {out_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose())?,
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::AddConst(a, _) => accumulate(&mut grads, *a, g.clone())?,
                Op::AddRow(a, r) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    let mut dr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, x) in dr.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *r, dr)?;
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.scale(*k))?,
                Op::Relu(a) => {
                    let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, g.hadamard(&mask)?)?;
                }
                Op::Abs(a) => {
                    // subgradient at zero is zero
                    let sign = self.value(*a).map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, g.hadamard(&sign)?)?;
                }
                Op::MaskMul(a, m) => accumulate(&mut grads, *a, g.hadamard(m)?)?,
                Op::Powf(a, p) => {
                    let deriv = self.value(*a).map(|x| p * x.powf(p - 1.0));
                    accumulate(&mut grads, *a, g.hadamard(&deriv)?)?;
                }
                Op::ScaleRows(a, s) => {
                    let av = self.value(*a);
                    let sv = self.value(*s);
                    accumulate(&mut grads, *a, eval_scale_rows(&g, sv)?)?;
                    let mut ds = Matrix::zeros(sv.rows(), 1);
                    for i in 0..av.rows() {
                        ds[(i, 0)] = g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum();
                    }
                    accumulate(&mut grads, *s, ds)?;
                }
                Op::ScaleCols(a, s) => {
                    let av = self.value(*a);
                    let sv = self.value(*s);
                    accumulate(&mut grads, *a, eval_scale_cols(&g, sv)?)?;
                    let mut ds = Matrix::zeros(sv.rows(), 1);
                    for i in 0..av.rows() {
                        for (j, (x, y)) in g.row(i).iter().zip(av.row(i)).enumerate() {
                            ds[(j, 0)] += x * y;
                        }
                    }
                    accumulate(&mut grads, *s, ds)?;
                }
                Op::RowSums(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut da = Matrix::zeros(r, c);
                    for i in 0..r {
                        da.row_mut(i).fill(g[(i, 0)]);
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut da = Matrix::zeros(r, c);
                    let inv = 1.0 / r as f64;
                    for i in 0..r {
                        for (d, x) in da.row_mut(i).iter_mut().zip(g.row(0)) {
                            *d = x * inv;
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(x, p)| x * p).sum();
                        for (j, d) in da.row_mut(i).iter_mut().enumerate() {
                            *d = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::LogFloor(a, f) => {
                    let deriv = self.value(*a).map(|x| if x > *f { 1.0 / x } else { 0.0 });
                    accumulate(&mut grads, *a, g.hadamard(&deriv)?)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g[(0, 0)]))?;
                }
            }
            // leaves keep their adjoint for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn eval_add_row(a: &Matrix, row: &Matrix) -> Result<Matrix> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(shape_err("add_row", a, row));
    }
    let mut out = a.clone();
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(row.as_slice()) {
            *o += b;
        }
    }
    Ok(out)
}

fn eval_scale_rows(a: &Matrix, v: &Matrix) -> Result<Matrix> {
    if v.cols() != 1 || v.rows() != a.rows() {
        return Err(shape_err("scale_rows", a, v));
    }
    let mut out = a.clone();
    for i in 0..out.rows() {
        let s = v[(i, 0)];
        out.row_mut(i).iter_mut().for_each(|x| *x *= s);
    }
    Ok(out)
}

fn eval_scale_cols(a: &Matrix, v: &Matrix) -> Result<Matrix> {
    if v.cols() != 1 || v.rows() != a.cols() {
        return Err(shape_err("scale_cols", a, v));
    }
    let mut out = a.clone();
    let s = v.as_slice();
    for i in 0..out.rows() {
        out.row_mut(i).iter_mut().zip(s).for_each(|(x, k)| *x *= k);
    }
    Ok(out)
}

fn eval_row_sums(a: &Matrix) -> Matrix {
    let sums: Vec<f64> = (0..a.rows()).map(|i| a.row(i).iter().sum()).collect();
    Matrix::column(&sums)
}

fn eval_mean_rows(a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, a.cols());
    for i in 0..a.rows() {
        for (o, x) in out.as_mut_slice().iter_mut().zip(a.row(i)) {
            *o += x;
        }
    }
    let inv = 1.0 / a.rows().max(1) as f64;
    out.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
    out
}

/// Row-wise softmax with max subtraction.
pub fn eval_softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}
