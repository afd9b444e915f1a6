//! Dense matrix/vector primitives with explicit reverse-mode rules.
//!
//! Every differentiable op comes as a forward function plus a backward
//! function that consumes the forward's cache. Model code records those
//! caches as [`TapeNode`]s; a node can be replayed backward exactly once.
//!
//! All arithmetic is `f64`. Sparse kernels that would exploit zeroed
//! neurons are not provided: gating is dense, and a zero factor simply
//! annihilates the neuron's contribution.

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Uniform entries in `[-limit, limit]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Matrix { rows, cols, data }
    }

    /// Glorot/Xavier uniform init for a `fan_out x fan_in` map.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Matrix::uniform(rows, cols, limit, rng)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
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

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("{what}: expected length {expected}, got {got}")));
    }
    Ok(())
}

/// `A · x`.
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    check_len("matvec input", a.cols, x.len())?;
    Ok((0..a.rows)
        .map(|r| a.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
        .collect())
}

/// Backward of `A · x`: accumulates `dL/dA += g xᵀ` into `grad_a` and
/// returns `dL/dx = Aᵀ g`.
pub fn matvec_backward(a: &Matrix, x: &[f64], grad_out: &[f64], grad_a: &mut Matrix) -> Result<Vec<f64>> {
    check_len("matvec input", a.cols, x.len())?;
    check_len("matvec upstream gradient", a.rows, grad_out.len())?;
    if grad_a.shape() != a.shape() {
        return Err(Error::Shape("gradient buffer does not match matrix".into()));
    }
    let mut grad_x = vec![0.0; a.cols];
    for (r, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let ga = grad_a.row_mut(r);
        for (c, &xv) in x.iter().enumerate() {
            ga[c] += g * xv;
        }
        for (gx, &w) in grad_x.iter_mut().zip(a.row(r)) {
            *gx += g * w;
        }
    }
    Ok(grad_x)
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub fn sigmoid_backward(out: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
    check_len("sigmoid upstream gradient", out.len(), grad_out.len())?;
    Ok(out.iter().zip(grad_out).map(|(o, g)| g * o * (1.0 - o)).collect())
}

pub fn tanh_act(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

pub fn tanh_backward(out: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
    check_len("tanh upstream gradient", out.len(), grad_out.len())?;
    Ok(out.iter().zip(grad_out).map(|(o, g)| g * (1.0 - o * o)).collect())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("hadamard operand", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Returns `(dL/da, dL/db)`.
pub fn hadamard_backward(a: &[f64], b: &[f64], grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("hadamard operand", a.len(), b.len())?;
    check_len("hadamard upstream gradient", a.len(), grad_out.len())?;
    let ga = grad_out.iter().zip(b).map(|(g, y)| g * y).collect();
    let gb = grad_out.iter().zip(a).map(|(g, x)| g * x).collect();
    Ok((ga, gb))
}

/// Cached state of one recorded forward op.
#[derive(Debug, Clone)]
pub enum TapeOp {
    MatVec { input: Vec<f64> },
    Sigmoid { output: Vec<f64> },
    Tanh { output: Vec<f64> },
    Hadamard { a: Vec<f64>, b: Vec<f64> },
}

/// One recorded op. Its backward may run exactly once per forward.
#[derive(Debug, Clone)]
pub struct TapeNode {
    op: TapeOp,
    spent: bool,
}

impl TapeNode {
    pub fn matvec(a: &Matrix, x: &[f64]) -> Result<(Vec<f64>, TapeNode)> {
        let out = matvec(a, x)?;
        Ok((out, TapeNode::new(TapeOp::MatVec { input: x.to_vec() })))
    }

    pub fn sigmoid(x: &[f64]) -> (Vec<f64>, TapeNode) {
        let out = sigmoid(x);
        let node = TapeNode::new(TapeOp::Sigmoid { output: out.clone() });
        (out, node)
    }

    pub fn tanh(x: &[f64]) -> (Vec<f64>, TapeNode) {
        let out = tanh_act(x);
        let node = TapeNode::new(TapeOp::Tanh { output: out.clone() });
        (out, node)
    }

    pub fn hadamard(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, TapeNode)> {
        let out = hadamard(a, b)?;
        let node = TapeNode::new(TapeOp::Hadamard {
            a: a.to_vec(),
            b: b.to_vec(),
        });
        Ok((out, node))
    }

    fn new(op: TapeOp) -> Self {
        TapeNode { op, spent: false }
    }

    pub fn op(&self) -> &TapeOp {
        &self.op
    }

    pub fn is_spent(&self) -> bool {
        self.spent
    }

    fn claim(&mut self) -> Result<()> {
        if self.spent {
            return Err(Error::State("backward already ran for this forward".into()));
        }
        self.spent = true;
        Ok(())
    }

    /// Backward of a recorded `A · x`; `a` must be the matrix used forward.
    pub fn backward_matvec(&mut self, a: &Matrix, grad_out: &[f64], grad_a: &mut Matrix) -> Result<Vec<f64>> {
        let TapeOp::MatVec { input } = &self.op else {
            return Err(Error::State("node is not a matvec".into()));
        };
        if self.spent {
            return Err(Error::State("backward already ran for this forward".into()));
        }
        let gx = matvec_backward(a, input, grad_out, grad_a)?;
        self.spent = true;
        Ok(gx)
    }

    /// Backward of a recorded elementwise activation.
    pub fn backward_unary(&mut self, grad_out: &[f64]) -> Result<Vec<f64>> {
        let g = match &self.op {
            TapeOp::Sigmoid { output } => sigmoid_backward(output, grad_out)?,
            TapeOp::Tanh { output } => tanh_backward(output, grad_out)?,
            _ => return Err(Error::State("node is not an elementwise activation".into())),
        };
        self.claim()?;
        Ok(g)
    }

    pub fn backward_hadamard(&mut self, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let TapeOp::Hadamard { a, b } = &self.op else {
            return Err(Error::State("node is not a hadamard product".into()));
        };
        let g = hadamard_backward(a, b, grad_out)?;
        self.claim()?;
        Ok(g)
    }
}

/// Floor for the denominator of the relative error, so that entries whose
/// true gradient is ~0 are judged on absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Central finite-difference check of analytic gradients.
///
/// `f` maps a parameter set to `(loss, dloss/dparams)`. The analytic
/// gradient is taken at `params`; every entry is then perturbed by `±eps`.
/// Returns the worst `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn grad_check<F>(params: &[Matrix], eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    if !(eps > 0.0) {
        return Err(Error::Numeric(format!("finite-difference step must be positive, got {eps}")));
    }
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {loss}")));
    }
    if analytic.len() != params.len() || analytic.iter().zip(params).any(|(g, p)| g.shape() != p.shape()) {
        return Err(Error::Shape("analytic gradients do not match parameter shapes".into()));
    }

    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for m in 0..params.len() {
        for i in 0..params[m].len() {
            let orig = params[m].data[i];
            probe[m].data[i] = orig + eps;
            let plus = f(&probe)?.0;
            probe[m].data[i] = orig - eps;
            let minus = f(&probe)?.0;
            probe[m].data[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric("loss became non-finite under perturbation".into()));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[m].data[i];
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
