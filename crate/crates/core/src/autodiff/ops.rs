//! Batched tensor primitives shared by the eager evaluator and the tape.
//!
//! Every tensor is a [`Mat`] with one row per batch sample. Code written
//! against [`Ops`] runs unchanged in plain evaluation ([`Eager`]) and under
//! reverse-mode recording ([`Tape`](super::Tape)).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{limited_slope, limited_slope_grad};
use crate::linalg::{self, Mat};
use crate::{Error, Result};

/// Hidden-layer nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    /// `Sigmoid(x)·ReLU(x)`: zero for `x ≤ 0`.
    SiluGated,
    /// `x·Sigmoid(x)`.
    SiluStandard,
    Relu,
    Softplus,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::SiluGated => "silu-gated",
            Activation::SiluStandard => "silu-standard",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "silu-gated" => Activation::SiluGated,
            "silu-standard" => Activation::SiluStandard,
            "relu" => Activation::Relu,
            "softplus" => Activation::Softplus,
            _ => return None,
        })
    }

    /// `order`-th derivative at `x`, for `order ≤ 4`.
    pub fn eval(self, order: u8, x: f64) -> f64 {
        match self {
            Activation::Relu => match order {
                0 => x.max(0.0),
                1 => {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            },
            Activation::Softplus => {
                if order == 0 {
                    return x.max(0.0) + libm::log1p(libm::exp(-x.abs()));
                }
                sigmoid_deriv(order - 1, sigmoid(x))
            }
            Activation::SiluStandard => silu_deriv(order, x),
            Activation::SiluGated => {
                if x > 0.0 {
                    silu_deriv(order, x)
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Derivatives of the logistic function written in terms of `s = σ(x)`.
#[inline]
fn sigmoid_deriv(order: u8, s: f64) -> f64 {
    let q = s * (1.0 - s);
    match order {
        0 => s,
        1 => q,
        2 => q * (1.0 - 2.0 * s),
        3 => q * (1.0 - 6.0 * s + 6.0 * s * s),
        _ => q * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s * s),
    }
}

/// Derivatives of `x·σ(x)`: `f⁽ᵏ⁾ = k·σ⁽ᵏ⁻¹⁾ + x·σ⁽ᵏ⁾`.
#[inline]
fn silu_deriv(order: u8, x: f64) -> f64 {
    let s = sigmoid(x);
    if order == 0 {
        return x * s;
    }
    order as f64 * sigmoid_deriv(order - 1, s) + x * sigmoid_deriv(order, s)
}

/// Elementwise unary primitives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    /// Derivative of the given order of an activation.
    Act(Activation, u8),
    Exp,
    Tanh,
    Abs,
    Square,
    Neg,
    Scale(f64),
    Shift(f64),
    MinConst(f64),
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Act(..) => "activation",
            Unary::Exp => "exp",
            Unary::Tanh => "tanh",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Neg => "neg",
            Unary::Scale(_) => "scale",
            Unary::Shift(_) => "shift",
            Unary::MinConst(_) => "min_const",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Act(a, k) => a.eval(k, x),
            Unary::Exp => libm::exp(x),
            Unary::Tanh => libm::tanh(x),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Neg => -x,
            Unary::Scale(c) => c * x,
            Unary::Shift(c) => x + c,
            Unary::MinConst(c) => x.min(c),
        }
    }

    /// `dy/dx` given input `x` and output `y`.
    #[inline]
    pub fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Act(a, k) => a.eval(k + 1, x),
            Unary::Exp => y,
            Unary::Tanh => 1.0 - y * y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Neg => -1.0,
            Unary::Scale(c) => c,
            Unary::Shift(_) => 1.0,
            Unary::MinConst(c) => {
                if x < c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Elementwise binary primitives. The right operand broadcasts when it is
/// `1×c`, `r×1` or `1×1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    /// `limited_slope(a, b)`: minmod-limited slope with `r = a/b`.
    Minmod,
}

impl Binary {
    pub fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Max => "max",
            Binary::Minmod => "minmod",
        }
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
            Binary::Max => a.max(b),
            Binary::Minmod => limited_slope(a, b),
        }
    }

    /// `(∂/∂a, ∂/∂b)`.
    #[inline]
    pub fn grads(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            Binary::Add => (1.0, 1.0),
            Binary::Sub => (1.0, -1.0),
            Binary::Mul => (b, a),
            Binary::Div => (1.0 / b, -a / (b * b)),
            Binary::Max => {
                if a >= b {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            Binary::Minmod => limited_slope_grad(a, b),
        }
    }
}

/// How the right operand of a binary op maps onto the left operand's shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Bcast {
    Full,
    Row,
    Col,
    Scalar,
}

pub(crate) fn bcast_kind(a: &Mat, b: &Mat) -> Result<Bcast> {
    Ok(if a.shape() == b.shape() {
        Bcast::Full
    } else if b.rows == 1 && b.cols == 1 {
        Bcast::Scalar
    } else if b.rows == 1 && b.cols == a.cols {
        Bcast::Row
    } else if b.cols == 1 && b.rows == a.rows {
        Bcast::Col
    } else {
        return Err(Error::Shape(format!("cannot broadcast {}x{} onto {}x{}", b.rows, b.cols, a.rows, a.cols)));
    })
}

#[inline]
pub(crate) fn bidx(kind: Bcast, r: usize, c: usize, cols: usize, bcols: usize) -> usize {
    match kind {
        Bcast::Full => r * cols + c,
        Bcast::Row => c,
        Bcast::Col => r * bcols,
        Bcast::Scalar => 0,
    }
}

pub(crate) mod kernels {
    use super::*;

    pub fn unary(op: Unary, x: &Mat) -> Mat {
        Mat { rows: x.rows, cols: x.cols, data: x.data.iter().map(|&v| op.apply(v)).collect() }
    }

    pub fn binary(op: Binary, a: &Mat, b: &Mat) -> Result<Mat> {
        let kind = bcast_kind(a, b)?;
        let mut out = Mat::zeros(a.rows, a.cols);
        if kind == Bcast::Full {
            for ((o, &x), &y) in out.data.iter_mut().zip(&a.data).zip(&b.data) {
                *o = op.apply(x, y);
            }
            return Ok(out);
        }
        for r in 0..a.rows {
            for c in 0..a.cols {
                let i = r * a.cols + c;
                out.data[i] = op.apply(a.data[i], b.data[bidx(kind, r, c, a.cols, b.cols)]);
            }
        }
        Ok(out)
    }

    pub fn gather(x: &Mat, rows: usize, cols: usize, idx: &[usize]) -> Result<Mat> {
        if idx.len() != rows * cols {
            return Err(Error::Shape(format!("gather of {} indices into {rows}x{cols}", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.data.len()) {
            return Err(Error::Shape(format!("gather index {bad} out of {}", x.data.len())));
        }
        Ok(Mat { rows, cols, data: idx.iter().map(|&i| x.data[i]).collect() })
    }

    pub fn hstack(parts: &[&Mat]) -> Result<Mat> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::Shape("hstack of tensors with different row counts".into()));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for m in parts {
                out.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        Ok(out)
    }

    pub fn vstack(parts: &[&Mat]) -> Result<Mat> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(Error::Shape("vstack of tensors with different column counts".into()));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Mat { rows: data.len() / cols.max(1), cols, data })
    }

    pub fn sum_all(x: &Mat) -> Mat {
        Mat::scalar(x.data.iter().sum())
    }

    pub fn row_sum(x: &Mat) -> Mat {
        Mat { rows: x.rows, cols: 1, data: (0..x.rows).map(|r| x.row(r).iter().sum()).collect() }
    }

    pub fn batch_matmul(a: &Mat, b: &Mat, p: usize) -> Result<Mat> {
        if a.shape() != b.shape() || a.cols != p * p {
            return Err(Error::Shape(format!("batch matmul expects Bx{} operands", p * p)));
        }
        let mut out = Mat::zeros(a.rows, a.cols);
        for r in 0..a.rows {
            let (x, y) = (a.row(r), b.row(r));
            let o = out.row_mut(r);
            for i in 0..p {
                for k in 0..p {
                    let mut s = 0.0;
                    for m in 0..p {
                        s += x[i * p + m] * y[m * p + k];
                    }
                    o[i * p + k] = s;
                }
            }
        }
        Ok(out)
    }

    pub fn spd_solve(a: &Mat, b: &Mat) -> Result<Mat> {
        let p = b.cols;
        if a.rows != b.rows || a.cols != p * p {
            return Err(Error::Shape(format!("spd solve expects Bx{} and Bx{p}", p * p)));
        }
        let mut out = Mat::zeros(b.rows, p);
        let mut l = vec![0.0; p * p];
        for r in 0..b.rows {
            l.copy_from_slice(a.row(r));
            linalg::cholesky_in_place(&mut l, p).map_err(|_| Error::Cholesky { row: r })?;
            let x = out.row_mut(r);
            x.copy_from_slice(b.row(r));
            linalg::cholesky_solve(&l, p, x);
        }
        Ok(out)
    }
}

/// Tensor operations available to scheme and network code.
pub trait Ops {
    type T: Clone;

    fn constant(&mut self, m: Mat) -> Self::T;
    fn value<'a>(&'a self, x: &'a Self::T) -> &'a Mat;

    /// `x · w`.
    fn matmul(&mut self, x: &Self::T, w: &Self::T) -> Self::T;
    /// `x · wᵀ`.
    fn matmul_t(&mut self, x: &Self::T, w: &Self::T) -> Self::T;
    fn unary(&mut self, op: Unary, x: &Self::T) -> Self::T;
    fn binary(&mut self, op: Binary, a: &Self::T, b: &Self::T) -> Self::T;
    /// `out.data[i] = x.data[idx[i]]`, reshaped to `rows×cols`.
    fn gather(&mut self, x: &Self::T, rows: usize, cols: usize, idx: Vec<usize>) -> Self::T;
    fn hstack(&mut self, parts: &[Self::T]) -> Self::T;
    fn vstack(&mut self, parts: &[Self::T]) -> Self::T;
    fn sum_all(&mut self, x: &Self::T) -> Self::T;
    fn row_sum(&mut self, x: &Self::T) -> Self::T;
    /// Row-wise product of `p×p` matrices stored flattened row-major.
    fn batch_matmul(&mut self, a: &Self::T, b: &Self::T, p: usize) -> Self::T;
    /// Row-wise SPD solve `A_r x_r = b_r` by Cholesky.
    fn spd_solve(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;

    fn shape(&self, x: &Self::T) -> (usize, usize) {
        self.value(x).shape()
    }

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        self.binary(Binary::Add, a, b)
    }

    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        self.binary(Binary::Sub, a, b)
    }

    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        self.binary(Binary::Mul, a, b)
    }

    fn div(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        self.binary(Binary::Div, a, b)
    }

    fn scale(&mut self, x: &Self::T, c: f64) -> Self::T {
        self.unary(Unary::Scale(c), x)
    }

    fn shift(&mut self, x: &Self::T, c: f64) -> Self::T {
        self.unary(Unary::Shift(c), x)
    }

    /// `x + c·y`.
    fn axpy(&mut self, x: &Self::T, c: f64, y: &Self::T) -> Self::T {
        let cy = self.scale(y, c);
        self.add(x, &cy)
    }

    /// Rows `idx` of `x`.
    fn take_rows(&mut self, x: &Self::T, rows: &[usize]) -> Self::T {
        let cols = self.shape(x).1;
        let idx = rows.iter().flat_map(|&r| (0..cols).map(move |c| r * cols + c)).collect();
        self.gather(x, rows.len(), cols, idx)
    }

    /// Column `c` of `x` as an `r×1` tensor.
    fn column(&mut self, x: &Self::T, c: usize) -> Self::T {
        let (rows, cols) = self.shape(x);
        self.gather(x, rows, 1, (0..rows).map(|r| r * cols + c).collect())
    }

    /// Sum of squares of all entries.
    fn sum_squares(&mut self, x: &Self::T) -> Self::T {
        let sq = self.unary(Unary::Square, x);
        self.sum_all(&sq)
    }
}

/// Plain evaluation with no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Ops for Eager {
    type T = Mat;

    fn constant(&mut self, m: Mat) -> Mat {
        m
    }
    fn value<'a>(&'a self, x: &'a Mat) -> &'a Mat {
        x
    }
    fn matmul(&mut self, x: &Mat, w: &Mat) -> Mat {
        linalg::matmul(x, w)
    }
    fn matmul_t(&mut self, x: &Mat, w: &Mat) -> Mat {
        linalg::matmul_t(x, w)
    }
    fn unary(&mut self, op: Unary, x: &Mat) -> Mat {
        kernels::unary(op, x)
    }
    fn binary(&mut self, op: Binary, a: &Mat, b: &Mat) -> Mat {
        kernels::binary(op, a, b).expect("binary operands must broadcast")
    }
    fn gather(&mut self, x: &Mat, rows: usize, cols: usize, idx: Vec<usize>) -> Mat {
        kernels::gather(x, rows, cols, &idx).expect("gather indices must be in range")
    }
    fn hstack(&mut self, parts: &[Mat]) -> Mat {
        let refs: Vec<&Mat> = parts.iter().collect();
        kernels::hstack(&refs).expect("hstack row counts must agree")
    }
    fn vstack(&mut self, parts: &[Mat]) -> Mat {
        let refs: Vec<&Mat> = parts.iter().collect();
        kernels::vstack(&refs).expect("vstack column counts must agree")
    }
    fn sum_all(&mut self, x: &Mat) -> Mat {
        kernels::sum_all(x)
    }
    fn row_sum(&mut self, x: &Mat) -> Mat {
        kernels::row_sum(x)
    }
    fn batch_matmul(&mut self, a: &Mat, b: &Mat, p: usize) -> Mat {
        kernels::batch_matmul(a, b, p).expect("batch matmul shapes must agree")
    }
    fn spd_solve(&mut self, a: &Mat, b: &Mat) -> Result<Mat> {
        kernels::spd_solve(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in [Activation::SiluGated, Activation::SiluStandard, Activation::Softplus] {
            for &x in &[-2.3, -0.4, 0.3, 1.7, 4.0] {
                if act == Activation::SiluGated && x <= 0.0 {
                    continue;
                }
                for k in 0..4u8 {
                    let d = fd(|t| act.eval(k, t), x);
                    let a = act.eval(k + 1, x);
                    assert!((d - a).abs() < 1e-6 * (1.0 + a.abs()), "{act:?} k={k} x={x}: {d} vs {a}");
                }
            }
        }
    }

    #[test]
    fn silu_gated_kills_negative_inputs() {
        assert_eq!(Activation::SiluGated.eval(0, -1.0), 0.0);
        assert!((Activation::SiluStandard.eval(0, -1.0) + 0.2689414213699951).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(Activation::Softplus.eval(0, 800.0), 800.0);
        assert!(Activation::Softplus.eval(0, -800.0) >= 0.0);
        assert!((Activation::Softplus.eval(0, 0.0) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn broadcasting_binary() {
        let a = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let row = Mat::row_vector(&[10.0, 20.0]);
        let col = Mat::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        assert_eq!(kernels::binary(Binary::Add, &a, &row).unwrap().data, vec![11.0, 22.0, 13.0, 24.0]);
        assert_eq!(kernels::binary(Binary::Mul, &a, &col).unwrap().data, vec![1.0, 2.0, -3.0, -4.0]);
        assert!(kernels::binary(Binary::Add, &a, &Mat::zeros(3, 1)).is_err());
    }
}
