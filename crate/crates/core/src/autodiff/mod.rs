//! Differentiation engine.
//!
//! Reverse mode runs on a [`Tape`] of batched tensor operations and is what
//! training uses to differentiate whole rollouts. Forward mode uses the
//! [`Dual`] scalar and serves the per-sample input Jacobian and Hessian
//! queries.

mod ops;
mod real;
mod tape;

use alloc::vec;
use alloc::vec::Vec;

pub use ops::{Activation, Binary, Eager, Ops, Unary};
pub use real::{Dual, Real};
pub use tape::{Tape, Var};

use crate::linalg::Mat;
use crate::{Error, Result};

/// A map `ℝᵖ → ℝᵐ` that can be evaluated on any [`Real`].
pub trait VectorFn {
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R>;
}

/// A map `ℝᵖ → ℝ` that can be evaluated on any [`Real`].
pub trait ScalarFn {
    fn eval<R: Real>(&self, x: &[R]) -> R;
}

/// Evaluates `program` on a tape with `params` as a `1×n` differentiable
/// row and returns its scalar value and gradient.
pub fn grad_params<F>(params: &[f64], program: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    if let Some(i) = params.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invalid(alloc::format!("parameter {i} is not finite")));
    }
    let mut tape = Tape::new();
    let x = tape.param(Mat::row_vector(params));
    let y = program(&mut tape, x)?;
    tape.check()?;
    if tape.shape(&y) != (1, 1) {
        return Err(Error::Shape("program output must be 1x1".into()));
    }
    let value = tape.value(&y).data[0];
    let g = tape.backward(&[(y, 1.0)], &[x]).remove(0);
    Ok((value, g.data))
}

/// `J[i][k] = ∂fᵢ/∂u_k`, one forward sweep per input direction.
pub fn input_jacobian<F: VectorFn>(f: &F, u: &[f64]) -> Vec<Vec<f64>> {
    let p = u.len();
    let mut cols = Vec::with_capacity(p);
    for k in 0..p {
        let x: Vec<Dual<f64>> = u.iter().enumerate().map(|(i, &v)| Dual::new(v, if i == k { 1.0 } else { 0.0 })).collect();
        cols.push(f.eval(&x).into_iter().map(|y| y.d).collect::<Vec<_>>());
    }
    let m = cols.first().map_or(0, Vec::len);
    (0..m).map(|i| (0..p).map(|k| cols[k][i]).collect()).collect()
}

/// Symmetric Hessian of a scalar map by forward-over-forward sweeps over the
/// upper triangle of direction pairs.
pub fn input_hessian<F: ScalarFn>(f: &F, u: &[f64]) -> Vec<Vec<f64>> {
    let p = u.len();
    let mut h = vec![vec![0.0; p]; p];
    for k in 0..p {
        for l in k..p {
            let x: Vec<Dual<Dual<f64>>> = u
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let dk = if i == k { 1.0 } else { 0.0 };
                    let dl = if i == l { 1.0 } else { 0.0 };
                    Dual::new(Dual::new(v, dk), Dual::new(dl, 0.0))
                })
                .collect();
            let v = f.eval(&x).d.d;
            h[k][l] = v;
            h[l][k] = v;
        }
    }
    h
}
