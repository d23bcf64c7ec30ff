//! Two-stage SSP Runge–Kutta stepping and rollouts.

use alloc::vec::Vec;

use crate::autodiff::{Eager, Ops};
use crate::grid::StateField;
use crate::linalg::Mat;
use crate::{Error, Result};

/// Which second stage to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stepper {
    /// `z⁺ = ½z + ½(z¹ + Δt·G(z¹))`.
    #[default]
    SspRk2,
    /// `z⁺ = ½z + ½z¹`, a first-order method kept for comparison.
    Literal,
}

/// One step on any backend. `rhs` evaluates the semidiscrete operator.
pub fn step_ops<O, F>(o: &mut O, rhs: &mut F, z: &O::T, dt: f64, stepper: Stepper) -> Result<O::T>
where
    O: Ops,
    F: FnMut(&mut O, &O::T) -> Result<O::T>,
{
    let g0 = rhs(o, z)?;
    let z1 = o.axpy(z, dt, &g0);
    let second = match stepper {
        Stepper::SspRk2 => {
            let g1 = rhs(o, &z1)?;
            o.axpy(&z1, dt, &g1)
        }
        Stepper::Literal => z1,
    };
    let sum = o.add(z, &second);
    Ok(o.scale(&sum, 0.5))
}

/// `ssprk2_step` on plain matrices.
pub fn ssprk2_step<F>(mut rhs: F, z: &StateField, dt: f64, stepper: Stepper) -> Result<StateField>
where
    F: FnMut(&Mat) -> Result<Mat>,
{
    let mut e = Eager;
    let mut g = |_: &mut Eager, x: &Mat| -> Result<Mat> {
        let r = rhs(x)?;
        if !r.is_finite() {
            return Err(Error::NonFinite { op: "rhs", node: 0 });
        }
        Ok(r)
    };
    let next = step_ops(&mut e, &mut g, &z.values, dt, stepper)?;
    if !next.is_finite() {
        return Err(Error::NonFinite { op: "ssprk2_step", node: 0 });
    }
    Ok(StateField { values: next })
}

/// States `z(t₀), …, z(t₀ + steps·Δt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<StateField>,
    pub dt: f64,
    pub t0: f64,
}

impl Rollout {
    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|l| self.t0 + l as f64 * self.dt).collect()
    }

    pub fn last(&self) -> &StateField {
        self.states.last().expect("rollout holds the initial state")
    }
}

/// Repeated [`ssprk2_step`]. A failing step is reported as
/// [`Error::BlowUp`] with its 1-based index.
pub fn rollout<F>(mut rhs: F, z0: &StateField, dt: f64, steps: usize, stepper: Stepper) -> Result<Rollout>
where
    F: FnMut(&Mat) -> Result<Mat>,
{
    let mut states = Vec::with_capacity(steps + 1);
    states.push(z0.clone());
    for l in 0..steps {
        let next = ssprk2_step(&mut rhs, &states[l], dt, stepper).map_err(|e| match e {
            Error::NonFinite { .. } | Error::NonFiniteFlux { .. } => Error::BlowUp { step: l + 1 },
            other => other,
        })?;
        states.push(next);
    }
    Ok(Rollout { states, dt, t0: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn decay(x: &Mat) -> Result<Mat> {
        Ok(Mat { rows: x.rows, cols: x.cols, data: x.data.iter().map(|v| -v).collect() })
    }

    fn error_at_one(n: usize, stepper: Stepper) -> f64 {
        let z0 = StateField::scalar(&[1.0]).unwrap();
        let r = rollout(decay, &z0, 1.0 / n as f64, n, stepper).unwrap();
        (r.last().values.data[0] - libm::exp(-1.0)).abs()
    }

    #[test]
    fn zero_rhs_is_identity() {
        let z = StateField::scalar(&[1.0, -2.0, 3.5]).unwrap();
        let out = ssprk2_step(|x| Ok(Mat::zeros(x.rows, x.cols)), &z, 0.3, Stepper::SspRk2).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn heun_step_on_decay() {
        let z = StateField::scalar(&[1.0]).unwrap();
        let out = ssprk2_step(decay, &z, 0.1, Stepper::SspRk2).unwrap();
        assert!((out.values.data[0] - 0.905).abs() < 1e-15);
    }

    #[test]
    fn observed_orders() {
        let ord = |s| libm::log2(error_at_one(40, s) / error_at_one(80, s));
        let o2 = ord(Stepper::SspRk2);
        assert!((1.9..=2.1).contains(&o2), "{o2}");
        assert!(ord(Stepper::Literal) <= 1.2);
    }

    #[test]
    fn zero_steps_echo_initial_state() {
        let z = StateField::scalar(&[4.0]).unwrap();
        let r = rollout(decay, &z, 0.1, 0, Stepper::SspRk2).unwrap();
        assert_eq!(r.states, vec![z]);
    }

    #[test]
    fn blow_up_reports_step() {
        let z = StateField::scalar(&[1.0]).unwrap();
        let grow = |x: &Mat| Ok(Mat { rows: 1, cols: 1, data: vec![x.data[0] * 1e200] });
        assert_eq!(rollout(grow, &z, 1.0, 5, Stepper::SspRk2), Err(Error::BlowUp { step: 1 }));
    }
}
