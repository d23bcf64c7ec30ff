//! The learned entropy-stable flux and the semidiscrete operator built on it.
//!
//! At every edge the flux is the average of the learned flux at the two
//! reconstructed states minus a Rusanov-type term scaled by the learned wave
//! speed and the inverse of the regularised learned entropy Hessian:
//!
//! `F̂ = ½(F(u⁺) + F(u⁻)) − ½λ (η''(ū) + sI)⁻¹ (η'(u⁺) − η'(u⁻))`.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Eager, Ops};
use crate::grid::{stencils, BoundarySpec, Geometry, StateField, Stencil};
use crate::integrate::{rollout, Rollout, Stepper};
use crate::linalg::{self, Mat};
use crate::networks::{BoundBundle, NetworkBundle};
use crate::{Error, Result};

/// Diagonal shift of the entropy Hessian: `C1·C2^epoch` while training, a
/// fixed floor at inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularization {
    pub c1: f64,
    pub c2: f64,
    pub inference_floor: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self { c1: 10.0, c2: 0.3, inference_floor: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Training { epoch: u32 },
    Inference,
}

impl Regularization {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c2 < 1.0 && self.inference_floor >= 0.0) {
            return Err(Error::Invalid(format!(
                "regularization needs C1 > 0, 0 < C2 < 1, floor ≥ 0 (got {}, {}, {})",
                self.c1, self.c2, self.inference_floor
            )));
        }
        Ok(())
    }

    pub fn shift(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Training { epoch } => self.c1 * libm::pow(self.c2, epoch as f64),
            Phase::Inference => self.inference_floor,
        }
    }
}

/// Stencils for a geometry and boundary kind.
#[derive(Clone, Debug)]
pub struct Layout {
    pub geom: Geometry,
    pub stencils: Vec<Stencil>,
    pub previous: Vec<Vec<usize>>,
}

impl Layout {
    pub fn new(geom: &Geometry, bc: &BoundarySpec) -> Result<Self> {
        let stencils = stencils(geom, bc)?;
        let previous = stencils.iter().map(Stencil::previous_edge).collect();
        Ok(Self { geom: geom.clone(), stencils, previous })
    }
}

/// Everything besides the networks and the state that the operator needs.
#[derive(Clone, Copy, Debug)]
pub struct RhsConfig<'a> {
    pub layout: &'a Layout,
    pub bc: &'a BoundarySpec,
    pub dt: f64,
    pub shift: f64,
    /// Use `max(ρ(u⁺_{j+1/2}), ρ(u⁻_{j−1/2}))` instead of the same-edge pair.
    pub literal_speed_stencil: bool,
}

/// Per-edge intermediate tensors of one sweep direction.
#[derive(Clone, Debug)]
pub struct EdgeTensors<T> {
    pub minus: T,
    pub plus: T,
    pub flux: T,
    pub speed: T,
}

fn source<O: Ops>(o: &mut O, u: &O::T, bc: &BoundarySpec) -> O::T {
    match bc {
        BoundarySpec::Periodic => u.clone(),
        BoundarySpec::Dirichlet { left, right } => {
            let gl = o.constant(Mat::row_vector(left));
            let gr = o.constant(Mat::row_vector(right));
            o.vstack(&[gl.clone(), gl, u.clone(), gr.clone(), gr])
        }
    }
}

fn first_bad_row(m: &Mat) -> Option<usize> {
    (0..m.rows).find(|&r| m.row(r).iter().any(|v| !v.is_finite()))
}

/// Learned numerical fluxes at every edge of direction `dir`.
pub fn edge_fluxes<O: Ops>(
    o: &mut O,
    cfg: &RhsConfig<'_>,
    net: &BoundBundle<O::T>,
    u: &O::T,
    dir: usize,
) -> Result<EdgeTensors<O::T>> {
    let st = &cfg.layout.stencils[dir];
    let (_, p) = o.shape(u);
    let ne = st.n_edges();
    let src = source(o, u, cfg.bc);
    let pick = |o: &mut O, k: usize| {
        let rows: Vec<usize> = st.edges.iter().map(|e| e[k]).collect();
        o.take_rows(&src, &rows)
    };
    let (a, b, c, d) = (pick(o, 0), pick(o, 1), pick(o, 2), pick(o, 3));
    let d1 = o.sub(&b, &a);
    let d2 = o.sub(&c, &b);
    let d3 = o.sub(&d, &c);
    let sb = o.binary(crate::autodiff::Binary::Minmod, &d1, &d2);
    let sc = o.binary(crate::autodiff::Binary::Minmod, &d2, &d3);
    let minus = o.axpy(&b, 0.5, &sb);
    let plus = o.axpy(&c, -0.5, &sc);

    let both = o.vstack(&[minus.clone(), plus.clone()]);
    let (f_both, jac) = net.flux_and_jacobian(o, dir, &both);
    let spacing = st.spacing;
    let speed_both = net.wave_speed_from_jacobian(o, &jac, spacing, cfg.dt);
    let grad_both = net.entropy.gradient(o, &both);
    let first: Vec<usize> = (0..ne).collect();
    let second: Vec<usize> = (ne..2 * ne).collect();
    let (f_m, f_p) = (o.take_rows(&f_both, &first), o.take_rows(&f_both, &second));
    let (s_m, s_p) = (o.take_rows(&speed_both, &first), o.take_rows(&speed_both, &second));
    let (g_m, g_p) = (o.take_rows(&grad_both, &first), o.take_rows(&grad_both, &second));

    let s_m = if cfg.literal_speed_stencil { o.take_rows(&s_m, &cfg.layout.previous[dir]) } else { s_m };
    let lambda = o.binary(crate::autodiff::Binary::Max, &s_p, &s_m);

    let sum = o.add(&minus, &plus);
    let mean = o.scale(&sum, 0.5);
    let (_, hess) = net.entropy.gradient_hessian(o, &mean);
    let mut eye = Mat::zeros(1, p * p);
    for i in 0..p {
        eye.data[i * p + i] = cfg.shift;
    }
    let eye = o.constant(eye);
    let h = o.add(&hess, &eye);
    let jump = o.sub(&g_p, &g_m);
    let x = o.spd_solve(&h, &jump)?;
    let fsum = o.add(&f_m, &f_p);
    let central = o.scale(&fsum, 0.5);
    let lx = o.mul(&x, &lambda);
    let flux = o.axpy(&central, -0.5, &lx);
    if let Some(edge) = first_bad_row(o.value(&flux)) {
        return Err(Error::NonFiniteFlux { edge });
    }
    Ok(EdgeTensors { minus, plus, flux, speed: lambda })
}

/// Semidiscrete operator `du_c/dt = −Σ_d (F̂[right] − F̂[left]) / h_d`.
pub fn rhs_ops<O: Ops>(o: &mut O, cfg: &RhsConfig<'_>, net: &BoundBundle<O::T>, u: &O::T) -> Result<O::T> {
    let mut total: Option<O::T> = None;
    for dir in 0..cfg.layout.stencils.len() {
        let st = &cfg.layout.stencils[dir];
        let e = edge_fluxes(o, cfg, net, u, dir)?;
        let fr = o.take_rows(&e.flux, &st.right);
        let fl = o.take_rows(&e.flux, &st.left);
        let diff = o.sub(&fr, &fl);
        let contrib = o.scale(&diff, -1.0 / st.spacing);
        total = Some(match total {
            Some(t) => o.add(&t, &contrib),
            None => contrib,
        });
    }
    total.ok_or_else(|| Error::Invalid("geometry has no directions".into()))
}

/// A learned scheme with concrete parameters, for evaluation and prediction.
#[derive(Clone, Debug)]
pub struct NeuralScheme {
    pub bundle: NetworkBundle,
    pub layout: Layout,
    pub bc: BoundarySpec,
    pub dt: f64,
    pub reg: Regularization,
    pub phase: Phase,
    pub literal_speed_stencil: bool,
    pub stepper: Stepper,
}

impl NeuralScheme {
    pub fn new(bundle: NetworkBundle, geom: &Geometry, bc: BoundarySpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
        }
        if bundle.dims() != geom.dims() {
            return Err(Error::Shape(format!("{} flux networks for a {}D grid", bundle.dims(), geom.dims())));
        }
        bc.check(bundle.p)?;
        let layout = Layout::new(geom, &bc)?;
        Ok(Self {
            bundle,
            layout,
            bc,
            dt,
            reg: Regularization::default(),
            phase: Phase::Inference,
            literal_speed_stencil: false,
            stepper: Stepper::SspRk2,
        })
    }

    pub fn shift(&self) -> f64 {
        self.reg.shift(self.phase)
    }

    pub fn config(&self) -> RhsConfig<'_> {
        RhsConfig {
            layout: &self.layout,
            bc: &self.bc,
            dt: self.dt,
            shift: self.shift(),
            literal_speed_stencil: self.literal_speed_stencil,
        }
    }

    fn check_field(&self, field: &StateField) -> Result<()> {
        if field.p() != self.bundle.p || field.n_cells() != self.layout.geom.n_rows() {
            return Err(Error::Shape(format!(
                "field {}x{} does not match scheme ({} cells, p = {})",
                field.n_cells(),
                field.p(),
                self.layout.geom.n_rows(),
                self.bundle.p
            )));
        }
        Ok(())
    }

    pub fn rhs(&self, field: &StateField) -> Result<StateField> {
        self.check_field(field)?;
        let mut e = Eager;
        let net = self.bundle.bind_constant(&mut e);
        Ok(StateField { values: rhs_ops(&mut e, &self.config(), &net, &field.values)? })
    }

    /// Numerical fluxes of every direction.
    pub fn fluxes(&self, field: &StateField) -> Result<Vec<EdgeTensors<Mat>>> {
        self.check_field(field)?;
        let mut e = Eager;
        let net = self.bundle.bind_constant(&mut e);
        (0..self.layout.stencils.len()).map(|d| edge_fluxes(&mut e, &self.config(), &net, &field.values, d)).collect()
    }

    pub fn rollout(&self, ic: &StateField, steps: usize) -> Result<Rollout> {
        self.check_field(ic)?;
        let mut e = Eager;
        let net = self.bundle.bind_constant(&mut e);
        let cfg = self.config();
        rollout(|u: &Mat| rhs_ops(&mut Eager, &cfg, &net, u), ic, self.dt, steps, self.stepper)
    }
}

/// `½(F(u⁻) + F(u⁺))`.
pub fn neural_ec_flux(bundle: &NetworkBundle, dir: usize, u_minus: &[f64], u_plus: &[f64]) -> Vec<f64> {
    let a = bundle.flux[dir].eval_real(u_minus);
    let b = bundle.flux[dir].eval_real(u_plus);
    a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// Solves `(η''(ū) + shift·I) x = rhs` by Cholesky.
pub fn regularized_hessian_solve(bundle: &NetworkBundle, shift: f64, u_bar: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let p = bundle.p;
    let mut h: Vec<f64> = bundle.entropy.hessian(u_bar).into_iter().flatten().collect();
    for i in 0..p {
        h[i * p + i] += shift;
    }
    linalg::spd_solve(&h, p, rhs)
}

/// Quantities at one edge, evaluated pointwise.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWorkspace {
    pub u_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub grad_minus: Vec<f64>,
    pub grad_plus: Vec<f64>,
    /// Lower Cholesky factor of `η''(ū) + shift·I`, row-major.
    pub factor: Vec<f64>,
    pub speed: f64,
}

impl EdgeWorkspace {
    /// Populates an edge with `λ = max(ρ(u⁺), ρ(u⁻))`.
    pub fn new(
        bundle: &NetworkBundle,
        dir: usize,
        u_minus: &[f64],
        u_plus: &[f64],
        shift: f64,
        spacing: f64,
        dt: f64,
    ) -> Result<Self> {
        let p = bundle.p;
        let u_bar: Vec<f64> = u_minus.iter().zip(u_plus).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut factor: Vec<f64> = bundle.entropy.hessian(&u_bar).into_iter().flatten().collect();
        for i in 0..p {
            factor[i * p + i] += shift;
        }
        linalg::cholesky_in_place(&mut factor, p)?;
        for i in 0..p {
            for k in i + 1..p {
                factor[i * p + k] = 0.0;
            }
        }
        let speed = bundle.wave_speed(dir, u_plus, spacing, dt).max(bundle.wave_speed(dir, u_minus, spacing, dt));
        Ok(Self {
            u_minus: u_minus.to_vec(),
            u_plus: u_plus.to_vec(),
            grad_minus: bundle.entropy.gradient(u_minus),
            grad_plus: bundle.entropy.gradient(u_plus),
            u_bar,
            factor,
            speed,
        })
    }

    pub fn jump(&self) -> Vec<f64> {
        self.grad_plus.iter().zip(&self.grad_minus).map(|(a, b)| a - b).collect()
    }

    /// `H⁻¹[[η']]`.
    pub fn scaled_jump(&self) -> Vec<f64> {
        let mut x = self.jump();
        linalg::cholesky_solve(&self.factor, self.u_bar.len(), &mut x);
        x
    }

    /// `[[η']]ᵀ H⁻¹ [[η']]`, non-negative for a positive definite `H`.
    pub fn dissipation(&self) -> f64 {
        self.jump().iter().zip(self.scaled_jump()).map(|(a, b)| a * b).sum()
    }
}

/// `F^{μ,*} − ½λ H⁻¹ [[η']]` at a populated edge.
pub fn neural_es_flux(bundle: &NetworkBundle, dir: usize, edge: &EdgeWorkspace) -> Vec<f64> {
    let central = neural_ec_flux(bundle, dir, &edge.u_minus, &edge.u_plus);
    let x = edge.scaled_jump();
    central.iter().zip(&x).map(|(c, x)| c - 0.5 * edge.speed * x).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Var};
    use crate::grid::{reconstruct_interfaces, Grid1D, Grid2D};
    use crate::networks::NetworkSpec;
    use crate::rng::{self, Purpose};
    use alloc::vec;
    use proptest::prelude::*;

    fn small_spec(p: usize, dims: usize) -> NetworkSpec {
        NetworkSpec { flux_hidden: vec![8, 8], speed_hidden: vec![6], entropy_hidden: vec![8], ..NetworkSpec::standard(p, dims) }
    }

    fn random_field(n: usize, p: usize, seed: u64) -> StateField {
        let mut r = rng::stream(seed, Purpose::Validation, 2);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect()).collect();
        StateField::from_rows(&rows).unwrap()
    }

    fn scheme(p: usize, n: usize, seed: u64, bc: BoundarySpec) -> NeuralScheme {
        let b = NetworkBundle::init(&small_spec(p, 1), seed).unwrap();
        let geom = Geometry::One(Grid1D::new(n, 0.0, 1.0).unwrap());
        let mut s = NeuralScheme::new(b, &geom, bc, 0.01).unwrap();
        s.phase = Phase::Training { epoch: 1 };
        s
    }

    #[test]
    fn shift_schedule() {
        let r = Regularization::default();
        assert_eq!(r.shift(Phase::Training { epoch: 0 }), 10.0);
        assert!((r.shift(Phase::Training { epoch: 2 }) - 0.9).abs() < 1e-15);
        assert_eq!(r.shift(Phase::Inference), 1e-8);
        assert!(Regularization { c2: 1.0, ..r }.validate().is_err());
    }

    #[test]
    fn ec_flux_consistency_and_symmetry() {
        let b = NetworkBundle::init(&small_spec(2, 1), 3).unwrap();
        let u = [0.3, -0.4];
        let v = [1.1, 0.2];
        assert_eq!(neural_ec_flux(&b, 0, &u, &u), b.flux[0].eval_real(&u));
        assert_eq!(neural_ec_flux(&b, 0, &u, &v), neural_ec_flux(&b, 0, &v, &u));
        let z = NetworkBundle::zeros(&small_spec(2, 1)).unwrap();
        assert_eq!(neural_ec_flux(&z, 0, &u, &v), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_hessian_solve_divides_by_shift() {
        let z = NetworkBundle::zeros(&small_spec(3, 1)).unwrap();
        let x = regularized_hessian_solve(&z, 4.0, &[0.1, 0.2, 0.3], &[1.0, -2.0, 8.0]).unwrap();
        assert_eq!(x, vec![0.25, -0.5, 2.0]);
    }

    #[test]
    fn es_flux_equal_states_and_lax_friedrichs_limit() {
        let b = NetworkBundle::init(&small_spec(2, 1), 4).unwrap();
        let u = [0.3, -0.4];
        let ws = EdgeWorkspace::new(&b, 0, &u, &u, 0.5, 0.1, 0.01).unwrap();
        assert_eq!(neural_es_flux(&b, 0, &ws), b.flux[0].eval_real(&u));

        // η' = u and η'' = I with λ = 1 reduce to a local Lax–Friedrichs flux.
        let (um, up) = ([0.2, 0.5], [-0.3, 0.9]);
        let mut ws = EdgeWorkspace::new(&b, 0, &um, &up, 1.0, 0.1, 0.01).unwrap();
        ws.grad_minus = um.to_vec();
        ws.grad_plus = up.to_vec();
        ws.factor = vec![1.0, 0.0, 0.0, 1.0];
        ws.speed = 1.0;
        let f = neural_es_flux(&b, 0, &ws);
        let c = neural_ec_flux(&b, 0, &um, &up);
        for i in 0..2 {
            assert!((f[i] - (c[i] - 0.5 * (up[i] - um[i]))).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_field_has_zero_rhs() {
        for bc in [BoundarySpec::Periodic, BoundarySpec::Dirichlet { left: vec![0.4, -0.2], right: vec![0.4, -0.2] }] {
            let s = scheme(2, 6, 7, bc);
            let f = StateField::from_rows(&vec![vec![0.4, -0.2]; 6]).unwrap();
            assert_eq!(s.rhs(&f).unwrap().values.max_abs(), 0.0);
        }
    }

    #[test]
    fn periodic_rhs_conserves() {
        for p in 1..=3 {
            let s = scheme(p, 16, p as u64, BoundarySpec::Periodic);
            let f = random_field(16, p, 9);
            let r = s.rhs(&f).unwrap();
            for i in 0..p {
                let total: f64 = r.values.data.iter().skip(i).step_by(p).sum::<f64>() / 16.0;
                assert!(total.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_rhs_matches_edge_by_edge_assembly() {
        for literal in [false, true] {
            let mut s = scheme(1, 4, 11, BoundarySpec::Periodic);
            s.literal_speed_stencil = literal;
            let f = random_field(4, 1, 12);
            let r = s.rhs(&f).unwrap();
            let (m, pl) = reconstruct_interfaces(&f, &BoundarySpec::Periodic).unwrap();
            let dx = 0.25;
            let flux: Vec<f64> = (0..4)
                .map(|e| {
                    let mut ws = EdgeWorkspace::new(&s.bundle, 0, m.row(e), pl.row(e), s.shift(), dx, s.dt).unwrap();
                    if literal {
                        let prev = (e + 3) % 4;
                        ws.speed = s.bundle.wave_speed(0, pl.row(e), dx, s.dt).max(s.bundle.wave_speed(0, m.row(prev), dx, s.dt));
                    }
                    neural_es_flux(&s.bundle, 0, &ws)[0]
                })
                .collect();
            for j in 0..4 {
                let expect = -(flux[j] - flux[(j + 3) % 4]) / dx;
                assert!((r.values.data[j] - expect).abs() < 1e-12, "{literal} {j}: {} vs {expect}", r.values.data[j]);
            }
        }
    }

    #[test]
    fn dirichlet_rhs_uses_ghosts() {
        let bc = BoundarySpec::Dirichlet { left: vec![0.5], right: vec![-0.5] };
        let s = scheme(1, 5, 13, bc.clone());
        let f = random_field(5, 1, 14);
        let r = s.rhs(&f).unwrap();
        let (m, pl) = reconstruct_interfaces(&f, &bc).unwrap();
        let dx = 0.2;
        let flux: Vec<f64> = (0..6)
            .map(|e| {
                let ws = EdgeWorkspace::new(&s.bundle, 0, m.row(e), pl.row(e), s.shift(), dx, s.dt).unwrap();
                neural_es_flux(&s.bundle, 0, &ws)[0]
            })
            .collect();
        for j in 0..5 {
            assert!((r.values.data[j] + (flux[j + 1] - flux[j]) / dx).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_rhs_conserves() {
        let b = NetworkBundle::init(&small_spec(1, 2), 3).unwrap();
        let geom = Geometry::Two(Grid2D::new(5, 4, (0.0, 1.0), (0.0, 2.0)).unwrap());
        let s = NeuralScheme::new(b, &geom, BoundarySpec::Periodic, 0.01).unwrap();
        let r = s.rhs(&random_field(20, 1, 3)).unwrap();
        assert!(r.values.data.iter().sum::<f64>().abs() < 1e-12);
        assert!(NeuralScheme::new(s.bundle.clone(), &geom, BoundarySpec::Dirichlet { left: vec![0.0], right: vec![0.0] }, 0.01)
            .is_err());
    }

    #[test]
    fn speed_is_cfl_bounded() {
        let s = scheme(2, 8, 15, BoundarySpec::Periodic);
        let f = random_field(8, 2, 16);
        for e in s.fluxes(&f).unwrap() {
            assert!(e.speed.data.iter().all(|&l| l > 0.0 && l * s.dt / 0.125 <= 1.0 + 1e-15));
        }
    }

    #[test]
    fn rollout_gradient_matches_finite_differences() {
        // two-step rollout on a 4-cell Burgers-shaped problem
        let s = scheme(1, 4, 17, BoundarySpec::Periodic);
        let f = random_field(4, 1, 18);
        let loss = |t: &mut Tape, bundle: &NetworkBundle, param: bool| {
            let net = if param { bundle.bind(t, |t, m| t.param(m)) } else { bundle.bind_constant(t) };
            let cfg = s.config();
            let u0 = t.constant(f.values.clone());
            let mut rhs = |o: &mut Tape, u: &Var| rhs_ops(o, &cfg, &net, u);
            let u1 = crate::integrate::step_ops(t, &mut rhs, &u0, s.dt, Stepper::SspRk2).unwrap();
            let u2 = crate::integrate::step_ops(t, &mut rhs, &u1, s.dt, Stepper::SspRk2).unwrap();
            let y = t.sum_squares(&u2);
            (y, net.leaves)
        };
        let mut t = Tape::new();
        let (y, leaves) = loss(&mut t, &s.bundle, true);
        let g: Vec<f64> = t.backward(&[(y, 1.0)], &leaves).into_iter().flat_map(|m| m.data).collect();
        let flat = s.bundle.flatten();
        let eval = |v: &[f64]| {
            let mut b = s.bundle.clone();
            b.set_flat(v).unwrap();
            let mut t = Tape::new();
            let (y, _) = loss(&mut t, &b, false);
            t.value(&y).data[0]
        };
        for i in 0..flat.len() {
            let h = 1e-6;
            let (mut a, mut c) = (flat.clone(), flat.clone());
            a[i] += h;
            c[i] -= h;
            let fd = (eval(&a) - eval(&c)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (fd.abs().max(1e-3)), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn dissipation_is_non_negative(seed in 0u64..10_000, epoch in 0u32..60) {
            let b = NetworkBundle::init(&small_spec(3, 1), seed).unwrap();
            let mut r = rng::stream(seed, Purpose::Validation, 3);
            let um: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let up: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let shift = Regularization::default().shift(Phase::Training { epoch });
            let ws = EdgeWorkspace::new(&b, 0, &um, &up, shift, 0.1, 0.01).unwrap();
            prop_assert!(ws.dissipation() >= -1e-10);
        }
    }
}
