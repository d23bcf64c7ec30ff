//! Post-hoc diagnostics of rollouts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Eager;
use crate::classical::Law;
use crate::grid::{Geometry, Grid1D, StateField};
use crate::integrate::Rollout;
use crate::networks::NetworkBundle;
use crate::{Error, Result};

/// Flux and entropy of the model being evaluated.
pub trait Model {
    fn flux(&self, dir: usize, u: &[f64]) -> Vec<f64>;
    fn entropy(&self, u: &[f64]) -> f64;
    fn entropy_gradient(&self, u: &[f64]) -> Vec<f64>;

    /// Per-cell `η(u_j)` and `Σ_d η'(u_j)ᵀF_d(u_j)`.
    fn cell_terms(&self, field: &StateField, dims: usize) -> (Vec<f64>, Vec<f64>) {
        (0..field.n_cells())
            .map(|j| {
                let u = field.cell(j);
                let v = self.entropy_gradient(u);
                let flux = (0..dims).map(|d| dot(&self.flux(d, u), &v)).sum::<f64>();
                (self.entropy(u), flux)
            })
            .unzip()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

impl Model for NetworkBundle {
    fn flux(&self, dir: usize, u: &[f64]) -> Vec<f64> {
        self.flux[dir].eval_real(u)
    }

    fn cell_terms(&self, field: &StateField, dims: usize) -> (Vec<f64>, Vec<f64>) {
        let mut o = Eager;
        let net = self.bind_constant(&mut o);
        let u = field.values.clone();
        let jet = net.entropy.jet(&mut o, &u, 1);
        let n = field.n_cells();
        let mut flux_term = vec![0.0; n];
        for d in 0..dims {
            let f = net.flux[d].forward(&mut o, &u);
            for (k, dk) in jet.d1.iter().enumerate() {
                if let Some(dk) = dk {
                    for (j, acc) in flux_term.iter_mut().enumerate() {
                        *acc += dk.data[j] * f.data[j * f.cols + k];
                    }
                }
            }
        }
        (jet.v.data, flux_term)
    }

    fn entropy(&self, u: &[f64]) -> f64 {
        self.entropy.value(u)
    }

    fn entropy_gradient(&self, u: &[f64]) -> Vec<f64> {
        self.entropy.gradient(u)
    }
}

impl Model for Law {
    fn flux(&self, dir: usize, u: &[f64]) -> Vec<f64> {
        Law::flux(self, dir, u)
    }

    fn entropy(&self, u: &[f64]) -> f64 {
        Law::entropy(self, u)
    }

    fn entropy_gradient(&self, u: &[f64]) -> Vec<f64> {
        self.entropy_vars(u)
    }
}

/// Which flux term the entropy remainder subtracts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EntropyVariant {
    /// `Σ_j η'(û_j)ᵀF(û_j)` over every cell.
    #[default]
    Literal,
    /// `(η'ᵀF)` at the right boundary cell minus the left one; zero for
    /// periodic domains.
    Boundary,
}

impl EntropyVariant {
    pub fn tag(&self) -> &'static str {
        match self {
            EntropyVariant::Literal => "literal",
            EntropyVariant::Boundary => "boundary",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "literal" => Some(EntropyVariant::Literal),
            "boundary" => Some(EntropyVariant::Boundary),
            _ => None,
        }
    }
}

fn check_rollout(rollout: &Rollout, geom: &Geometry) -> Result<()> {
    let rows = geom.n_rows();
    if rollout.states.iter().any(|s| s.n_cells() != rows) {
        return Err(Error::Shape("rollout does not match the grid".into()));
    }
    Ok(())
}

/// `𝒞_i(t_l)`, indexed `[component][time]`.
///
/// For periodic domains the boundary fluxes cancel. Otherwise they are the
/// model flux at the outermost cells, integrated with left-endpoint
/// quadrature.
pub fn conservation_remainder<M: Model>(model: &M, rollout: &Rollout, geom: &Geometry, periodic: bool) -> Result<Vec<Vec<f64>>> {
    check_rollout(rollout, geom)?;
    let p = rollout.states[0].p();
    let vol = geom.cell_volume();
    let n = geom.n_rows();
    let mass0 = rollout.states[0].integral(vol);
    let mut out = vec![Vec::with_capacity(rollout.states.len()); p];
    let mut boundary = vec![0.0; p];
    for (l, s) in rollout.states.iter().enumerate() {
        if l > 0 && !periodic {
            let prev = &rollout.states[l - 1];
            let fa = model.flux(0, prev.cell(0));
            let fb = model.flux(0, prev.cell(n - 1));
            for i in 0..p {
                boundary[i] += (fa[i] - fb[i]) * rollout.dt;
            }
        }
        let mass = s.integral(vol);
        for i in 0..p {
            out[i].push(((mass[i] - mass0[i]) - boundary[i]).abs());
        }
    }
    Ok(out)
}

/// `𝒥(t_l)` for every snapshot of the rollout.
pub fn entropy_remainder<M: Model>(
    model: &M,
    rollout: &Rollout,
    geom: &Geometry,
    periodic: bool,
    variant: EntropyVariant,
) -> Result<Vec<f64>> {
    check_rollout(rollout, geom)?;
    let vol = geom.cell_volume();
    let dims = geom.dims();
    let n = geom.n_rows();
    let flux_term = |u: &[f64]| {
        let v = model.entropy_gradient(u);
        (0..dims).map(|d| dot(&model.flux(d, u), &v)).sum::<f64>()
    };
    let mut e0 = 0.0;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(rollout.states.len());
    for (l, s) in rollout.states.iter().enumerate() {
        let (eta, cell_flux) = model.cell_terms(s, dims);
        let total = eta.iter().sum::<f64>() * vol;
        if l == 0 {
            e0 = total;
        } else {
            acc += match variant {
                EntropyVariant::Literal => cell_flux.iter().sum::<f64>() * vol * rollout.dt,
                EntropyVariant::Boundary if periodic => 0.0,
                EntropyVariant::Boundary => {
                    let prev = &rollout.states[l - 1];
                    -(flux_term(prev.cell(n - 1)) - flux_term(prev.cell(0))) * rollout.dt
                }
            };
        }
        out.push(total - e0 - acc);
    }
    Ok(out)
}

/// `Σ_j |η(û_j(t₀))|·Δx`, the scale used to judge entropy remainders.
pub fn entropy_scale<M: Model>(model: &M, field: &StateField, geom: &Geometry) -> f64 {
    model.cell_terms(field, geom.dims()).0.iter().map(|e| e.abs()).sum::<f64>() * geom.cell_volume()
}

/// Relative L2 error, or the absolute norm when the reference vanishes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelError {
    pub value: f64,
    pub absolute: bool,
}

pub fn rel_l2_error(prediction: &StateField, reference: &StateField) -> Result<RelError> {
    if prediction.values.shape() != reference.values.shape() {
        return Err(Error::Shape("prediction and reference differ in shape".into()));
    }
    let diff: f64 = prediction.values.data.iter().zip(&reference.values.data).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = reference.values.data.iter().map(|v| v * v).sum();
    Ok(if norm == 0.0 {
        RelError { value: libm::sqrt(diff), absolute: true }
    } else {
        RelError { value: libm::sqrt(diff / norm), absolute: false }
    })
}

/// `(j, |u_{j+1} − u_j|)` of the largest undivided difference.
pub fn max_undivided_difference(field: &StateField, component: usize) -> (usize, f64) {
    let u = field.component(component);
    let mut best = (0, 0.0);
    for j in 0..u.len().saturating_sub(1) {
        let d = (u[j + 1] - u[j]).abs();
        if d > best.1 {
            best = (j, d);
        }
    }
    best
}

/// Centre of the cell left of the largest undivided difference.
pub fn shock_position(field: &StateField, component: usize, grid: &Grid1D) -> f64 {
    grid.center(max_undivided_difference(field, component).0)
}

/// Diagnostics of one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub times: Vec<f64>,
    /// `[component][time]`.
    pub conservation: Vec<Vec<f64>>,
    pub entropy: Vec<f64>,
    /// Relative L2 error per time when a reference exists.
    pub rel_l2: Option<Vec<f64>>,
    /// `Σ|η(û(t₀))|Δx`.
    pub entropy_scale: f64,
}

impl EvalReport {
    pub fn max_conservation(&self) -> f64 {
        self.conservation.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }

    pub fn max_entropy(&self) -> f64 {
        self.entropy.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_error(&self) -> Option<f64> {
        self.rel_l2.as_ref().and_then(|e| e.last().copied())
    }
}

/// Computes every metric of a rollout. `reference`, if given, must share
/// the rollout's time axis.
pub fn evaluate<M: Model>(
    model: &M,
    label: &str,
    rollout: &Rollout,
    geom: &Geometry,
    periodic: bool,
    variant: EntropyVariant,
    reference: Option<&Rollout>,
) -> Result<EvalReport> {
    let rel_l2 = match reference {
        Some(r) => {
            if r.states.len() != rollout.states.len() {
                return Err(Error::Shape("reference and rollout have different lengths".into()));
            }
            Some(
                rollout
                    .states
                    .iter()
                    .zip(&r.states)
                    .map(|(a, b)| rel_l2_error(a, b).map(|e| e.value))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    Ok(EvalReport {
        label: String::from(label),
        times: rollout.times(),
        conservation: conservation_remainder(model, rollout, geom, periodic)?,
        entropy: entropy_remainder(model, rollout, geom, periodic, variant)?,
        rel_l2,
        entropy_scale: entropy_scale(model, &rollout.states[0], geom),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::solve_reference;
    use crate::data::Family;
    use crate::grid::BoundarySpec;
    use crate::networks::NetworkSpec;
    use crate::rng::Purpose;
    use crate::scheme::NeuralScheme;

    fn burgers_geom(n: usize) -> (Geometry, Grid1D) {
        let g = Grid1D::new(n, 0.0, 2.0 * core::f64::consts::PI).unwrap();
        (Geometry::One(g.clone()), g)
    }

    struct PerCell<'a>(&'a NetworkBundle);

    impl Model for PerCell<'_> {
        fn flux(&self, dir: usize, u: &[f64]) -> Vec<f64> {
            self.0.flux(dir, u)
        }
        fn entropy(&self, u: &[f64]) -> f64 {
            self.0.entropy(u)
        }
        fn entropy_gradient(&self, u: &[f64]) -> Vec<f64> {
            self.0.entropy_gradient(u)
        }
    }

    #[test]
    fn batched_cell_terms_match_per_cell() {
        for (p, dims) in [(1, 1), (2, 1), (3, 1), (1, 2)] {
            let bundle = NetworkBundle::init(&NetworkSpec::standard(p, dims), 40 + p as u64).unwrap();
            let mut r = crate::rng::stream(p as u64, Purpose::Validation, 9);
            let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..p).map(|_| crate::rng::uniform(&mut r, -1.0, 2.0)).collect()).collect();
            let f = StateField::from_rows(&rows).unwrap();
            let (a, b) = (bundle.cell_terms(&f, dims), PerCell(&bundle).cell_terms(&f, dims));
            for (x, y) in a.0.iter().zip(&b.0).chain(a.1.iter().zip(&b.1)) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "p {p} dims {dims}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn initial_remainders_are_zero() {
        let (geom, _) = burgers_geom(32);
        let law = Law::Burgers1D;
        let ic = Family::Burgers1DTest.sample(&geom, 0, Purpose::InitialCondition, 0).unwrap();
        let r = solve_reference(&law, &ic, &geom, &BoundarySpec::Periodic, 0.01, 5).unwrap();
        for variant in [EntropyVariant::Literal, EntropyVariant::Boundary] {
            let rep = evaluate(&law, "x", &r, &geom, true, variant, Some(&r)).unwrap();
            assert_eq!(rep.conservation[0][0], 0.0);
            assert_eq!(rep.entropy[0], 0.0);
            assert!(rep.conservation[0].iter().all(|c| *c < 1e-12));
            assert!(rep.rel_l2.as_ref().unwrap().iter().all(|e| *e == 0.0));
        }
    }

    #[test]
    fn periodic_neural_rollout_conserves() {
        let (geom, _) = burgers_geom(32);
        let b = NetworkBundle::init(&NetworkSpec::standard(1, 1), 3).unwrap();
        let s = NeuralScheme::new(b, &geom, BoundarySpec::Periodic, 0.01).unwrap();
        let ic = Family::Burgers1DTest.sample(&geom, 0, Purpose::InitialCondition, 0).unwrap();
        let r = s.rollout(&ic, 20).unwrap();
        let c = conservation_remainder(&s.bundle, &r, &geom, true).unwrap();
        assert!(c[0].iter().enumerate().all(|(l, v)| *v <= 1e-12 * (l as f64).max(1.0)));
    }

    #[test]
    fn constant_rollout_with_zero_flux_has_zero_entropy_remainder() {
        let (geom, _) = burgers_geom(8);
        let mut b = NetworkBundle::zeros(&NetworkSpec::standard(1, 1)).unwrap();
        b.entropy = NetworkBundle::init(&NetworkSpec::standard(1, 1), 5).unwrap().entropy;
        let f = StateField::scalar(&[0.3; 8]).unwrap();
        let r = Rollout { states: vec![f; 6], dt: 0.1, t0: 0.0 };
        for v in [EntropyVariant::Literal, EntropyVariant::Boundary] {
            assert!(entropy_remainder(&b, &r, &geom, false, v).unwrap().iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn entropy_remainder_subsampling_is_consistent() {
        // the flux sum only samples t_s, so subsampled partial sums agree when
        // the flux term is constant in time
        let (geom, _) = burgers_geom(8);
        let law = Law::Burgers1D;
        let f = StateField::scalar(&[0.5, -0.2, 0.1, 0.4, 0.3, -0.1, 0.2, 0.0]).unwrap();
        let fine = Rollout { states: vec![f.clone(); 5], dt: 0.1, t0: 0.0 };
        let coarse = Rollout { states: vec![f; 3], dt: 0.2, t0: 0.0 };
        let a = entropy_remainder(&law, &fine, &geom, true, EntropyVariant::Literal).unwrap();
        let b = entropy_remainder(&law, &coarse, &geom, true, EntropyVariant::Literal).unwrap();
        for (i, v) in b.iter().enumerate() {
            assert!((a[2 * i] - v).abs() < 1e-14);
        }
    }

    #[test]
    fn dirichlet_boundary_fluxes_balance_mass() {
        let law = Law::shallow_water();
        let geom = Family::ShallowWaterTest.geometry(128).unwrap();
        let ic = Family::ShallowWaterTest.sample(&geom, 0, Purpose::InitialCondition, 0).unwrap();
        let bc = BoundarySpec::dirichlet_from_field(&ic.values);
        let r = solve_reference(&law, &ic, &geom, &bc, 0.005, 100).unwrap();
        let c = conservation_remainder(&law, &r, &geom, false).unwrap();
        assert!(c.iter().flatten().all(|v| *v < 1e-10), "{:?}", c[1].last());
    }

    #[test]
    fn rel_error_cases() {
        let a = StateField::scalar(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(rel_l2_error(&a, &a).unwrap(), RelError { value: 0.0, absolute: false });
        let b = StateField::scalar(&[1.1, -2.2, 3.3]).unwrap();
        assert!((rel_l2_error(&b, &a).unwrap().value - 0.1).abs() < 1e-12);
        let z = StateField::scalar(&[0.0; 3]).unwrap();
        let e = rel_l2_error(&b, &z).unwrap();
        assert!(e.absolute && (e.value - libm::sqrt(1.21 + 4.84 + 10.89)).abs() < 1e-12);
    }

    #[test]
    fn shock_position_cases() {
        let (_, g) = burgers_geom(10);
        let step = StateField::scalar(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(shock_position(&step, 0, &g), g.center(3));
        let (_, g) = burgers_geom(64);
        let sine = StateField::scalar(&g.centers().iter().map(|x| libm::sin(*x)).collect::<Vec<_>>()).unwrap();
        let x = shock_position(&sine, 0, &g);
        assert!((x - core::f64::consts::PI).abs() < 2.0 * g.dx);
    }

    #[test]
    fn reference_shock_travels_at_mean_state() {
        let fam = Family::Burgers1DTest;
        let geom = fam.geometry(256).unwrap();
        let g = match &geom {
            Geometry::One(g) => g.clone(),
            Geometry::Two(_) => unreachable!(),
        };
        let ic = fam.sample(&geom, 0, Purpose::InitialCondition, 0).unwrap();
        let r = solve_reference(&Law::Burgers1D, &ic, &geom, &BoundarySpec::Periodic, 0.01, 300).unwrap();
        let x2 = shock_position(&r.states[200], 0, &g);
        let x3 = shock_position(&r.states[300], 0, &g);
        assert!((x2 - (core::f64::consts::PI + 0.1997 * 2.0)).abs() <= 2.0 * g.dx, "{x2}");
        assert!(((x3 - x2) - 0.1997).abs() <= 2.0 * g.dx, "{}", x3 - x2);
    }
}
