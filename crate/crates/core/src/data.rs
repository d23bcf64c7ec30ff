//! Initial-condition families, reference trajectories, windows and noise.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::classical::{solve_reference, Law};
use crate::exec::Executor;
use crate::grid::{BoundarySpec, Geometry, Grid1D, Grid2D, StateField};
use crate::linalg::Mat;
use crate::rng::{self, Purpose, StreamRng};
use crate::{Error, Result};

/// Largest κ of the indexed evaluation families.
pub const N_ENT: u32 = 100;

/// Attempts before a random family gives up on drawing an admissible state.
const MAX_RESAMPLE: usize = 100;

/// Interface between the smooth and the damped part of the Euler profile.
pub const EULER_X1: f64 = 3.29867;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Burgers1DTrain,
    Burgers1DTest,
    Burgers1DEntropy,
    ShallowWaterTrain,
    ShallowWaterTest,
    ShallowWaterEntropy,
    EulerTrain,
    EulerTest,
    Sod,
    ShuOsher,
    Burgers2DTrain,
    Burgers2DTest,
    Burgers2DSine,
    Burgers2DGaussian,
    Burgers2DAsymmetric,
}

/// How a family chooses its member.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Parameters drawn from a seeded stream.
    Random,
    /// Deterministic member selected by κ ∈ {0..N_ENT}.
    Indexed,
    /// A single fixed member.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    Periodic,
    /// Constant ghost states taken from the outermost cells of the initial state.
    Dirichlet,
}

impl BcKind {
    pub fn resolve(&self, initial: &Mat) -> BoundarySpec {
        match self {
            BcKind::Periodic => BoundarySpec::Periodic,
            BcKind::Dirichlet => BoundarySpec::dirichlet_from_field(initial),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            BcKind::Periodic => "periodic",
            BcKind::Dirichlet => "dirichlet",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "periodic" => Some(BcKind::Periodic),
            "dirichlet" => Some(BcKind::Dirichlet),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Burgers1DParams {
    pub alpha: f64,
    pub beta: f64,
}

/// Riemann data for shallow water; left state where `x < x0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DamBreak {
    pub h_l: f64,
    pub h_r: f64,
    pub u_l: f64,
    pub u_r: f64,
    pub x0: f64,
}

/// Parameters of the Euler profile with a sinusoidal density region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerParams {
    pub rho_l: f64,
    pub eps: f64,
    pub p_l: f64,
    pub p_r: f64,
    pub u_l: f64,
    pub x0: f64,
}

impl EulerParams {
    /// Centre of the training band.
    pub const HAT: EulerParams = EulerParams { rho_l: 3.857135, eps: 0.2, p_l: 10.32333, p_r: 1.0, u_l: 2.62936, x0: -4.0 };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Burgers2DParams {
    pub alpha: f64,
    pub beta: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Family {
    pub const ALL: [Family; 15] = [
        Family::Burgers1DTrain,
        Family::Burgers1DTest,
        Family::Burgers1DEntropy,
        Family::ShallowWaterTrain,
        Family::ShallowWaterTest,
        Family::ShallowWaterEntropy,
        Family::EulerTrain,
        Family::EulerTest,
        Family::Sod,
        Family::ShuOsher,
        Family::Burgers2DTrain,
        Family::Burgers2DTest,
        Family::Burgers2DSine,
        Family::Burgers2DGaussian,
        Family::Burgers2DAsymmetric,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Family::Burgers1DTrain => "burgers1d-train",
            Family::Burgers1DTest => "burgers1d-test",
            Family::Burgers1DEntropy => "burgers1d-entropy",
            Family::ShallowWaterTrain => "shallow-water-train",
            Family::ShallowWaterTest => "shallow-water-test",
            Family::ShallowWaterEntropy => "shallow-water-entropy",
            Family::EulerTrain => "euler-train",
            Family::EulerTest => "euler-test",
            Family::Sod => "sod",
            Family::ShuOsher => "shu-osher",
            Family::Burgers2DTrain => "burgers2d-train",
            Family::Burgers2DTest => "burgers2d-test",
            Family::Burgers2DSine => "burgers2d-sine",
            Family::Burgers2DGaussian => "burgers2d-gaussian",
            Family::Burgers2DAsymmetric => "burgers2d-asymmetric",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Family::ALL.into_iter().find(|f| f.tag() == tag)
    }

    pub fn law(&self) -> Law {
        use Family::*;
        match self {
            Burgers1DTrain | Burgers1DTest | Burgers1DEntropy => Law::Burgers1D,
            ShallowWaterTrain | ShallowWaterTest | ShallowWaterEntropy => Law::shallow_water(),
            EulerTrain | EulerTest | Sod | ShuOsher => Law::euler(),
            Burgers2DTrain | Burgers2DTest | Burgers2DSine | Burgers2DGaussian | Burgers2DAsymmetric => Law::Burgers2D,
        }
    }

    pub fn sampling(&self) -> Sampling {
        use Family::*;
        match self {
            Burgers1DTrain | ShallowWaterTrain | EulerTrain | Burgers2DTrain => Sampling::Random,
            Burgers1DTest | ShallowWaterTest | EulerTest | Burgers2DTest => Sampling::Fixed,
            _ => Sampling::Indexed,
        }
    }

    pub fn bc_kind(&self) -> BcKind {
        match self.law() {
            Law::ShallowWater { .. } | Law::Euler { .. } => BcKind::Dirichlet,
            _ => BcKind::Periodic,
        }
    }

    /// The family's domain discretised with `n` cells per direction.
    pub fn geometry(&self, n: usize) -> Result<Geometry> {
        Ok(match self.law() {
            Law::Burgers1D => Geometry::One(Grid1D::new(n, 0.0, 2.0 * PI)?),
            Law::ShallowWater { .. } | Law::Euler { .. } => Geometry::One(Grid1D::new(n, -5.0, 5.0)?),
            Law::Burgers2D => Geometry::Two(Grid2D::new(n, n, (0.0, 1.0), (0.0, 1.0))?),
        })
    }

    /// Evaluates a family member at the cell centres of `geom`.
    ///
    /// `index` is the trajectory index for random families (combined with
    /// `seed` and `purpose` to key the stream) and κ for indexed families.
    pub fn sample(&self, geom: &Geometry, seed: u64, purpose: Purpose, index: u64) -> Result<StateField> {
        let law = self.law();
        if law.dims() != geom.dims() {
            return Err(Error::Shape(format!("{} needs a {}D grid", self.tag(), law.dims())));
        }
        match self.sampling() {
            Sampling::Random => {
                let mut r = rng::stream(seed, purpose, index);
                for _ in 0..MAX_RESAMPLE {
                    let field = self.draw(geom, &mut r)?;
                    if inadmissible_cell(&law, &field).is_none() {
                        return Ok(field);
                    }
                }
                Err(Error::Invalid(format!("{}: no admissible draw after {MAX_RESAMPLE} attempts", self.tag())))
            }
            Sampling::Indexed => {
                if index > N_ENT as u64 {
                    return Err(Error::Invalid(format!("κ = {index} outside 0..={N_ENT}")));
                }
                let field = self.member(geom, index as u32)?;
                match inadmissible_cell(&law, &field) {
                    Some(cell) => Err(Error::Inadmissible { cell }),
                    None => Ok(field),
                }
            }
            Sampling::Fixed => {
                let field = self.member(geom, 0)?;
                match inadmissible_cell(&law, &field) {
                    Some(cell) => Err(Error::Inadmissible { cell }),
                    None => Ok(field),
                }
            }
        }
    }

    fn draw(&self, geom: &Geometry, r: &mut StreamRng) -> Result<StateField> {
        match self {
            Family::Burgers1DTrain => {
                let p = Burgers1DParams { alpha: rng::uniform(r, 0.75, 1.25), beta: rng::uniform(r, -0.25, 0.25) };
                burgers1d(geom, p)
            }
            Family::ShallowWaterTrain => {
                let (wl, wr) = (rng::uniform(r, -0.2, 0.2), rng::uniform(r, -0.2, 0.2));
                let (wul, wur, wx) = (rng::uniform(r, -0.1, 0.1), rng::uniform(r, -0.1, 0.1), rng::uniform(r, -0.1, 0.1));
                dam_break(geom, DamBreak { h_l: 3.5 + wl, h_r: 1.0 + wr, u_l: wul, u_r: wur, x0: wx })
            }
            Family::EulerTrain => {
                let h = EulerParams::HAT;
                let mut band = |c: f64| {
                    let (a, b) = (c * 0.9, c * 1.1);
                    rng::uniform(r, a.min(b), a.max(b))
                };
                let p = EulerParams {
                    rho_l: band(h.rho_l),
                    eps: band(h.eps),
                    p_l: band(h.p_l),
                    p_r: band(h.p_r),
                    u_l: band(h.u_l),
                    x0: band(h.x0),
                };
                euler_profile(geom, &Law::euler(), p)
            }
            Family::Burgers2DTrain => {
                let p = Burgers2DParams {
                    alpha: rng::uniform(r, 0.75, 1.25),
                    beta: rng::uniform(r, -0.25, 0.25),
                    x0: rng::uniform(r, 0.5, 1.5),
                    y0: rng::uniform(r, -0.5, 0.5),
                };
                burgers2d(geom, p)
            }
            _ => Err(Error::Invalid(format!("{} is not a random family", self.tag()))),
        }
    }

    fn member(&self, geom: &Geometry, kappa: u32) -> Result<StateField> {
        let k = kappa as f64;
        match self {
            Family::Burgers1DTest => burgers1d(geom, Burgers1DParams { alpha: 1.05609, beta: 0.1997 }),
            Family::Burgers1DEntropy => {
                let freq = 1.0 + (kappa / 20) as f64;
                cells_1d(geom, |x| vec![(0.5 + 0.01 * k) * libm::sin(freq * x + 0.01 * k)])
            }
            Family::ShallowWaterTest => {
                dam_break(geom, DamBreak { h_l: 3.5691196, h_r: 1.178673, u_l: -0.064667, u_r: -0.045197, x0: 0.003832 })
            }
            Family::ShallowWaterEntropy => {
                cells_1d(geom, |x| vec![if x < 0.01 * k { 6.0 - 0.01 * k } else { 0.1 + 0.01 * k }, 0.0])
            }
            Family::EulerTest => euler_profile(geom, &Law::euler(), EulerParams::HAT),
            Family::Sod => {
                let gamma = euler_gamma(&self.law());
                let x0 = -0.3 + 0.6 * (2.0 * k) / N_ENT as f64;
                cells_1d(geom, |x| {
                    let (rho, p) = if x <= x0 { (3.5, 10.0 - 0.01 * k) } else { (0.12 + 0.01 * k, 1.0 + 0.01 * k) };
                    vec![rho, 0.0, p / (gamma - 1.0)]
                })
            }
            Family::ShuOsher => euler_profile(
                geom,
                &self.law(),
                EulerParams {
                    rho_l: 3.857135,
                    eps: 0.1 + 0.005 * k,
                    p_l: 10.33333 - 0.01 * k,
                    p_r: 1.0 + 0.01 * k,
                    u_l: 2.629 - 0.01 * k,
                    x0: -0.8 + 0.01 * k,
                },
            ),
            Family::Burgers2DTest => {
                burgers2d(geom, Burgers2DParams { alpha: 1.004777, beta: 0.106782, x0: 1.032833, y0: 0.034137 })
            }
            Family::Burgers2DSine => {
                let k1 = (kappa % 5) as f64;
                let k2 = ((2 + kappa) % 5) as f64;
                let amp = 0.5 + 0.05 * k;
                cells_2d(geom, |x, y| amp * libm::sin(2.0 * PI * k1 * x + 0.1 * k) * libm::sin(2.0 * PI * k2 * y + 0.2 * k))
            }
            Family::Burgers2DGaussian => {
                let x0 = 0.2 * ((kappa % 5) as f64 - 2.0);
                let y0 = 0.2 * ((kappa / 5) as f64 - 2.0);
                let sx = 0.1 + 0.02 * (kappa % 3) as f64;
                let sy = 0.1 + 0.02 * (kappa / 3) as f64;
                let amp = 0.8 + 0.02 * k;
                cells_2d(geom, |x, y| {
                    amp * libm::exp(-(x - x0) * (x - x0) / (2.0 * sx * sx) - (y - y0) * (y - y0) / (2.0 * sy * sy))
                })
            }
            Family::Burgers2DAsymmetric => {
                let x0 = 0.3 * ((kappa % 3) as f64 - 1.0);
                let y0 = 0.3 * ((kappa / 3) as f64 - 1.0);
                let amp = 0.5 + 0.05 * k;
                cells_2d(geom, |x, y| amp * (x - x0) * libm::exp(-(x - x0) * (x - x0) - (y - y0) * (y - y0)))
            }
            _ => Err(Error::Invalid(format!("{} has no indexed members", self.tag()))),
        }
    }
}

fn euler_gamma(law: &Law) -> f64 {
    match law {
        Law::Euler { gamma } => *gamma,
        _ => 1.4,
    }
}

fn inadmissible_cell(law: &Law, field: &StateField) -> Option<usize> {
    (0..field.n_cells()).find(|&j| !law.is_admissible(field.cell(j)))
}

fn grid_1d(geom: &Geometry) -> Result<&Grid1D> {
    match geom {
        Geometry::One(g) => Ok(g),
        Geometry::Two(_) => Err(Error::Shape("expected a 1D grid".into())),
    }
}

fn cells_1d(geom: &Geometry, f: impl Fn(f64) -> Vec<f64>) -> Result<StateField> {
    let rows: Vec<Vec<f64>> = grid_1d(geom)?.centers().into_iter().map(f).collect();
    StateField::from_rows(&rows)
}

fn cells_2d(geom: &Geometry, f: impl Fn(f64, f64) -> f64) -> Result<StateField> {
    let g = match geom {
        Geometry::Two(g) => g,
        Geometry::One(_) => return Err(Error::Shape("expected a 2D grid".into())),
    };
    let mut values = vec![0.0; g.nx * g.ny];
    for i in 0..g.nx {
        for j in 0..g.ny {
            let (x, y) = g.center(i, j);
            values[g.index(i, j)] = f(x, y);
        }
    }
    StateField::scalar(&values)
}

/// `u(x, 0) = α sin(x) + β`.
pub fn burgers1d(geom: &Geometry, p: Burgers1DParams) -> Result<StateField> {
    cells_1d(geom, |x| vec![p.alpha * libm::sin(x) + p.beta])
}

/// Conserved variables `(h, hu)` of a dam-break.
pub fn dam_break(geom: &Geometry, p: DamBreak) -> Result<StateField> {
    cells_1d(geom, |x| {
        let (h, u) = if x < p.x0 { (p.h_l, p.u_l) } else { (p.h_r, p.u_r) };
        vec![h, h * u]
    })
}

/// Conserved variables `(ρ, ρu, E)` of the Euler profile.
pub fn euler_profile(geom: &Geometry, law: &Law, p: EulerParams) -> Result<StateField> {
    let gamma = euler_gamma(law);
    cells_1d(geom, |x| {
        let (rho, u, pr) = if x <= p.x0 {
            (p.rho_l, p.u_l, p.p_l)
        } else if x <= EULER_X1 {
            (1.0 + p.eps * libm::sin(5.0 * x), 0.0, p.p_r)
        } else {
            let d = x - EULER_X1;
            (1.0 + p.eps * libm::sin(5.0 * x) * libm::exp(-d * d * d * d), 0.0, p.p_r)
        };
        vec![rho, rho * u, pr / (gamma - 1.0) + 0.5 * rho * u * u]
    })
}

/// `u(x, y, 0) = α sin(2πx + x0) cos(2πy + y0) + β`.
pub fn burgers2d(geom: &Geometry, p: Burgers2DParams) -> Result<StateField> {
    cells_2d(geom, |x, y| p.alpha * libm::sin(2.0 * PI * x + p.x0) * libm::cos(2.0 * PI * y + p.y0) + p.beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Windowing {
    /// One window starting at the first snapshot.
    Full,
    /// Every start index `0..=L−L_train`.
    Sliding,
}

impl Windowing {
    pub fn tag(&self) -> &'static str {
        match self {
            Windowing::Full => "full",
            Windowing::Sliding => "sliding",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "full" => Some(Windowing::Full),
            "sliding" => Some(Windowing::Sliding),
            _ => None,
        }
    }
}

/// Start indices of the training windows of a trajectory with `l_total`
/// steps.
pub fn segment_windows(l_total: usize, l_train: usize, mode: Windowing) -> Result<Vec<usize>> {
    if l_train > l_total {
        return Err(Error::Invalid(format!("window length {l_train} exceeds trajectory length {l_total}")));
    }
    Ok(match mode {
        Windowing::Full => vec![0],
        Windowing::Sliding => (0..=l_total - l_train).collect(),
    })
}

/// Which initial-condition stream a dataset draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn purpose(&self) -> Purpose {
        match self {
            Split::Train => Purpose::InitialCondition,
            Split::Validation => Purpose::Validation,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            _ => None,
        }
    }
}

/// Everything needed to regenerate a clean dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub family: Family,
    pub geometry: Geometry,
    pub dt: f64,
    pub n_traj: usize,
    /// Steps simulated per trajectory.
    pub l_total: usize,
    /// Steps per training window.
    pub l_train: usize,
    pub windowing: Windowing,
    pub seed: u64,
    pub split: Split,
}

impl DatasetSpec {
    pub fn law(&self) -> Law {
        self.family.law()
    }

    pub fn bc_kind(&self) -> BcKind {
        self.family.bc_kind()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if self.n_traj == 0 {
            return Err(Error::Invalid("dataset needs at least one trajectory".into()));
        }
        if self.law().dims() != self.geometry.dims() {
            return Err(Error::Shape(format!("{} needs a {}D grid", self.family.tag(), self.law().dims())));
        }
        segment_windows(self.l_total, self.l_train, self.windowing).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub xi: f64,
    pub seed: u64,
}

/// Reference trajectories plus the windows cut from them.
///
/// Trajectories are stored once; overlapping windows share snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub spec: DatasetSpec,
    /// Clean snapshots, `l_total + 1` per trajectory.
    pub trajectories: Vec<Vec<StateField>>,
    pub starts: Vec<usize>,
    /// Mean absolute value over every clean entry.
    pub normalizer: f64,
    pub noise: Option<NoiseSpec>,
    observed: Option<Vec<Vec<StateField>>>,
}

/// Mean of `|u|` over all snapshots, cells and components.
pub fn mean_abs(snapshots: &[Vec<StateField>]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in snapshots.iter().flatten() {
        sum += s.values.data.iter().map(|v| v.abs()).sum::<f64>();
        count += s.values.data.len();
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

impl TrajectoryDataset {
    /// Assembles a dataset from clean trajectories, checking their shape.
    pub fn from_parts(spec: DatasetSpec, trajectories: Vec<Vec<StateField>>, noise: Option<NoiseSpec>) -> Result<Self> {
        spec.validate()?;
        let rows = spec.geometry.n_rows();
        let p = spec.law().p();
        if trajectories.len() != spec.n_traj {
            return Err(Error::Shape(format!("{} trajectories, header says {}", trajectories.len(), spec.n_traj)));
        }
        for (k, t) in trajectories.iter().enumerate() {
            if t.len() != spec.l_total + 1 {
                return Err(Error::Shape(format!("trajectory {k} has {} snapshots, expected {}", t.len(), spec.l_total + 1)));
            }
            if let Some(s) = t.iter().find(|s| s.n_cells() != rows || s.p() != p) {
                return Err(Error::Shape(format!("trajectory {k} holds a {}x{} snapshot", s.n_cells(), s.p())));
            }
        }
        let starts = segment_windows(spec.l_total, spec.l_train, spec.windowing)?;
        let normalizer = mean_abs(&trajectories);
        let ds = Self { spec, trajectories, starts, normalizer, noise: None, observed: None };
        match noise {
            Some(n) => ds.add_noise(n.xi, n.seed),
            None => Ok(ds),
        }
    }

    pub fn n_windows(&self) -> usize {
        self.trajectories.len() * self.starts.len()
    }

    /// `(trajectory, start)` of window `k`.
    pub fn window_index(&self, k: usize) -> (usize, usize) {
        (k / self.starts.len(), self.starts[k % self.starts.len()])
    }

    /// Observed (possibly noisy) snapshots of window `k`.
    pub fn window(&self, k: usize) -> &[StateField] {
        let (t, s) = self.window_index(k);
        let src = self.observed.as_ref().unwrap_or(&self.trajectories);
        &src[t][s..=s + self.spec.l_train]
    }

    pub fn clean_window(&self, k: usize) -> &[StateField] {
        let (t, s) = self.window_index(k);
        &self.trajectories[t][s..=s + self.spec.l_train]
    }

    /// Observed snapshots of a whole trajectory.
    pub fn observed(&self, traj: usize) -> &[StateField] {
        &self.observed.as_ref().unwrap_or(&self.trajectories)[traj]
    }

    /// `ũ = u + ξ·mean|u|·ζ` with standard normal `ζ` per trajectory, time,
    /// cell and component. The clean payload is kept.
    pub fn add_noise(mut self, xi: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::Invalid(format!("noise coefficient must lie in [0, 1], got {xi}")));
        }
        self.noise = Some(NoiseSpec { xi, seed });
        if xi == 0.0 {
            self.observed = None;
            return Ok(self);
        }
        let scale = xi * self.normalizer;
        let observed = self
            .trajectories
            .iter()
            .enumerate()
            .map(|(k, traj)| {
                let mut r = rng::stream(seed, Purpose::Noise, k as u64);
                traj.iter()
                    .map(|s| {
                        let mut v = s.values.clone();
                        for x in &mut v.data {
                            *x += scale * rng::normal(&mut r);
                        }
                        StateField { values: v }
                    })
                    .collect()
            })
            .collect();
        self.observed = Some(observed);
        Ok(self)
    }
}

/// One clean reference trajectory of `spec`.
pub fn generate_trajectory(spec: &DatasetSpec, k: usize) -> Result<Vec<StateField>> {
    let wrap = |e| Error::Trajectory { index: k, source: Box::new(e) };
    let ic = spec.family.sample(&spec.geometry, spec.seed, spec.split.purpose(), k as u64).map_err(wrap)?;
    let bc = spec.bc_kind().resolve(&ic.values);
    let run = solve_reference(&spec.law(), &ic, &spec.geometry, &bc, spec.dt, spec.l_total).map_err(wrap)?;
    Ok(run.states)
}

/// Solves, segments and (optionally) perturbs a dataset.
pub fn build_dataset<E: Executor>(spec: &DatasetSpec, noise: Option<NoiseSpec>, exec: &E) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let trajectories = exec.map(spec.n_traj, |k| generate_trajectory(spec, k)).into_iter().collect::<Result<Vec<_>>>()?;
    TrajectoryDataset::from_parts(spec.clone(), trajectories, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use proptest::prelude::*;

    fn spec(n_traj: usize, l: usize, lt: usize, w: Windowing) -> DatasetSpec {
        DatasetSpec {
            family: Family::Burgers1DTrain,
            geometry: Family::Burgers1DTrain.geometry(32).unwrap(),
            dt: 0.01,
            n_traj,
            l_total: l,
            l_train: lt,
            windowing: w,
            seed: 5,
            split: Split::Train,
        }
    }

    #[test]
    fn burgers_test_profile() {
        let g = Family::Burgers1DTest.geometry(16).unwrap();
        let f = Family::Burgers1DTest.sample(&g, 0, Purpose::InitialCondition, 0).unwrap();
        let x = grid_1d(&g).unwrap().center(3);
        assert_eq!(f.cell(3)[0], 1.05609 * libm::sin(x) + 0.1997);
    }

    #[test]
    fn burgers_entropy_kappa_zero() {
        let g = Family::Burgers1DEntropy.geometry(16).unwrap();
        let f = Family::Burgers1DEntropy.sample(&g, 0, Purpose::InitialCondition, 0).unwrap();
        for (j, x) in grid_1d(&g).unwrap().centers().into_iter().enumerate() {
            assert_eq!(f.cell(j)[0], 0.5 * libm::sin(x));
        }
    }

    #[test]
    fn sod_kappa_zero() {
        let g = Family::Sod.geometry(100).unwrap();
        let f = Family::Sod.sample(&g, 0, Purpose::InitialCondition, 0).unwrap();
        let centers = grid_1d(&g).unwrap().centers();
        let last_left = centers.iter().rposition(|&x| x <= -0.3).unwrap();
        let left = f.cell(last_left);
        assert_eq!(&left[..2], &[3.5, 0.0]);
        assert!((left[2] - 25.0).abs() < 1e-12);
        let right = f.cell(last_left + 1);
        assert_eq!(right[0], 0.12);
        assert!((right[2] - 1.0 / 0.4).abs() < 1e-15);
    }

    #[test]
    fn euler_test_profile_regions() {
        let g = Family::EulerTest.geometry(200).unwrap();
        let f = Family::EulerTest.sample(&g, 0, Purpose::InitialCondition, 0).unwrap();
        let h = EulerParams::HAT;
        let e = h.p_l / 0.4 + 0.5 * h.rho_l * h.u_l * h.u_l;
        assert_eq!(&f.cell(0)[..2], &[h.rho_l, h.rho_l * h.u_l]);
        assert!((f.cell(0)[2] - e).abs() < 1e-12);
        let x = grid_1d(&g).unwrap().center(100);
        assert_eq!(f.cell(100)[0], 1.0 + 0.2 * libm::sin(5.0 * x));
        assert_eq!(f.cell(100)[1], 0.0);
    }

    #[test]
    fn indexed_families_are_admissible() {
        for fam in Family::ALL.into_iter().filter(|f| f.sampling() == Sampling::Indexed) {
            let g = fam.geometry(if fam.law().dims() == 2 { 16 } else { 128 }).unwrap();
            for k in 0..=N_ENT as u64 {
                let f = fam.sample(&g, 0, Purpose::InitialCondition, k).unwrap();
                assert!(f.values.is_finite(), "{} κ = {k}", fam.tag());
            }
            assert!(fam.sample(&g, 0, Purpose::InitialCondition, 101).is_err());
        }
    }

    #[test]
    fn random_families_are_seeded() {
        for fam in [Family::Burgers1DTrain, Family::ShallowWaterTrain, Family::EulerTrain, Family::Burgers2DTrain] {
            let g = fam.geometry(16).unwrap();
            let a = fam.sample(&g, 3, Purpose::InitialCondition, 4).unwrap();
            assert_eq!(a, fam.sample(&g, 3, Purpose::InitialCondition, 4).unwrap());
            assert_ne!(a, fam.sample(&g, 3, Purpose::InitialCondition, 5).unwrap());
            assert_ne!(a, fam.sample(&g, 3, Purpose::Validation, 4).unwrap());
        }
        let wrong = Family::Burgers2DTrain.geometry(8).unwrap();
        assert!(Family::Burgers1DTrain.sample(&wrong, 0, Purpose::InitialCondition, 0).is_err());
    }

    #[test]
    fn tags_round_trip() {
        for f in Family::ALL {
            assert_eq!(Family::from_tag(f.tag()), Some(f));
        }
    }

    #[test]
    fn window_segmentation() {
        assert_eq!(segment_windows(20, 20, Windowing::Full).unwrap(), vec![0]);
        assert_eq!(segment_windows(300, 20, Windowing::Sliding).unwrap().len(), 281);
        assert_eq!(segment_windows(20, 20, Windowing::Sliding).unwrap(), vec![0]);
        assert!(segment_windows(5, 6, Windowing::Full).is_err());
    }

    #[test]
    fn dataset_shapes_and_determinism() {
        let s = spec(3, 6, 4, Windowing::Sliding);
        let a = build_dataset(&s, None, &Sequential).unwrap();
        assert_eq!(a.n_windows(), 9);
        for k in 0..a.n_windows() {
            assert_eq!(a.window(k).len(), 5);
        }
        assert_eq!(a.window_index(4), (1, 1));
        assert_eq!(a.window(4)[0], a.trajectories[1][1]);
        assert_eq!(a, build_dataset(&s, None, &Sequential).unwrap());
        let expect = mean_abs(&a.trajectories);
        assert_eq!(a.normalizer, expect);
    }

    #[test]
    fn zero_noise_is_identity() {
        let a = build_dataset(&spec(2, 3, 3, Windowing::Full), None, &Sequential).unwrap();
        let b = a.clone().add_noise(0.0, 9).unwrap();
        assert_eq!(a.window(1), b.window(1));
        assert!(a.clone().add_noise(1.5, 0).is_err());
    }

    #[test]
    fn noise_scale_matches_mean_abs() {
        let s = DatasetSpec { family: Family::Burgers1DTrain, ..spec(1, 0, 0, Windowing::Full) };
        let constant = StateField::scalar(&vec![2.0; 32]).unwrap();
        let mut ds = TrajectoryDataset::from_parts(s, vec![vec![constant]], None).unwrap();
        ds.trajectories = vec![vec![StateField::scalar(&vec![2.0; 16_000]).unwrap()]];
        ds.normalizer = mean_abs(&ds.trajectories);
        let noisy = ds.clone().add_noise(1.0, 4).unwrap();
        let d: Vec<f64> = noisy.observed(0)[0].values.data.iter().map(|v| v - 2.0).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = libm::sqrt(d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (d.len() - 1) as f64);
        assert!((sd - 2.0).abs() < 0.1, "{sd}");
        assert_eq!(noisy, ds.clone().add_noise(1.0, 4).unwrap());
        assert_eq!(noisy.trajectories, ds.trajectories);
    }

    #[test]
    fn shape_errors_from_parts() {
        let s = spec(1, 2, 2, Windowing::Full);
        let f = StateField::scalar(&[0.0; 32]).unwrap();
        assert!(TrajectoryDataset::from_parts(s.clone(), vec![vec![f.clone(); 2]], None).is_err());
        assert!(TrajectoryDataset::from_parts(s, vec![vec![f; 3]], None).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn training_draws_are_admissible(seed in 0u64..1_000_000, idx in 0u64..1000) {
            for fam in [Family::ShallowWaterTrain, Family::EulerTrain] {
                let g = fam.geometry(64).unwrap();
                let f = fam.sample(&g, seed, Purpose::InitialCondition, idx).unwrap();
                let law = fam.law();
                prop_assert!((0..64).all(|j| law.is_admissible(f.cell(j))));
            }
        }
    }
}
