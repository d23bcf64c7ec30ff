//! Two-stage training: recurrent data fit with entropy penalties, then
//! last-layer fine-tuning of the entropy network on perturbed predictions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{Eager, Ops, Tape};
use crate::data::TrajectoryDataset;
use crate::exec::Executor;
use crate::grid::{BoundarySpec, StateField};
use crate::integrate::{step_ops, Stepper};
use crate::linalg::Mat;
use crate::networks::{BoundBundle, NetworkBundle};
use crate::rng::{self, Purpose};
use crate::scheme::{rhs_ops, Layout, Phase, Regularization, RhsConfig};
use crate::{Error, Result};

/// Guard added to every denominator of the stage-1 loss.
pub const DIVISION_GUARD: f64 = 1e-30;

/// How `n_b` splits an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Batching {
    /// `n_b` batches per epoch.
    #[default]
    Count,
    /// Batches of `n_b` windows.
    Size,
}

/// Sum of squares dividing the stage-1 loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormalizerSource {
    /// `Σ‖û‖²` over the predicted rollout.
    #[default]
    Predictions,
    /// `Σ‖u‖²` over the observed window.
    Data,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: u32,
    pub n_b: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub stage2_steps: usize,
    pub batching: Batching,
    pub normalizer: NormalizerSource,
    pub reg: Regularization,
    pub literal_speed_stencil: bool,
    pub stepper: Stepper,
    pub seed: u64,
    /// Windows used for validation.
    pub validation_count: usize,
    /// Standard deviation of stage-2 perturbations relative to `mean|û|`.
    pub perturbation: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 1e-2,
            epochs: 50,
            n_b: 5,
            tau1: 1e-3,
            tau2: 1e-3,
            stage2_steps: 0,
            batching: Batching::Count,
            normalizer: NormalizerSource::Predictions,
            reg: Regularization::default(),
            literal_speed_stencil: false,
            stepper: Stepper::SspRk2,
            seed: 0,
            validation_count: 40,
            perturbation: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Invalid(String::from(what)));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("penalty weights must be non-negative");
        }
        if !(self.tau1 > 0.0 && self.tau2 > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.n_b == 0 {
            return bad("n_b must be at least 1");
        }
        if !(self.perturbation >= 0.0) {
            return bad("perturbation scale must be non-negative");
        }
        self.reg.validate()
    }
}

/// Standard Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (libm::sqrt(vh) + self.eps);
        }
        Ok(())
    }
}

/// One training window with its boundary ghosts.
#[derive(Clone, Debug)]
pub struct WindowRef<'a> {
    pub snapshots: &'a [StateField],
    pub bc: BoundarySpec,
}

/// Unnormalised pieces of the stage-1 loss summed over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// `Σ‖û − u‖²`.
    pub data: f64,
    /// `Σ‖η'' − I‖²`.
    pub hessian: f64,
    /// `Σ‖η''F' − (η''F')ᵀ‖² / (4‖η''F'‖²)`.
    pub symmetry: f64,
    /// `Σ‖û‖²` (or `Σ‖u‖²`).
    pub norm: f64,
}

impl LossParts {
    pub fn numerator(&self, lambda1: f64, lambda2: f64) -> f64 {
        self.data + lambda1 * self.hessian + lambda2 * self.symmetry
    }

    /// The stage-1 loss.
    pub fn total(&self, lambda1: f64, lambda2: f64) -> f64 {
        self.numerator(lambda1, lambda2) / (self.norm + DIVISION_GUARD)
    }

    fn accumulate(&mut self, o: &LossParts) {
        self.data += o.data;
        self.hessian += o.hessian;
        self.symmetry += o.symmetry;
        self.norm += o.norm;
    }

    fn is_finite(&self) -> bool {
        self.data.is_finite() && self.hessian.is_finite() && self.symmetry.is_finite() && self.norm.is_finite()
    }
}

/// What a stage-1 evaluation needs besides parameters and windows.
#[derive(Clone, Copy, Debug)]
pub struct LossSettings<'a> {
    pub layout: &'a Layout,
    pub dt: f64,
    pub shift: f64,
    pub literal_speed_stencil: bool,
    pub stepper: Stepper,
    pub normalizer: NormalizerSource,
    pub lambda1: f64,
    pub lambda2: f64,
}

struct Terms<T> {
    data: T,
    hessian: Option<T>,
    symmetry: Option<T>,
    norm: T,
    predictions: T,
}

fn identity_row(p: usize) -> Mat {
    let mut m = Mat::zeros(1, p * p);
    for i in 0..p {
        m.data[i * p + i] = 1.0;
    }
    m
}

/// `(Σ‖η''(u) − I‖², Σ‖η''F' − (η''F')ᵀ‖² / (4‖η''F'‖² + guard))` over the rows of `states`.
pub fn penalties<O: Ops>(o: &mut O, net: &BoundBundle<O::T>, states: &O::T) -> (O::T, O::T) {
    let (rows, p) = o.shape(states);
    let (_, hess) = net.entropy.gradient_hessian(o, states);
    let eye = o.constant(identity_row(p));
    let dev = o.sub(&hess, &eye);
    let hessian = o.sum_squares(&dev);
    let mut symmetry = o.constant(Mat::scalar(0.0));
    if p > 1 {
        let transpose: Vec<usize> =
            (0..rows).flat_map(|r| (0..p).flat_map(move |i| (0..p).map(move |k| r * p * p + k * p + i))).collect();
        for dir in 0..net.flux.len() {
            let (_, jac) = net.flux_and_jacobian(o, dir, states);
            let m = o.batch_matmul(&hess, &jac, p);
            let mt = o.gather(&m, rows, p * p, transpose.clone());
            let r = o.sub(&m, &mt);
            let r2 = o.mul(&r, &r);
            let num = o.row_sum(&r2);
            let m2 = o.mul(&m, &m);
            let msum = o.row_sum(&m2);
            let den0 = o.scale(&msum, 4.0);
            let den = o.shift(&den0, DIVISION_GUARD);
            let q = o.div(&num, &den);
            let s = o.sum_all(&q);
            symmetry = o.add(&symmetry, &s);
        }
    }
    (hessian, symmetry)
}

fn window_terms<O: Ops>(
    o: &mut O,
    s: &LossSettings<'_>,
    net: &BoundBundle<O::T>,
    win: &WindowRef<'_>,
    with_penalties: bool,
) -> Result<Terms<O::T>> {
    let cfg =
        RhsConfig { layout: s.layout, bc: &win.bc, dt: s.dt, shift: s.shift, literal_speed_stencil: s.literal_speed_stencil };
    let mut rhs = |o: &mut O, u: &O::T| rhs_ops(o, &cfg, net, u);
    let mut preds = Vec::with_capacity(win.snapshots.len());
    preds.push(o.constant(win.snapshots[0].values.clone()));
    for _ in 1..win.snapshots.len() {
        let prev = preds.last().expect("initial state present").clone();
        preds.push(step_ops(o, &mut rhs, &prev, s.dt, s.stepper)?);
    }
    let stacked = o.vstack(&preds);
    let observed: Vec<f64> = win.snapshots.iter().flat_map(|f| f.values.data.iter().copied()).collect();
    let (rows, p) = o.shape(&stacked);
    let observed = Mat::from_vec(rows, p, observed)?;
    let norm = match s.normalizer {
        NormalizerSource::Predictions => o.sum_squares(&stacked),
        NormalizerSource::Data => o.constant(Mat::scalar(observed.data.iter().map(|v| v * v).sum())),
    };
    let obs = o.constant(observed);
    let diff = o.sub(&stacked, &obs);
    let data = o.sum_squares(&diff);
    let (hessian, symmetry) = if with_penalties {
        let (h, sy) = penalties(o, net, &stacked);
        (Some(h), Some(sy))
    } else {
        (None, None)
    };
    Ok(Terms { data, hessian, symmetry, norm, predictions: stacked })
}

fn scalar_of<O: Ops>(o: &O, t: &Option<O::T>) -> f64 {
    t.as_ref().map_or(0.0, |t| o.value(t).data[0])
}

fn eager_window(bundle: &NetworkBundle, s: &LossSettings<'_>, win: &WindowRef<'_>) -> Result<(LossParts, Mat)> {
    let mut e = Eager;
    let net = bundle.bind_constant(&mut e);
    let t = window_terms(&mut e, s, &net, win, true)?;
    let parts = LossParts {
        data: t.data.data[0],
        hessian: scalar_of(&e, &t.hessian),
        symmetry: scalar_of(&e, &t.symmetry),
        norm: t.norm.data[0],
    };
    if !parts.is_finite() {
        return Err(Error::NonFinite { op: "stage1_loss", node: 0 });
    }
    Ok((parts, t.predictions))
}

/// Stage-1 loss pieces and stacked predictions of every window.
pub fn stage1_parts<E: Executor>(
    bundle: &NetworkBundle,
    s: &LossSettings<'_>,
    windows: &[WindowRef<'_>],
    exec: &E,
) -> Result<(LossParts, Vec<Mat>)> {
    let results = exec.map(windows.len(), |k| eager_window(bundle, s, &windows[k]));
    let mut parts = LossParts::default();
    let mut preds = Vec::with_capacity(windows.len());
    for r in results {
        let (p, m) = r?;
        parts.accumulate(&p);
        preds.push(m);
    }
    Ok((parts, preds))
}

/// The stage-1 loss of a batch.
pub fn stage1_loss<E: Executor>(
    bundle: &NetworkBundle,
    s: &LossSettings<'_>,
    windows: &[WindowRef<'_>],
    exec: &E,
) -> Result<f64> {
    Ok(stage1_parts(bundle, s, windows, exec)?.0.total(s.lambda1, s.lambda2))
}

/// `Σ_k Σ_l ‖û − u‖²` over the windows.
pub fn recurrent_loss<E: Executor>(
    bundle: &NetworkBundle,
    s: &LossSettings<'_>,
    windows: &[WindowRef<'_>],
    exec: &E,
) -> Result<f64> {
    let results = exec.map(windows.len(), |k| {
        let mut e = Eager;
        let net = bundle.bind_constant(&mut e);
        window_terms(&mut e, s, &net, &windows[k], false).map(|t| t.data.data[0])
    });
    let mut total = 0.0;
    for r in results {
        total += r?;
    }
    Ok(total)
}

fn flatten_grads(grads: Vec<Mat>) -> Vec<f64> {
    grads.into_iter().flat_map(|m| m.data).collect()
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Result of a stage-1 gradient evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Gradient {
    pub parts: LossParts,
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Stacked predictions `(L_train+1)·cells × p` per window.
    pub predictions: Vec<Mat>,
}

/// Loss and gradient of the stage-1 loss with respect to every parameter.
///
/// The batch-level quotient is differentiated as
/// `∇(A/N) = ∇A/N − A∇N/N²`, so a first pass computes `A` and `N` and a
/// second pass back-propagates each window with those seeds.
pub fn stage1_gradient<E: Executor>(
    bundle: &NetworkBundle,
    s: &LossSettings<'_>,
    windows: &[WindowRef<'_>],
    exec: &E,
) -> Result<Stage1Gradient> {
    let (parts, predictions) = stage1_parts(bundle, s, windows, exec)?;
    let n = parts.norm + DIVISION_GUARD;
    let a = parts.numerator(s.lambda1, s.lambda2);
    let grads = exec.map(windows.len(), |k| -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let net = bundle.bind(&mut t, |t, m| t.param(m));
        let terms = window_terms(&mut t, s, &net, &windows[k], true)?;
        t.check()?;
        let mut seeds = vec![(terms.data, 1.0 / n)];
        if let Some(h) = terms.hessian {
            seeds.push((h, s.lambda1 / n));
        }
        if let Some(sy) = terms.symmetry {
            seeds.push((sy, s.lambda2 / n));
        }
        if s.normalizer == NormalizerSource::Predictions {
            seeds.push((terms.norm, -a / (n * n)));
        }
        Ok(flatten_grads(t.backward(&seeds, &net.leaves)))
    });
    let mut grad = vec![0.0; bundle.n_params()];
    for g in grads {
        add_into(&mut grad, &g?);
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "stage1_gradient", node: i });
    }
    Ok(Stage1Gradient { loss: a / n, parts, grad, predictions })
}

/// Number of leading tensors that stay fixed in stage 2.
fn frozen_tensors(bundle: &NetworkBundle) -> usize {
    let last = bundle.entropy.layers.last().expect("entropy network has layers");
    bundle.tensors().len() - if last.wz.is_some() { 3 } else { 2 }
}

/// Stage-2 loss `λ1 Σ‖η'' − I‖² + Σ sym` over `states` and its gradient
/// with respect to the final entropy layer, in flat order.
pub fn stage2_gradient<E: Executor>(bundle: &NetworkBundle, lambda1: f64, states: &[Mat], exec: &E) -> Result<(f64, Vec<f64>)> {
    let frozen = frozen_tensors(bundle);
    let out = exec.map(states.len(), |k| -> Result<(f64, Vec<f64>)> {
        let mut t = Tape::new();
        let mut idx = 0;
        let net = bundle.bind(&mut t, |t, m| {
            idx += 1;
            if idx > frozen {
                t.param(m)
            } else {
                t.constant(m)
            }
        });
        let x = t.constant(states[k].clone());
        let (h, sy) = penalties(&mut t, &net, &x);
        t.check()?;
        let loss = lambda1 * t.value(&h).data[0] + t.value(&sy).data[0];
        let grads = t.backward(&[(h, lambda1), (sy, 1.0)], &net.leaves[frozen..]);
        Ok((loss, flatten_grads(grads)))
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; bundle.final_layer_range().len()];
    for r in out {
        let (l, g) = r?;
        loss += l;
        add_into(&mut grad, &g);
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "stage2_loss", node: 0 });
    }
    Ok((loss, grad))
}

/// Perturbs predictions by `N(0, (scale·mean|û|)²)` per entry.
pub fn perturb(predictions: &[Mat], scale: f64, seed: u64, counter: u64) -> Vec<Mat> {
    let (mut sum, mut count) = (0.0, 0usize);
    for m in predictions {
        sum += m.data.iter().map(|v| v.abs()).sum::<f64>();
        count += m.data.len();
    }
    let sd = if count == 0 { 0.0 } else { scale * sum / count as f64 };
    let mut r = rng::stream(seed, Purpose::Perturbation, counter);
    predictions
        .iter()
        .map(|m| {
            let mut out = m.clone();
            for v in &mut out.data {
                *v += sd * rng::normal(&mut r);
            }
            out
        })
        .collect()
}

/// Splits shuffled window indices into batches.
pub fn make_batches(order: &[usize], n_b: usize, batching: Batching) -> Vec<Vec<usize>> {
    if order.is_empty() {
        return Vec::new();
    }
    match batching {
        Batching::Count => {
            let count = n_b.min(order.len()).max(1);
            let (base, extra) = (order.len() / count, order.len() % count);
            let mut out = Vec::with_capacity(count);
            let mut at = 0;
            for b in 0..count {
                let len = base + usize::from(b < extra);
                out.push(order[at..at + len].to_vec());
                at += len;
            }
            out
        }
        Batching::Size => order.chunks(n_b.max(1)).map(|c| c.to_vec()).collect(),
    }
}

/// Evenly spaced window indices, at most `count` of them.
pub fn select_windows(n_windows: usize, count: usize) -> Vec<usize> {
    if n_windows <= count {
        return (0..n_windows).collect();
    }
    (0..count).map(|k| k * n_windows / count).collect()
}

/// Per-epoch summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub shift: f64,
    /// Mean stage-1 loss over successful batches.
    pub train_loss: f64,
    pub data: f64,
    pub hessian_penalty: f64,
    pub symmetry_penalty: f64,
    /// Mean stage-2 loss over its steps (0 when disabled).
    pub stage2_loss: f64,
    pub validation_loss: f64,
    pub best_validation: f64,
    pub improved: bool,
    pub batches: usize,
    pub skipped: usize,
}

/// Everything that evolves during training; enough to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub bundle: NetworkBundle,
    pub best: NetworkBundle,
    pub best_validation: f64,
    pub adam: Adam,
    pub adam_final: Adam,
    /// Epochs completed so far; also the exponent of the Hessian shift.
    pub epoch: u32,
    /// Parameter updates made so far, keys the stage-2 perturbations.
    pub updates: u64,
}

impl TrainerState {
    pub fn new(bundle: NetworkBundle) -> Self {
        let n = bundle.n_params();
        let nf = bundle.final_layer_range().len();
        Self {
            best: bundle.clone(),
            bundle,
            best_validation: f64::INFINITY,
            adam: Adam::new(n),
            adam_final: Adam::new(nf),
            epoch: 0,
            updates: 0,
        }
    }
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub state: TrainerState,
    train: Vec<WindowRef<'a>>,
    validation: Vec<WindowRef<'a>>,
    layout: Layout,
    dt: f64,
}

fn windows_of<'d>(ds: &'d TrajectoryDataset, indices: &[usize]) -> Vec<WindowRef<'d>> {
    let kind = ds.spec.bc_kind();
    indices
        .iter()
        .map(|&k| {
            let snapshots = ds.window(k);
            WindowRef { bc: kind.resolve(&snapshots[0].values), snapshots }
        })
        .collect()
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        state: TrainerState,
        train: &'a TrajectoryDataset,
        validation: Option<&'a TrajectoryDataset>,
    ) -> Result<Self> {
        config.validate()?;
        let p = state.bundle.p;
        if train.spec.law().p() != p || train.spec.geometry.dims() != state.bundle.dims() {
            return Err(Error::Shape(format!(
                "dataset law {} does not match networks (p = {p}, {}D)",
                train.spec.law().tag(),
                state.bundle.dims()
            )));
        }
        if let Some(v) = validation {
            if v.spec.geometry != train.spec.geometry || v.spec.dt != train.spec.dt || v.spec.l_train != train.spec.l_train {
                return Err(Error::Shape("validation data differs from training data in grid, dt or window".into()));
            }
        }
        let all: Vec<usize> = (0..train.n_windows()).collect();
        let train_windows = windows_of(train, &all);
        let validation =
            validation.map_or_else(Vec::new, |v| windows_of(v, &select_windows(v.n_windows(), config.validation_count)));
        let layout = Layout::new(&train.spec.geometry, &train_windows[0].bc)?;
        Ok(Self { config, state, train: train_windows, validation, layout, dt: train.spec.dt })
    }

    pub fn n_windows(&self) -> usize {
        self.train.len()
    }

    fn settings(&self, phase: Phase) -> LossSettings<'_> {
        LossSettings {
            layout: &self.layout,
            dt: self.dt,
            shift: self.config.reg.shift(phase),
            literal_speed_stencil: self.config.literal_speed_stencil,
            stepper: self.config.stepper,
            normalizer: self.config.normalizer,
            lambda1: self.config.lambda1,
            lambda2: self.config.lambda2,
        }
    }

    /// Validation recurrent loss of `bundle` at inference regularisation.
    pub fn validation_loss<E: Executor>(&self, bundle: &NetworkBundle, exec: &E) -> f64 {
        let s = self.settings(Phase::Inference);
        match recurrent_loss(bundle, &s, &self.validation, exec) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(_) => f64::INFINITY,
        }
    }

    /// One pass of the training loop over every window.
    pub fn run_epoch<E: Executor>(&mut self, exec: &E) -> Result<EpochRecord> {
        let epoch = self.state.epoch;
        let phase = Phase::Training { epoch };
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng::stream(self.config.seed, Purpose::Shuffle, epoch as u64));
        let batches = make_batches(&order, self.config.n_b, self.config.batching);
        let frozen_len = self.state.bundle.n_params() - self.state.bundle.final_layer_range().len();

        let mut sums = (0.0, LossParts::default(), 0.0, 0usize);
        let mut skipped = 0;
        let mut last_error = String::new();
        for (b, batch) in batches.iter().enumerate() {
            let windows: Vec<WindowRef<'_>> = batch.iter().map(|&k| self.train[k].clone()).collect();
            let settings = self.settings(phase);
            let g = match stage1_gradient(&self.state.bundle, &settings, &windows, exec) {
                Ok(g) if g.loss.is_finite() => g,
                Ok(_) => {
                    skipped += 1;
                    last_error = String::from("non-finite loss");
                    log::warn!("epoch {epoch} batch {b}: non-finite loss, batch skipped");
                    continue;
                }
                Err(e) => {
                    skipped += 1;
                    last_error = format!("{e}");
                    log::warn!("epoch {epoch} batch {b}: {e}; batch skipped");
                    continue;
                }
            };
            let mut flat = self.state.bundle.flatten();
            self.state.adam.step(&mut flat, &g.grad, self.config.tau1)?;
            self.state.bundle.set_flat(&flat)?;
            sums.0 += g.loss;
            sums.1.accumulate(&LossParts {
                data: g.parts.data / (g.parts.norm + DIVISION_GUARD),
                hessian: g.parts.hessian / (g.parts.norm + DIVISION_GUARD),
                symmetry: g.parts.symmetry / (g.parts.norm + DIVISION_GUARD),
                norm: g.parts.norm,
            });

            for _ in 0..self.config.stage2_steps {
                let states = perturb(&g.predictions, self.config.perturbation, self.config.seed, self.state.updates);
                self.state.updates += 1;
                match stage2_gradient(&self.state.bundle, self.config.lambda1, &states, exec) {
                    Ok((loss, grad)) => {
                        let mut flat = self.state.bundle.flatten();
                        self.state.adam_final.step(&mut flat[frozen_len..], &grad, self.config.tau2)?;
                        self.state.bundle.set_flat(&flat)?;
                        sums.2 += loss;
                        sums.3 += 1;
                    }
                    Err(e) => log::warn!("epoch {epoch} batch {b}: stage-2 step skipped: {e}"),
                }
            }
            self.state.updates += 1;
        }
        if skipped == batches.len() {
            return Err(Error::Training(format!(
                "all {} batches of epoch {epoch} failed; last error: {last_error}",
                batches.len()
            )));
        }
        let ok = (batches.len() - skipped) as f64;
        let train_loss = sums.0 / ok;
        let validation_loss =
            if self.validation.is_empty() { train_loss } else { self.validation_loss(&self.state.bundle, exec) };
        let improved = validation_loss < self.state.best_validation;
        if improved {
            self.state.best_validation = validation_loss;
            self.state.best = self.state.bundle.clone();
        }
        self.state.epoch += 1;
        Ok(EpochRecord {
            epoch,
            shift: self.config.reg.shift(phase),
            train_loss,
            data: sums.1.data / ok,
            hessian_penalty: sums.1.hessian / ok,
            symmetry_penalty: sums.1.symmetry / ok,
            stage2_loss: if sums.3 == 0 { 0.0 } else { sums.2 / sums.3 as f64 },
            validation_loss,
            best_validation: self.state.best_validation,
            improved,
            batches: batches.len(),
            skipped,
        })
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run<E: Executor>(
        &mut self,
        exec: &E,
        mut on_epoch: impl FnMut(&EpochRecord, &TrainerState),
    ) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::new();
        while self.state.epoch < self.config.epochs {
            let rec = self.run_epoch(exec)?;
            on_epoch(&rec, &self.state);
            log::info!(
                "epoch {}: loss {:.4e}, validation {:.4e}{}",
                rec.epoch,
                rec.train_loss,
                rec.validation_loss,
                if rec.improved { " (best)" } else { "" }
            );
            history.push(rec);
        }
        Ok(history)
    }
}
