//! The three learned components: per-direction flux MLPs, the wave-speed MLP
//! and the input convex entropy network.
//!
//! Parameters live in plain [`Mat`]s. Evaluation comes in two flavours:
//! pointwise over any [`Real`] (used for per-sample derivatives and
//! diagnostics) and batched over any [`Ops`] backend, where input
//! derivatives are propagated as forward-mode jets so that they remain
//! differentiable with respect to the parameters.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::autodiff::{input_hessian, input_jacobian, Activation, Ops, Real, ScalarFn, Unary, VectorFn};
use crate::linalg::Mat;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// `σ(x)` over any [`Real`].
pub fn activate<R: Real>(act: Activation, x: R) -> R {
    let zero = R::cst(0.0);
    match act {
        Activation::Relu => {
            if x.primal() > 0.0 {
                x
            } else {
                zero
            }
        }
        Activation::SiluGated => {
            if x.primal() > 0.0 {
                x * x.sigmoid()
            } else {
                zero
            }
        }
        Activation::SiluStandard => x * x.sigmoid(),
        Activation::Softplus => {
            if x.primal() > 0.0 {
                x + (-x).exp().ln_1p()
            } else {
                x.exp().ln_1p()
            }
        }
    }
}

/// One affine map `x ↦ W x + b` with `W: d_out×d_in`, `b: 1×d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Mat,
    pub b: Mat,
}

impl Layer {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Self { w: Mat::zeros(d_out, d_in), b: Mat::zeros(1, d_out) }
    }

    fn apply<R: Real>(&self, x: &[R]) -> Vec<R> {
        (0..self.w.rows)
            .map(|o| self.w.row(o).iter().zip(x).fold(R::cst(self.b.data[o]), |acc, (&w, &xi)| acc + R::cst(w) * xi))
            .collect()
    }
}

/// Fully connected network with an affine output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl Mlp {
    /// All-zero network with the given width chain `[d_0, …, d_L]`.
    pub fn zeros(widths: &[usize], activation: Activation) -> Self {
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { layers, activation }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.w.cols).collect();
        w.extend(self.layers.last().map(|l| l.w.rows));
        w
    }

    pub fn d_in(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.cols)
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.rows)
    }

    pub fn eval_real<R: Real>(&self, x: &[R]) -> Vec<R> {
        let mut z = x.to_vec();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            z = layer.apply(&z);
            if i < last {
                z.iter_mut().for_each(|v| *v = activate(self.activation, *v));
            }
        }
        z
    }

    /// Plain evaluation with a length check.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::Shape(format!("network expects {} inputs, got {}", self.d_in(), x.len())));
        }
        Ok(self.eval_real(x))
    }
}

impl VectorFn for Mlp {
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        self.eval_real(x)
    }
}

/// One ICNN layer. `wz` holds the unconstrained log-weights of the
/// `z`-path and is absent on the first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct IcnnLayer {
    pub wz: Option<Mat>,
    pub wx: Mat,
    pub b: Mat,
}

/// Input convex network `ℝᵖ → ℝ`. Every layer after the first combines
/// `exp(W̃ᶻ) z + Wˣ u + b`; hidden layers apply a convex non-decreasing
/// activation and the last layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct Icnn {
    pub layers: Vec<IcnnLayer>,
    pub activation: Activation,
}

impl Icnn {
    /// Network with zero `Wˣ` and biases and `W̃ᶻ = log(1/fan_in)`.
    pub fn zeros(p: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = None;
        for &h in hidden.iter().chain(core::iter::once(&1)) {
            let wz = prev.map(|d: usize| Mat::filled(h, d, libm::log(1.0 / d as f64)));
            layers.push(IcnnLayer { wz, wx: Mat::zeros(h, p), b: Mat::zeros(1, h) });
            prev = Some(h);
        }
        Self { layers, activation }
    }

    pub fn p(&self) -> usize {
        self.layers.first().map_or(0, |l| l.wx.cols)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.p()];
        w.extend(self.layers.iter().map(|l| l.wx.rows));
        w
    }

    pub fn eval_real<R: Real>(&self, u: &[R]) -> R {
        let mut z: Vec<R> = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a: Vec<R> = Layer { w: layer.wx.clone(), b: layer.b.clone() }.apply(u);
            if let Some(wz) = &layer.wz {
                for (o, ao) in a.iter_mut().enumerate() {
                    for (&w, &zk) in wz.row(o).iter().zip(&z) {
                        *ao = *ao + R::cst(libm::exp(w)) * zk;
                    }
                }
            }
            if i < last {
                a.iter_mut().for_each(|v| *v = activate(self.activation, *v));
            }
            z = a;
        }
        z[0]
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        self.eval_real(u)
    }

    /// `η'(u)`.
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        input_jacobian(&IcnnAsVector(self), u).remove(0)
    }

    /// `η''(u)`, exactly symmetric.
    pub fn hessian(&self, u: &[f64]) -> Vec<Vec<f64>> {
        input_hessian(self, u)
    }
}

impl ScalarFn for Icnn {
    fn eval<R: Real>(&self, x: &[R]) -> R {
        self.eval_real(x)
    }
}

struct IcnnAsVector<'a>(&'a Icnn);

impl VectorFn for IcnnAsVector<'_> {
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        vec![self.0.eval_real(x)]
    }
}

/// Architecture of a [`NetworkBundle`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub p: usize,
    /// Number of spatial directions, one flux network each.
    pub dims: usize,
    pub flux_hidden: Vec<usize>,
    pub flux_activation: Activation,
    pub speed_hidden: Vec<usize>,
    pub speed_activation: Activation,
    pub entropy_hidden: Vec<usize>,
    pub entropy_activation: Activation,
}

impl NetworkSpec {
    /// Default architecture: flux 3×64, speed 2×64 ReLU, entropy 1×64 Softplus.
    pub fn standard(p: usize, dims: usize) -> Self {
        Self {
            p,
            dims,
            flux_hidden: vec![64; 3],
            flux_activation: Activation::SiluGated,
            speed_hidden: vec![64; 2],
            speed_activation: Activation::Relu,
            entropy_hidden: vec![64],
            entropy_activation: Activation::Softplus,
        }
    }

    fn chain(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend_from_slice(hidden);
        w.push(output);
        w
    }

    pub fn flux_widths(&self) -> Vec<usize> {
        Self::chain(self.p, &self.flux_hidden, self.p)
    }

    pub fn speed_widths(&self) -> Vec<usize> {
        Self::chain(self.p * self.p, &self.speed_hidden, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.dims == 0 || self.dims > 2 {
            return Err(Error::Invalid(format!("unsupported p = {}, dims = {}", self.p, self.dims)));
        }
        if self.flux_hidden.is_empty() || self.speed_hidden.is_empty() || self.entropy_hidden.is_empty() {
            return Err(Error::Invalid("every network needs at least one hidden layer".into()));
        }
        if matches!(self.entropy_activation, Activation::SiluGated | Activation::SiluStandard) {
            return Err(Error::Invalid("entropy activation must be convex and non-decreasing".into()));
        }
        Ok(())
    }
}

/// Parameter groups used by the optimiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    /// Flux networks (μ).
    Flux,
    /// Wave-speed network (w).
    Speed,
    /// Entropy network (θ).
    Entropy,
}

/// Flux networks, wave-speed network and entropy network for one law.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBundle {
    pub p: usize,
    pub flux: Vec<Mlp>,
    pub speed: Mlp,
    pub entropy: Icnn,
}

impl NetworkBundle {
    /// All weights zero except the ICNN log-weights.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            p: spec.p,
            flux: (0..spec.dims).map(|_| Mlp::zeros(&spec.flux_widths(), spec.flux_activation)).collect(),
            speed: Mlp::zeros(&spec.speed_widths(), spec.speed_activation),
            entropy: Icnn::zeros(spec.p, &spec.entropy_hidden, spec.entropy_activation),
        })
    }

    /// Fan-in scaled uniform initialisation `U[−1/√d_in, 1/√d_in]` for
    /// weights and biases. Deterministic in `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut bundle = Self::zeros(spec)?;
        let mut r = rng::stream(seed, Purpose::Init, 0);
        let mut fill = |m: &mut Mat, fan_in: usize| {
            let s = 1.0 / libm::sqrt(fan_in as f64);
            m.data.iter_mut().for_each(|v| *v = rng::uniform(&mut r, -s, s));
        };
        for net in bundle.flux.iter_mut().chain(core::iter::once(&mut bundle.speed)) {
            for layer in &mut net.layers {
                let fan_in = layer.w.cols;
                fill(&mut layer.w, fan_in);
                fill(&mut layer.b, fan_in);
            }
        }
        for layer in &mut bundle.entropy.layers {
            let fan_in = layer.wx.cols + layer.wz.as_ref().map_or(0, |w| w.cols);
            fill(&mut layer.wx, fan_in);
            fill(&mut layer.b, fan_in);
        }
        Ok(bundle)
    }

    pub fn dims(&self) -> usize {
        self.flux.len()
    }

    pub fn spec(&self) -> NetworkSpec {
        let hidden = |w: Vec<usize>| w[1..w.len() - 1].to_vec();
        NetworkSpec {
            p: self.p,
            dims: self.dims(),
            flux_hidden: hidden(self.flux[0].widths()),
            flux_activation: self.flux[0].activation,
            speed_hidden: hidden(self.speed.widths()),
            speed_activation: self.speed.activation,
            entropy_hidden: hidden(self.entropy.widths()),
            entropy_activation: self.entropy.activation,
        }
    }

    /// Parameter tensors in declaration order: flux nets (W, b per layer),
    /// speed net, then entropy layers (W̃ᶻ if present, Wˣ, b).
    pub fn tensors(&self) -> Vec<&Mat> {
        let mut out = Vec::new();
        for net in self.flux.iter().chain(core::iter::once(&self.speed)) {
            for l in &net.layers {
                out.push(&l.w);
                out.push(&l.b);
            }
        }
        for l in &self.entropy.layers {
            out.extend(l.wz.as_ref());
            out.push(&l.wx);
            out.push(&l.b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        for net in self.flux.iter_mut().chain(core::iter::once(&mut self.speed)) {
            for l in &mut net.layers {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        for l in &mut self.entropy.layers {
            out.extend(l.wz.as_mut());
            out.push(&mut l.wx);
            out.push(&mut l.b);
        }
        out
    }

    /// Group of each tensor in [`tensors`](Self::tensors) order.
    pub fn tensor_groups(&self) -> Vec<Group> {
        let mut out = Vec::new();
        for net in &self.flux {
            out.extend(core::iter::repeat_n(Group::Flux, 2 * net.layers.len()));
        }
        out.extend(core::iter::repeat_n(Group::Speed, 2 * self.speed.layers.len()));
        for l in &self.entropy.layers {
            let n = if l.wz.is_some() { 3 } else { 2 };
            out.extend(core::iter::repeat_n(Group::Entropy, n));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|m| m.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|m| m.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.n_params(), flat.len())));
        }
        let mut off = 0;
        for m in self.tensors_mut() {
            let n = m.data.len();
            m.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Flat index range of each group.
    pub fn group_range(&self, group: Group) -> Range<usize> {
        let mut off = 0;
        let mut range: Option<Range<usize>> = None;
        for (m, g) in self.tensors().iter().zip(self.tensor_groups()) {
            let n = m.data.len();
            if g == group {
                let start = range.as_ref().map_or(off, |r| r.start);
                range = Some(start..off + n);
            }
            off += n;
        }
        range.unwrap_or(0..0)
    }

    /// Flat index range of the final entropy layer (θ_L).
    pub fn final_layer_range(&self) -> Range<usize> {
        let n = self.n_params();
        let last = self.entropy.layers.last().expect("entropy network has layers");
        let len = last.wz.as_ref().map_or(0, |m| m.data.len()) + last.wx.data.len() + last.b.data.len();
        n - len..n
    }

    /// `(F^μ_d)'(u)` as a `p×p` matrix `J[i][k] = ∂F_i/∂u_k`.
    pub fn flux_jacobian(&self, dir: usize, u: &[f64]) -> Vec<Vec<f64>> {
        input_jacobian(&self.flux[dir], u)
    }

    /// Learned maximum wave speed at `u` for direction `dir`.
    pub fn wave_speed(&self, dir: usize, u: &[f64], dx: f64, dt: f64) -> f64 {
        let cap = dx / dt;
        let j = self.flux_jacobian(dir, u);
        if self.p == 1 {
            return j[0][0].abs().min(cap);
        }
        let flat: Vec<f64> = j.into_iter().flatten().collect();
        let phi = self.speed.eval_real(&flat)[0];
        cap * (1.0 - libm::tanh(phi.abs()))
    }
}

/// Bundle tensors bound to an [`Ops`] backend.
#[derive(Clone, Debug)]
pub struct BoundBundle<T> {
    pub p: usize,
    pub flux: Vec<BoundMlp<T>>,
    pub speed: BoundMlp<T>,
    pub entropy: BoundIcnn<T>,
    /// Leaf handles in [`NetworkBundle::tensors`] order.
    pub leaves: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BoundMlp<T> {
    pub layers: Vec<(T, T)>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct BoundIcnn<T> {
    /// `(exp(W̃ᶻ), Wˣ, b)` per layer.
    pub layers: Vec<(Option<T>, T, T)>,
    pub activation: Activation,
}

impl NetworkBundle {
    /// Registers every tensor through `leaf` and precomputes `exp(W̃ᶻ)`.
    pub fn bind<O: Ops>(&self, o: &mut O, mut leaf: impl FnMut(&mut O, Mat) -> O::T) -> BoundBundle<O::T> {
        let mut leaves = Vec::new();
        let mut bind_mlp = |o: &mut O, net: &Mlp, leaves: &mut Vec<O::T>| {
            let layers = net
                .layers
                .iter()
                .map(|l| {
                    let w = leaf(o, l.w.clone());
                    let b = leaf(o, l.b.clone());
                    leaves.push(w.clone());
                    leaves.push(b.clone());
                    (w, b)
                })
                .collect();
            BoundMlp { layers, activation: net.activation }
        };
        let flux = self.flux.iter().map(|n| bind_mlp(o, n, &mut leaves)).collect();
        let speed = bind_mlp(o, &self.speed, &mut leaves);
        let mut layers = Vec::new();
        for l in &self.entropy.layers {
            let wz = l.wz.as_ref().map(|m| {
                let raw = leaf(o, m.clone());
                leaves.push(raw.clone());
                o.unary(Unary::Exp, &raw)
            });
            let wx = leaf(o, l.wx.clone());
            let b = leaf(o, l.b.clone());
            leaves.push(wx.clone());
            leaves.push(b.clone());
            layers.push((wz, wx, b));
        }
        let entropy = BoundIcnn { layers, activation: self.entropy.activation };
        BoundBundle { p: self.p, flux, speed, entropy, leaves }
    }

    /// Binds as non-differentiable constants.
    pub fn bind_constant<O: Ops>(&self, o: &mut O) -> BoundBundle<O::T> {
        self.bind(o, |o, m| o.constant(m))
    }
}

/// Value and input derivatives of a batched network output.
///
/// `d1[k]` is the derivative along input direction `k`, `d2[pair(k, l)]`
/// the mixed second derivative for `k ≤ l`. A `None` entry is identically
/// zero.
#[derive(Clone, Debug)]
pub struct Jet<T> {
    pub v: T,
    pub d1: Vec<Option<T>>,
    pub d2: Vec<Option<T>>,
}

/// Index of the pair `(k, l)`, `k ≤ l`, in the upper-triangle ordering.
pub fn pair_index(p: usize, k: usize, l: usize) -> usize {
    let (k, l) = if k <= l { (k, l) } else { (l, k) };
    k * p + l - k - k * k.saturating_sub(1) / 2
}

fn pairs(p: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for k in 0..p {
        for l in k..p {
            v.push((k, l));
        }
    }
    v
}

fn opt_add<O: Ops>(o: &mut O, a: Option<O::T>, b: Option<O::T>) -> Option<O::T> {
    match (a, b) {
        (Some(a), Some(b)) => Some(o.add(&a, &b)),
        (a, None) => a,
        (None, b) => b,
    }
}

/// Column `k` of a `d_out×d_in` weight as a `1×d_out` row.
fn weight_column<O: Ops>(o: &mut O, w: &O::T, k: usize) -> O::T {
    let (rows, cols) = o.shape(w);
    o.gather(w, 1, rows, (0..rows).map(|r| r * cols + k).collect())
}

/// Pushes pre-activation jets through `σ`.
fn activate_jet<O: Ops>(o: &mut O, act: Activation, a: Jet<O::T>, order: u8, p: usize) -> Jet<O::T> {
    let v = o.unary(Unary::Act(act, 0), &a.v);
    if order == 0 {
        return Jet { v, d1: a.d1, d2: a.d2 };
    }
    let s1 = o.unary(Unary::Act(act, 1), &a.v);
    let d1: Vec<Option<O::T>> = a.d1.iter().map(|t| t.as_ref().map(|t| o.mul(&s1, t))).collect();
    let mut d2 = Vec::new();
    if order < 2 {
        d2 = a.d2;
    } else {
        let s2 = o.unary(Unary::Act(act, 2), &a.v);
        for (idx, (k, l)) in pairs(p).into_iter().enumerate() {
            let curv = match (&a.d1[k], &a.d1[l]) {
                (Some(ak), Some(al)) => {
                    let t = o.mul(&s2, ak);
                    Some(o.mul(&t, al))
                }
                _ => None,
            };
            let lin = a.d2[idx].as_ref().map(|t| o.mul(&s1, t));
            d2.push(opt_add(o, curv, lin));
        }
    }
    Jet { v, d1, d2 }
}

/// Expands `1×c` tangents to `rows×c`.
fn broadcast_rows<O: Ops>(o: &mut O, x: O::T, rows: usize) -> O::T {
    let (r, c) = o.shape(&x);
    if r == rows {
        return x;
    }
    let idx = (0..rows).flat_map(|_| 0..c).collect();
    o.gather(&x, rows, c, idx)
}

fn finish_jet<O: Ops>(o: &mut O, j: Jet<O::T>, rows: usize) -> Jet<O::T> {
    let d1 = j.d1.into_iter().map(|t| t.map(|t| broadcast_rows(o, t, rows))).collect();
    let d2 = j.d2.into_iter().map(|t| t.map(|t| broadcast_rows(o, t, rows))).collect();
    Jet { v: j.v, d1, d2 }
}

impl<T: Clone> BoundMlp<T> {
    /// Batched forward pass with input derivatives up to `order ≤ 2`.
    pub fn jet<O: Ops<T = T>>(&self, o: &mut O, x: &T, order: u8) -> Jet<T> {
        let (rows, p) = o.shape(x);
        let n_pairs = p * (p + 1) / 2;
        let last = self.layers.len() - 1;
        let mut cur = Jet { v: x.clone(), d1: vec![None; p], d2: vec![None; n_pairs] };
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let lin = o.matmul_t(&cur.v, w);
            let v = o.add(&lin, b);
            let (d1, d2) = if order == 0 {
                (vec![None; p], vec![None; n_pairs])
            } else if i == 0 {
                let d1 = (0..p).map(|k| Some(weight_column(o, w, k))).collect();
                (d1, vec![None; n_pairs])
            } else {
                let d1 = cur.d1.iter().map(|t| t.as_ref().map(|t| o.matmul_t(t, w))).collect();
                let d2 = cur.d2.iter().map(|t| t.as_ref().map(|t| o.matmul_t(t, w))).collect();
                (d1, d2)
            };
            let a = Jet { v, d1, d2 };
            cur = if i < last { activate_jet(o, self.activation, a, order, p) } else { a };
        }
        finish_jet(o, cur, rows)
    }

    pub fn forward<O: Ops<T = T>>(&self, o: &mut O, x: &T) -> T {
        self.jet(o, x, 0).v
    }
}

impl<T: Clone> BoundIcnn<T> {
    /// Batched `η` with input derivatives up to `order ≤ 2`.
    pub fn jet<O: Ops<T = T>>(&self, o: &mut O, u: &T, order: u8) -> Jet<T> {
        let (rows, p) = o.shape(u);
        let n_pairs = p * (p + 1) / 2;
        let last = self.layers.len() - 1;
        let mut z: Option<Jet<T>> = None;
        for (i, (wz, wx, b)) in self.layers.iter().enumerate() {
            let ux = o.matmul_t(u, wx);
            let mut v = o.add(&ux, b);
            let mut d1: Vec<Option<T>> =
                if order >= 1 { (0..p).map(|k| Some(weight_column(o, wx, k))).collect() } else { vec![None; p] };
            let mut d2: Vec<Option<T>> = vec![None; n_pairs];
            if let (Some(wz), Some(zj)) = (wz, &z) {
                let zz = o.matmul_t(&zj.v, wz);
                v = o.add(&zz, &v);
                for k in 0..p {
                    let t = zj.d1[k].as_ref().map(|t| o.matmul_t(t, wz));
                    d1[k] = match (t, d1[k].take()) {
                        (Some(t), Some(c)) => Some(o.add(&t, &c)),
                        (t, c) => t.or(c),
                    };
                }
                for (idx, slot) in d2.iter_mut().enumerate() {
                    *slot = zj.d2[idx].as_ref().map(|t| o.matmul_t(t, wz));
                }
            }
            let a = Jet { v, d1, d2 };
            z = Some(if i < last { activate_jet(o, self.activation, a, order, p) } else { a });
        }
        finish_jet(o, z.expect("entropy network has layers"), rows)
    }

    /// `η'(u)` as a `B×p` tensor.
    pub fn gradient<O: Ops<T = T>>(&self, o: &mut O, u: &T) -> T {
        let (rows, _) = o.shape(u);
        let j = self.jet(o, u, 1);
        let cols: Vec<T> = j.d1.into_iter().map(|t| t.unwrap_or_else(|| o.constant(Mat::zeros(rows, 1)))).collect();
        o.hstack(&cols)
    }

    /// `(η'(u), η''(u))` as `B×p` and `B×p²` tensors.
    pub fn gradient_hessian<O: Ops<T = T>>(&self, o: &mut O, u: &T) -> (T, T) {
        let (rows, p) = o.shape(u);
        let j = self.jet(o, u, 2);
        let zero = o.constant(Mat::zeros(rows, 1));
        let grad_cols: Vec<T> = j.d1.into_iter().map(|t| t.unwrap_or_else(|| zero.clone())).collect();
        let grad = o.hstack(&grad_cols);
        let entries: Vec<T> = j.d2.into_iter().map(|t| t.unwrap_or_else(|| zero.clone())).collect();
        let mut cols = Vec::with_capacity(p * p);
        for k in 0..p {
            for l in 0..p {
                cols.push(entries[pair_index(p, k, l)].clone());
            }
        }
        let hess = o.hstack(&cols);
        (grad, hess)
    }
}

impl<T: Clone> BoundBundle<T> {
    /// `(F_d(u), F_d'(u))` with the Jacobian flattened row-major as `B×p²`.
    pub fn flux_and_jacobian<O: Ops<T = T>>(&self, o: &mut O, dir: usize, u: &T) -> (T, T) {
        let (rows, p) = o.shape(u);
        let j = self.flux[dir].jet(o, u, 1);
        let zero = o.constant(Mat::zeros(rows, p));
        let cols: Vec<T> = j.d1.into_iter().map(|t| t.unwrap_or_else(|| zero.clone())).collect();
        // hstack gives column-major blocks [k][i]; reorder to [i][k].
        let stacked = o.hstack(&cols);
        let idx = (0..rows).flat_map(|r| (0..p).flat_map(move |i| (0..p).map(move |k| r * p * p + k * p + i))).collect();
        let jac = o.gather(&stacked, rows, p * p, idx);
        (j.v, jac)
    }

    /// Learned wave speed from a flattened Jacobian `B×p²`, as `B×1`.
    pub fn wave_speed_from_jacobian<O: Ops<T = T>>(&self, o: &mut O, jac: &T, dx: f64, dt: f64) -> T {
        let cap = dx / dt;
        if self.p == 1 {
            let a = o.unary(Unary::Abs, jac);
            return o.unary(Unary::MinConst(cap), &a);
        }
        let phi = self.speed.forward(o, jac);
        let a = o.unary(Unary::Abs, &phi);
        let t = o.unary(Unary::Tanh, &a);
        let s = o.scale(&t, -cap);
        o.shift(&s, cap)
    }
}
