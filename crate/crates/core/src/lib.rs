//! Learning hyperbolic conservation laws with an entropy-stable neural
//! finite-volume scheme.
//!
//! The crate is split into the pieces a learned scheme is assembled from:
//!
//! * [`grid`]: uniform grids, ghost cells and minmod interface reconstruction.
//! * [`autodiff`]: a batched tensor tape for reverse-mode gradients through
//!   whole rollouts, plus forward-mode dual numbers for input derivatives.
//! * [`networks`]: the flux MLP, the wave-speed MLP and the input convex
//!   entropy network.
//! * [`classical`]: analytic laws, Tadmor entropy-conservative fluxes,
//!   Rusanov entropy-stable fluxes and the Kurganov–Tadmor reference solver.
//! * [`scheme`]: the learned entropy-stable flux and its semidiscrete RHS.
//! * [`integrate`]: SSP-RK2 stepping and rollouts.
//! * [`exec`]: the executor abstraction used for data-parallel loops.
//! * [`data`]: initial-condition families, windows and noise.
//! * [`training`]: the two-stage optimisation loop.
//! * [`metrics`]: conservation and entropy remainders and error norms.
//! * [`presets`]: per-experiment defaults for data and training.
//!
//! Everything here is `no_std` + `alloc`; file formats, the CLI and thread
//! pools live in the `nescfn` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod classical;
pub mod data;
mod error;
pub mod exec;
pub mod grid;
pub mod integrate;
pub mod linalg;
pub mod metrics;
pub mod networks;
pub mod presets;
pub mod rng;
pub mod scheme;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Mat;
