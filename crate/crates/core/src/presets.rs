//! Per-experiment defaults for data generation and training.

use crate::data::{DatasetSpec, Family, Split, Windowing};
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Burgers1D,
    ShallowWater,
    Euler,
    Burgers2D,
}

/// Data-generation defaults of a preset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataPreset {
    pub train: Family,
    pub test: Family,
    /// Families swept by entropy evaluations.
    pub entropy: &'static [Family],
    /// Cells per direction.
    pub n_cells: usize,
    pub dt: f64,
    pub n_traj: usize,
    pub l_total: usize,
    pub l_train: usize,
    pub windowing: Windowing,
    /// Prediction horizon.
    pub horizon: f64,
    /// Trajectories in the validation set.
    pub n_validation: usize,
}

impl DataPreset {
    /// Steps needed to reach the horizon.
    pub fn horizon_steps(&self) -> usize {
        libm::round(self.horizon / self.dt) as usize
    }

    pub fn dataset_spec(&self, split: Split, seed: u64) -> Result<DatasetSpec> {
        Ok(DatasetSpec {
            family: self.train,
            geometry: self.train.geometry(self.n_cells)?,
            dt: self.dt,
            n_traj: match split {
                Split::Train => self.n_traj,
                Split::Validation => self.n_validation,
            },
            l_total: self.l_total,
            l_train: self.l_train,
            windowing: self.windowing,
            seed,
            split,
        })
    }
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Burgers1D, Preset::ShallowWater, Preset::Euler, Preset::Burgers2D];

    pub fn tag(&self) -> &'static str {
        match self {
            Preset::Burgers1D => "burgers1d",
            Preset::ShallowWater => "shallow-water",
            Preset::Euler => "euler",
            Preset::Burgers2D => "burgers2d",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.tag() == tag).ok_or_else(|| Error::Invalid(alloc::format!("unknown preset `{tag}`")))
    }

    pub fn training(&self) -> TrainConfig {
        let (lambda1, lambda2, epochs, n_b, tau1, stage2_steps, tau2) = match self {
            Preset::Burgers1D => (1e-3, 1e-2, 50, 5, 1e-3, 0, 1e-3),
            Preset::ShallowWater => (1e-3, 1e-2, 100, 5, 2e-3, 0, 1e-3),
            Preset::Euler => (1e-5, 1e-3, 500, 10, 2e-3, 5, 1e-3),
            Preset::Burgers2D => (1e-5, 1e-2, 50, 1, 1e-3, 0, 1e-3),
        };
        TrainConfig { lambda1, lambda2, epochs, n_b, tau1, tau2, stage2_steps, ..TrainConfig::default() }
    }

    pub fn data(&self) -> DataPreset {
        match self {
            Preset::Burgers1D => DataPreset {
                train: Family::Burgers1DTrain,
                test: Family::Burgers1DTest,
                entropy: &[Family::Burgers1DEntropy],
                n_cells: 512,
                dt: 0.005,
                n_traj: 200,
                l_total: 20,
                l_train: 20,
                windowing: Windowing::Full,
                horizon: 3.0,
                n_validation: 40,
            },
            Preset::ShallowWater => DataPreset {
                train: Family::ShallowWaterTrain,
                test: Family::ShallowWaterTest,
                entropy: &[Family::ShallowWaterEntropy],
                n_cells: 512,
                dt: 0.005,
                n_traj: 300,
                l_total: 20,
                l_train: 20,
                windowing: Windowing::Full,
                horizon: 1.5,
                n_validation: 40,
            },
            Preset::Euler => DataPreset {
                train: Family::EulerTrain,
                test: Family::EulerTest,
                entropy: &[Family::Sod],
                n_cells: 512,
                dt: 0.002,
                n_traj: 300,
                l_total: 300,
                l_train: 20,
                windowing: Windowing::Sliding,
                horizon: 1.6,
                n_validation: 40,
            },
            Preset::Burgers2D => DataPreset {
                train: Family::Burgers2DTrain,
                test: Family::Burgers2DTest,
                entropy: &[Family::Burgers2DSine, Family::Burgers2DGaussian, Family::Burgers2DAsymmetric],
                n_cells: 100,
                dt: 0.001,
                n_traj: 5,
                l_total: 20,
                l_train: 20,
                windowing: Windowing::Full,
                horizon: 1.6,
                n_validation: 40,
            },
        }
    }
}
