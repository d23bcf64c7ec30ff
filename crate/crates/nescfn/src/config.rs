//! Experiment configuration.
//!
//! Values resolve in three layers: preset defaults, then a TOML file, then
//! command-line flags. The resolved configuration serializes back to a TOML
//! file that reproduces the run when passed as `--config`.

use std::path::Path;

use nescfn_core::autodiff::Activation;
use nescfn_core::data::{DatasetSpec, Family, NoiseSpec, Split, Windowing};
use nescfn_core::integrate::Stepper;
use nescfn_core::metrics::EntropyVariant;
use nescfn_core::networks::NetworkSpec;
use nescfn_core::presets::Preset;
use nescfn_core::scheme::Regularization;
use nescfn_core::training::{Batching, NormalizerSource, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub family: String,
    pub test_family: String,
    pub n_cells: usize,
    pub dt: f64,
    pub n_traj: usize,
    pub l_total: usize,
    pub l_train: usize,
    pub windowing: String,
    pub xi: f64,
    pub seed: u64,
    pub noise_seed: u64,
    pub n_validation: usize,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: u32,
    pub n_b: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub stage2_steps: usize,
    /// `count` (batches per epoch) or `size` (windows per batch).
    pub batching: String,
    /// `predictions` or `data`.
    pub normalizer: String,
    pub seed: u64,
    pub init_seed: u64,
    pub validation_count: usize,
    pub perturbation: f64,
    pub c1: f64,
    pub c2: f64,
    pub inference_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub flux_hidden: Vec<usize>,
    pub speed_hidden: Vec<usize>,
    pub entropy_hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagSection {
    pub literal_speed_stencil: bool,
    pub literal_alg1: bool,
    pub silu_standard: bool,
    /// `literal` or `boundary`.
    pub entropy_remainder: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub data: DataSection,
    pub training: TrainingSection,
    pub network: NetworkSection,
    pub flags: FlagSection,
}

fn parse<T>(what: &str, tag: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    f(tag).ok_or_else(|| Error::Config(format!("unknown {what} `{tag}`")))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentConfig {
    pub fn from_preset(preset: Preset) -> Self {
        let d = preset.data();
        let t = preset.training();
        let net = NetworkSpec::standard(1, 1);
        Self {
            preset: preset.tag().to_string(),
            data: DataSection {
                family: d.train.tag().to_string(),
                test_family: d.test.tag().to_string(),
                n_cells: d.n_cells,
                dt: d.dt,
                n_traj: d.n_traj,
                l_total: d.l_total,
                l_train: d.l_train,
                windowing: d.windowing.tag().to_string(),
                xi: 0.0,
                seed: 0,
                noise_seed: 1,
                n_validation: d.n_validation,
                horizon: d.horizon,
            },
            training: TrainingSection {
                lambda1: t.lambda1,
                lambda2: t.lambda2,
                epochs: t.epochs,
                n_b: t.n_b,
                tau1: t.tau1,
                tau2: t.tau2,
                stage2_steps: t.stage2_steps,
                batching: "count".into(),
                normalizer: "predictions".into(),
                seed: t.seed,
                init_seed: 0,
                validation_count: t.validation_count,
                perturbation: t.perturbation,
                c1: t.reg.c1,
                c2: t.reg.c2,
                inference_floor: t.reg.inference_floor,
            },
            network: NetworkSection {
                flux_hidden: net.flux_hidden,
                speed_hidden: net.speed_hidden,
                entropy_hidden: net.entropy_hidden,
            },
            flags: FlagSection {
                literal_speed_stencil: false,
                literal_alg1: false,
                silu_standard: false,
                entropy_remainder: EntropyVariant::Literal.tag().into(),
            },
        }
    }

    /// Preset defaults overlaid with `file`. The preset comes from `preset`
    /// if given, else from the file's `preset` key.
    pub fn load(preset: Option<&str>, file: Option<&Path>) -> Result<Self> {
        let overlay = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Some(text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
            }
            None => None,
        };
        let file_preset = overlay.as_ref().and_then(|t| t.get("preset")).and_then(|v| v.as_str());
        let tag = match (preset, file_preset) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("--preset {a} conflicts with preset `{b}` in the config file")))
            }
            (Some(a), _) | (None, Some(a)) => a.to_string(),
            (None, None) => return Err(Error::Config("no preset given (use --preset or a config file)".into())),
        };
        let base = Self::from_preset(Preset::from_tag(&tag).map_err(|e| Error::Config(e.to_string()))?);
        let Some(overlay) = overlay else { return Ok(base) };
        let mut value = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut value, toml::Value::Table(overlay));
        value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn preset(&self) -> Result<Preset> {
        Preset::from_tag(&self.preset).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn family(&self) -> Result<Family> {
        parse("family", &self.data.family, Family::from_tag)
    }

    pub fn test_family(&self) -> Result<Family> {
        parse("family", &self.data.test_family, Family::from_tag)
    }

    pub fn entropy_variant(&self) -> Result<EntropyVariant> {
        parse("entropy remainder", &self.flags.entropy_remainder, EntropyVariant::from_tag)
    }

    pub fn stepper(&self) -> Stepper {
        if self.flags.literal_alg1 {
            Stepper::Literal
        } else {
            Stepper::SspRk2
        }
    }

    pub fn regularization(&self) -> Regularization {
        let t = &self.training;
        Regularization { c1: t.c1, c2: t.c2, inference_floor: t.inference_floor }
    }

    pub fn dataset_spec(&self, split: Split) -> Result<DatasetSpec> {
        let d = &self.data;
        let family = self.family()?;
        let spec = DatasetSpec {
            family,
            geometry: family.geometry(d.n_cells)?,
            dt: d.dt,
            n_traj: match split {
                Split::Train => d.n_traj,
                Split::Validation => d.n_validation,
            },
            l_total: d.l_total,
            l_train: d.l_train,
            windowing: parse("windowing", &d.windowing, Windowing::from_tag)?,
            seed: d.seed,
            split,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn noise(&self) -> Option<NoiseSpec> {
        (self.data.xi > 0.0).then_some(NoiseSpec { xi: self.data.xi, seed: self.data.noise_seed })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        let cfg = TrainConfig {
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            epochs: t.epochs,
            n_b: t.n_b,
            tau1: t.tau1,
            tau2: t.tau2,
            stage2_steps: t.stage2_steps,
            batching: parse("batching", &t.batching, |s| match s {
                "count" => Some(Batching::Count),
                "size" => Some(Batching::Size),
                _ => None,
            })?,
            normalizer: parse("normalizer", &t.normalizer, |s| match s {
                "predictions" => Some(NormalizerSource::Predictions),
                "data" => Some(NormalizerSource::Data),
                _ => None,
            })?,
            reg: self.regularization(),
            literal_speed_stencil: self.flags.literal_speed_stencil,
            stepper: self.stepper(),
            seed: t.seed,
            validation_count: t.validation_count,
            perturbation: t.perturbation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn network_spec(&self, p: usize, dims: usize) -> Result<NetworkSpec> {
        let n = &self.network;
        let mut spec = NetworkSpec::standard(p, dims);
        spec.flux_hidden = n.flux_hidden.clone();
        spec.speed_hidden = n.speed_hidden.clone();
        spec.entropy_hidden = n.entropy_hidden.clone();
        if self.flags.silu_standard {
            spec.flux_activation = Activation::SiluStandard;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every derived value.
    pub fn validate(&self) -> Result<()> {
        let family = self.family()?;
        if self.test_family()?.law() != family.law() {
            return Err(Error::Config("test family and training family follow different laws".into()));
        }
        if !(0.0..=1.0).contains(&self.data.xi) {
            return Err(Error::Config(format!("xi must lie in [0, 1], got {}", self.data.xi)));
        }
        if !(self.data.horizon >= 0.0) {
            return Err(Error::Config("horizon must be non-negative".into()));
        }
        self.dataset_spec(Split::Train)?;
        self.train_config()?;
        self.entropy_variant()?;
        let law = family.law();
        self.network_spec(law.p(), law.dims())?;
        Ok(())
    }
}
