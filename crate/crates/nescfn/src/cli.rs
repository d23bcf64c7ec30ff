//! The `nescfn` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nescfn_core::classical::{ec_rhs, es_rhs, kt_rhs, Law};
use nescfn_core::data::{build_dataset, Family, Sampling, Split, N_ENT};
use nescfn_core::exec::Executor;
use nescfn_core::grid::{Geometry, StateField};
use nescfn_core::integrate::{rollout, Rollout, Stepper};
use nescfn_core::metrics::{evaluate, EvalReport};
use nescfn_core::networks::NetworkBundle;
use nescfn_core::rng::Purpose;
use nescfn_core::scheme::NeuralScheme;
use nescfn_core::training::{EpochRecord, Trainer, TrainerState};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::config::ExperimentConfig;
use crate::exec::{resolve_threads, Pool, THREADS_ENV};
use crate::report::{self, EvalSummary};
use crate::{nesd, Error};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_PREDICTION: u8 = 5;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

trait Code<T> {
    fn code(self, code: u8) -> Result<T, CliError>;
}

impl<T, E: Into<Error>> Code<T> for std::result::Result<T, E> {
    fn code(self, code: u8) -> Result<T, CliError> {
        self.map_err(|e| CliError { code, error: e.into() })
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError { code: EXIT_CONFIG, error: Error::Config(msg.into()) }
}

#[derive(Debug, Parser)]
#[command(name = "nescfn", version, about = "Learn entropy-stable conservation laws from trajectories")]
pub struct Cli {
    /// Worker threads; 1 selects the deterministic sequential path.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve reference trajectories and write an NESD dataset.
    GenData(GenDataArgs),
    /// Train networks on a dataset.
    Train(TrainArgs),
    /// Roll a checkpoint forward from one initial condition.
    Predict(PredictArgs),
    /// Conservation, entropy and error metrics of a checkpoint over IC families.
    Eval(EvalArgs),
    /// Run a classical solver with the analytic flux.
    ClassicalSolve(ClassicalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BatchingArg {
    /// `--n-b` batches per epoch.
    Count,
    /// Batches of `--n-b` windows.
    Size,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormalizerArg {
    Predictions,
    Data,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RemainderArg {
    Literal,
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WindowingArg {
    Full,
    Sliding,
}

/// Preset, config file and per-field overrides.
#[derive(Clone, Debug, Default, Args)]
pub struct ExperimentArgs {
    /// burgers1d | shallow-water | euler | burgers2d
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file overriding preset values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, help_heading = "Data")]
    pub family: Option<String>,
    #[arg(long, help_heading = "Data")]
    pub test_family: Option<String>,
    #[arg(long, help_heading = "Data")]
    pub n_cells: Option<usize>,
    #[arg(long, help_heading = "Data")]
    pub dt: Option<f64>,
    #[arg(long, help_heading = "Data")]
    pub n_traj: Option<usize>,
    /// Steps simulated per trajectory.
    #[arg(long, help_heading = "Data")]
    pub l_total: Option<usize>,
    /// Steps per training window.
    #[arg(long, help_heading = "Data")]
    pub l_train: Option<usize>,
    #[arg(long, value_enum, help_heading = "Data")]
    pub windowing: Option<WindowingArg>,
    /// Noise coefficient in [0, 1].
    #[arg(long, help_heading = "Data")]
    pub xi: Option<f64>,
    /// Seed for initial conditions.
    #[arg(long, help_heading = "Data")]
    pub seed: Option<u64>,
    #[arg(long, help_heading = "Data")]
    pub noise_seed: Option<u64>,
    #[arg(long, help_heading = "Data")]
    pub n_validation: Option<usize>,
    /// Prediction horizon.
    #[arg(long, help_heading = "Data")]
    pub horizon: Option<f64>,

    #[arg(long, help_heading = "Training")]
    pub lambda1: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub lambda2: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub epochs: Option<u32>,
    /// Batches per epoch, or windows per batch with `--batching size`.
    #[arg(long, help_heading = "Training")]
    pub n_b: Option<usize>,
    /// How `--n-b` is read.
    #[arg(long, value_enum, help_heading = "Training")]
    pub batching: Option<BatchingArg>,
    #[arg(long, help_heading = "Training")]
    pub tau1: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub tau2: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub stage2_steps: Option<usize>,
    /// What the stage-1 loss is normalized by.
    #[arg(long, value_enum, help_heading = "Training")]
    pub normalizer: Option<NormalizerArg>,
    /// Seed for shuffling and stage-2 perturbations.
    #[arg(long, help_heading = "Training")]
    pub train_seed: Option<u64>,
    /// Seed for network initialization.
    #[arg(long, help_heading = "Training")]
    pub init_seed: Option<u64>,
    #[arg(long, help_heading = "Training")]
    pub validation_count: Option<usize>,

    /// Take the wave speed from the left neighbour's minus state.
    #[arg(long, help_heading = "Variants")]
    pub literal_speed_stencil: bool,
    /// First-order two-stage update instead of SSP-RK2.
    #[arg(long, help_heading = "Variants")]
    pub literal_alg1: bool,
    /// `x·sigmoid(x)` in the flux network.
    #[arg(long, help_heading = "Variants")]
    pub silu_standard: bool,
    /// Flux term of the entropy remainder.
    #[arg(long, value_enum, help_heading = "Variants")]
    pub entropy_remainder: Option<RemainderArg>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl ExperimentArgs {
    /// Resolves the configuration; `fallback` names the preset when neither
    /// `--preset` nor the config file does.
    pub fn resolve(&self, fallback: Option<&str>) -> Result<ExperimentConfig, CliError> {
        let preset = self.preset.as_deref().or(if self.config.is_none() { fallback } else { None });
        let mut c = ExperimentConfig::load(preset, self.config.as_deref()).code(EXIT_CONFIG)?;
        set!(self.family => c.data.family);
        set!(self.test_family => c.data.test_family);
        set!(self.n_cells => c.data.n_cells);
        set!(self.dt => c.data.dt);
        set!(self.n_traj => c.data.n_traj);
        set!(self.l_total => c.data.l_total);
        set!(self.l_train => c.data.l_train);
        set!(self.xi => c.data.xi);
        set!(self.seed => c.data.seed);
        set!(self.noise_seed => c.data.noise_seed);
        set!(self.n_validation => c.data.n_validation);
        set!(self.horizon => c.data.horizon);
        set!(self.lambda1 => c.training.lambda1);
        set!(self.lambda2 => c.training.lambda2);
        set!(self.epochs => c.training.epochs);
        set!(self.n_b => c.training.n_b);
        set!(self.tau1 => c.training.tau1);
        set!(self.tau2 => c.training.tau2);
        set!(self.stage2_steps => c.training.stage2_steps);
        set!(self.train_seed => c.training.seed);
        set!(self.init_seed => c.training.init_seed);
        set!(self.validation_count => c.training.validation_count);
        if let Some(w) = self.windowing {
            c.data.windowing = match w {
                WindowingArg::Full => "full",
                WindowingArg::Sliding => "sliding",
            }
            .into();
        }
        if let Some(b) = self.batching {
            c.training.batching = match b {
                BatchingArg::Count => "count",
                BatchingArg::Size => "size",
            }
            .into();
        }
        if let Some(n) = self.normalizer {
            c.training.normalizer = match n {
                NormalizerArg::Predictions => "predictions",
                NormalizerArg::Data => "data",
            }
            .into();
        }
        if let Some(r) = self.entropy_remainder {
            c.flags.entropy_remainder = match r {
                RemainderArg::Literal => "literal",
                RemainderArg::Boundary => "boundary",
            }
            .into();
        }
        c.flags.literal_speed_stencil |= self.literal_speed_stencil;
        c.flags.literal_alg1 |= self.literal_alg1;
        c.flags.silu_standard |= self.silu_standard;
        c.validate().code(EXIT_CONFIG)?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Output NESD file; a provenance JSON is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Training dataset (NESD).
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset (NESD). Without one, the training loss selects
    /// the checkpoint.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Continue from this checkpoint's trainer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoint.nesc, history.csv and config.toml.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Member index: κ for indexed families, sample number otherwise.
    #[arg(long, default_value_t = 0)]
    pub index: u64,
    /// Steps to take; defaults to the horizon divided by dt.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output rollout CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Families to sweep; defaults to the preset's entropy families.
    #[arg(long = "eval-family")]
    pub eval_families: Vec<String>,
    /// Members of randomly sampled families.
    #[arg(long, default_value_t = 10)]
    pub count: u64,
    /// Restrict indexed families to `START:END` (inclusive).
    #[arg(long)]
    pub indices: Option<String>,
    /// Also solve the reference and report relative L2 errors.
    #[arg(long)]
    pub reference: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory for per-member CSVs and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassicalScheme {
    /// Kurganov–Tadmor with minmod reconstruction.
    Kt,
    /// First-order entropy-conservative.
    Ec,
    /// First-order Rusanov entropy-stable.
    Es,
}

#[derive(Debug, Args)]
pub struct ClassicalArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, value_enum, default_value = "kt")]
    pub scheme: ClassicalScheme,
    #[arg(long, default_value_t = 0)]
    pub index: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output rollout CSV; metrics go to the same path with `.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            let _ = e.print();
            std::process::exit(0);
        }
        config_error(e.to_string())
    })?;
    let _ = env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .format_timestamp(None)
        .try_init();
    let pool = Pool::new(resolve_threads(cli.threads).code(EXIT_CONFIG)?).code(EXIT_CONFIG)?;
    match cli.command {
        Command::GenData(a) => gen_data(&a, &pool),
        Command::Train(a) => train(&a, &pool),
        Command::Predict(a) => predict(&a),
        Command::Eval(a) => eval(&a, &pool),
        Command::ClassicalSolve(a) => classical(&a),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(config_error(format!("output directory {} does not exist", parent.display())));
    }
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError { code: EXIT_CONFIG, error: Error::io(path, e) })
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    version: &'a str,
    header: std::collections::BTreeMap<&'a str, &'a str>,
    config: &'a ExperimentConfig,
}

fn gen_data(a: &GenDataArgs, pool: &Pool) -> Result<(), CliError> {
    let cfg = a.experiment.resolve(None)?;
    ensure_parent(&a.out)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
    };
    let spec = cfg.dataset_spec(split).code(EXIT_CONFIG)?;
    let noise = if split == Split::Train { cfg.noise() } else { None };
    let ds = build_dataset(&spec, noise, pool).code(EXIT_DATA)?;
    nesd::write(&a.out, &ds).code(EXIT_DATA)?;
    let header = nesd::read_header(&a.out).code(EXIT_DATA)?;
    let prov = Provenance {
        command: "gen-data",
        version: env!("CARGO_PKG_VERSION"),
        header: header.raw.entries().iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
        config: &cfg,
    };
    report::write_json(&sibling(&a.out, ".json"), &prov).code(EXIT_DATA)?;
    log::info!("wrote {} trajectories, {} windows to {}", ds.spec.n_traj, ds.n_windows(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs, pool: &Pool) -> Result<(), CliError> {
    let train_ds = nesd::read(&a.data).code(EXIT_CONFIG)?;
    let cfg = a.experiment.resolve(None)?;
    let law = train_ds.spec.law();
    if law != cfg.family().code(EXIT_CONFIG)?.law() {
        return Err(config_error(format!("dataset law {} does not match the {} preset", law.tag(), cfg.preset)));
    }
    let validation = a.validation.as_deref().map(nesd::read).transpose().code(EXIT_CONFIG)?;
    ensure_dir(&a.out)?;
    let train_cfg = cfg.train_config().code(EXIT_CONFIG)?;
    let state = match &a.resume {
        Some(path) => {
            let ck = checkpoint::read(path).code(EXIT_CONFIG)?;
            ck.state.ok_or_else(|| config_error(format!("{} holds no trainer state", path.display())))?
        }
        None => {
            let spec = cfg.network_spec(law.p(), law.dims()).code(EXIT_CONFIG)?;
            TrainerState::new(NetworkBundle::init(&spec, cfg.training.init_seed).code(EXIT_CONFIG)?)
        }
    };
    std::fs::write(a.out.join("config.toml"), cfg.to_toml())
        .map_err(|e| CliError { code: EXIT_CONFIG, error: Error::io(&a.out, e) })?;

    let meta = |state: &TrainerState| CheckpointMeta {
        preset: cfg.preset.clone(),
        law: law.tag().to_string(),
        family: train_ds.spec.family.tag().to_string(),
        n_cells: match &train_ds.spec.geometry {
            Geometry::One(g) => g.n_cells,
            Geometry::Two(g) => g.nx,
        },
        dx: train_ds.spec.geometry.spacings(),
        dt: train_ds.spec.dt,
        epoch: state.epoch,
        seed: train_cfg.seed,
        best_validation: state.best_validation,
    };
    let mut trainer = Trainer::new(train_cfg.clone(), state, &train_ds, validation.as_ref()).code(EXIT_CONFIG)?;
    let ck_path = a.out.join("checkpoint.nesc");
    let start = Instant::now();
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut times = Vec::new();
    let mut save_error = None;
    let result = trainer.run(pool, |rec, state| {
        records.push(rec.clone());
        times.push(start.elapsed().as_secs_f64());
        let ck = Checkpoint { meta: meta(state), bundle: state.best.clone(), state: Some(state.clone()) };
        if let Err(e) = checkpoint::write(&ck_path, &ck) {
            save_error.get_or_insert(e);
        }
    });
    if let Some(e) = save_error {
        return Err(CliError { code: EXIT_TRAINING, error: e });
    }
    report::write_history(&a.out.join("history.csv"), &records, &times).code(EXIT_TRAINING)?;
    result.code(EXIT_TRAINING)?;
    if records.is_empty() {
        let state = &trainer.state;
        let ck = Checkpoint { meta: meta(state), bundle: state.best.clone(), state: Some(state.clone()) };
        checkpoint::write(&ck_path, &ck).code(EXIT_TRAINING)?;
    }
    Ok(())
}

/// A checkpoint, its configuration and the evaluation grid.
struct Loaded {
    ck: Checkpoint,
    cfg: ExperimentConfig,
    law: Law,
}

fn load_checkpoint(exp: &ExperimentArgs, path: &Path) -> Result<Loaded, CliError> {
    let ck = checkpoint::read(path).code(EXIT_CONFIG)?;
    let mut cfg = exp.resolve(Some(&ck.meta.preset))?;
    cfg.data.n_cells = exp.n_cells.unwrap_or(ck.meta.n_cells);
    cfg.data.dt = exp.dt.unwrap_or(ck.meta.dt);
    cfg.validate().code(EXIT_CONFIG)?;
    let law = cfg.family().code(EXIT_CONFIG)?.law();
    if law.tag() != ck.meta.law || law.p() != ck.bundle.p {
        return Err(config_error(format!("checkpoint law {} does not match the {} preset", ck.meta.law, cfg.preset)));
    }
    Ok(Loaded { ck, cfg, law })
}

impl Loaded {
    fn scheme(&self, family: Family, ic: &StateField) -> Result<(NeuralScheme, Geometry), CliError> {
        let geom = family.geometry(self.cfg.data.n_cells).code(EXIT_CONFIG)?;
        let bc = family.bc_kind().resolve(&ic.values);
        let mut s = NeuralScheme::new(self.ck.bundle.clone(), &geom, bc, self.cfg.data.dt).code(EXIT_CONFIG)?;
        s.reg = self.cfg.regularization();
        s.literal_speed_stencil = self.cfg.flags.literal_speed_stencil;
        s.stepper = self.cfg.stepper();
        Ok((s, geom))
    }

    fn steps(&self, explicit: Option<usize>) -> usize {
        explicit.unwrap_or_else(|| (self.cfg.data.horizon / self.cfg.data.dt).round() as usize)
    }
}

fn family_arg(tag: &str, law: &Law) -> Result<Family, CliError> {
    let f = Family::from_tag(tag).ok_or_else(|| config_error(format!("unknown family `{tag}`")))?;
    if f.law() != *law {
        return Err(config_error(format!("family {tag} follows {}, not {}", f.law().tag(), law.tag())));
    }
    Ok(f)
}

fn sample_ic(family: Family, geom: &Geometry, seed: u64, index: u64) -> Result<StateField, CliError> {
    family.sample(geom, seed, Purpose::InitialCondition, index).code(EXIT_CONFIG)
}

fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let l = load_checkpoint(&a.experiment, &a.checkpoint)?;
    ensure_parent(&a.out)?;
    let family = family_arg(&l.cfg.data.test_family, &l.law)?;
    let geom = family.geometry(l.cfg.data.n_cells).code(EXIT_CONFIG)?;
    let ic = sample_ic(family, &geom, l.cfg.data.seed, a.index)?;
    let (scheme, geom) = l.scheme(family, &ic)?;
    let run = scheme.rollout(&ic, l.steps(a.steps)).code(EXIT_PREDICTION)?;
    report::write_rollout_csv(&a.out, &run, &geom).code(EXIT_PREDICTION)
}

fn members(family: Family, count: u64, range: Option<(u64, u64)>) -> Vec<u64> {
    match family.sampling() {
        Sampling::Indexed => {
            let (lo, hi) = range.unwrap_or((0, N_ENT as u64));
            (lo..=hi.min(N_ENT as u64)).collect()
        }
        Sampling::Fixed => vec![0],
        Sampling::Random => (0..count).collect(),
    }
}

fn eval(a: &EvalArgs, pool: &Pool) -> Result<(), CliError> {
    let l = load_checkpoint(&a.experiment, &a.checkpoint)?;
    ensure_dir(&a.out)?;
    let variant = l.cfg.entropy_variant().code(EXIT_CONFIG)?;
    let families: Vec<Family> = if a.eval_families.is_empty() {
        l.cfg.preset().code(EXIT_CONFIG)?.data().entropy.to_vec()
    } else {
        a.eval_families.iter().map(|t| family_arg(t, &l.law)).collect::<Result<_, _>>()?
    };
    let range = match &a.indices {
        Some(s) => {
            let (lo, hi) = s.split_once(':').ok_or_else(|| config_error("--indices takes START:END"))?;
            let p = |v: &str| v.trim().parse::<u64>().map_err(|_| config_error(format!("bad index `{v}`")));
            Some((p(lo)?, p(hi)?))
        }
        None => None,
    };
    let steps = l.steps(a.steps);
    let mut reports: Vec<EvalReport> = Vec::new();
    for family in families {
        let idx = members(family, a.count, range);
        let geom = family.geometry(l.cfg.data.n_cells).code(EXIT_CONFIG)?;
        let periodic = matches!(family.bc_kind(), nescfn_core::data::BcKind::Periodic);
        let results = pool.map(idx.len(), |k| -> Result<EvalReport, CliError> {
            let ic = sample_ic(family, &geom, l.cfg.data.seed, idx[k])?;
            let (scheme, _) = l.scheme(family, &ic)?;
            let run = scheme.rollout(&ic, steps).code(EXIT_PREDICTION)?;
            let reference = if a.reference {
                Some(
                    nescfn_core::classical::solve_reference(&l.law, &ic, &geom, &scheme.bc, scheme.dt, steps)
                        .code(EXIT_PREDICTION)?,
                )
            } else {
                None
            };
            let label = format!("{}-{:03}", family.tag(), idx[k]);
            evaluate(&l.ck.bundle, &label, &run, &geom, periodic, variant, reference.as_ref()).code(EXIT_PREDICTION)
        });
        for r in results {
            let r = r?;
            report::write_eval_csv(&a.out.join(format!("{}.csv", r.label)), &r).code(EXIT_PREDICTION)?;
            reports.push(r);
        }
    }
    let summary = EvalSummary::new(&a.checkpoint.display().to_string(), variant.tag(), &reports);
    report::write_json(&a.out.join("summary.json"), &summary).code(EXIT_PREDICTION)
}

fn classical(a: &ClassicalArgs) -> Result<(), CliError> {
    let cfg = a.experiment.resolve(None)?;
    ensure_parent(&a.out)?;
    let family = cfg.test_family().code(EXIT_CONFIG)?;
    let law = family.law();
    let geom = family.geometry(cfg.data.n_cells).code(EXIT_CONFIG)?;
    let ic = sample_ic(family, &geom, cfg.data.seed, a.index)?;
    let bc = family.bc_kind().resolve(&ic.values);
    let steps = a.steps.unwrap_or_else(|| (cfg.data.horizon / cfg.data.dt).round() as usize);
    let wrap = |u: &nescfn_core::Mat| StateField { values: u.clone() };
    let run: Rollout = match a.scheme {
        ClassicalScheme::Kt => {
            rollout(|u| Ok(kt_rhs(&law, &wrap(u), &bc, &geom)?.values), &ic, cfg.data.dt, steps, Stepper::SspRk2)
        }
        ClassicalScheme::Ec => {
            rollout(|u| Ok(ec_rhs(&law, &wrap(u), &bc, &geom)?.0.values), &ic, cfg.data.dt, steps, Stepper::SspRk2)
        }
        ClassicalScheme::Es => {
            rollout(|u| Ok(es_rhs(&law, &wrap(u), &bc, &geom)?.values), &ic, cfg.data.dt, steps, Stepper::SspRk2)
        }
    }
    .code(EXIT_DATA)?;
    report::write_rollout_csv(&a.out, &run, &geom).code(EXIT_DATA)?;
    let periodic = matches!(family.bc_kind(), nescfn_core::data::BcKind::Periodic);
    let variant = cfg.entropy_variant().code(EXIT_CONFIG)?;
    let label = format!("{}-{:03}", family.tag(), a.index);
    let r = evaluate(&law, &label, &run, &geom, periodic, variant, None).code(EXIT_DATA)?;
    report::write_eval_csv(&sibling(&a.out, ".metrics.csv"), &r).code(EXIT_DATA)?;
    report::write_json(&sibling(&a.out, ".json"), &report::ReportSummary::from(&r)).code(EXIT_DATA)
}
