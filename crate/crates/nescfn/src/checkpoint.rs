//! The `NESC` checkpoint file: network architecture and run metadata in the
//! header, parameter tensors in the payload, optionally followed by the full
//! trainer state for resuming.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nescfn_core::autodiff::Activation;
use nescfn_core::networks::{NetworkBundle, NetworkSpec};
use nescfn_core::training::{Adam, TrainerState};

use crate::container::{self, Fields, Header};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NESC";
pub const VERSION: u32 = 1;
pub const SCHEMA: &str = "nescfn-checkpoint-v1";

/// Where a checkpoint came from and what grid it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub preset: String,
    pub law: String,
    /// Training family tag.
    pub family: String,
    pub n_cells: usize,
    pub dx: Vec<f64>,
    pub dt: f64,
    /// Epochs completed.
    pub epoch: u32,
    pub seed: u64,
    pub best_validation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Best-validation parameters.
    pub bundle: NetworkBundle,
    pub state: Option<TrainerState>,
}

fn spec_header(h: &mut Header, spec: &NetworkSpec) {
    h.push("p", spec.p);
    h.push("dims", spec.dims);
    h.push("flux_widths", container::join(&spec.flux_widths()));
    h.push("flux_activation", spec.flux_activation.tag());
    h.push("speed_widths", container::join(&spec.speed_widths()));
    h.push("speed_activation", spec.speed_activation.tag());
    h.push("entropy_hidden", container::join(&spec.entropy_hidden));
    h.push("entropy_activation", spec.entropy_activation.tag());
}

fn parse_spec(f: &Fields<'_>) -> Result<NetworkSpec> {
    let act = |key: &str| -> Result<Activation> {
        let tag = f.str(key)?;
        Activation::from_tag(tag).ok_or_else(|| Error::format(f.path, format!("unknown activation `{tag}`")))
    };
    let hidden = |key: &str| -> Result<Vec<usize>> {
        let w: Vec<usize> = f.list(key)?;
        if w.len() < 2 {
            return Err(Error::format(f.path, format!("`{key}` needs input and output widths")));
        }
        Ok(w[1..w.len() - 1].to_vec())
    };
    let spec = NetworkSpec {
        p: f.parse("p")?,
        dims: f.parse("dims")?,
        flux_hidden: hidden("flux_widths")?,
        flux_activation: act("flux_activation")?,
        speed_hidden: hidden("speed_widths")?,
        speed_activation: act("speed_activation")?,
        entropy_hidden: f.list("entropy_hidden")?,
        entropy_activation: act("entropy_activation")?,
    };
    if spec.flux_widths() != f.list::<usize>("flux_widths")? || spec.speed_widths() != f.list::<usize>("speed_widths")? {
        return Err(Error::format(f.path, "network widths do not match p and dims"));
    }
    Ok(spec)
}

fn write_bundle(w: &mut impl Write, b: &NetworkBundle, path: &Path) -> Result<()> {
    for m in b.tensors() {
        container::write_u64(w, m.rows as u64, path)?;
        container::write_u64(w, m.cols as u64, path)?;
        container::write_f64s(w, &m.data, path)?;
    }
    Ok(())
}

fn read_bundle(r: &mut impl Read, spec: &NetworkSpec, path: &Path) -> Result<NetworkBundle> {
    let mut b = NetworkBundle::zeros(spec)?;
    for (i, m) in b.tensors_mut().into_iter().enumerate() {
        let rows = container::read_u64(r, path)? as usize;
        let cols = container::read_u64(r, path)? as usize;
        if (rows, cols) != (m.rows, m.cols) {
            return Err(Error::format(path, format!("tensor {i} is {rows}x{cols}, architecture expects {}x{}", m.rows, m.cols)));
        }
        m.data = container::read_f64s(r, rows * cols, path)?;
    }
    Ok(b)
}

fn write_adam(w: &mut impl Write, a: &Adam, path: &Path) -> Result<()> {
    container::write_u64(w, a.m.len() as u64, path)?;
    container::write_u64(w, a.t, path)?;
    container::write_f64s(w, &[a.beta1, a.beta2, a.eps], path)?;
    container::write_f64s(w, &a.m, path)?;
    container::write_f64s(w, &a.v, path)
}

fn read_adam(r: &mut impl Read, n: usize, path: &Path) -> Result<Adam> {
    let len = container::read_u64(r, path)? as usize;
    if len != n {
        return Err(Error::format(path, format!("optimizer holds {len} moments, expected {n}")));
    }
    let t = container::read_u64(r, path)?;
    let h = container::read_f64s(r, 3, path)?;
    let m = container::read_f64s(r, n, path)?;
    let v = container::read_f64s(r, n, path)?;
    Ok(Adam { m, v, t, beta1: h[0], beta2: h[1], eps: h[2] })
}

pub fn write(path: &Path, ck: &Checkpoint) -> Result<()> {
    let m = &ck.meta;
    let mut h = Header::default();
    h.push("schema", SCHEMA);
    spec_header(&mut h, &ck.bundle.spec());
    h.push("preset", &m.preset);
    h.push("law", &m.law);
    h.push("family", &m.family);
    h.push("n_cells", m.n_cells);
    h.push("dx", container::join(&m.dx));
    h.push("dt", m.dt);
    h.push("epoch", m.epoch);
    h.push("seed", m.seed);
    h.push("best_validation", m.best_validation);
    h.push("tensors", ck.bundle.tensors().len());
    h.push("trainer_state", if ck.state.is_some() { "yes" } else { "no" });
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    container::write_preamble(&mut w, MAGIC, VERSION, &h, path)?;
    write_bundle(&mut w, &ck.bundle, path)?;
    if let Some(s) = &ck.state {
        write_bundle(&mut w, &s.bundle, path)?;
        container::write_f64s(&mut w, &[s.best_validation], path)?;
        container::write_u64(&mut w, s.epoch as u64, path)?;
        container::write_u64(&mut w, s.updates, path)?;
        write_adam(&mut w, &s.adam, path)?;
        write_adam(&mut w, &s.adam_final, path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let (version, header) = container::read_preamble(&mut r, MAGIC, path)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let f = Fields { header: &header, path };
    if f.str("schema")? != SCHEMA {
        return Err(Error::format(path, format!("unknown schema `{}`", f.str("schema")?)));
    }
    let spec = parse_spec(&f)?;
    let meta = CheckpointMeta {
        preset: f.str("preset")?.to_string(),
        law: f.str("law")?.to_string(),
        family: f.str("family")?.to_string(),
        n_cells: f.parse("n_cells")?,
        dx: f.list("dx")?,
        dt: f.parse("dt")?,
        epoch: f.parse("epoch")?,
        seed: f.parse("seed")?,
        best_validation: f.parse("best_validation")?,
    };
    let bundle = read_bundle(&mut r, &spec, path)?;
    if f.parse::<usize>("tensors")? != bundle.tensors().len() {
        return Err(Error::format(path, "tensor count does not match the architecture"));
    }
    let state = match f.str("trainer_state")? {
        "no" => None,
        "yes" => {
            let current = read_bundle(&mut r, &spec, path)?;
            let best_validation = container::read_f64s(&mut r, 1, path)?[0];
            let epoch =
                u32::try_from(container::read_u64(&mut r, path)?).map_err(|_| Error::format(path, "epoch out of range"))?;
            let updates = container::read_u64(&mut r, path)?;
            let adam = read_adam(&mut r, bundle.n_params(), path)?;
            let adam_final = read_adam(&mut r, bundle.final_layer_range().len(), path)?;
            Some(TrainerState { bundle: current, best: bundle.clone(), best_validation, adam, adam_final, epoch, updates })
        }
        other => return Err(Error::format(path, format!("trainer_state must be yes or no, got `{other}`"))),
    };
    container::expect_end(&mut r, path)?;
    Ok(Checkpoint { meta, bundle, state })
}
