//! The `NESD` dataset file.
//!
//! The payload holds the clean trajectories, `n_traj·(l_total+1)` snapshots
//! in (trajectory, time, cell, component) order. Noise is stored as its
//! coefficient and seed and regenerated on load; the generator is keyed, so
//! the observed data are reproduced bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nescfn_core::data::{DatasetSpec, Family, NoiseSpec, Split, TrajectoryDataset, Windowing};
use nescfn_core::grid::{Geometry, StateField};
use nescfn_core::rng::GENERATOR;
use nescfn_core::Mat;

use crate::container::{self, Fields, Header};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NESD";
pub const VERSION: u32 = 1;

/// Everything in a dataset file except the payload.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub spec: DatasetSpec,
    pub noise: Option<NoiseSpec>,
    pub normalizer: f64,
    pub generator: String,
    pub n_windows: usize,
    pub raw: Header,
}

fn header_of(ds: &TrajectoryDataset) -> Header {
    let s = &ds.spec;
    let law = s.law();
    let mut h = Header::default();
    h.push("law", law.tag());
    h.push("family", s.family.tag());
    h.push("p", law.p());
    match &s.geometry {
        Geometry::One(g) => {
            h.push("n_cells", g.n_cells);
            h.push("domain", container::join(&[g.a, g.b]));
            h.push("dx", g.dx);
        }
        Geometry::Two(g) => {
            h.push("n_cells", g.nx);
            h.push("ny", g.ny);
            h.push("domain", container::join(&[g.x.0, g.x.1, g.y.0, g.y.1]));
            h.push("dx", container::join(&[g.dx, g.dy]));
        }
    }
    h.push("dt", s.dt);
    h.push("N_traj", s.n_traj);
    h.push("L", s.l_total);
    h.push("L_train", s.l_train);
    h.push("windowing", s.windowing.tag());
    h.push("windows", ds.n_windows());
    h.push("split", s.split.tag());
    h.push("seed", s.seed);
    let noise = ds.noise.unwrap_or(NoiseSpec { xi: 0.0, seed: 0 });
    h.push("xi", noise.xi);
    h.push("noise_seed", noise.seed);
    h.push("normalizer", ds.normalizer);
    h.push("generator", GENERATOR);
    h.push("payload", "clean");
    h
}

pub fn write(path: &Path, ds: &TrajectoryDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    container::write_preamble(&mut w, MAGIC, VERSION, &header_of(ds), path)?;
    for snap in ds.trajectories.iter().flatten() {
        container::write_f64s(&mut w, &snap.values.data, path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_header(header: Header, path: &Path) -> Result<DatasetHeader> {
    let f = Fields { header: &header, path };
    let bad = |m: String| Error::format(path, m);
    let family =
        Family::from_tag(f.str("family")?).ok_or_else(|| bad(format!("unknown family `{}`", f.str("family").unwrap_or(""))))?;
    if family.law().tag() != f.str("law")? {
        return Err(bad(format!("law `{}` does not match family {}", f.str("law")?, family.tag())));
    }
    if family.law().p() != f.parse::<usize>("p")? {
        return Err(bad("component count does not match the law".into()));
    }
    let n_cells: usize = f.parse("n_cells")?;
    let geometry = family.geometry(n_cells)?;
    let dx: Vec<f64> = f.list("dx")?;
    let spacings = geometry.spacings();
    if dx.len() != spacings.len() || dx.iter().zip(&spacings).any(|(a, b)| (a - b).abs() > 1e-12 * b.abs()) {
        return Err(bad(format!("dx {dx:?} does not match the {} grid {spacings:?}", family.tag())));
    }
    if let Geometry::Two(g) = &geometry {
        if f.parse::<usize>("ny")? != g.ny {
            return Err(bad("ny does not match the family grid".into()));
        }
    }
    let windowing = Windowing::from_tag(f.str("windowing")?).ok_or_else(|| bad("unknown windowing".into()))?;
    let split = Split::from_tag(f.str("split")?).ok_or_else(|| bad("unknown split".into()))?;
    let spec = DatasetSpec {
        family,
        geometry,
        dt: f.parse("dt")?,
        n_traj: f.parse("N_traj")?,
        l_total: f.parse("L")?,
        l_train: f.parse("L_train")?,
        windowing,
        seed: f.parse("seed")?,
        split,
    };
    spec.validate()?;
    let xi: f64 = f.parse("xi")?;
    let noise = (xi > 0.0).then(|| f.parse("noise_seed").map(|seed| NoiseSpec { xi, seed })).transpose()?;
    if f.str("payload")? != "clean" {
        return Err(bad(format!("unsupported payload kind `{}`", f.str("payload")?)));
    }
    Ok(DatasetHeader {
        noise,
        normalizer: f.parse("normalizer")?,
        generator: f.str("generator")?.to_string(),
        n_windows: f.parse("windows")?,
        spec,
        raw: header.clone(),
    })
}

/// Reads only the header.
pub fn read_header(path: &Path) -> Result<DatasetHeader> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (version, header) = container::read_preamble(&mut BufReader::new(file), MAGIC, path)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported NESD version {version}")));
    }
    parse_header(header, path)
}

pub fn read(path: &Path) -> Result<TrajectoryDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let (version, header) = container::read_preamble(&mut r, MAGIC, path)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported NESD version {version}")));
    }
    let h = parse_header(header, path)?;
    let rows = h.spec.geometry.n_rows();
    let p = h.spec.law().p();
    let mut trajectories = Vec::with_capacity(h.spec.n_traj);
    for _ in 0..h.spec.n_traj {
        let mut traj = Vec::with_capacity(h.spec.l_total + 1);
        for _ in 0..=h.spec.l_total {
            let data = container::read_f64s(&mut r, rows * p, path)?;
            traj.push(StateField { values: Mat::from_vec(rows, p, data)? });
        }
        trajectories.push(traj);
    }
    container::expect_end(&mut r, path)?;
    let ds = TrajectoryDataset::from_parts(h.spec, trajectories, h.noise)?;
    if ds.normalizer.to_bits() != h.normalizer.to_bits() {
        return Err(Error::format(path, "normalizer does not match the payload"));
    }
    if ds.n_windows() != h.n_windows {
        return Err(Error::format(path, "window count does not match the header"));
    }
    Ok(ds)
}
