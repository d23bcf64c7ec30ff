//! CSV and JSON outputs.

use std::path::Path;

use nescfn_core::grid::Geometry;
use nescfn_core::integrate::Rollout;
use nescfn_core::metrics::EvalReport;
use nescfn_core::training::EpochRecord;
use serde::Serialize;

use crate::{Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })
}

#[derive(Serialize)]
struct HistoryRow<'a> {
    epoch: u32,
    shift: f64,
    train_loss: f64,
    data: f64,
    hessian_penalty: f64,
    symmetry_penalty: f64,
    stage2_loss: f64,
    validation_loss: f64,
    best_validation: f64,
    improved: bool,
    batches: usize,
    skipped: usize,
    wall_time: &'a str,
}

/// Appends training history rows; `wall_times` holds seconds since start.
pub fn write_history(path: &Path, records: &[EpochRecord], wall_times: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    for (r, t) in records.iter().zip(wall_times) {
        w.serialize(HistoryRow {
            epoch: r.epoch,
            shift: r.shift,
            train_loss: r.train_loss,
            data: r.data,
            hessian_penalty: r.hessian_penalty,
            symmetry_penalty: r.symmetry_penalty,
            stage2_loss: r.stage2_loss,
            validation_loss: r.validation_loss,
            best_validation: r.best_validation,
            improved: r.improved,
            batches: r.batches,
            skipped: r.skipped,
            wall_time: &format!("{t:.3}"),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long-format metrics: `metric, component, time, value`.
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["metric", "component", "time", "value"])?;
    for (i, series) in report.conservation.iter().enumerate() {
        for (t, v) in report.times.iter().zip(series) {
            w.write_record(["conservation", &i.to_string(), &t.to_string(), &v.to_string()])?;
        }
    }
    for (t, v) in report.times.iter().zip(&report.entropy) {
        w.write_record(["entropy", "", &t.to_string(), &v.to_string()])?;
    }
    if let Some(errors) = &report.rel_l2 {
        for (t, v) in report.times.iter().zip(errors) {
            w.write_record(["rel_l2", "", &t.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ReportSummary {
    pub label: String,
    pub max_entropy: f64,
    pub entropy_scale: f64,
    pub max_conservation: f64,
    pub final_rel_l2: Option<f64>,
}

impl From<&EvalReport> for ReportSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            label: r.label.clone(),
            max_entropy: r.max_entropy(),
            entropy_scale: r.entropy_scale,
            max_conservation: r.max_conservation(),
            final_rel_l2: r.final_error(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct EvalSummary {
    pub checkpoint: String,
    pub entropy_remainder: String,
    pub max_entropy: f64,
    /// Largest `𝒥 / Σ|η(û(t₀))|Δx` over all reports.
    pub max_entropy_ratio: f64,
    pub max_conservation: f64,
    pub reports: Vec<ReportSummary>,
}

impl EvalSummary {
    pub fn new(checkpoint: &str, entropy_remainder: &str, reports: &[EvalReport]) -> Self {
        let reports: Vec<ReportSummary> = reports.iter().map(ReportSummary::from).collect();
        let max = |f: &dyn Fn(&ReportSummary) -> f64| reports.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        Self {
            checkpoint: checkpoint.to_string(),
            entropy_remainder: entropy_remainder.to_string(),
            max_entropy: max(&|r| r.max_entropy),
            max_entropy_ratio: max(&|r| r.max_entropy / r.entropy_scale),
            max_conservation: max(&|r| r.max_conservation),
            reports,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `step, time, cell, x[, y], u0, …` for every snapshot.
pub fn write_rollout_csv(path: &Path, rollout: &Rollout, geom: &Geometry) -> Result<()> {
    let mut w = writer(path)?;
    let p = rollout.states.first().map_or(0, |s| s.p());
    let mut head = vec!["step".to_string(), "time".into(), "cell".into(), "x".into()];
    if let Geometry::Two(_) = geom {
        head.push("y".into());
    }
    head.extend((0..p).map(|i| format!("u{i}")));
    w.write_record(&head)?;
    for (l, (s, t)) in rollout.states.iter().zip(rollout.times()).enumerate() {
        for j in 0..s.n_cells() {
            let mut rec = vec![l.to_string(), t.to_string(), j.to_string()];
            match geom {
                Geometry::One(g) => rec.push(g.center(j).to_string()),
                Geometry::Two(g) => {
                    let (x, y) = g.center(j / g.ny, j % g.ny);
                    rec.push(x.to_string());
                    rec.push(y.to_string());
                }
            }
            rec.extend(s.cell(j).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
