//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nescfn::report::EvalSummary;
use nescfn_core::classical::{ec_rhs, tadmor_flux, Law};
use nescfn_core::exec::Sequential;
use nescfn_core::grid::{BoundarySpec, Geometry, Grid1D, StateField};
use nescfn_core::integrate::{rollout, Stepper};
use nescfn_core::linalg::Mat;
use nescfn_core::metrics::{conservation_remainder, max_undivided_difference, rel_l2_error, shock_position};
use nescfn_core::networks::{Group, NetworkBundle, NetworkSpec};
use nescfn_core::rng::{self, Purpose};
use nescfn_core::scheme::{EdgeWorkspace, Layout, NeuralScheme, Phase, Regularization};
use nescfn_core::training::{stage1_gradient, stage1_loss, LossSettings, NormalizerSource, WindowRef};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sample_state(law: &Law, r: &mut ChaCha8Rng) -> Vec<f64> {
    let u = |r: &mut ChaCha8Rng, a, b| rng::uniform(r, a, b);
    match law {
        Law::Burgers1D | Law::Burgers2D => vec![u(r, -2.0, 2.0)],
        Law::ShallowWater { .. } => {
            let h = u(r, 0.2, 3.0);
            vec![h, h * u(r, -2.0, 2.0)]
        }
        Law::Euler { gamma } => {
            let (rho, vel, p) = (u(r, 0.2, 4.0), u(r, -2.0, 2.0), u(r, 0.2, 10.0));
            vec![rho, rho * vel, p / (gamma - 1.0) + 0.5 * rho * vel * vel]
        }
    }
}

fn tadmor_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut r = rng::stream(1, Purpose::Validation, 1);
    let laws = [Law::Burgers1D, Law::shallow_water(), Law::euler(), Law::Burgers2D];
    for law in &laws {
        for k in 0..10_000 {
            let dir = if law.dims() == 2 { k % 2 } else { 0 };
            let (vl, vr) = (law.entropy_vars(&sample_state(law, &mut r)), law.entropy_vars(&sample_state(law, &mut r)));
            match tadmor_flux(law, dir, &vl, &vr) {
                Ok(g) => {
                    let lhs: f64 = (0..law.p()).map(|i| (vr[i] - vl[i]) * g[i]).sum();
                    worst = worst.max((lhs - (law.potential(dir, &vr) - law.potential(dir, &vl))).abs());
                }
                Err(_) => failures += 1,
            }
        }
    }
    outcome(
        worst <= 1e-9 && failures == 0,
        format!("max |[[v]]·g* - [[psi]]| = {worst:.2e} (tol 1e-9) over 4 x 10^4 pairs, {failures} quadrature failures"),
    )
}

fn cell_entropy_equality() -> Outcome {
    let n = 64;
    let geom = Geometry::One(Grid1D::new(n, 0.0, 1.0).unwrap());
    let dx = 1.0 / n as f64;
    let mut worst: f64 = 0.0;
    let mut r = rng::stream(2, Purpose::Validation, 2);
    for _ in 0..100 {
        let vals: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -1.5, 1.5)).collect();
        let f = StateField::scalar(&vals).unwrap();
        let (rhs, g) = ec_rhs(&Law::Burgers1D, &f, &BoundarySpec::Periodic, &geom).unwrap();
        for j in 0..n {
            let left = (j + n - 1) % n;
            worst = worst.max((vals[j] * rhs.values.data[j] + (g[0][j] - g[0][left]) / dx).abs());
        }
    }
    outcome(worst <= 1e-10, format!("max cell residual {worst:.2e} (tol 1e-10), 100 fields, n = 64"))
}

fn exact_conservation() -> Outcome {
    let n = 32;
    let geom = Geometry::One(Grid1D::new(n, 0.0, 1.0).unwrap());
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    for k in 0..100u64 {
        let p = 1 + (k % 3) as usize;
        let bundle = NetworkBundle::init(&NetworkSpec::standard(p, 1), 1000 + k).unwrap();
        let scheme = NeuralScheme::new(bundle, &geom, BoundarySpec::Periodic, 0.01).unwrap();
        let mut r = rng::stream(k, Purpose::Validation, 3);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect()).collect();
        match scheme.rhs(&StateField::from_rows(&rows).unwrap()) {
            Ok(rhs) => {
                for i in 0..p {
                    worst = worst.max(rhs.component(i).iter().sum::<f64>().abs());
                }
            }
            Err(_) => errors += 1,
        }
    }
    outcome(
        worst <= 1e-12 && errors == 0,
        format!("max |sum_j rhs_j| = {worst:.2e} (tol 1e-12), 100 bundles, p in {{1,2,3}}, {errors} errors"),
    )
}

fn dissipation_sign() -> Outcome {
    let reg = Regularization::default();
    let mut worst = f64::INFINITY;
    let mut errors = 0;
    for epoch in [0u32, 5, 50] {
        let shift = reg.shift(Phase::Training { epoch });
        for net in 0..100u64 {
            let p = 1 + (net % 3) as usize;
            let bundle = NetworkBundle::init(&NetworkSpec::standard(p, 1), 5000 + net).unwrap();
            let mut r = rng::stream(net, Purpose::Validation, 4 + epoch as u64);
            for _ in 0..100 {
                let um: Vec<f64> = (0..p).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
                let up: Vec<f64> = (0..p).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
                match EdgeWorkspace::new(&bundle, 0, &um, &up, shift, 0.05, 0.01) {
                    Ok(e) => worst = worst.min(e.dissipation()),
                    Err(_) => errors += 1,
                }
            }
        }
    }
    outcome(
        worst >= -1e-10 && errors == 0,
        format!("min quadratic form {worst:.2e} (bound -1e-10), 3 x 10^4 edges, epochs 0/5/50, {errors} factorization errors"),
    )
}

fn gradient_check() -> Outcome {
    let geom = Geometry::One(Grid1D::new(4, 0.0, 1.0).unwrap());
    let layout = Layout::new(&geom, &BoundarySpec::Periodic).unwrap();
    let settings = LossSettings {
        layout: &layout,
        dt: 0.02,
        shift: 0.5,
        literal_speed_stencil: false,
        stepper: Stepper::SspRk2,
        normalizer: NormalizerSource::Predictions,
        lambda1: 0.1,
        lambda2: 0.3,
    };
    let mut worst: f64 = 0.0;
    for p in [1usize, 2] {
        for seed in 0..20u64 {
            let spec = NetworkSpec {
                flux_hidden: vec![6, 6],
                speed_hidden: vec![5],
                entropy_hidden: vec![6],
                ..NetworkSpec::standard(p, 1)
            };
            let bundle = NetworkBundle::init(&spec, 100 + seed).unwrap();
            let mut r = rng::stream(seed, Purpose::Validation, 5);
            let windows: Vec<Vec<StateField>> = (0..2)
                .map(|_| {
                    (0..=2)
                        .map(|_| {
                            let rows: Vec<Vec<f64>> =
                                (0..4).map(|_| (0..p).map(|_| rng::uniform(&mut r, 0.5, 1.5)).collect()).collect();
                            StateField::from_rows(&rows).unwrap()
                        })
                        .collect()
                })
                .collect();
            let refs: Vec<WindowRef<'_>> =
                windows.iter().map(|s| WindowRef { snapshots: s, bc: BoundarySpec::Periodic }).collect();
            let g = stage1_gradient(&bundle, &settings, &refs, &Sequential).unwrap();
            let flat = bundle.flatten();
            let loss_at = |v: &[f64]| {
                let mut c = bundle.clone();
                c.set_flat(v).unwrap();
                stage1_loss(&c, &settings, &refs, &Sequential).unwrap()
            };
            for group in [Group::Flux, Group::Speed, Group::Entropy] {
                let (mut diff, mut norm) = (0.0, 0.0);
                for i in bundle.group_range(group) {
                    let h = 1e-5 * flat[i].abs().max(0.1);
                    let (mut a, mut b) = (flat.clone(), flat.clone());
                    a[i] += h;
                    b[i] -= h;
                    let fd = (loss_at(&a) - loss_at(&b)) / (2.0 * h);
                    diff += (fd - g.grad[i]).powi(2);
                    norm += g.grad[i].powi(2);
                }
                if norm > 0.0 {
                    worst = worst.max((diff / norm).sqrt());
                }
            }
        }
    }
    outcome(worst <= 1e-5, format!("max per-group relative error {worst:.2e} (tol 1e-5), p in {{1,2}}, 20 seeds"))
}

fn integrator_order() -> Outcome {
    let decay = |n: usize, s: Stepper| {
        let z0 = StateField::scalar(&[1.0]).unwrap();
        let run =
            rollout(|x: &Mat| Ok(Mat { data: x.data.iter().map(|v| -v).collect(), ..x.clone() }), &z0, 1.0 / n as f64, n, s)
                .unwrap();
        (run.last().values.data[0] - (-1.0f64).exp()).abs()
    };
    // central differences on a periodic grid; each Fourier mode advects
    // exactly at the modified speed sin(kΔx)/(kΔx)
    let advection = |n: usize, s: Stepper| {
        let m = 16;
        let dx = 1.0 / m as f64;
        let k = 2.0 * std::f64::consts::PI;
        let x: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) * dx).collect();
        let z0 = StateField::scalar(&x.iter().map(|x| (k * x).sin()).collect::<Vec<_>>()).unwrap();
        let rhs = |u: &Mat| {
            let d = &u.data;
            Ok(Mat { data: (0..m).map(|j| -(d[(j + 1) % m] - d[(j + m - 1) % m]) / (2.0 * dx)).collect(), ..u.clone() })
        };
        let run = rollout(rhs, &z0, 1.0 / n as f64, n, s).unwrap();
        let omega = (k * dx).sin() / dx;
        x.iter().zip(&run.last().values.data).map(|(x, u)| (u - (k * x - omega).sin()).abs()).fold(0.0, f64::max)
    };
    let order = |e: &dyn Fn(usize, Stepper) -> f64, s| (e(40, s) / e(80, s)).log2();
    let (d2, a2) = (order(&decay, Stepper::SspRk2), order(&advection, Stepper::SspRk2));
    let (d1, a1) = (order(&decay, Stepper::Literal), order(&advection, Stepper::Literal));
    let ok = (1.9..=2.1).contains(&d2) && (1.9..=2.1).contains(&a2) && d1 <= 1.2 && a1 <= 1.2;
    outcome(ok, format!("SSP-RK2 orders {d2:.3} (decay), {a2:.3} (advection); literal variant {d1:.3}, {a1:.3}"))
}

// ---- desk-scale runs through the command-line tool ----

fn nescfn(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_nescfn")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("nescfn {} exited with {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn read_rollout(path: &Path) -> Result<Vec<StateField>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut steps: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().ok_or("empty rollout")?.split(',').collect();
    let first = head.iter().position(|h| *h == "u0").ok_or("no state columns")?;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let step: usize = cols[0].parse().map_err(|_| "bad step")?;
        if steps.len() <= step {
            steps.resize(step + 1, Vec::new());
        }
        steps[step].push(cols[first..].iter().map(|v| v.parse::<f64>().unwrap()).collect());
    }
    steps.iter().map(|rows| StateField::from_rows(rows).map_err(|e| e.to_string())).collect()
}

fn read_summary(path: &Path) -> Result<EvalSummary, String> {
    serde_json::from_slice(&std::fs::read(path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

/// Everything criteria 7–9 produce, for the determinism comparison.
struct DeskRun {
    dir: PathBuf,
    burgers: Result<Outcome, String>,
    entropy: Result<Outcome, String>,
    water: Result<Outcome, String>,
}

const ARTIFACTS: [&str; 7] = [
    "burgers/run/checkpoint.nesc",
    "burgers/pred.csv",
    "burgers/eval/summary.json",
    "burgers/eval/burgers1d-entropy-050.csv",
    "water/run/checkpoint.nesc",
    "water/eval/summary.json",
    "water/eval/shallow-water-test-000.csv",
];

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_pipeline(dir: &Path, preset: &str, epochs: &str, threads: &[&str]) -> Result<PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let grid = ["--preset", preset, "--n-cells", "128", "--n-traj", "20", "--seed", "1"];
    let (train, val, run) = (dir.join("train.nesd"), dir.join("val.nesd"), dir.join("run"));
    nescfn(&[threads, &["gen-data"], &grid[..], &["--out", s(&train)]].concat())?;
    nescfn(&[threads, &["gen-data"], &grid[..], &["--split", "validation", "--out", s(&val)]].concat())?;
    nescfn(
        &[
            threads,
            &["train", "--preset", preset, "--data", s(&train), "--validation", s(&val), "--epochs", epochs, "--out", s(&run)],
        ]
        .concat(),
    )?;
    Ok(run.join("checkpoint.nesc"))
}

fn burgers_run(dir: &Path, threads: &[&str]) -> Result<(Outcome, Result<Outcome, String>), String> {
    let start = Instant::now();
    let ck = train_pipeline(dir, "burgers1d", "15", threads)?;
    let trained = start.elapsed().as_secs_f64();
    let (pred, reference) = (dir.join("pred.csv"), dir.join("ref.csv"));
    nescfn(&[threads, &["predict", "--checkpoint", s(&ck), "--steps", "600", "--out", s(&pred)]].concat())?;
    nescfn(
        &[threads, &["classical-solve", "--preset", "burgers1d", "--n-cells", "128", "--steps", "600", "--out", s(&reference)]]
            .concat(),
    )?;
    let pred = read_rollout(&pred)?;
    let reference = read_rollout(&reference)?;
    let grid = Grid1D::new(128, 0.0, 2.0 * std::f64::consts::PI).unwrap();
    let factor = max_undivided_difference(&pred[200], 0).1 / max_undivided_difference(&pred[0], 0).1;
    let beta = 0.1997;
    let offsets: Vec<f64> = [400usize, 600]
        .iter()
        .map(|&l| (shock_position(&pred[l], 0, &grid) - (std::f64::consts::PI + beta * l as f64 * 0.005)).abs() / grid.dx)
        .collect();
    let err = rel_l2_error(&pred[200], &reference[200]).map_err(|e| e.to_string())?.value;
    let pass = factor >= 5.0 && offsets.iter().all(|o| *o <= 3.0) && err <= 0.15;
    let burgers = outcome(
        pass,
        format!(
            "shock factor {factor:.2} (>= 5), shock offset {:.2} / {:.2} cells at t = 2 / 3 (<= 3), rel L2 at t = 1 {err:.4} (<= 0.15); training {trained:.0} s",
            offsets[0], offsets[1]
        ),
    );

    let start = Instant::now();
    let eval = dir.join("eval");
    let entropy = nescfn(&[threads, &["eval", "--checkpoint", s(&ck), "--steps", "600", "--out", s(&eval)]].concat())
        .and_then(|_| read_summary(&eval.join("summary.json")))
        .map(|sum| {
            outcome(
                sum.max_entropy_ratio <= 1e-6 && sum.reports.len() == 101,
                format!(
                    "max_k,t J / sum|eta(u0)|dx = {:.3e} (<= 1e-6) over {} ICs, t in [0, 3]; {:.0} s",
                    sum.max_entropy_ratio,
                    sum.reports.len(),
                    start.elapsed().as_secs_f64()
                ),
            )
        });
    Ok((burgers, entropy))
}

fn water_run(dir: &Path, threads: &[&str]) -> Result<Outcome, String> {
    let start = Instant::now();
    let ck = train_pipeline(dir, "shallow-water", "10", threads)?;
    let eval = dir.join("eval");
    nescfn(
        &[threads, &["eval", "--checkpoint", s(&ck), "--eval-family", "shallow-water-test", "--steps", "300", "--out", s(&eval)]]
            .concat(),
    )?;
    let sum = read_summary(&eval.join("summary.json"))?;

    let bundle = nescfn::checkpoint::read(&ck).map_err(|e| e.to_string())?.bundle;
    let family = nescfn_core::data::Family::ShallowWaterTest;
    let geom = family.geometry(128).map_err(|e| e.to_string())?;
    let ic = family.sample(&geom, 0, Purpose::InitialCondition, 0).map_err(|e| e.to_string())?;
    let scheme = NeuralScheme::new(bundle, &geom, BoundarySpec::Periodic, 0.005).map_err(|e| e.to_string())?;
    let run = scheme.rollout(&ic, 300).map_err(|e| e.to_string())?;
    let control = conservation_remainder(&scheme.bundle, &run, &geom, true)
        .map_err(|e| e.to_string())?
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b));
    Ok(outcome(
        sum.max_conservation <= 1e-3 && control <= 1e-12,
        format!(
            "Dirichlet max C(h), C(hu) = {:.2e} (<= 1e-3) over t in [0, 1.5]; periodic control {control:.2e} (<= 1e-12); {:.0} s",
            sum.max_conservation,
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn desk_run(dir: PathBuf, threads: &[&str]) -> DeskRun {
    let (burgers, entropy) = match burgers_run(&dir.join("burgers"), threads) {
        Ok((b, e)) => (Ok(b), e),
        Err(e) => (Err(e.clone()), Err(e)),
    };
    let water = water_run(&dir.join("water"), threads);
    DeskRun { dir, burgers, entropy, water }
}

fn determinism(a: &DeskRun, b: &DeskRun) -> Outcome {
    let mut differing = Vec::new();
    for name in ARTIFACTS {
        let (x, y) = (std::fs::read(a.dir.join(name)), std::fs::read(b.dir.join(name)));
        let same = match (x, y) {
            (Ok(x), Ok(y)) => {
                // summaries embed the checkpoint path
                let strip = |v: Vec<u8>, d: &Path| String::from_utf8_lossy(&v).replace(s(d), "").into_bytes();
                strip(x, &a.dir) == strip(y, &b.dir)
            }
            _ => false,
        };
        if !same {
            differing.push(name);
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} checkpoints and reports identical across reruns with --threads 1", ARTIFACTS.len())
        } else {
            format!("differing or missing: {}", differing.join(", "))
        },
    )
}

type Check = (u32, &'static str, fn() -> Outcome);

fn report(results: &mut Vec<(u32, bool)>, n: u32, name: &str, o: Outcome, secs: Option<f64>) {
    let time = secs.map_or(String::new(), |s| format!(" [{s:.1} s]"));
    println!("{} criterion {n} ({name}): {}{time}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((n, o.pass));
}

fn main() {
    let mut results = Vec::new();
    let checks: [Check; 6] = [
        (1, "Tadmor identity", tadmor_identity),
        (2, "cell entropy equality", cell_entropy_equality),
        (3, "exact conservation", exact_conservation),
        (4, "dissipation sign", dissipation_sign),
        (5, "gradient vs finite differences", gradient_check),
        (6, "integrator order", integrator_order),
    ];
    for (n, name, check) in checks {
        let t = Instant::now();
        let o = check();
        report(&mut results, n, name, o, Some(t.elapsed().as_secs_f64()));
    }

    let root = tempfile::tempdir().unwrap();
    let first = desk_run(root.path().join("first"), &[]);
    let second = desk_run(root.path().join("second"), &["--threads", "1"]);
    let lift = |r: &Result<Outcome, String>| match r {
        Ok(o) => Outcome { pass: o.pass, detail: o.detail.clone() },
        Err(e) => outcome(false, format!("run failed: {e}")),
    };
    report(&mut results, 7, "desk Burgers", lift(&first.burgers), None);
    report(&mut results, 8, "desk entropy sweep", lift(&first.entropy), None);
    report(&mut results, 9, "desk shallow-water conservation", lift(&first.water), None);
    report(&mut results, 10, "determinism", determinism(&first, &second), None);

    let failed: Vec<u32> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
