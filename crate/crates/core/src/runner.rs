//! File-producing runs behind the command-line tool.
//!
//! Each run writes into an output directory:
//!
//! - `series.csv`: per-level mass, drift, `∫v`, balance residual, minima, energy
//! - `snapshots/{u,v}_NNNNN.csv`: fields every `snapshot_stride` levels and at the final level
//! - `iterations.csv`, `control.csv` (optimize)
//! - `checks.csv` (verify)
//! - `manifest.toml`: the resolved scenario, wall time, summary, and SHA-256 of every file above
//!
//! All numbers are written with `{:.16e}`, so identical runs give identical
//! hashes. A lock file guards the directory while a run is in progress.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjoint::{duality_residual, Cotangent};
use crate::config::{base_dir, build_run_config, RunConfig, ScenarioFile};
use crate::diagnostics::{conservation_report, energy_series, max_energy_increase, ConservationReport};
use crate::error::{Error, Result};
use crate::forward::{max_stable_dt, solve_forward, Trajectory};
use crate::objective::{evaluate_cost, evaluate_with_gradient, gradient_check, optimize, StopReason};
use crate::ops::FluxScheme;
use crate::scenario::{ControlField, Scenario};
use crate::tangent::TangentSource;

pub const LOCK_FILE: &str = ".chemorep.lock";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Forward,
    Optimize,
    Verify,
}

impl std::fmt::Display for RunKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunKind::Forward => "forward",
            RunKind::Optimize => "optimize",
            RunKind::Verify => "verify",
        })
    }
}

/// Command-line values that take precedence over the scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub snapshot_stride: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub scheme: Option<FluxScheme>,
}

impl Overrides {
    fn apply(&self, file: &mut ScenarioFile) {
        if let Some(s) = self.snapshot_stride {
            file.output.snapshot_stride = s;
        }
        if let Some(t) = self.tol {
            file.optimize.tol = Some(t);
        }
        if let Some(m) = self.max_iters {
            file.optimize.max_iters = Some(m);
        }
        if let Some(s) = self.scheme {
            file.model.scheme = s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: RunKind,
    pub version: String,
    pub scenario_path: String,
    pub wall_time_s: f64,
    pub exit_code: i32,
    pub summary: BTreeMap<String, toml::Value>,
    pub files: Vec<FileRecord>,
    pub scenario: ScenarioFile,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn file_hash(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.name == name).map(|f| f.sha256.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub exit_code: i32,
}

/// One row of `checks.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    /// soft checks warn instead of failing the run
    pub hard: bool,
}

impl Check {
    fn new(name: &str, value: f64, threshold: f64, hard: bool) -> Self {
        Self { name: name.into(), value, threshold, passed: value <= threshold, hard }
    }

    pub fn status(&self) -> &'static str {
        match (self.passed, self.hard) {
            (true, _) => "pass",
            (false, true) => "fail",
            (false, false) => "warn",
        }
    }

    pub fn failed(&self) -> bool {
        self.hard && !self.passed
    }
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        fs::OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<FileRecord>,
    _lock: DirLock,
}

impl Output {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lock = DirLock::acquire(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), _lock: lock })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileRecord {
            name: name.to_string(),
            sha256: format!("{:x}", Sha256::digest(contents.as_bytes())),
            bytes: contents.len() as u64,
        });
        Ok(())
    }
}

/// `ny` rows of `nx` values, bottom row first.
pub fn field_csv(nx: usize, values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    for row in values.chunks(nx) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn series_csv(sc: &Scenario, traj: &Trajectory, report: &ConservationReport) -> String {
    let energy = report.energy_series.clone().unwrap_or_else(|| energy_series(&sc.grid, traj));
    let mut s = String::from("level,t,mass,drift,v_mass,v_balance,min_u,min_v,energy\n");
    for n in 0..=traj.nt() {
        let balance = if n == 0 { 0.0 } else { report.v_balance_residuals[n - 1] };
        writeln!(
            s,
            "{n},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            sc.time(n),
            report.mass_series[n],
            report.mass_series[n] - report.m0,
            report.v_mass_series[n],
            balance,
            report.min_u_series[n],
            report.min_v_series[n],
            energy[n]
        )
        .unwrap();
    }
    s
}

fn snapshot_levels(nt: usize, stride: usize) -> Vec<usize> {
    let mut levels: Vec<usize> = (0..=nt).step_by(stride).collect();
    if levels.last() != Some(&nt) {
        levels.push(nt);
    }
    levels
}

fn write_state(
    out: &mut Output,
    sc: &Scenario,
    traj: &Trajectory,
    report: &ConservationReport,
    stride: usize,
) -> Result<()> {
    out.write("series.csv", &series_csv(sc, traj, report))?;
    for n in snapshot_levels(traj.nt(), stride) {
        out.write(&format!("snapshots/u_{n:05}.csv"), &field_csv(sc.grid.nx(), traj.u(n).values()))?;
        out.write(&format!("snapshots/v_{n:05}.csv"), &field_csv(sc.grid.nx(), traj.v(n).values()))?;
    }
    Ok(())
}

fn control_csv(sc: &Scenario, f: &ControlField) -> String {
    let mut s = String::from("step,cell,x,y,f\n");
    for n in 0..f.nt() {
        for (&k, v) in sc.grid.control_cells().iter().zip(f.slice(n)) {
            let (x, y) = sc.grid.center(k);
            writeln!(s, "{n},{k},{x:.16e},{y:.16e},{v:.16e}").unwrap();
        }
    }
    s
}

fn state_summary(sum: &mut BTreeMap<String, toml::Value>, report: &ConservationReport, traj: &Trajectory) {
    sum.insert("m0".into(), report.m0.into());
    sum.insert("max_mass_drift".into(), report.max_drift.into());
    sum.insert("max_v_balance_residual".into(), report.max_v_balance_residual().into());
    sum.insert("min_u".into(), report.min_u().into());
    sum.insert("min_v".into(), report.min_v().into());
    sum.insert("diagonal_warnings".into(), (traj.warnings().len() as i64).into());
}

struct Prepared {
    cfg: RunConfig,
    file: ScenarioFile,
    path: String,
}

fn prepare(scenario_path: &Path, overrides: &Overrides) -> Result<Prepared> {
    let mut file = ScenarioFile::read(scenario_path)?;
    overrides.apply(&mut file);
    let cfg = build_run_config(file.clone(), &base_dir(scenario_path))?;
    Ok(Prepared { cfg, file, path: scenario_path.display().to_string() })
}

fn finish(
    out: Output,
    kind: RunKind,
    prep: Prepared,
    start: Instant,
    exit_code: i32,
    summary: BTreeMap<String, toml::Value>,
) -> Result<RunOutcome> {
    let manifest = RunManifest {
        kind,
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_path: prep.path,
        wall_time_s: start.elapsed().as_secs_f64(),
        exit_code,
        summary,
        files: out.files.clone(),
        scenario: prep.file,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    let manifest_path = out.dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    info!("{kind} run finished in {:.3} s, manifest at {}", manifest.wall_time_s, manifest_path.display());
    Ok(RunOutcome { manifest, manifest_path, exit_code })
}

/// Forward solve with the scenario's initial control.
pub fn run_forward(scenario_path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let start = Instant::now();
    let prep = prepare(scenario_path, overrides)?;
    let mut out = Output::open(out_dir)?;
    let (sc, f) = (&prep.cfg.scenario, &prep.cfg.initial_control);
    let traj = solve_forward(sc, f)?;
    let report = conservation_report(&traj, f, sc);
    write_state(&mut out, sc, &traj, &report, prep.cfg.snapshot_stride)?;

    let mut summary = BTreeMap::new();
    state_summary(&mut summary, &report, &traj);
    let cost = evaluate_cost(&traj, f, sc)?;
    summary.insert("cost".into(), cost.j_total.into());
    summary.insert("max_stable_dt".into(), max_stable_dt(f).to_string().into());
    finish(out, RunKind::Forward, prep, start, 0, summary)
}

/// Projected-gradient optimization from the scenario's initial control.
pub fn run_optimize(scenario_path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let start = Instant::now();
    let prep = prepare(scenario_path, overrides)?;
    let mut out = Output::open(out_dir)?;
    let sc = &prep.cfg.scenario;
    let rep = optimize(sc, &prep.cfg.initial_control, &prep.cfg.optimize)?;

    let mut it = String::from("iter,j_total,j_u,j_v,j_f,residual,step,trials\n");
    for r in &rep.iterates {
        writeln!(
            it,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.iter, r.cost.j_total, r.cost.j_u, r.cost.j_v, r.cost.j_f, r.residual, r.step, r.trials
        )
        .unwrap();
    }
    out.write("iterations.csv", &it)?;
    out.write("control.csv", &control_csv(sc, &rep.final_control))?;
    let report = conservation_report(&rep.final_state, &rep.final_control, sc);
    write_state(&mut out, sc, &rep.final_state, &report, prep.cfg.snapshot_stride)?;

    let mut summary = BTreeMap::new();
    state_summary(&mut summary, &report, &rep.final_state);
    summary.insert("converged".into(), rep.converged.into());
    summary.insert("stop_reason".into(), rep.reason.to_string().into());
    summary.insert("iterations".into(), (rep.iterates.len() as i64 - 1).into());
    summary.insert("initial_cost".into(), rep.iterates[0].cost.j_total.into());
    summary.insert("final_cost".into(), rep.final_cost().j_total.into());
    summary.insert("final_residual".into(), rep.final_residual().into());
    let code = match rep.reason {
        StopReason::SolverFailure(ref m) => {
            warn!("optimizer stopped on a solver failure: {m}");
            2
        }
        _ => 0,
    };
    finish(out, RunKind::Optimize, prep, start, code, summary)
}

/// Runs every check for the scenario and its initial control.
pub fn verify_checks(cfg: &RunConfig) -> Result<(Vec<Check>, Trajectory, ConservationReport)> {
    let (sc, f, th) = (&cfg.scenario, &cfg.initial_control, &cfg.verify);
    let traj = solve_forward(sc, f)?;
    let report = conservation_report(&traj, f, sc);
    let mut checks = Vec::new();

    checks.push(Check::new("mass_drift", report.max_drift / report.m0.abs().max(1.0), th.mass_tol, true));
    checks.push(Check::new("v_balance", report.max_v_balance_residual(), th.v_balance_tol, true));
    // only the upwind flux guarantees nonnegativity
    let neg = (-report.min_u().min(report.min_v())).max(0.0);
    checks.push(Check::new("negativity", neg, th.negativity_tol, sc.scheme == FluxScheme::Upwind));
    let energy = energy_series(&sc.grid, &traj);
    let rise = max_energy_increase(&energy).max(0.0) / energy[0].abs().max(f64::MIN_POSITIVE);
    checks.push(Check::new("energy_increase", rise, th.energy_tol, false));

    let mut rng = ChaCha8Rng::seed_from_u64(th.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..th.duality_trials {
        let df = ControlField::from_fn(sc, |_, _, _| rng.gen_range(-1.0..1.0));
        let w = Cotangent::random(sc, rng.gen());
        worst = worst.max(duality_residual(&traj, f, &df, &TangentSource::none(), sc, &w)?);
    }
    checks.push(Check::new("duality", worst, th.duality_tol, true));

    let eval = evaluate_with_gradient(sc, f)?;
    let dofs = f.values().len();
    let idx = sample(&mut rng, dofs, th.gradient_samples.min(dofs)).into_vec();
    let probes = gradient_check(sc, f, &eval.gradient, &idx, th.fd_step)?;
    let worst = probes.iter().fold(0.0f64, |m, p| m.max(p.rel_error));
    let tol = th.gradient_tol.unwrap_or(if sc.eps == 0.0 { 1e-6 } else { 1e-5 });
    checks.push(Check::new("gradient_fd", worst, tol, true));
    Ok((checks, traj, report))
}

/// Verification run: exit code 3 when any enforced check fails.
pub fn run_verify(scenario_path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let start = Instant::now();
    let prep = prepare(scenario_path, overrides)?;
    let mut out = Output::open(out_dir)?;
    let (checks, traj, report) = verify_checks(&prep.cfg)?;
    let sc = &prep.cfg.scenario;

    let mut s = String::from("check,value,threshold,hard,status\n");
    for c in &checks {
        if !c.passed {
            warn!("check {} {}: {:e} > {:e}", c.name, c.status(), c.value, c.threshold);
        }
        writeln!(s, "{},{:.16e},{:.16e},{},{}", c.name, c.value, c.threshold, c.hard, c.status()).unwrap();
    }
    out.write("checks.csv", &s)?;
    write_state(&mut out, sc, &traj, &report, prep.cfg.snapshot_stride)?;

    let mut summary = BTreeMap::new();
    state_summary(&mut summary, &report, &traj);
    for c in &checks {
        summary.insert(format!("check_{}", c.name), c.status().into());
    }
    let failed = checks.iter().any(Check::failed);
    summary.insert("passed".into(), (!failed).into());
    finish(out, RunKind::Verify, prep, start, if failed { 3 } else { 0 }, summary)
}

pub fn run(kind: RunKind, scenario_path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    match kind {
        RunKind::Forward => run_forward(scenario_path, out_dir, overrides),
        RunKind::Optimize => run_optimize(scenario_path, out_dir, overrides),
        RunKind::Verify => run_verify(scenario_path, out_dir, overrides),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = r#"
[grid]
lx = 1.0
ly = 1.0
nx = 6
ny = 5
control = [0.0, 0.5, 0.0, 1.0]

[model]
p = 2.0
t_final = 0.5
nt = 7

[initial]
u0 = "1 + 0.5*cos(pi*x)*cos(pi*y)"
v0 = "0.5 + 0.25*cos(pi*y)"

[cost]
gamma_f = 0.01
v_d = 0.8

[control]
initial = "0.3 + 0.2*x"

[output]
snapshot_stride = 3
"#;

    fn scenario_file(dir: &Path) -> PathBuf {
        let p = dir.join("s.toml");
        fs::write(&p, SCENARIO).unwrap();
        p
    }

    #[test]
    fn snapshot_levels_include_final() {
        assert_eq!(snapshot_levels(7, 3), vec![0, 3, 6, 7]);
        assert_eq!(snapshot_levels(6, 3), vec![0, 3, 6]);
    }

    #[test]
    fn field_csv_layout() {
        assert_eq!(
            field_csv(2, &[1.0, 2.0, 3.0, 4.0]),
            "1.0000000000000000e0,2.0000000000000000e0\n3.0000000000000000e0,4.0000000000000000e0\n"
        );
    }

    #[test]
    fn forward_writes_hashed_files_and_releases_lock() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario_file(dir.path());
        let out = dir.path().join("out");
        let r = run_forward(&s, &out, &Overrides::default()).unwrap();
        assert_eq!(r.exit_code, 0);
        assert!(!out.join(LOCK_FILE).exists());
        let names: Vec<&str> = r.manifest.files.iter().map(|f| f.name.as_str()).collect();
        assert!(names.contains(&"series.csv"));
        assert!(names.contains(&"snapshots/u_00007.csv"));
        let m = RunManifest::read(&r.manifest_path).unwrap();
        assert_eq!(m.files, r.manifest.files);
        let series = fs::read_to_string(out.join("series.csv")).unwrap();
        assert_eq!(series.lines().count(), 9);
    }

    #[test]
    fn locked_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario_file(dir.path());
        let out = dir.path().join("out");
        fs::create_dir_all(&out).unwrap();
        fs::write(out.join(LOCK_FILE), "").unwrap();
        let err = run_forward(&s, &out, &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn verify_passes_on_smooth_data() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario_file(dir.path());
        let r = run_verify(&s, &dir.path().join("v"), &Overrides::default()).unwrap();
        let checks = fs::read_to_string(dir.path().join("v/checks.csv")).unwrap();
        assert_eq!(r.exit_code, 0, "{checks}");
        assert!(!checks.contains("fail"));
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario_file(dir.path());
        let o = Overrides { max_iters: Some(2), scheme: Some(FluxScheme::Upwind), ..Default::default() };
        let r = run_optimize(&s, &dir.path().join("o"), &o).unwrap();
        assert_eq!(r.manifest.scenario.model.scheme, FluxScheme::Upwind);
        assert!(r.manifest.summary["iterations"].as_integer().unwrap() <= 2);
    }
}
