//! Scenario files.
//!
//! A scenario is one TOML document. Fields are given as a number, as an
//! expression over the cell centre `(x, y)` (and `t` where time-dependent data
//! is allowed), or as `{ csv = "path" }` with `ny` rows of `nx` values,
//! resolved relative to the scenario file.
//!
//! ```toml
//! [grid]
//! lx = 1.0
//! ly = 1.0
//! nx = 16
//! ny = 16
//! control = [0.0, 0.5, 0.0, 1.0]   # x0, x1, y0, y1; whole domain if omitted
//! observe = [0.5, 1.0, 0.0, 1.0]
//!
//! [model]
//! p = 2.0
//! t_final = 1.0
//! nt = 20
//! scheme = "central"
//!
//! [initial]
//! u0 = "1 + 0.5*cos(pi*x)"
//! v0 = 0.0
//!
//! [cost]
//! gamma_u = 0.0
//! gamma_v = 1.0
//! gamma_f = 1e-3
//! v_d = "0.5"
//!
//! [control]
//! initial = 0.0
//! f_min = -5.0
//! f_max = 5.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::solve_forward;
use crate::grid::{Grid2D, Rect, ScalarField};
use crate::linalg::{SolverKind, SolverOptions};
use crate::objective::OptimizeOptions;
use crate::ops::FluxScheme;
use crate::scenario::{ControlField, DesiredState, Scenario};

/// A field given as a constant, an expression, or a CSV grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Number(f64),
    Expr(String),
    Csv { csv: String },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Number(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub control: Option<[f64; 4]>,
    pub observe: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub p: f64,
    pub t_final: f64,
    pub nt: usize,
    #[serde(default)]
    pub scheme: FluxScheme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub u0: FieldSpec,
    pub v0: FieldSpec,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "one")]
    pub gamma_u: f64,
    #[serde(default = "one")]
    pub gamma_v: f64,
    #[serde(default)]
    pub gamma_f: f64,
    #[serde(default)]
    pub eps: f64,
    /// expression over `(t, x, y)`, a constant, or a CSV grid
    #[serde(default)]
    pub u_d: FieldSpec,
    #[serde(default)]
    pub v_d: FieldSpec,
    /// If set, `u_d` and `v_d` become the state reached with this control
    /// (expression over `(t, x, y)`).
    pub manufactured_control: Option<FieldSpec>,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            gamma_u: 1.0,
            gamma_v: 1.0,
            gamma_f: 0.0,
            eps: 0.0,
            u_d: FieldSpec::default(),
            v_d: FieldSpec::default(),
            manufactured_control: None,
        }
    }
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}
fn pos_inf() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// control used by `forward` and as the optimizer's starting point
    #[serde(default)]
    pub initial: FieldSpec,
    #[serde(default = "neg_inf")]
    pub f_min: f64,
    #[serde(default = "pos_inf")]
    pub f_max: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self { initial: FieldSpec::default(), f_min: f64::NEG_INFINITY, f_max: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub linear: SolverKind,
    pub rel_tol: Option<f64>,
    pub max_iters: Option<usize>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { linear: SolverKind::Auto, rel_tol: None, max_iters: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub initial_step: Option<f64>,
}

/// Hard and soft thresholds for `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyThresholds {
    /// drift bound relative to `max(1, m0)`
    pub mass_tol: f64,
    pub v_balance_tol: f64,
    pub negativity_tol: f64,
    /// per-step energy increase bound relative to `E_0`
    pub energy_tol: f64,
    pub duality_tol: f64,
    /// gradient vs central differences; defaults to 1e-6 for `eps = 0`, 1e-5 otherwise
    pub gradient_tol: Option<f64>,
    pub fd_step: f64,
    pub gradient_samples: usize,
    pub duality_trials: usize,
    pub seed: u64,
}

impl Default for VerifyThresholds {
    fn default() -> Self {
        Self {
            mass_tol: 1e-10,
            v_balance_tol: 1e-10,
            negativity_tol: 1e-12,
            energy_tol: 1e-8,
            duality_tol: 1e-12,
            gradient_tol: None,
            fd_step: 1e-4,
            gradient_samples: 6,
            duality_trials: 3,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

fn default_stride() -> usize {
    10
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { snapshot_stride: default_stride() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSection,
    pub model: ModelSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub optimize: OptimizeSection,
    #[serde(default)]
    pub verify: VerifyThresholds,
    #[serde(default)]
    pub output: OutputSection,
}

/// Everything a run needs, resolved from a scenario file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub initial_control: ControlField,
    pub optimize: OptimizeOptions,
    pub verify: VerifyThresholds,
    pub snapshot_stride: usize,
    /// the parsed document, echoed into the manifest
    pub file: ScenarioFile,
}

fn rect(r: Option<[f64; 4]>, lx: f64, ly: f64) -> Rect {
    match r {
        Some([x0, x1, y0, y1]) => Rect::new(x0, x1, y0, y1),
        None => Rect::new(0.0, lx, 0.0, ly),
    }
}

fn parse_expr(src: &str) -> Result<meval::Expr> {
    src.parse::<meval::Expr>().map_err(|e| Error::Config(format!("cannot parse expression '{src}': {e}")))
}

fn read_csv_grid(path: &Path, grid: &Grid2D) -> Result<ScalarField> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut values = Vec::with_capacity(grid.len());
    for (r, line) in rows.iter().enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("{}: row {}: {e}", path.display(), r + 1)))?;
        if row.len() != grid.nx() {
            return Err(Error::Config(format!(
                "{}: row {} has {} columns; expected (nx, ny) = ({}, {})",
                path.display(),
                r + 1,
                row.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        values.extend(row);
    }
    if rows.len() != grid.ny() {
        return Err(Error::Config(format!(
            "{}: {} rows; expected (nx, ny) = ({}, {})",
            path.display(),
            rows.len(),
            grid.nx(),
            grid.ny()
        )));
    }
    ScalarField::from_values(grid, values)
}

fn static_field(spec: &FieldSpec, grid: &Grid2D, base: &Path, name: &str) -> Result<ScalarField> {
    let field = match spec {
        FieldSpec::Number(c) => ScalarField::constant(grid, *c),
        FieldSpec::Expr(s) => {
            let f =
                parse_expr(s)?.bind2("x", "y").map_err(|e| Error::Config(format!("{name}: expression '{s}': {e}")))?;
            ScalarField::from_fn(grid, f)
        }
        FieldSpec::Csv { csv } => read_csv_grid(&base.join(csv), grid)?,
    };
    if !field.is_finite() {
        return Err(Error::Config(format!("{name} has non-finite values")));
    }
    Ok(field)
}

/// Constant-in-time unless the expression uses `t`.
fn desired(spec: &FieldSpec, sc: &Scenario, base: &Path, name: &str) -> Result<DesiredState> {
    if let FieldSpec::Expr(s) = spec {
        let expr = parse_expr(s)?;
        if expr.clone().bind2("x", "y").is_err() {
            let f = expr.bind3("t", "x", "y").map_err(|e| Error::Config(format!("{name}: '{s}': {e}")))?;
            let series = (0..=sc.nt).map(|n| ScalarField::from_fn(&sc.grid, |x, y| f(sc.time(n), x, y))).collect();
            return Ok(DesiredState::Series(series));
        }
    }
    Ok(DesiredState::Constant(static_field(spec, &sc.grid, base, name)?))
}

fn control(spec: &FieldSpec, sc: &Scenario, base: &Path, name: &str) -> Result<ControlField> {
    let f = match spec {
        FieldSpec::Number(c) => ControlField::constant(sc, *c),
        FieldSpec::Expr(s) => {
            let f = parse_expr(s)?
                .bind3("t", "x", "y")
                .map_err(|e| Error::Config(format!("{name}: expression '{s}': {e}")))?;
            ControlField::from_fn(sc, f)
        }
        FieldSpec::Csv { .. } => {
            let field = static_field(spec, &sc.grid, base, name)?;
            let row: Vec<f64> = sc.grid.control_cells().iter().map(|&k| field.values()[k]).collect();
            let values = row.iter().copied().cycle().take(row.len() * sc.nt).collect();
            ControlField::from_values(sc, values)?
        }
    };
    if f.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite values")));
    }
    Ok(f)
}

/// Parses and validates a scenario document. Relative CSV paths resolve
/// against `base_dir`.
pub fn parse_run_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    build_run_config(ScenarioFile::parse(text)?, base_dir)
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Directory that relative paths in a scenario file resolve against.
pub fn base_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Resolves and validates an already parsed document.
pub fn build_run_config(file: ScenarioFile, base_dir: &Path) -> Result<RunConfig> {
    let g = &file.grid;
    let grid = Grid2D::new(g.lx, g.ly, g.nx, g.ny, rect(g.control, g.lx, g.ly), rect(g.observe, g.lx, g.ly))?;
    let u0 = static_field(&file.initial.u0, &grid, base_dir, "u0")?;
    let v0 = static_field(&file.initial.v0, &grid, base_dir, "v0")?;
    let m = &file.model;
    let mut sc = Scenario::new(grid, m.p, m.t_final, m.nt, u0, v0);
    sc.scheme = m.scheme;
    let c = &file.cost;
    sc.gamma_u = c.gamma_u;
    sc.gamma_v = c.gamma_v;
    sc.gamma_f = c.gamma_f;
    sc.eps = c.eps;
    sc.f_min = file.control.f_min;
    sc.f_max = file.control.f_max;
    let defaults = SolverOptions::default();
    sc.solver = SolverOptions {
        kind: file.solver.linear,
        rel_tol: file.solver.rel_tol.unwrap_or(defaults.rel_tol),
        max_iters: file.solver.max_iters.unwrap_or(defaults.max_iters),
    };
    sc.validate()?;

    sc.u_d = desired(&c.u_d, &sc, base_dir, "u_d")?;
    sc.v_d = desired(&c.v_d, &sc, base_dir, "v_d")?;
    if let Some(spec) = &c.manufactured_control {
        let target = control(spec, &sc, base_dir, "manufactured_control")?;
        let traj = solve_forward(&sc, &target)?;
        sc.u_d = DesiredState::Series(traj.u_series().to_vec());
        sc.v_d = DesiredState::Series(traj.v_series().to_vec());
    }
    sc.validate()?;

    let initial_control = control(&file.control.initial, &sc, base_dir, "control.initial")?;
    let od = OptimizeOptions::default();
    let optimize = OptimizeOptions {
        tol: file.optimize.tol.unwrap_or(od.tol),
        max_iters: file.optimize.max_iters.unwrap_or(od.max_iters),
        initial_step: file.optimize.initial_step.unwrap_or(od.initial_step),
        ..od
    };
    if file.output.snapshot_stride == 0 {
        return Err(Error::Config("output.snapshot_stride must be at least 1".into()));
    }
    Ok(RunConfig {
        scenario: sc,
        initial_control,
        optimize,
        verify: file.verify,
        snapshot_stride: file.output.snapshot_stride,
        file,
    })
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    build_run_config(ScenarioFile::read(path)?, &base_dir(path))
}

/// Loads and validates the scenario part of a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    load_run_config(path).map(|c| c.scenario)
}
