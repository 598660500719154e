//! Problem data: model parameters, initial and desired states, cost weights,
//! control bounds, and the discrete control field.

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::linalg::SolverOptions;
use crate::ops::FluxScheme;

/// Target state on the observation subdomain.
#[derive(Debug, Clone)]
pub enum DesiredState {
    /// Same field at every time level.
    Constant(ScalarField),
    /// One field per time level `0..=nt`; level 0 is never sampled by the cost.
    Series(Vec<ScalarField>),
}

impl DesiredState {
    pub fn at(&self, level: usize) -> &ScalarField {
        match self {
            DesiredState::Constant(f) => f,
            DesiredState::Series(s) => &s[level],
        }
    }

    fn check(&self, grid: &Grid2D, nt: usize, name: &str) -> Result<()> {
        match self {
            DesiredState::Constant(f) => f.check_grid(grid),
            DesiredState::Series(s) => {
                if s.len() != nt + 1 {
                    return Err(Error::InvalidScenario(format!(
                        "{name} series has {} levels, expected nt + 1 = {}",
                        s.len(),
                        nt + 1
                    )));
                }
                s.iter().try_for_each(|f| f.check_grid(grid))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Grid2D,
    /// production exponent, `1 < p ≤ 2`
    pub p: f64,
    pub t_final: f64,
    pub nt: usize,
    pub u0: ScalarField,
    pub v0: ScalarField,
    pub u_d: DesiredState,
    pub v_d: DesiredState,
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub gamma_f: f64,
    /// the control cost is `γ_f/(2+ε) ∫|f|^{2+ε}`
    pub eps: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub scheme: FluxScheme,
    pub solver: SolverOptions,
}

impl Scenario {
    /// Scenario with zero desired states, `γ_u = γ_v = 1`, `γ_f = 0`, `ε = 0`,
    /// unbounded controls and the central flux.
    pub fn new(grid: Grid2D, p: f64, t_final: f64, nt: usize, u0: ScalarField, v0: ScalarField) -> Self {
        let zero = ScalarField::zeros(&grid);
        Self {
            grid,
            p,
            t_final,
            nt,
            u0,
            v0,
            u_d: DesiredState::Constant(zero.clone()),
            v_d: DesiredState::Constant(zero),
            gamma_u: 1.0,
            gamma_v: 1.0,
            gamma_f: 0.0,
            eps: 0.0,
            f_min: f64::NEG_INFINITY,
            f_max: f64::INFINITY,
            scheme: FluxScheme::Central,
            solver: SolverOptions::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt()
    }

    /// Quadrature weight `dt · hx · hy` of one control degree of freedom.
    pub fn control_weight(&self) -> f64 {
        self.dt() * self.grid.cell_area()
    }

    /// Checks every invariant except the sign of the initial data.
    pub fn validate_structure(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.p > 1.0 && self.p <= 2.0) {
            return bad(format!("production exponent p = {} outside the supported range (1, 2]", self.p));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return bad(format!("final time must be positive, got {}", self.t_final));
        }
        if self.nt == 0 {
            return bad("nt must be at least 1".into());
        }
        for (name, g) in [("gamma_u", self.gamma_u), ("gamma_v", self.gamma_v), ("gamma_f", self.gamma_f)] {
            if !(g.is_finite() && g >= 0.0) {
                return bad(format!("{name} must be a nonnegative real, got {g}"));
            }
        }
        if self.gamma_u == 0.0 && self.gamma_v == 0.0 && self.gamma_f == 0.0 {
            return bad("cost weights gamma_u, gamma_v, gamma_f are all zero".into());
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return bad(format!("eps must be >= 0, got {}", self.eps));
        }
        if self.f_min.is_nan() || self.f_max.is_nan() || self.f_min > self.f_max {
            return bad(format!("control bounds [{}, {}] are empty", self.f_min, self.f_max));
        }
        self.u0.check_grid(&self.grid)?;
        self.v0.check_grid(&self.grid)?;
        if !self.u0.is_finite() || !self.v0.is_finite() {
            return Err(Error::NonFinite("initial data".into()));
        }
        self.u_d.check(&self.grid, self.nt, "u_d")?;
        self.v_d.check(&self.grid, self.nt, "v_d")?;
        Ok(())
    }

    /// Full validation, including `u0 ≥ 0` and `v0 ≥ 0` cellwise.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for (name, f) in [("u0", &self.u0), ("v0", &self.v0)] {
            if let Some(k) = f.values().iter().position(|&x| x < 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "initial data {name} is negative at cell {k} ({})",
                    f.values()[k]
                )));
            }
        }
        Ok(())
    }
}

/// Control values per time level `1..=nt` and control cell.
///
/// Row `n` (0-based) holds the control acting in the step from level `n` to
/// level `n + 1`; it multiplies `v` at level `n + 1`. Off the control
/// subdomain the control is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    nt: usize,
    n_cells: usize,
    values: Vec<f64>,
}

impl ControlField {
    pub fn zeros(sc: &Scenario) -> Self {
        Self::constant(sc, 0.0)
    }

    pub fn constant(sc: &Scenario, c: f64) -> Self {
        let n_cells = sc.grid.control_cells().len();
        Self { nt: sc.nt, n_cells, values: vec![c; sc.nt * n_cells] }
    }

    /// Samples `f(t, x, y)` at `t = t_{n+1}` and control cell centres.
    pub fn from_fn(sc: &Scenario, mut f: impl FnMut(f64, f64, f64) -> f64) -> Self {
        let cells = sc.grid.control_cells();
        let mut values = Vec::with_capacity(sc.nt * cells.len());
        for n in 0..sc.nt {
            let t = sc.time(n + 1);
            for &k in cells {
                let (x, y) = sc.grid.center(k);
                values.push(f(t, x, y));
            }
        }
        Self { nt: sc.nt, n_cells: cells.len(), values }
    }

    pub fn from_values(sc: &Scenario, values: Vec<f64>) -> Result<Self> {
        let n_cells = sc.grid.control_cells().len();
        if values.len() != sc.nt * n_cells {
            return Err(Error::ControlMismatch(format!(
                "expected {} x {} values, got {}",
                sc.nt,
                n_cells,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control".into()));
        }
        Ok(Self { nt: sc.nt, n_cells, values })
    }

    pub fn check(&self, sc: &Scenario) -> Result<()> {
        if self.nt != sc.nt || self.n_cells != sc.grid.control_cells().len() {
            return Err(Error::ControlMismatch(format!(
                "control has {} levels x {} cells, scenario has {} x {}",
                self.nt,
                self.n_cells,
                sc.nt,
                sc.grid.control_cells().len()
            )));
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Control values for the step into level `n + 1`.
    pub fn slice(&self, n: usize) -> &[f64] {
        &self.values[n * self.n_cells..(n + 1) * self.n_cells]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.values[n * self.n_cells..(n + 1) * self.n_cells]
    }

    /// Zero extension of row `n` to the whole grid.
    pub fn to_field(&self, grid: &Grid2D, n: usize) -> ScalarField {
        let mut out = ScalarField::zeros(grid);
        for (&k, &f) in grid.control_cells().iter().zip(self.slice(n)) {
            out.values_mut()[k] = f;
        }
        out
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `a · self + b · other`.
    pub fn axpby(&self, a: f64, other: &ControlField, b: f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self { nt: self.nt, n_cells: self.n_cells, values }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.axpby(a, self, 0.0)
    }

    /// Discrete `L²(Q_c)` inner product `Σ dt·hx·hy·a·b`.
    pub fn inner(&self, other: &ControlField, sc: &Scenario) -> f64 {
        sc.control_weight() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self, sc: &Scenario) -> f64 {
        self.inner(self, sc).sqrt()
    }
}
