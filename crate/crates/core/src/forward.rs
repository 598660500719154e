//! Time integration of the state system.
//!
//! Each step first solves the linear `v`-system
//!
//! ```text
//! (1/dt + 1 - Δ_h - f·1_c) v⁺ = v/dt + max(u, 0)^p
//! ```
//!
//! and then the linear `u`-system with the chemotactic drift frozen at `v⁺`:
//!
//! ```text
//! (1/dt - Δ_h - D_h[v⁺]) u⁺ = u/dt.
//! ```
//!
//! Both matrices have zero column sums apart from the time and reaction
//! diagonals, which makes the discrete mass of `u` an exact invariant.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::linalg::{FivePoint, Prepared};
use crate::ops::{chemotaxis_matrix_in_u, laplacian_matrix};
use crate::scenario::{ControlField, Scenario};

/// A `v`-system diagonal that lost positivity: `1/dt + 1 - f ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWarning {
    /// level being computed
    pub level: usize,
    pub cell: usize,
    pub diagonal: f64,
}

/// Time series of a pair of fields on levels `0..=nt`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    u: Vec<ScalarField>,
    v: Vec<ScalarField>,
    dt: f64,
    fingerprint: Option<u64>,
    warnings: Vec<StepWarning>,
}

impl Trajectory {
    /// Wraps existing series. Both must have the same nonzero length.
    pub fn from_levels(u: Vec<ScalarField>, v: Vec<ScalarField>, dt: f64) -> Result<Self> {
        if u.len() != v.len() || u.is_empty() {
            return Err(Error::InvalidScenario(format!(
                "trajectory series lengths differ or are empty ({} vs {})",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { u, v, dt, fingerprint: None, warnings: Vec::new() })
    }

    pub fn u(&self, level: usize) -> &ScalarField {
        &self.u[level]
    }
    pub fn v(&self, level: usize) -> &ScalarField {
        &self.v[level]
    }
    pub fn u_series(&self) -> &[ScalarField] {
        &self.u
    }
    pub fn v_series(&self) -> &[ScalarField] {
        &self.v
    }
    pub fn u_series_mut(&mut self) -> &mut [ScalarField] {
        &mut self.u
    }
    pub fn v_series_mut(&mut self) -> &mut [ScalarField] {
        &mut self.v
    }
    /// Number of time steps; there are `nt() + 1` levels.
    pub fn nt(&self) -> usize {
        self.u.len() - 1
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn warnings(&self) -> &[StepWarning] {
        &self.warnings
    }
    pub fn min_u_series(&self) -> Vec<f64> {
        self.u.iter().map(ScalarField::min).collect()
    }
    pub fn min_v_series(&self) -> Vec<f64> {
        self.v.iter().map(ScalarField::min).collect()
    }
    pub(crate) fn fingerprint(&self) -> Option<u64> {
        self.fingerprint
    }

    /// Bitwise equality of every stored value.
    pub fn bit_identical(&self, other: &Trajectory) -> bool {
        let same = |a: &[ScalarField], b: &[ScalarField]| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()))
        };
        same(&self.u, &other.u) && same(&self.v, &other.v)
    }
}

/// `max(u, 0)^p`.
#[inline]
pub fn production(u: f64, p: f64) -> f64 {
    let u = u.max(0.0);
    if p == 2.0 {
        u * u
    } else {
        u.powf(p)
    }
}

/// Derivative of [`production`]: `p · max(u, 0)^{p-1}`.
#[inline]
pub fn production_derivative(u: f64, p: f64) -> f64 {
    let u = u.max(0.0);
    if p == 2.0 {
        2.0 * u
    } else {
        p * u.powf(p - 1.0)
    }
}

/// `(1/dt + 1) I - Δ_h - diag(f · 1_c)`.
pub(crate) fn v_matrix(sc: &Scenario, lap: &FivePoint, f_slice: &[f64]) -> FivePoint {
    let mut m = FivePoint::zeros(sc.grid.nx(), sc.grid.ny());
    m.add_scaled(-1.0, lap);
    m.add_scalar_diagonal(1.0 / sc.dt() + 1.0);
    for (&k, &f) in sc.grid.control_cells().iter().zip(f_slice) {
        m.center[k] -= f;
    }
    m
}

/// `I/dt - Δ_h - D_h[v]`.
pub(crate) fn u_matrix(sc: &Scenario, lap: &FivePoint, v_next: &ScalarField) -> FivePoint {
    let mut m = chemotaxis_matrix_in_u(&sc.grid, v_next, sc.scheme);
    for c in [&mut m.center, &mut m.west, &mut m.east, &mut m.south, &mut m.north] {
        for x in c.iter_mut() {
            *x = -*x;
        }
    }
    m.add_scaled(-1.0, lap);
    m.add_scalar_diagonal(1.0 / sc.dt());
    m
}

fn v_rhs(sc: &Scenario, u_n: &ScalarField, v_n: &ScalarField) -> Vec<f64> {
    let inv_dt = 1.0 / sc.dt();
    v_n.values().iter().zip(u_n.values()).map(|(v, u)| v * inv_dt + production(*u, sc.p)).collect()
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::NonFinite(format!("solution at cell {k}"))),
        None => Ok(()),
    }
}

/// Cells whose `v`-system diagonal `1/dt + 1 - f` is not positive.
pub fn v_diagonal_warnings(sc: &Scenario, f_slice: &[f64], level: usize) -> Vec<StepWarning> {
    let base = 1.0 / sc.dt() + 1.0;
    sc.grid
        .control_cells()
        .iter()
        .zip(f_slice)
        .filter_map(|(&cell, &f)| {
            let diagonal = base - f;
            (diagonal <= 0.0).then_some(StepWarning { level, cell, diagonal })
        })
        .collect()
}

/// Largest time step for which the `v`-system stays an M-matrix under the
/// given control: `1/dt + 1 - max f > 0`.
pub fn max_stable_dt(f: &ControlField) -> f64 {
    let fmax = f.max();
    if fmax > 1.0 {
        1.0 / (fmax - 1.0)
    } else {
        f64::INFINITY
    }
}

/// One time step `(u_n, v_n) → (u_{n+1}, v_{n+1})` with control row `f_slice`.
pub fn step_state(
    u_n: &ScalarField,
    v_n: &ScalarField,
    f_slice: &[f64],
    sc: &Scenario,
) -> Result<(ScalarField, ScalarField)> {
    u_n.check_grid(&sc.grid)?;
    v_n.check_grid(&sc.grid)?;
    if f_slice.len() != sc.grid.control_cells().len() {
        return Err(Error::ControlMismatch(format!(
            "control slice has {} values, grid has {} control cells",
            f_slice.len(),
            sc.grid.control_cells().len()
        )));
    }
    let lap = laplacian_matrix(&sc.grid);
    step_with(&lap, u_n, v_n, f_slice, sc)
}

fn step_with(
    lap: &FivePoint,
    u_n: &ScalarField,
    v_n: &ScalarField,
    f_slice: &[f64],
    sc: &Scenario,
) -> Result<(ScalarField, ScalarField)> {
    let av = Prepared::new(v_matrix(sc, lap, f_slice), &sc.solver)?;
    let v_next = av.solve(&v_rhs(sc, u_n, v_n))?;
    check_finite(&v_next)?;
    let v_next = v_n.with_values(v_next);

    let au = Prepared::new(u_matrix(sc, lap, &v_next), &sc.solver)?;
    let inv_dt = 1.0 / sc.dt();
    let rhs: Vec<f64> = u_n.values().iter().map(|u| u * inv_dt).collect();
    let u_next = au.solve(&rhs)?;
    check_finite(&u_next)?;
    Ok((u_n.with_values(u_next), v_next))
}

/// Hash of everything the state trajectory depends on.
pub(crate) fn state_fingerprint(sc: &Scenario, f: &ControlField) -> u64 {
    let mut h = DefaultHasher::new();
    let g = &sc.grid;
    (g.nx(), g.ny(), g.lx().to_bits(), g.ly().to_bits()).hash(&mut h);
    g.control_mask().hash(&mut h);
    (sc.p.to_bits(), sc.t_final.to_bits(), sc.nt, sc.scheme as u8).hash(&mut h);
    for field in [&sc.u0, &sc.v0] {
        for x in field.values() {
            x.to_bits().hash(&mut h);
        }
    }
    for x in f.values() {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Integrates the state system over `nt` steps.
pub fn solve_forward(sc: &Scenario, f: &ControlField) -> Result<Trajectory> {
    sc.validate()?;
    f.check(sc)?;
    let lap = laplacian_matrix(&sc.grid);
    let mut u = Vec::with_capacity(sc.nt + 1);
    let mut v = Vec::with_capacity(sc.nt + 1);
    u.push(sc.u0.clone());
    v.push(sc.v0.clone());
    let mut warnings = Vec::new();
    for n in 0..sc.nt {
        let w = v_diagonal_warnings(sc, f.slice(n), n + 1);
        if let Some(first) = w.first() {
            warn!(
                "level {}: v-system diagonal {} <= 0 at cell {} ({} cells affected)",
                first.level,
                first.diagonal,
                first.cell,
                w.len()
            );
        }
        warnings.extend(w);
        let (un, vn) = step_with(&lap, &u[n], &v[n], f.slice(n), sc).map_err(|e| e.at_level(n + 1))?;
        u.push(un);
        v.push(vn);
    }
    Ok(Trajectory { u, v, dt: sc.dt(), fingerprint: Some(state_fingerprint(sc, f)), warnings })
}

/// Exact solution for spatially constant data `u ≡ c`, `v ≡ d` and `f ≡ 0`:
/// `u(t) = c`, `v(t) = cᵖ + (d - cᵖ) e^{-t}`.
pub fn analytic_constant_solution(c: f64, d: f64, p: f64, t: f64) -> (f64, f64) {
    let cp = c.powf(p);
    (c, cp + (d - cp) * (-t).exp())
}

/// Builds a trajectory directly from its parts; used by the sensitivity solvers.
pub(crate) fn assemble(u: Vec<ScalarField>, v: Vec<ScalarField>, dt: f64) -> Trajectory {
    Trajectory { u, v, dt, fingerprint: None, warnings: Vec::new() }
}

pub(crate) fn check_grid_len(grid: &Grid2D, traj: &Trajectory) -> Result<()> {
    traj.u(0).check_grid(grid)
}
