//! Read-only checks on trajectories: mass of `u`, the balance law for `∫v`,
//! nonnegativity, and the energy `½‖u‖² + ¼‖∇v‖²`.

use crate::forward::{production, Trajectory};
use crate::grid::{integrate, masked_l2_sq, Grid2D, Mask};
use crate::ops::gradient_norm_sq;
use crate::scenario::{ControlField, Scenario};

#[derive(Debug, Clone)]
pub struct ConservationReport {
    pub m0: f64,
    pub mass_series: Vec<f64>,
    pub max_drift: f64,
    pub v_mass_series: Vec<f64>,
    /// relative residual of the `∫v` balance per step, see [`v_balance_residuals`]
    pub v_balance_residuals: Vec<f64>,
    pub min_u_series: Vec<f64>,
    pub min_v_series: Vec<f64>,
    /// only for `p = 2`
    pub energy_series: Option<Vec<f64>>,
}

impl ConservationReport {
    pub fn max_v_balance_residual(&self) -> f64 {
        self.v_balance_residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn min_u(&self) -> f64 {
        self.min_u_series.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_v(&self) -> f64 {
        self.min_v_series.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `∫u_n` per level.
pub fn mass_series(grid: &Grid2D, traj: &Trajectory) -> Vec<f64> {
    traj.u_series().iter().map(|u| integrate(grid, u)).collect()
}

/// `max_n |∫u_n − ∫u_0|`.
pub fn max_drift(series: &[f64]) -> f64 {
    let m0 = series.first().copied().unwrap_or(0.0);
    series.iter().fold(0.0, |m, x| m.max((x - m0).abs()))
}

/// Residual of the discrete balance
/// `(∫v_{n+1} − ∫v_n)/dt + ∫v_{n+1} − ∫max(u_n,0)^p − ∫_c f v_{n+1}` per step,
/// divided by `max(1, Σ|terms|)` with the time difference counted as
/// `(|∫v_{n+1}| + |∫v_n|)/dt`.
pub fn v_balance_residuals(traj: &Trajectory, f: &ControlField, sc: &Scenario) -> Vec<f64> {
    let grid = &sc.grid;
    let dt = traj.dt();
    let area = grid.cell_area();
    (0..traj.nt())
        .map(|n| {
            let m_now = integrate(grid, traj.v(n));
            let m_next = integrate(grid, traj.v(n + 1));
            let prod: f64 = traj.u(n).values().iter().map(|&u| production(u, sc.p)).sum::<f64>() * area;
            let v_next = traj.v(n + 1).values();
            let ctrl: f64 =
                grid.control_cells().iter().zip(f.slice(n)).map(|(&k, &fv)| fv * v_next[k]).sum::<f64>() * area;
            let residual = (m_next - m_now) / dt + m_next - prod - ctrl;
            let scale = 1f64.max((m_next.abs() + m_now.abs()) / dt + m_next.abs() + prod.abs() + ctrl.abs());
            residual / scale
        })
        .collect()
}

/// Per-level minima of `u` and `v`.
pub fn negativity_report(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    (traj.min_u_series(), traj.min_v_series())
}

/// `E_n = ½‖u_n‖² + ¼‖∇_h v_n‖²`, gradients from face differences.
pub fn energy_series(grid: &Grid2D, traj: &Trajectory) -> Vec<f64> {
    traj.u_series()
        .iter()
        .zip(traj.v_series())
        .map(|(u, v)| 0.5 * masked_l2_sq(grid, u, Mask::Full) + 0.25 * gradient_norm_sq(grid, v))
        .collect()
}

/// Largest increase `E_{n+1} − E_n` over all steps (≤ 0 for a decaying series).
pub fn max_energy_increase(series: &[f64]) -> f64 {
    series.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

pub fn conservation_report(traj: &Trajectory, f: &ControlField, sc: &Scenario) -> ConservationReport {
    let grid = &sc.grid;
    let mass = mass_series(grid, traj);
    let (min_u_series, min_v_series) = negativity_report(traj);
    ConservationReport {
        m0: mass[0],
        max_drift: max_drift(&mass),
        mass_series: mass,
        v_mass_series: traj.v_series().iter().map(|v| integrate(grid, v)).collect(),
        v_balance_residuals: v_balance_residuals(traj, f, sc),
        min_u_series,
        min_v_series,
        energy_series: (sc.p == 2.0).then(|| energy_series(grid, traj)),
    }
}
