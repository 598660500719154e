//! Exact linearization of the discrete forward map.
//!
//! Differentiating one step of [`crate::forward::step_state`] in `(u, v, f)`
//! gives, with the base state frozen,
//!
//! ```text
//! A_v(f_n)  V⁺ = V/dt + p·max(u,0)^{p-1}·U + δf_n·v⁺·1_c + g_v
//! A_u(v⁺)   U⁺ = U/dt + ∇_h·(u⁺_face ∇_h V⁺)          + g_u
//! ```
//!
//! where `A_v`, `A_u` are the forward step matrices and the face rule of the
//! flux is the one selected by the base `v⁺`.

use crate::error::{Error, Result};
use crate::forward::{production_derivative, state_fingerprint, u_matrix, v_matrix, Trajectory};
use crate::grid::ScalarField;
use crate::linalg::Prepared;
use crate::ops::{chemotaxis_matrix_in_v, laplacian_matrix};
use crate::scenario::{ControlField, Scenario};

/// Right-hand-side sources of the linearized system.
///
/// Entry `n` of each series acts in the step into level `n + 1`.
#[derive(Debug, Clone, Default)]
pub struct TangentSource {
    pub g_u: Option<Vec<ScalarField>>,
    pub g_v: Option<Vec<ScalarField>>,
}

impl TangentSource {
    pub fn none() -> Self {
        Self::default()
    }

    pub(crate) fn check(&self, sc: &Scenario) -> Result<()> {
        for (name, s) in [("g_u", &self.g_u), ("g_v", &self.g_v)] {
            if let Some(s) = s {
                if s.len() != sc.nt {
                    return Err(Error::InvalidScenario(format!(
                        "tangent source {name} has {} levels, expected {}",
                        s.len(),
                        sc.nt
                    )));
                }
                for g in s {
                    g.check_grid(&sc.grid)?;
                    if !g.is_finite() {
                        return Err(Error::NonFinite(format!("tangent source {name}")));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_base(base: &Trajectory, f: &ControlField, sc: &Scenario) -> Result<()> {
    f.check(sc)?;
    if base.nt() != sc.nt || base.fingerprint() != Some(state_fingerprint(sc, f)) {
        return Err(Error::TrajectoryMismatch);
    }
    Ok(())
}

/// Solves the linearized system along the control direction `df`, with
/// optional sources, starting from `U(0) = V(0) = 0`.
pub fn solve_tangent(
    base: &Trajectory,
    f: &ControlField,
    df: &ControlField,
    src: &TangentSource,
    sc: &Scenario,
) -> Result<Trajectory> {
    check_base(base, f, sc)?;
    df.check(sc)?;
    src.check(sc)?;
    let grid = &sc.grid;
    let lap = laplacian_matrix(grid);
    let inv_dt = 1.0 / sc.dt();
    let zero = ScalarField::zeros(grid);
    let mut us = vec![zero.clone()];
    let mut vs = vec![zero];

    for n in 0..sc.nt {
        let (u_n, v_next, u_next) = (base.u(n), base.v(n + 1), base.u(n + 1));
        let (big_u, big_v) = (&us[n], &vs[n]);

        let mut rhs_v: Vec<f64> = big_v
            .values()
            .iter()
            .zip(big_u.values())
            .zip(u_n.values())
            .map(|((vv, uu), ub)| vv * inv_dt + production_derivative(*ub, sc.p) * uu)
            .collect();
        for (&k, &d) in grid.control_cells().iter().zip(df.slice(n)) {
            rhs_v[k] += d * v_next.values()[k];
        }
        if let Some(g) = &src.g_v {
            for (r, x) in rhs_v.iter_mut().zip(g[n].values()) {
                *r += x;
            }
        }
        let av = Prepared::new(v_matrix(sc, &lap, f.slice(n)), &sc.solver).map_err(|e| e.at_level(n + 1))?;
        let v_new = av.solve(&rhs_v).map_err(|e| e.at_level(n + 1))?;

        let coupling = chemotaxis_matrix_in_v(grid, u_next, v_next, sc.scheme).matvec(&v_new);
        let mut rhs_u: Vec<f64> = big_u.values().iter().zip(&coupling).map(|(uu, c)| uu * inv_dt + c).collect();
        if let Some(g) = &src.g_u {
            for (r, x) in rhs_u.iter_mut().zip(g[n].values()) {
                *r += x;
            }
        }
        let au = Prepared::new(u_matrix(sc, &lap, v_next), &sc.solver).map_err(|e| e.at_level(n + 1))?;
        let u_new = au.solve(&rhs_u).map_err(|e| e.at_level(n + 1))?;

        us.push(ScalarField::from_values(grid, u_new).map_err(|e| e.at_level(n + 1))?);
        vs.push(ScalarField::from_values(grid, v_new).map_err(|e| e.at_level(n + 1))?);
    }
    Ok(crate::forward::assemble(us, vs, sc.dt()))
}
