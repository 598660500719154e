//! Discrete adjoint: the exact transpose of the tangent recursion, swept
//! backward in time from zero terminal data.
//!
//! With `y_u[n]`, `y_v[n]` the multipliers of the `u`- and `v`-solves of the
//! step into level `n + 1`, the backward recursion is
//!
//! ```text
//! A_v(f_n)ᵀ y_v[n] = w_v[n] + Cᵀ y_u[n] + y_v[n+1]/dt
//! A_u(v⁺)ᵀ  y_u[n] = w_u[n] + y_u[n+1]/dt + p·max(u⁺,0)^{p-1}·y_v[n+1]
//! ```
//!
//! where `w` is the cotangent (the state part of the cost derivative) and `C`
//! the chemotactic coupling in `V`. The stored adjoint fields are these
//! multipliers divided by the quadrature weight `dt·hx·hy`, so they are
//! grid-independent approximations of `(λ, η)`. Level `nt` is identically zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forward::{production_derivative, u_matrix, v_matrix, Trajectory};
use crate::grid::{Mask, ScalarField};
use crate::linalg::Prepared;
use crate::ops::{chemotaxis_matrix_in_v, laplacian_matrix};
use crate::scenario::{ControlField, Scenario};
use crate::tangent::{check_base, solve_tangent, TangentSource};

/// A linear functional on tangent trajectories:
/// `ℓ(U, V) = Σ_n w_u[n]·U_{n+1} + w_v[n]·V_{n+1}` (plain dot products).
#[derive(Debug, Clone)]
pub struct Cotangent {
    pub w_u: Vec<ScalarField>,
    pub w_v: Vec<ScalarField>,
}

impl Cotangent {
    /// Entries uniform in `[-1, 1)`, reproducible from `seed`.
    pub fn random(sc: &Scenario, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            || (0..sc.nt).map(|_| ScalarField::from_fn(&sc.grid, |_, _| rng.gen_range(-1.0..1.0))).collect::<Vec<_>>();
        let w_u = draw();
        let w_v = draw();
        Self { w_u, w_v }
    }

    /// State part of the cost derivative,
    /// `dt·hx·hy·γ·(state − desired)·1_d` at levels `1..=nt`.
    pub fn from_cost(base: &Trajectory, sc: &Scenario) -> Self {
        let weight = sc.control_weight();
        let grid = &sc.grid;
        let residual = |state: &ScalarField, desired: &ScalarField, gamma: f64| {
            let vals = state
                .values()
                .iter()
                .zip(desired.values())
                .enumerate()
                .map(|(k, (s, d))| if grid.is_in(Mask::Observe, k) { gamma * weight * (s - d) } else { 0.0 })
                .collect();
            ScalarField::from_values(grid, vals).expect("finite residual")
        };
        let w_u = (1..=sc.nt).map(|n| residual(base.u(n), sc.u_d.at(n), sc.gamma_u)).collect();
        let w_v = (1..=sc.nt).map(|n| residual(base.v(n), sc.v_d.at(n), sc.gamma_v)).collect();
        Self { w_u, w_v }
    }

    fn apply(&self, t: &Trajectory) -> f64 {
        (0..self.w_u.len()).map(|n| self.w_u[n].dot(t.u(n + 1)) + self.w_v[n].dot(t.v(n + 1))).sum()
    }

    fn norm(&self) -> f64 {
        self.w_u.iter().chain(&self.w_v).map(|w| w.dot(w)).sum::<f64>().sqrt()
    }
}

/// Adjoint fields `(λ, η)` on levels `0..=nt`, with level `nt` zero.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    lambda: Vec<ScalarField>,
    eta: Vec<ScalarField>,
    dt: f64,
}

impl AdjointTrajectory {
    pub fn lambda(&self, level: usize) -> &ScalarField {
        &self.lambda[level]
    }
    pub fn eta(&self, level: usize) -> &ScalarField {
        &self.eta[level]
    }
    pub fn lambda_series(&self) -> &[ScalarField] {
        &self.lambda
    }
    pub fn eta_series(&self) -> &[ScalarField] {
        &self.eta
    }
    pub fn nt(&self) -> usize {
        self.lambda.len() - 1
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Raw multipliers `(y_u[n], y_v[n])`, `n = 0..nt`.
struct Multipliers {
    y_u: Vec<Vec<f64>>,
    y_v: Vec<Vec<f64>>,
}

fn sweep(base: &Trajectory, f: &ControlField, w: &Cotangent, sc: &Scenario) -> Result<Multipliers> {
    check_base(base, f, sc)?;
    let grid = &sc.grid;
    let n_cells = grid.len();
    let lap = laplacian_matrix(grid);
    let inv_dt = 1.0 / sc.dt();
    let mut y_u = vec![Vec::new(); sc.nt];
    let mut y_v = vec![Vec::new(); sc.nt];
    let mut carry_u = vec![0.0; n_cells];
    let mut carry_v = vec![0.0; n_cells];

    for n in (0..sc.nt).rev() {
        let (u_n, v_next, u_next) = (base.u(n), base.v(n + 1), base.u(n + 1));

        let rhs_u: Vec<f64> = w.w_u[n].values().iter().zip(&carry_u).map(|(a, b)| a + b).collect();
        let au = Prepared::new(u_matrix(sc, &lap, v_next), &sc.solver).map_err(|e| e.at_level(n + 1))?;
        let yu = au.solve_transpose(&rhs_u).map_err(|e| e.at_level(n + 1))?;

        let coupling = chemotaxis_matrix_in_v(grid, u_next, v_next, sc.scheme).transpose().matvec(&yu);
        let rhs_v: Vec<f64> =
            w.w_v[n].values().iter().zip(&coupling).zip(&carry_v).map(|((a, b), c)| a + b + c).collect();
        let av = Prepared::new(v_matrix(sc, &lap, f.slice(n)), &sc.solver).map_err(|e| e.at_level(n + 1))?;
        let yv = av.solve_transpose(&rhs_v).map_err(|e| e.at_level(n + 1))?;

        carry_u = yu
            .iter()
            .zip(&yv)
            .zip(u_n.values())
            .map(|((a, b), ub)| a * inv_dt + production_derivative(*ub, sc.p) * b)
            .collect();
        carry_v = yv.iter().map(|b| b * inv_dt).collect();
        y_u[n] = yu;
        y_v[n] = yv;
    }
    Ok(Multipliers { y_u, y_v })
}

/// Adjoint of the tracking cost along the base trajectory.
pub fn solve_adjoint(base: &Trajectory, f: &ControlField, sc: &Scenario) -> Result<AdjointTrajectory> {
    let w = Cotangent::from_cost(base, sc);
    let m = sweep(base, f, &w, sc)?;
    let inv_w = 1.0 / sc.control_weight();
    let to_field = |y: &[f64]| sc.u0.with_values(y.iter().map(|x| x * inv_w).collect());
    let zero = ScalarField::zeros(&sc.grid);
    let mut lambda: Vec<ScalarField> = m.y_u.iter().map(|y| to_field(y)).collect();
    let mut eta: Vec<ScalarField> = m.y_v.iter().map(|y| to_field(y)).collect();
    lambda.push(zero.clone());
    eta.push(zero);
    Ok(AdjointTrajectory { lambda, eta, dt: sc.dt() })
}

/// Pulls a cotangent back to the control: the unweighted vector `∂ℓ/∂f`.
fn control_pullback(m: &Multipliers, base: &Trajectory, sc: &Scenario) -> Vec<Vec<f64>> {
    (0..sc.nt)
        .map(|n| sc.grid.control_cells().iter().map(|&k| m.y_v[n][k] * base.v(n + 1).values()[k]).collect())
        .collect()
}

/// Transpose-correctness certificate for the space-time tangent operator
/// `L: (df, g) ↦ (U, V)`:
///
/// `|⟨L(df, g), w⟩ − ⟨(df, g), Lᵀw⟩| / (‖L(df, g)‖·‖w‖)`, or zero when the
/// denominator vanishes.
pub fn duality_residual(
    base: &Trajectory,
    f: &ControlField,
    df: &ControlField,
    src: &TangentSource,
    sc: &Scenario,
    w: &Cotangent,
) -> Result<f64> {
    let tangent = solve_tangent(base, f, df, src, sc)?;
    let lhs = w.apply(&tangent);

    let m = sweep(base, f, w, sc)?;
    let pull = control_pullback(&m, base, sc);
    let mut rhs: f64 = (0..sc.nt).map(|n| pull[n].iter().zip(df.slice(n)).map(|(a, b)| a * b).sum::<f64>()).sum();
    if let Some(g) = &src.g_u {
        rhs += (0..sc.nt).map(|n| g[n].values().iter().zip(&m.y_u[n]).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>();
    }
    if let Some(g) = &src.g_v {
        rhs += (0..sc.nt).map(|n| g[n].values().iter().zip(&m.y_v[n]).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>();
    }

    let tnorm: f64 =
        (1..=sc.nt).map(|n| tangent.u(n).dot(tangent.u(n)) + tangent.v(n).dot(tangent.v(n))).sum::<f64>().sqrt();
    let scale = tnorm * w.norm();
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale })
}
