//! Tracking cost, its gradient through the adjoint, box projection, and
//! projected-gradient descent with Armijo backtracking and Barzilai–Borwein
//! initial steps.

use log::{debug, info};

use crate::adjoint::{solve_adjoint, AdjointTrajectory};
use crate::error::{Error, Result};
use crate::forward::{solve_forward, Trajectory};
use crate::grid::{masked_l2_sq, Mask};
use crate::scenario::{ControlField, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub j_u: f64,
    pub j_v: f64,
    pub j_f: f64,
    pub j_total: f64,
}

fn check_mesh(traj: &Trajectory, sc: &Scenario) -> Result<()> {
    if traj.nt() != sc.nt {
        return Err(Error::InvalidScenario(format!("trajectory has {} steps, scenario has {}", traj.nt(), sc.nt)));
    }
    crate::forward::check_grid_len(&sc.grid, traj)
}

/// `J = γ_u/2 ∫∫_d |u-u_d|² + γ_v/2 ∫∫_d |v-v_d|² + γ_f/(2+ε) ∫∫_c |f|^{2+ε}`,
/// with the rectangle rule over levels `1..=nt` in time.
pub fn evaluate_cost(traj: &Trajectory, f: &ControlField, sc: &Scenario) -> Result<CostBreakdown> {
    check_mesh(traj, sc)?;
    f.check(sc)?;
    let dt = sc.dt();
    let mut su = 0.0;
    let mut sv = 0.0;
    for n in 1..=sc.nt {
        if sc.gamma_u != 0.0 {
            su += masked_l2_sq(&sc.grid, &traj.u(n).axpby(1.0, sc.u_d.at(n), -1.0), Mask::Observe);
        }
        if sc.gamma_v != 0.0 {
            sv += masked_l2_sq(&sc.grid, &traj.v(n).axpby(1.0, sc.v_d.at(n), -1.0), Mask::Observe);
        }
    }
    let q = 2.0 + sc.eps;
    let sf: f64 = f.values().iter().map(|x| if sc.eps == 0.0 { x * x } else { x.abs().powf(q) }).sum();
    let j_u = 0.5 * sc.gamma_u * dt * su;
    let j_v = 0.5 * sc.gamma_v * dt * sv;
    let j_f = sc.gamma_f / q * sc.control_weight() * sf;
    Ok(CostBreakdown { j_u, j_v, j_f, j_total: j_u + j_v + j_f })
}

/// `sgn(f)|f|^{1+ε}`, the derivative of `|f|^{2+ε}/(2+ε)`.
#[inline]
pub fn penalty_derivative(f: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        f
    } else {
        f.signum() * f.abs().powf(1.0 + eps)
    }
}

/// Riesz representative of `dJ/df` in the discrete `L²(Q_c)` product:
/// `γ_f sgn(f)|f|^{1+ε} + v·η` on control cells.
///
/// Row `n` pairs the state `v` at level `n + 1` with the adjoint `η` at
/// level `n`, the multiplier of the step that produced it.
pub fn control_gradient(
    adjoint: &AdjointTrajectory,
    traj: &Trajectory,
    f: &ControlField,
    sc: &Scenario,
) -> Result<ControlField> {
    check_mesh(traj, sc)?;
    f.check(sc)?;
    let mut g = f.clone();
    let cells = sc.grid.control_cells();
    for n in 0..sc.nt {
        let (v, eta) = (traj.v(n + 1).values(), adjoint.eta(n).values());
        for ((out, &fv), &k) in g.slice_mut(n).iter_mut().zip(f.slice(n)).zip(cells) {
            *out = sc.gamma_f * penalty_derivative(fv, sc.eps) + v[k] * eta[k];
        }
    }
    Ok(g)
}

/// Cost, state and gradient at one control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: Trajectory,
    pub cost: CostBreakdown,
    pub gradient: ControlField,
}

pub fn evaluate_with_gradient(sc: &Scenario, f: &ControlField) -> Result<Evaluation> {
    let state = solve_forward(sc, f)?;
    let cost = evaluate_cost(&state, f, sc)?;
    let adjoint = solve_adjoint(&state, f, sc)?;
    let gradient = control_gradient(&adjoint, &state, f, sc)?;
    Ok(Evaluation { state, cost, gradient })
}

/// Derivative of `J` along a tangent trajectory `(U, V)` produced by the control
/// direction `df`.
pub fn cost_directional_derivative(
    traj: &Trajectory,
    tangent: &Trajectory,
    f: &ControlField,
    df: &ControlField,
    sc: &Scenario,
) -> Result<f64> {
    check_mesh(traj, sc)?;
    check_mesh(tangent, sc)?;
    let mask = sc.grid.observe_mask();
    let mut state = 0.0;
    for n in 1..=sc.nt {
        let (u, v, ud, vd) = (traj.u(n).values(), traj.v(n).values(), sc.u_d.at(n).values(), sc.v_d.at(n).values());
        let (du, dv) = (tangent.u(n).values(), tangent.v(n).values());
        for k in (0..mask.len()).filter(|&k| mask[k]) {
            state += sc.gamma_u * (u[k] - ud[k]) * du[k] + sc.gamma_v * (v[k] - vd[k]) * dv[k];
        }
    }
    let penalty: f64 =
        f.values().iter().zip(df.values()).map(|(a, b)| sc.gamma_f * penalty_derivative(*a, sc.eps) * b).sum();
    Ok(sc.control_weight() * (state + penalty))
}

/// Cellwise clamp onto `[f_min, f_max]`.
pub fn project_control(f: &ControlField, sc: &Scenario) -> Result<ControlField> {
    if sc.f_min.is_nan() || sc.f_max.is_nan() || sc.f_min > sc.f_max {
        return Err(Error::InvalidScenario(format!("control bounds [{}, {}] are empty", sc.f_min, sc.f_max)));
    }
    let mut out = f.clone();
    for x in out.values_mut() {
        *x = x.clamp(sc.f_min, sc.f_max);
    }
    Ok(out)
}

/// `‖f − P(f − grad)‖` in the discrete `L²(Q_c)` norm.
pub fn stationarity_residual(f: &ControlField, grad: &ControlField, sc: &Scenario) -> Result<f64> {
    let trial = project_control(&f.axpby(1.0, grad, -1.0), sc)?;
    Ok(f.axpby(1.0, &trial, -1.0).norm(sc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    /// stop when the stationarity residual drops to this value
    pub tol: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease parameter
    pub armijo: f64,
    pub max_line_search: usize,
    /// first trial step before any Barzilai–Borwein information exists
    pub initial_step: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 500, armijo: 1e-4, max_line_search: 40, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Stationary,
    MaxIterations,
    LineSearchFailed,
    SolverFailure(String),
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::Stationary => f.write_str("stationary"),
            StopReason::MaxIterations => f.write_str("max_iterations"),
            StopReason::LineSearchFailed => f.write_str("line_search_failed"),
            StopReason::SolverFailure(m) => write!(f, "solver_failure: {m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub iter: usize,
    pub cost: CostBreakdown,
    pub residual: f64,
    /// accepted step length (0 for the initial point)
    pub step: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub iterates: Vec<IterateRecord>,
    pub final_control: ControlField,
    pub final_state: Trajectory,
    pub final_gradient: ControlField,
    pub converged: bool,
    pub reason: StopReason,
}

impl OptimizationReport {
    pub fn final_cost(&self) -> CostBreakdown {
        self.iterates.last().map(|r| r.cost).unwrap_or_default()
    }

    pub fn final_residual(&self) -> f64 {
        self.iterates.last().map_or(f64::INFINITY, |r| r.residual)
    }
}

/// Projected gradient descent from `f0` (projected first if infeasible).
pub fn optimize(sc: &Scenario, f0: &ControlField, opts: &OptimizeOptions) -> Result<OptimizationReport> {
    sc.validate()?;
    let mut f = project_control(f0, sc)?;
    let mut eval = evaluate_with_gradient(sc, &f)?;
    let mut residual = stationarity_residual(&f, &eval.gradient, sc)?;
    let mut iterates = vec![IterateRecord { iter: 0, cost: eval.cost, residual, step: 0.0, trials: 0 }];
    let mut alpha = opts.initial_step;
    info!("iter 0: J = {:.6e}, residual = {:.3e}", eval.cost.j_total, residual);

    let finish = |f: ControlField, eval: Evaluation, iterates, reason: StopReason| OptimizationReport {
        iterates,
        final_control: f,
        final_state: eval.state,
        final_gradient: eval.gradient,
        converged: reason == StopReason::Stationary,
        reason,
    };

    for iter in 1..=opts.max_iters + 1 {
        if residual <= opts.tol {
            return Ok(finish(f, eval, iterates, StopReason::Stationary));
        }
        if iter > opts.max_iters {
            break;
        }
        let j0 = eval.cost.j_total;
        let mut t = alpha;
        let mut accepted = None;
        let mut trials = 0;
        while trials < opts.max_line_search {
            trials += 1;
            let trial = project_control(&f.axpby(1.0, &eval.gradient, -t), sc)?;
            let d = trial.axpby(1.0, &f, -1.0);
            let slope = eval.gradient.inner(&d, sc);
            if slope >= 0.0 {
                // projected step collapsed to the current point
                t *= 0.5;
                continue;
            }
            match solve_forward(sc, &trial).and_then(|s| evaluate_cost(&s, &trial, sc).map(|c| (s, c))) {
                Ok((state, cost)) if cost.j_total <= j0 + opts.armijo * slope && cost.j_total < j0 => {
                    accepted = Some((trial, state, cost));
                    break;
                }
                Ok(_) => {}
                Err(e) => debug!("line search trial at t = {t:e} failed: {e}"),
            }
            t *= 0.5;
        }
        let Some((f_new, state, cost)) = accepted else {
            return Ok(finish(f, eval, iterates, StopReason::LineSearchFailed));
        };
        let adjoint = match solve_adjoint(&state, &f_new, sc) {
            Ok(a) => a,
            Err(e) => return Ok(finish(f, eval, iterates, StopReason::SolverFailure(e.to_string()))),
        };
        let g_new = control_gradient(&adjoint, &state, &f_new, sc)?;

        let s = f_new.axpby(1.0, &f, -1.0);
        let y = g_new.axpby(1.0, &eval.gradient, -1.0);
        let sy = s.inner(&y, sc);
        alpha = if sy > 0.0 { (s.inner(&s, sc) / sy).clamp(1e-10, 1e10) } else { t };

        f = f_new;
        eval = Evaluation { state, cost, gradient: g_new };
        residual = stationarity_residual(&f, &eval.gradient, sc)?;
        iterates.push(IterateRecord { iter, cost, residual, step: t, trials });
        debug!("iter {iter}: J = {:.6e}, residual = {:.3e}, t = {t:.3e}, trials = {trials}", cost.j_total, residual);
    }
    info!("stopped after {} iterations, residual {:.3e}", opts.max_iters, residual);
    Ok(finish(f, eval, iterates, StopReason::MaxIterations))
}

/// One sampled degree of freedom of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientProbe {
    /// flat index into [`ControlField::values`]
    pub index: usize,
    /// `grad_k · dt·hx·hy`, the derivative of `J` along the unit perturbation
    pub adjoint: f64,
    pub finite_difference: f64,
    /// `|fd − adjoint| / max(|fd|, |adjoint|)`
    pub rel_error: f64,
}

/// Central differences of `J` in the control entries `indices`, compared
/// with the adjoint gradient.
pub fn gradient_check(
    sc: &Scenario,
    f: &ControlField,
    gradient: &ControlField,
    indices: &[usize],
    h: f64,
) -> Result<Vec<GradientProbe>> {
    f.check(sc)?;
    gradient.check(sc)?;
    let cost_at = |k: usize, delta: f64| -> Result<f64> {
        let mut g = f.clone();
        g.values_mut()[k] += delta;
        let state = solve_forward(sc, &g)?;
        Ok(evaluate_cost(&state, &g, sc)?.j_total)
    };
    indices
        .iter()
        .map(|&k| {
            if k >= f.values().len() {
                return Err(Error::ControlMismatch(format!("probe index {k} out of range")));
            }
            let fd = (cost_at(k, h)? - cost_at(k, -h)?) / (2.0 * h);
            let adjoint = gradient.values()[k] * sc.control_weight();
            let denom = fd.abs().max(adjoint.abs()).max(f64::MIN_POSITIVE);
            Ok(GradientProbe { index: k, adjoint, finite_difference: fd, rel_error: (fd - adjoint).abs() / denom })
        })
        .collect()
}
