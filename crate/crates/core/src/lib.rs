//! Solver and optimizer for the two-dimensional parabolic chemo-repulsion
//! system with nonlinear signal production under a bilinear control,
//!
//! ```text
//! ∂t u − Δu = ∇·(u∇v)
//! ∂t v − Δv + v = uᵖ + f v 1_c,      1 < p ≤ 2,
//! ```
//!
//! with homogeneous Neumann conditions on a rectangle. The crate provides the
//! forward solver, its exact discrete tangent and adjoint, the tracking cost
//! and its gradient, a projected-gradient optimizer over box constraints, and
//! the conservation diagnostics used to verify runs.

pub mod adjoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod objective;
pub mod ops;
pub mod runner;
pub mod scenario;
pub mod tangent;

pub use adjoint::{duality_residual, solve_adjoint, AdjointTrajectory, Cotangent};
pub use diagnostics::{
    conservation_report, energy_series, mass_series, negativity_report, v_balance_residuals, ConservationReport,
};
pub use error::{Error, Result};
pub use forward::{analytic_constant_solution, solve_forward, step_state, Trajectory};
pub use grid::{integrate, masked_l2_sq, Grid2D, Mask, Rect, ScalarField};
pub use objective::{
    control_gradient, evaluate_cost, optimize, project_control, stationarity_residual, CostBreakdown,
    OptimizationReport, OptimizeOptions,
};
pub use ops::{chemotactic_divergence, laplacian_neumann, FluxScheme};
pub use scenario::{ControlField, DesiredState, Scenario};
pub use tangent::{solve_tangent, TangentSource};
