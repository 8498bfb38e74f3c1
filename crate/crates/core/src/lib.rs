//! Sparse measure-valued optimal control of a semilinear parabolic
//! equation with nonlocal time delay.
//!
//! The state equation is
//!
//! `∂y/∂t − Δy + R(y) = ∫_{[0,T]} y(x, t−s) du(s)` on `Ω × (0, T)`,
//!
//! with homogeneous Neumann conditions and prescribed prehistory on
//! `[−T, 0]`; the control `u` is a signed Borel measure acting as the
//! kernel of the delay term (Pyragas feedback `κ(δ_τ − δ_0)` is the
//! classical special case). The objective couples a quadratic tracking
//! functional with the total variation norm `ν‖u‖_ℳ`, which promotes
//! controls supported on finitely many time lags.
//!
//! The crate provides:
//!
//! * measure calculus and the grid projection `Λ_τ` ([`measures`]);
//! * P1 finite elements and backward-Euler delay solvers for the state,
//!   adjoint and linearized equations ([`fem`], [`delay`], [`pde`]);
//! * the subgradient field `λ` and sparsity diagnostics ([`optimality`]);
//! * a Tikhonov path-following semi-smooth Newton solver with matrix-free
//!   GMRES inner solves ([`ssn`]);
//! * experiment presets, configuration parsing and CSV/JSON export
//!   ([`presets`], [`config`], [`io`], [`manufactured`]).

pub mod config;
pub mod delay;
pub mod fem;
pub mod gmres;
pub mod gradcheck;
pub mod io;
pub mod manufactured;
pub mod measures;
pub mod optimality;
pub mod pde;
pub mod presets;
pub mod reaction;
pub mod ssn;

pub use delay::{
    adjoint_delay_source, delay_source, sample_delayed, AdjointTrajectory, Prehistory,
    StateTrajectory,
};
pub use fem::{assemble, FemOperators, SpaceMesh, TimeGrid};
pub use measures::{
    project_onto_grid, total_variation, AtomicMeasure, ControlGrid, GeneralMeasure, Measure,
};
pub use optimality::{
    compute_lambda, grad_f_direction, lambda_field, optimality_report, tracking_cost,
    OptimalityReport,
};
pub use pde::{
    solve_adjoint, solve_linearized_adjoint, solve_linearized_state, solve_state, ProblemSpec,
    SolveError, Target,
};
pub use reaction::ReactionModel;
pub use ssn::{continuation_solve, ssn_solve, SsnResult, SsnSettings};
