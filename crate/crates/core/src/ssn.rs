//! Tikhonov path-following semi-smooth Newton solver for the discretized
//! control problem.
//!
//! The subgradient inclusion is rewritten as the fixed-point equation
//!
//! `u_k = max{0, u_k + C(λ_k − 1)} + min{0, u_k + C(λ_k + 1)}`,  `C = cν`,
//!
//! whose residual is driven to zero by a semi-smooth Newton method: the
//! clamp branches define active sets `A±` (strict inequalities, ties go
//! inactive), inactive weights are hard-zeroed, and on the active set the
//! smooth equations `λ_k(u) = ±1` are corrected by a Newton step whose
//! Jacobian is applied matrix-free (two linearized PDE sweeps per product)
//! inside restarted GMRES. A geometric continuation in `c`, warm-started
//! from the previous solution, follows the Tikhonov path toward the
//! unregularized problem.

use crate::delay::{AdjointTrajectory, StateTrajectory};
use crate::gmres::{gmres, GmresSettings, LinearOperator};
use crate::measures::{AtomicMeasure, Measure};
use crate::optimality::{
    compute_lambda, optimality_report, OptimalityReport,
};
use crate::pde::{
    solve_adjoint, solve_linearized_adjoint, solve_linearized_state, solve_state, ProblemSpec,
    SolveError,
};

#[derive(Debug, Clone)]
pub struct SsnSettings {
    /// First Tikhonov parameter of the continuation.
    pub c0: f64,
    /// Geometric growth factor of `c` (> 1).
    pub growth: f64,
    pub c_max: f64,
    /// Continuation stops when `‖u^{c+} − u^c‖_1 ≤ stop_tol (1 + ‖u^c‖_1)`.
    pub continuation_stop_tol: f64,
    /// Newton residual tolerance (scaled by `(1 + ‖u‖_∞) max(1, C)`).
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub krylov: GmresSettings,
    /// Max step halvings of the damped update.
    pub max_line_search: usize,
    /// When a stage stalls, the continuation step to it is bisected
    /// geometrically and retried from the last converged solution; total
    /// budget for such retries.
    pub max_step_refinements: usize,
}

impl Default for SsnSettings {
    fn default() -> Self {
        Self {
            c0: 1.0,
            growth: 10.0,
            c_max: 1e12,
            continuation_stop_tol: 1e-6,
            newton_tol: 1e-10,
            max_newton_iters: 50,
            krylov: GmresSettings::default(),
            max_line_search: 20,
            max_step_refinements: 40,
        }
    }
}

/// Componentwise residual of the fixed-point equation; zero iff the
/// subgradient conditions hold.
pub fn ssn_residual(u: &[f64], lambda: &[f64], c_big: f64) -> Vec<f64> {
    u.iter()
        .zip(lambda)
        .map(|(&uk, &lk)| {
            uk - (uk + c_big * (lk - 1.0)).max(0.0) - (uk + c_big * (lk + 1.0)).min(0.0)
        })
        .collect()
}

/// Active/inactive partition: `A⁺ = {u_k + C(λ_k−1) > 0}`,
/// `A⁻ = {u_k + C(λ_k+1) < 0}`, ties inactive.
pub fn active_sets(u: &[f64], lambda: &[f64], c_big: f64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    let mut inactive = Vec::new();
    for k in 0..u.len() {
        if u[k] + c_big * (lambda[k] - 1.0) > 0.0 {
            plus.push(k);
        } else if u[k] + c_big * (lambda[k] + 1.0) < 0.0 {
            minus.push(k);
        } else {
            inactive.push(k);
        }
    }
    (plus, minus, inactive)
}

/// State, adjoint and subgradient field at one control iterate.
pub struct Iterate {
    pub u: AtomicMeasure,
    pub y: StateTrajectory,
    pub phi: AdjointTrajectory,
    pub lambda: Vec<f64>,
}

pub fn evaluate_iterate(
    p: &ProblemSpec,
    weights: Vec<f64>,
    c: f64,
) -> Result<Iterate, SolveError> {
    let u = AtomicMeasure::new(p.control_grid.clone(), weights)
        .map_err(|e| SolveError::Spec(e.to_string()))?;
    let y = solve_state(p, &Measure::Atomic(u.clone()))?;
    let phi = solve_adjoint(p, &u, &y)?;
    let lambda = compute_lambda(p, &u, &y, &phi, Some(c));
    Ok(Iterate { u, y, phi, lambda })
}

/// Reusable context for applications of the λ-Jacobian at a fixed
/// iterate: caches the `M φ̂` rows shared by every product.
pub struct JacobianContext<'a> {
    p: &'a ProblemSpec,
    u: &'a AtomicMeasure,
    y: &'a StateTrajectory,
    phi: &'a AdjointTrajectory,
    c: f64,
    mphi: Vec<Vec<f64>>,
}

impl<'a> JacobianContext<'a> {
    pub fn new(
        p: &'a ProblemSpec,
        u: &'a AtomicMeasure,
        y: &'a StateTrajectory,
        phi: &'a AdjointTrajectory,
        c: f64,
    ) -> Self {
        let mphi = crate::optimality::mass_adjoint_rows(p, phi);
        Self { p, u, y, phi, c, mphi }
    }

    /// `(∂λ/∂u · d)_k` for the requested control nodes only.
    pub fn apply_at(
        &self,
        direction: &[f64],
        nodes: &[usize],
    ) -> Result<Vec<f64>, SolveError> {
        let v = AtomicMeasure::new(self.p.control_grid.clone(), direction.to_vec())
            .map_err(|e| SolveError::Spec(e.to_string()))?;
        let z = solve_linearized_state(self.p, self.u, self.y, &v)?;
        let eta = solve_linearized_adjoint(self.p, self.u, self.y, self.phi, &v, &z)?;
        let meta = crate::optimality::mass_adjoint_rows(self.p, &eta);
        let mut scratch = Vec::new();
        Ok(nodes
            .iter()
            .map(|&k| {
                let s = self.p.control_grid.nodes()[k];
                let dp = crate::optimality::pairing_at(self.p, self.y, &meta, s, &mut scratch)
                    + crate::optimality::pairing_at(self.p, &z, &self.mphi, s, &mut scratch);
                -dp / self.p.nu - direction[k] / (self.c * self.p.nu)
            })
            .collect())
    }
}

/// Directional derivative of the map `u ↦ λ(u)` (including the Tikhonov
/// shift) in direction `d`: one linearized state and one linearized
/// adjoint solve, then the λ-quadrature applied to the perturbed pairing.
pub fn jacobian_apply(
    p: &ProblemSpec,
    u: &AtomicMeasure,
    y: &StateTrajectory,
    phi: &AdjointTrajectory,
    c: f64,
    direction: &[f64],
) -> Result<Vec<f64>, SolveError> {
    let all: Vec<usize> = (0..p.control_grid.len()).collect();
    JacobianContext::new(p, u, y, phi, c).apply_at(direction, &all)
}

struct ActiveOperator<'a> {
    ctx: &'a JacobianContext<'a>,
    active: &'a [usize],
    n_full: usize,
}

impl LinearOperator for ActiveOperator<'_> {
    fn dim(&self) -> usize {
        self.active.len()
    }
    fn apply(&self, x: &[f64], y_out: &mut [f64]) {
        let mut full = vec![0.0; self.n_full];
        for (slot, &k) in self.active.iter().enumerate() {
            full[k] = x[slot];
        }
        let jd = self
            .ctx
            .apply_at(&full, self.active)
            .expect("jacobian apply failed inside Krylov solve");
        y_out.copy_from_slice(&jd);
    }
}

#[derive(Debug, Clone)]
pub struct NewtonTraceEntry {
    pub iteration: usize,
    pub residual_inf: f64,
    pub threshold: f64,
    pub norm_u: f64,
    pub active_plus: usize,
    pub active_minus: usize,
    pub krylov_iters: usize,
    pub krylov_fallback: bool,
    pub step_halvings: usize,
}

#[derive(Debug, Clone)]
pub struct StageTrace {
    pub c: f64,
    pub converged: bool,
    pub newton: Vec<NewtonTraceEntry>,
}

#[derive(Debug, Clone)]
pub struct SsnResult {
    pub control: AtomicMeasure,
    pub converged: bool,
    pub final_c: f64,
    pub trace: Vec<StageTrace>,
    /// Diagnostics without the Tikhonov shift (`c = ∞`).
    pub report: OptimalityReport,
    /// Diagnostics at the final continuation parameter.
    pub report_regularized: OptimalityReport,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Semi-smooth Newton loop at fixed Tikhonov parameter `c`. Returns the
/// final iterate and the per-iteration trace; `converged` is false when
/// the iteration budget or the line search stalls, in which case the best
/// iterate seen is returned.
pub fn ssn_solve(
    p: &ProblemSpec,
    c: f64,
    u_init: &AtomicMeasure,
    settings: &SsnSettings,
) -> Result<(Iterate, StageTrace, bool), SolveError> {
    let c_big = c * p.nu;
    let n = p.control_grid.len();
    let mut it = evaluate_iterate(p, u_init.weights().to_vec(), c)?;
    let mut trace = StageTrace {
        c,
        converged: false,
        newton: Vec::new(),
    };
    let mut best: Option<(f64, Vec<f64>)> = None;

    for iteration in 0..settings.max_newton_iters {
        let residual = ssn_residual(it.u.weights(), &it.lambda, c_big);
        let res_norm = inf_norm(&residual);
        let threshold =
            settings.newton_tol * (1.0 + inf_norm(it.u.weights())) * c_big.max(1.0);
        let (plus, minus, inactive) = active_sets(it.u.weights(), &it.lambda, c_big);
        let mut entry = NewtonTraceEntry {
            iteration,
            residual_inf: res_norm,
            threshold,
            norm_u: it.u.total_variation(),
            active_plus: plus.len(),
            active_minus: minus.len(),
            krylov_iters: 0,
            krylov_fallback: false,
            step_halvings: 0,
        };
        if best.as_ref().map_or(true, |(r, _)| res_norm < *r) {
            best = Some((res_norm, it.u.weights().to_vec()));
        }
        if res_norm <= threshold {
            trace.newton.push(entry);
            trace.converged = true;
            return Ok((it, trace, true));
        }

        // Newton direction: d_I = −u_I, and on A solve J_AA d_A = rhs_A.
        let mut d_full = vec![0.0; n];
        let mut zeroing = false;
        for &k in &inactive {
            if it.u.weights()[k] != 0.0 {
                d_full[k] = -it.u.weights()[k];
                zeroing = true;
            }
        }
        let active: Vec<usize> = plus.iter().chain(minus.iter()).copied().collect();
        if !active.is_empty() {
            let ctx = JacobianContext::new(p, &it.u, &it.y, &it.phi, c);
            let j_zeroing = if zeroing {
                ctx.apply_at(&d_full, &active)?
            } else {
                vec![0.0; active.len()]
            };
            let mut rhs = Vec::with_capacity(active.len());
            for (slot, &k) in active.iter().enumerate() {
                let target = if plus.contains(&k) { 1.0 } else { -1.0 };
                rhs.push(target - it.lambda[k] - j_zeroing[slot]);
            }
            let op = ActiveOperator {
                ctx: &ctx,
                active: &active,
                n_full: n,
            };
            let mut d_active = vec![0.0; active.len()];
            let outcome = gmres(&op, &rhs, &mut d_active, &settings.krylov);
            entry.krylov_iters = outcome.iterations;
            let bad = !outcome.converged || d_active.iter().any(|v| !v.is_finite());
            if bad {
                // steepest-descent fallback along the residual of the
                // smooth active equations, with an exact quadratic step
                entry.krylov_fallback = true;
                let mut jr = vec![0.0; active.len()];
                op.apply(&rhs, &mut jr);
                let num: f64 = rhs.iter().map(|r| r * r).sum();
                let den: f64 = rhs.iter().zip(&jr).map(|(r, j)| r * j).sum();
                let step = if den.abs() > 1e-300 { num / den } else { 1.0 };
                for (d, &r) in d_active.iter_mut().zip(&rhs) {
                    *d = step * r;
                }
            }
            for (slot, &k) in active.iter().enumerate() {
                d_full[k] = d_active[slot];
            }
        }

        // damped update: the full step zeroes the inactive weights exactly
        // (d_I = −u_I); halve until the fixed-point residual decreases
        let mut alpha = 1.0;
        let mut accepted: Option<Iterate> = None;
        for halvings in 0..=settings.max_line_search {
            let w_try: Vec<f64> = (0..n)
                .map(|k| {
                    let w = it.u.weights()[k] + alpha * d_full[k];
                    // snap the exact-sparsity zeros (u_k − u_k) to 0.0
                    if w.abs() < 1e-300 {
                        0.0
                    } else {
                        w
                    }
                })
                .collect();
            let it_try = evaluate_iterate(p, w_try, c)?;
            let res_try = ssn_residual(it_try.u.weights(), &it_try.lambda, c_big);
            if inf_norm(&res_try) < res_norm {
                entry.step_halvings = halvings;
                accepted = Some(it_try);
                break;
            }
            alpha *= 0.5;
        }
        trace.newton.push(entry);
        match accepted {
            Some(next) => it = next,
            None => break, // stalled line search
        }
    }

    // non-converged: return the best iterate seen, flagged
    let (_, w) = best.expect("at least one iterate evaluated");
    let it = evaluate_iterate(p, w, c)?;
    Ok((it, trace, false))
}

/// Continuation in `c`: solve for `c_0, c_0 γ, c_0 γ², …`, warm-starting
/// each stage from the previous solution (initial guess `u ≡ 0`), until
/// the solution stops changing or `c` exceeds `c_max`. A stage that
/// stalls is retried at the geometric mean between the last converged `c`
/// and the failed one.
pub fn continuation_solve(p: &ProblemSpec, settings: &SsnSettings) -> Result<SsnResult, SolveError> {
    let mut c = settings.c0;
    let mut u = AtomicMeasure::zero(p.control_grid.clone());
    let mut traces = Vec::new();
    let mut all_converged = true;
    let mut last_iterate: Option<Iterate>;
    let mut final_c;
    let mut last_good_c: Option<f64> = None;
    let mut refinements = 0;

    loop {
        let (it, trace, converged) = ssn_solve(p, c, &u, settings)?;
        traces.push(trace);
        final_c = c;
        if !converged {
            let retry = refinements < settings.max_step_refinements;
            match last_good_c {
                Some(cp) if retry && c / cp > 1.0 + 1e-3 => {
                    c = (cp * c).sqrt();
                    refinements += 1;
                    continue;
                }
                None if retry && c > 1e-6 => {
                    // the very first stage stalled: start more regularized
                    c /= settings.growth;
                    refinements += 1;
                    continue;
                }
                _ => {
                    all_converged = false;
                    last_iterate = Some(it);
                    break;
                }
            }
        }
        let diff: f64 = it
            .u
            .weights()
            .iter()
            .zip(u.weights())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let prev_norm: f64 = u.weights().iter().map(|w| w.abs()).sum();
        let first_stage = last_good_c.is_none();
        last_good_c = Some(c);
        u = it.u.clone();
        last_iterate = Some(it);
        if diff <= settings.continuation_stop_tol * (1.0 + prev_norm) && !first_stage {
            break;
        }
        if first_stage && diff == 0.0 {
            // zero stayed stationary at the first stage: nothing activates
            break;
        }
        if c >= settings.c_max {
            break;
        }
        c *= settings.growth;
    }

    let it = last_iterate.expect("continuation ran at least one stage");
    let lambda_plain = compute_lambda(p, &it.u, &it.y, &it.phi, None);
    let report = optimality_report(p, &it.u, &it.y, &lambda_plain, None, 1e-6);
    let report_regularized =
        optimality_report(p, &it.u, &it.y, &it.lambda, Some(final_c), 1e-6);
    Ok(SsnResult {
        control: it.u,
        converged: all_converged,
        final_c,
        trace: traces,
        report,
        report_regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_branches() {
        // inactive: both clamps off
        let r = ssn_residual(&[0.0], &[0.3], 1.0);
        assert_eq!(r[0], 0.0);
        // positive-active with λ = 1: fixed point holds
        let r = ssn_residual(&[2.0], &[1.0], 1.0);
        assert_eq!(r[0], 0.0);
        // positive weight with λ = 0 is not a fixed point: Φ = 2 − max{0, 1} − 0 = 1
        let r = ssn_residual(&[2.0], &[0.0], 1.0);
        assert_eq!(r[0], 1.0);
        // negative-active
        let r = ssn_residual(&[-3.0], &[-1.0], 2.5);
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn active_set_partition() {
        let u = [0.0, 5.0, -4.0, 0.0];
        let lam = [0.5, 1.0, -1.0, -0.2];
        let (p, m, i) = active_sets(&u, &lam, 1.0);
        assert_eq!(p, vec![1]);
        assert_eq!(m, vec![2]);
        assert_eq!(i, vec![0, 3]);
    }

    #[test]
    fn knife_edge_goes_inactive() {
        // u + C(λ−1) = 0 exactly: inactive by the strict-inequality rule
        let u = [1.0];
        let lam = [0.0];
        let (p, m, i) = active_sets(&u, &lam, 1.0);
        assert!(p.is_empty() && m.is_empty());
        assert_eq!(i, vec![0]);
    }

    #[test]
    fn all_inactive_when_lambda_interior() {
        let u = [0.0; 5];
        let lam = [0.2, -0.9, 0.0, 0.99, -0.5];
        let (p, m, i) = active_sets(&u, &lam, 10.0);
        assert!(p.is_empty() && m.is_empty());
        assert_eq!(i.len(), 5);
    }
}
