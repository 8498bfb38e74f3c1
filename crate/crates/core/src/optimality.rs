//! Objective evaluation, the adjoint-based derivative of the tracking
//! functional, the subgradient field `λ`, and sparsity diagnostics.
//!
//! On the control grid,
//!
//! `λ_k = −(1/ν) ∫_{−t_k}^{T} ⟨ȳ(t), φ̄(t + t_k)⟩ dt  −  u_k/(c ν)`
//!
//! with `ȳ` read from the prehistory for `t < 0` and `φ̄` extended by zero
//! past `T`. The quadrature reuses the forward solver's interpolation
//! stencils step by step, which makes `−ν λ_k` the *exact* derivative of
//! the discrete tracking cost in the `k`-th atom weight: the consistency
//! of `grad_F_direction` with finite differences and with the linearized
//! solver holds to rounding.

use crate::delay::{AdjointTrajectory, StateTrajectory, Stencil};
use crate::measures::{AtomicMeasure, Measure};
use crate::pde::ProblemSpec;
use serde::Serialize;

/// `F(u) = ½ ∫_window ∫_Ω |y − y_d|²`, composite trapezoid in time over the
/// snapped window.
pub fn tracking_cost(p: &ProblemSpec, y: &StateTrajectory) -> f64 {
    let nx = p.nx();
    let mut e = vec![0.0; nx];
    let mut d = vec![0.0; nx];
    let mut total = 0.0;
    for i in 0..=p.n_steps() {
        let w = p.window_weight(i);
        if w == 0.0 {
            continue;
        }
        p.target_row(i, &mut d);
        for (j, ej) in e.iter_mut().enumerate() {
            *ej = y.row(i)[j] - d[j];
        }
        total += 0.5 * w * p.ops.l2_norm_sq(&e);
    }
    total
}

/// Rows of `M φ̂_i`, indexed so `mphi[i]` pairs with time step `i`
/// (`i = 1..=N`); entry 0 is unused.
pub(crate) fn mass_adjoint_rows(p: &ProblemSpec, phi: &AdjointTrajectory) -> Vec<Vec<f64>> {
    let n = p.n_steps();
    let nx = p.nx();
    let mut rows = vec![vec![0.0; nx]; n + 1];
    for i in 1..=n {
        p.ops.mass.mul_vec(phi.row(i - 1), &mut rows[i]);
    }
    rows
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The pairing `P(s) = Σ_i Δ_i ⟨M φ̂_i, ȳ(s_i − s)⟩` for one delay offset,
/// using the per-step stencils; `s = 0` pairs with the current row.
pub(crate) fn pairing_at(
    p: &ProblemSpec,
    y: &StateTrajectory,
    mphi: &[Vec<f64>],
    s: f64,
    scratch: &mut Vec<f64>,
) -> f64 {
    let n = p.n_steps();
    let mut acc = 0.0;
    if s == 0.0 {
        for i in 1..=n {
            acc += p.tgrid.step_size(i) * dot(&mphi[i], y.row(i));
        }
        return acc;
    }
    for i in 1..=n {
        let dt = p.tgrid.step_size(i);
        let q = p.tgrid.nodes()[i] - s;
        let view = y.view_prefix(i);
        let term = match view.stencil(q) {
            Stencil::History(tq) => {
                scratch.clear();
                scratch.resize(p.nx(), 0.0);
                y.prehistory().sample_into(&p.mesh, tq, scratch);
                dot(&mphi[i], scratch)
            }
            Stencil::Rows { j0, w0, j1, w1 } => {
                let mut v = w0 * dot(&mphi[i], view.row(j0));
                if w1 != 0.0 {
                    v += w1 * dot(&mphi[i], view.row(j1));
                }
                v
            }
        };
        acc += dt * term;
    }
    acc
}

/// `P(s) = Σ_i Δ_i ⟨M φ̂_i, traj(s_i − s)⟩` for each offset: the discrete
/// version of `∫_{−s}^T ⟨ȳ(t), φ̄(t + s)⟩ dt`. The optimizer's Jacobian
/// applies it to perturbed trajectory/adjoint pairs.
pub fn pairing_field(
    p: &ProblemSpec,
    traj: &StateTrajectory,
    phi: &AdjointTrajectory,
    offsets: &[f64],
) -> Vec<f64> {
    let mphi = mass_adjoint_rows(p, phi);
    let mut scratch = Vec::new();
    offsets
        .iter()
        .map(|&s| pairing_at(p, traj, &mphi, s, &mut scratch))
        .collect()
}

/// Subgradient values on the control grid. `tikhonov_c = Some(c)` adds the
/// regularization shift `−u_k/(cν)`; `None` is the unregularized field.
pub fn compute_lambda(
    p: &ProblemSpec,
    u: &AtomicMeasure,
    y: &StateTrajectory,
    phi: &AdjointTrajectory,
    tikhonov_c: Option<f64>,
) -> Vec<f64> {
    let mut lambda = pairing_field(p, y, phi, p.control_grid.nodes());
    for (k, val) in lambda.iter_mut().enumerate() {
        *val = -*val / p.nu;
        if let Some(c) = tikhonov_c {
            *val -= u.weights()[k] / (c * p.nu);
        }
    }
    lambda
}

/// The continuous field `λ̄(s)` of the optimality system at arbitrary
/// offsets (no Tikhonov shift); for plotting and threshold studies.
pub fn lambda_field(
    p: &ProblemSpec,
    y: &StateTrajectory,
    phi: &AdjointTrajectory,
    offsets: &[f64],
) -> Vec<f64> {
    pairing_field(p, y, phi, offsets)
        .into_iter()
        .map(|v| -v / p.nu)
        .collect()
}

/// `F'(u)v = ∫_Q φ_u (K[v] y_u + g_v)` evaluated with the discrete
/// transpose pairing; equals `Σ_k v_k (−ν λ_k)` for `v` on the control grid.
pub fn grad_f_direction(
    p: &ProblemSpec,
    y: &StateTrajectory,
    phi: &AdjointTrajectory,
    v: &AtomicMeasure,
) -> f64 {
    let mphi = mass_adjoint_rows(p, phi);
    let n = p.n_steps();
    let v0 = v.mass_at_zero();
    let v_m = Measure::Atomic(v.clone());
    let mut acc = 0.0;
    for i in 1..=n {
        let dt = p.tgrid.step_size(i);
        let t = p.tgrid.nodes()[i];
        let (_, mut src) = crate::delay::delay_source(&v_m, &y.view_prefix(i), t);
        if v0 != 0.0 {
            for (s, &yy) in src.iter_mut().zip(y.row(i)) {
                *s += v0 * yy;
            }
        }
        acc += dt * dot(&mphi[i], &src);
    }
    acc
}

/// Diagnostics of the discrete sparsity structure: `|λ_k| ≤ 1`, and
/// `λ_k = ±1` wherever `±u_k > 0`.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalityReport {
    pub lambda: Vec<f64>,
    pub lambda_max_abs: f64,
    /// Indices with `|u_k| > tol_supp`.
    pub support: Vec<usize>,
    pub norm_u: f64,
    /// Tracking part `F`.
    pub f_value: f64,
    /// Sparsity part `ν ‖u‖_ℳ`.
    pub nu_j: f64,
    /// `Σ u_k² / (2c)`; zero for the unregularized report.
    pub tikhonov: f64,
    /// `J = F + ν j + tikhonov`.
    pub j_total: f64,
    /// Number of support nodes violating the sign conditions beyond `tol`.
    pub sign_violations: usize,
    /// Worst violation `|λ_k − sign(u_k)|` over the support.
    pub sign_violation_max: f64,
    /// Amount by which `max|λ|` exceeds 1 (clamped at 0).
    pub bound_excess: f64,
}

/// Support threshold `10⁻¹⁰ · max(1, ‖u‖_ℳ)`.
pub fn support_tolerance(u: &AtomicMeasure) -> f64 {
    1e-10 * u.total_variation().max(1.0)
}

pub fn optimality_report(
    p: &ProblemSpec,
    u: &AtomicMeasure,
    y: &StateTrajectory,
    lambda: &[f64],
    tikhonov_c: Option<f64>,
    tol: f64,
) -> OptimalityReport {
    let tol_supp = support_tolerance(u);
    let support: Vec<usize> = u
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| w.abs() > tol_supp)
        .map(|(k, _)| k)
        .collect();
    let lambda_max_abs = lambda.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let mut sign_violations = 0;
    let mut sign_violation_max = 0.0f64;
    for &k in &support {
        let target = if u.weights()[k] > 0.0 { 1.0 } else { -1.0 };
        let viol = (lambda[k] - target).abs();
        sign_violation_max = sign_violation_max.max(viol);
        if viol > tol {
            sign_violations += 1;
        }
    }
    let norm_u = u.total_variation();
    let f_value = tracking_cost(p, y);
    let nu_j = p.nu * norm_u;
    let tikhonov = match tikhonov_c {
        Some(c) => u.weights().iter().map(|w| w * w).sum::<f64>() / (2.0 * c),
        None => 0.0,
    };
    OptimalityReport {
        lambda: lambda.to_vec(),
        lambda_max_abs,
        support,
        norm_u,
        f_value,
        nu_j,
        tikhonov,
        j_total: f_value + nu_j + tikhonov,
        sign_violations,
        sign_violation_max,
        bound_excess: (lambda_max_abs - 1.0).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::Prehistory;
    use crate::fem::{SpaceMesh, TimeGrid};
    use crate::measures::ControlGrid;
    use crate::pde::{solve_adjoint, solve_state, Target};
    use crate::reaction::ReactionModel;
    use std::sync::Arc;

    fn spec(nx: usize, nt: usize, target: Target) -> ProblemSpec {
        ProblemSpec::new(
            Arc::new(SpaceMesh::uniform(0.0, 1.0, nx).unwrap()),
            Arc::new(TimeGrid::uniform(1.0, nt).unwrap()),
            ReactionModel::zero(),
            Arc::new(Prehistory::Constant(1.0)),
            target,
            1e-2,
            (0.0, 1.0),
            ControlGrid::uniform(1.0, 8).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn tracking_cost_zero_on_match() {
        let p = spec(9, 8, Target::Constant(1.0));
        let u = AtomicMeasure::zero(p.control_grid.clone());
        let y = solve_state(&p, &Measure::Atomic(u)).unwrap();
        assert!(tracking_cost(&p, &y) < 1e-26);
    }

    #[test]
    fn tracking_cost_constant_mismatch() {
        // y − y_d ≡ 1 on window [0, T], Ω = (0,1): F = T/2
        let p = spec(9, 16, Target::Constant(0.0));
        let u = AtomicMeasure::zero(p.control_grid.clone());
        let y = solve_state(&p, &Measure::Atomic(u)).unwrap();
        assert!((tracking_cost(&p, &y) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn tracking_cost_matches_quadrature_oracle() {
        // smooth mismatch, 65×65 grid, high-order space-time quadrature on
        // the P1/trapezoid interpolant
        let nx = 65;
        let nt = 64;
        let f = |x: f64, t: f64| (2.0 * x - 0.3).cos() * (1.5 * t).sin() + 0.2;
        let p = ProblemSpec::new(
            Arc::new(SpaceMesh::uniform(0.0, 1.0, nx).unwrap()),
            Arc::new(TimeGrid::uniform(1.0, nt).unwrap()),
            ReactionModel::zero(),
            Arc::new(Prehistory::Constant(0.0)),
            Target::Constant(0.0),
            1e-2,
            (0.0, 1.0),
            ControlGrid::uniform(1.0, 4).unwrap(),
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = p
            .tgrid
            .nodes()
            .iter()
            .map(|&t| p.mesh.sample(|x| f(x, t)))
            .collect();
        let y = StateTrajectory::from_rows(
            p.mesh.clone(),
            p.tgrid.clone(),
            Arc::new(Prehistory::Constant(0.0)),
            rows,
        );
        let got = tracking_cost(&p, &y);

        // oracle: exact time integral of the quadratic spline in t? the
        // discrete functional is trapezoid-in-time of the exact spatial
        // integral; evaluate the spatial part with 2-point Gauss (exact for
        // P1 squared) and trapezoid in time with very fine refinement of the
        // continuous integrand to bound the discretization gap
        let mut oracle = 0.0;
        let w = p.tgrid.trapezoid_weights(0, nt);
        let g = 1.0 / 3f64.sqrt();
        let xs = p.mesh.nodes();
        for (i, &t) in p.tgrid.nodes().iter().enumerate() {
            let mut space = 0.0;
            for e in 0..nx - 1 {
                let h = xs[e + 1] - xs[e];
                let (va, vb) = (f(xs[e], t), f(xs[e + 1], t));
                for gp in [-g, g] {
                    let xi = 0.5 * (1.0 + gp);
                    let v = va * (1.0 - xi) + vb * xi;
                    space += 0.5 * h * v * v;
                }
            }
            oracle += 0.5 * w[i] * space;
        }
        assert!(
            (got - oracle).abs() / oracle < 1e-6,
            "got {got}, oracle {oracle}"
        );
    }

    #[test]
    fn lambda_zero_when_adjoint_vanishes() {
        let p = spec(9, 8, Target::Constant(1.0));
        let u = AtomicMeasure::zero(p.control_grid.clone());
        let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
        let phi = solve_adjoint(&p, &u, &y).unwrap();
        let lambda = compute_lambda(&p, &u, &y, &phi, None);
        assert!(lambda.iter().all(|&l| l.abs() < 1e-13));

        // regularized: λ_k = −u_k/(cν) when φ ≡ 0
        let mut w = vec![0.0; 9];
        w[3] = 2.0;
        let u2 = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
        let lambda2 = compute_lambda(&p, &u2, &y, &phi, Some(100.0));
        assert!((lambda2[3] + 2.0 / (100.0 * p.nu)).abs() < 1e-12);
    }

    #[test]
    fn report_structure() {
        let p = spec(9, 8, Target::Constant(1.0));
        let mut w = vec![0.0; 9];
        w[3] = 2.0;
        w[5] = -0.5;
        let u = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
        let y = solve_state(&p, &Measure::Atomic(AtomicMeasure::zero(p.control_grid.clone())))
            .unwrap();
        let mut lambda = vec![0.0; 9];
        lambda[3] = 1.0;
        lambda[5] = -1.0 + 1e-8;
        let rep = optimality_report(&p, &u, &y, &lambda, None, 1e-6);
        assert_eq!(rep.support, vec![3, 5]);
        assert_eq!(rep.sign_violations, 0);
        assert!(rep.sign_violation_max < 1e-7);
        assert!((rep.j_total - (rep.f_value + rep.nu_j)).abs() < 1e-15);
        assert!((rep.norm_u - 2.5).abs() < 1e-15);

        // u = 0: empty support, no violations for |λ| ≤ 1
        let rep0 = optimality_report(
            &p,
            &AtomicMeasure::zero(p.control_grid.clone()),
            &y,
            &lambda,
            None,
            1e-6,
        );
        assert!(rep0.support.is_empty());
        assert_eq!(rep0.sign_violations, 0);

        // Tikhonov value
        let rep_t = optimality_report(&p, &u, &y, &lambda, Some(10.0), 1e-6);
        assert!((rep_t.tikhonov - (4.0 + 0.25) / 20.0).abs() < 1e-15);
    }
}
