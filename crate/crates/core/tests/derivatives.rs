//! Consistency of the adjoint, linearized and finite-difference routes to
//! the same derivatives. These identities hold to rounding (not just to
//! discretization error) because the backward sweeps transpose the exact
//! forward stencils.

use delay_control::delay::Prehistory;
use delay_control::fem::{SpaceMesh, TimeGrid};
use delay_control::measures::{AtomicMeasure, ControlGrid, Measure};
use delay_control::optimality::{compute_lambda, grad_f_direction, tracking_cost};
use delay_control::pde::{
    l2q_diff, l2q_diff_adjoint, solve_adjoint, solve_linearized_adjoint, solve_linearized_state,
    solve_state, ProblemSpec, Target,
};
use delay_control::reaction::ReactionModel;
use delay_control::ssn::jacobian_apply;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn cubic_spec(nx: usize, nt: usize, control_intervals: usize, window: (f64, f64)) -> ProblemSpec {
    ProblemSpec::new(
        Arc::new(SpaceMesh::uniform(0.0, 1.0, nx).unwrap()),
        Arc::new(TimeGrid::uniform(1.0, nt).unwrap()),
        ReactionModel::cubic(1.0 / 3.0, -(3f64.sqrt()), 0.0, 3f64.sqrt()).unwrap(),
        Arc::new(Prehistory::PolynomialSineSq {
            coeffs: vec![0.2, 0.2],
        }),
        Target::Function(Arc::new(|x, t| {
            0.3 * (2.0 * std::f64::consts::PI * x).cos() * (1.0 + t)
        })),
        1e-2,
        window,
        ControlGrid::uniform(1.0, control_intervals).unwrap(),
    )
    .unwrap()
}

/// Nonuniform grids and a control grid that does NOT align with the time
/// grid: the identity must still hold exactly because the pairing reuses
/// the clamped per-step stencils.
fn awkward_spec() -> ProblemSpec {
    let tnodes: Vec<f64> = vec![
        0.0, 0.03, 0.09, 0.13, 0.22, 0.3, 0.37, 0.45, 0.52, 0.61, 0.68, 0.77, 0.83, 0.9, 1.0,
    ];
    ProblemSpec::new(
        Arc::new(SpaceMesh::new(vec![0.0, 0.1, 0.25, 0.33, 0.51, 0.78, 0.9, 1.0]).unwrap()),
        Arc::new(TimeGrid::new(tnodes).unwrap()),
        ReactionModel::cubic(0.7, -0.9, 0.1, 1.3).unwrap(),
        Arc::new(Prehistory::Custom(Arc::new(|x, t| {
            0.4 * (1.0 + t) * (3.0 * x).cos()
        }))),
        Target::Constant(0.1),
        2e-2,
        (0.2, 0.9),
        ControlGrid::new(vec![0.0, 0.17, 0.341, 0.55, 0.823, 1.0]).unwrap(),
    )
    .unwrap()
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (rng.gen::<f64>() - 0.5)).collect()
}

#[test]
fn gradient_identity_tracking_vs_adjoint_pairing() {
    // Σ_i ω_i ⟨y_i − y_d, z_i⟩_M  ==  F'(u)v via the adjoint pairing
    for (label, p) in [
        ("aligned", cubic_spec(17, 32, 16, (0.0, 1.0))),
        ("windowed", cubic_spec(13, 24, 8, (0.4, 1.0))),
        ("awkward", awkward_spec()),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = p.control_grid.len();
        let u = AtomicMeasure::new(p.control_grid.clone(), random_weights(&mut rng, n, 2.0))
            .unwrap();
        let v = AtomicMeasure::new(p.control_grid.clone(), random_weights(&mut rng, n, 1.0))
            .unwrap();
        let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
        let phi = solve_adjoint(&p, &u, &y).unwrap();
        let z = solve_linearized_state(&p, &u, &y, &v).unwrap();

        // direct route: derivative of the discrete tracking cost
        let mut direct = 0.0;
        let mut d = vec![0.0; p.nx()];
        for i in 0..=p.n_steps() {
            let w = p.window_weight(i);
            if w == 0.0 {
                continue;
            }
            p.target_row(i, &mut d);
            let e: Vec<f64> = y.row(i).iter().zip(&d).map(|(a, b)| a - b).collect();
            direct += w * p.ops.l2_inner(&e, z.row(i)).unwrap();
        }

        let adjoint_route = grad_f_direction(&p, &y, &phi, &v);
        let rel = (direct - adjoint_route).abs() / direct.abs().max(1e-300);
        assert!(
            rel < 1e-10,
            "{label}: direct {direct:e} vs adjoint {adjoint_route:e} (rel {rel:e})"
        );
    }
}

#[test]
fn lambda_equals_linearized_derivative_per_node() {
    // −ν λ_k == F'(u) δ_{t_k} computed through solve_linearized_state
    for (label, p) in [
        ("aligned", cubic_spec(13, 16, 8, (0.0, 1.0))),
        ("awkward", awkward_spec()),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = p.control_grid.len();
        let u = AtomicMeasure::new(p.control_grid.clone(), random_weights(&mut rng, n, 1.5))
            .unwrap();
        let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
        let phi = solve_adjoint(&p, &u, &y).unwrap();
        let lambda = compute_lambda(&p, &u, &y, &phi, None);
        for k in 0..n {
            let mut ek = vec![0.0; n];
            ek[k] = 1.0;
            let v = AtomicMeasure::new(p.control_grid.clone(), ek).unwrap();
            let z = solve_linearized_state(&p, &u, &y, &v).unwrap();
            let mut direct = 0.0;
            let mut d = vec![0.0; p.nx()];
            for i in 0..=p.n_steps() {
                let w = p.window_weight(i);
                if w == 0.0 {
                    continue;
                }
                p.target_row(i, &mut d);
                let e: Vec<f64> = y.row(i).iter().zip(&d).map(|(a, b)| a - b).collect();
                direct += w * p.ops.l2_inner(&e, z.row(i)).unwrap();
            }
            let from_lambda = -p.nu * lambda[k];
            let scale = direct.abs().max(1e-12);
            assert!(
                (direct - from_lambda).abs() / scale < 1e-10,
                "{label} node {k}: {direct:e} vs {from_lambda:e}"
            );
        }
    }
}

#[test]
fn gradient_matches_central_finite_differences() {
    let p = cubic_spec(17, 32, 16, (0.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = p.control_grid.len();
    let uw = random_weights(&mut rng, n, 2.0);
    let u = AtomicMeasure::new(p.control_grid.clone(), uw.clone()).unwrap();
    let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
    let phi = solve_adjoint(&p, &u, &y).unwrap();
    let rho = 1e-5;
    for trial in 0..5 {
        let vw = random_weights(&mut rng, n, 1.0);
        let v = AtomicMeasure::new(p.control_grid.clone(), vw.clone()).unwrap();
        let exact = grad_f_direction(&p, &y, &phi, &v);
        let f_at = |scale: f64| {
            let w: Vec<f64> = uw.iter().zip(&vw).map(|(a, b)| a + scale * b).collect();
            let up = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
            let yp = solve_state(&p, &Measure::Atomic(up)).unwrap();
            tracking_cost(&p, &yp)
        };
        let fd = (f_at(rho) - f_at(-rho)) / (2.0 * rho);
        let rel = (exact - fd).abs() / fd.abs().max(1e-12);
        assert!(rel < 1e-5, "trial {trial}: exact {exact:e} vs fd {fd:e} (rel {rel:e})");
    }
}

#[test]
fn linearized_state_taylor_second_order() {
    let p = cubic_spec(17, 32, 16, (0.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = p.control_grid.len();
    let uw = random_weights(&mut rng, n, 1.0);
    let vw = random_weights(&mut rng, n, 1.0);
    let u = AtomicMeasure::new(p.control_grid.clone(), uw.clone()).unwrap();
    let v = AtomicMeasure::new(p.control_grid.clone(), vw.clone()).unwrap();
    let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
    let z = solve_linearized_state(&p, &u, &y, &v).unwrap();

    let mut remainders = Vec::new();
    for rho in [1e-2, 1e-3, 1e-4] {
        let w: Vec<f64> = uw.iter().zip(&vw).map(|(a, b)| a + rho * b).collect();
        let up = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
        let yp = solve_state(&p, &Measure::Atomic(up)).unwrap();
        // ‖y(u+ρv) − y(u) − ρ z‖_{L²(Q)}
        let mut shifted_rows = Vec::with_capacity(p.n_steps() + 1);
        for i in 0..=p.n_steps() {
            let row: Vec<f64> = y
                .row(i)
                .iter()
                .zip(z.row(i))
                .map(|(a, b)| a + rho * b)
                .collect();
            shifted_rows.push(row);
        }
        let first_order = delay_control::delay::StateTrajectory::from_rows(
            p.mesh.clone(),
            p.tgrid.clone(),
            Arc::new(Prehistory::zero()),
            shifted_rows,
        );
        remainders.push(l2q_diff(&p.ops, &p.tgrid, &yp, &first_order));
    }
    let order1 = (remainders[0] / remainders[1]).log10();
    let order2 = (remainders[1] / remainders[2]).log10();
    assert!(
        order1 >= 1.9 && order2 >= 1.9,
        "observed orders {order1:.3}, {order2:.3} (remainders {remainders:?})"
    );
}

#[test]
fn linearized_adjoint_taylor_second_order() {
    let p = cubic_spec(13, 24, 12, (0.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = p.control_grid.len();
    let uw = random_weights(&mut rng, n, 1.0);
    let vw = random_weights(&mut rng, n, 1.0);
    let u = AtomicMeasure::new(p.control_grid.clone(), uw.clone()).unwrap();
    let v = AtomicMeasure::new(p.control_grid.clone(), vw.clone()).unwrap();
    let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
    let phi = solve_adjoint(&p, &u, &y).unwrap();
    let z = solve_linearized_state(&p, &u, &y, &v).unwrap();
    let eta = solve_linearized_adjoint(&p, &u, &y, &phi, &v, &z).unwrap();

    let mut remainders = Vec::new();
    for rho in [1e-2, 1e-3, 1e-4] {
        let w: Vec<f64> = uw.iter().zip(&vw).map(|(a, b)| a + rho * b).collect();
        let up = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
        let yp = solve_state(&p, &Measure::Atomic(up.clone())).unwrap();
        let phip = solve_adjoint(&p, &up, &yp).unwrap();
        let mut first = delay_control::delay::AdjointTrajectory::zeros(p.tgrid.clone(), p.nx());
        for i in 0..=p.n_steps() {
            for (j, val) in first.row_mut(i).iter_mut().enumerate() {
                *val = phi.row(i)[j] + rho * eta.row(i)[j];
            }
        }
        remainders.push(l2q_diff_adjoint(&p.ops, &p.tgrid, &phip, &first));
    }
    let order1 = (remainders[0] / remainders[1]).log10();
    let order2 = (remainders[1] / remainders[2]).log10();
    assert!(
        order1 >= 1.9 && order2 >= 1.9,
        "observed orders {order1:.3}, {order2:.3} (remainders {remainders:?})"
    );
}

#[test]
fn jacobian_apply_is_derivative_of_lambda() {
    let p = cubic_spec(17, 32, 16, (0.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = p.control_grid.len();
    let uw = random_weights(&mut rng, n, 1.0);
    let dw = random_weights(&mut rng, n, 1.0);
    let c = 50.0;
    let u = AtomicMeasure::new(p.control_grid.clone(), uw.clone()).unwrap();
    let y = solve_state(&p, &Measure::Atomic(u.clone())).unwrap();
    let phi = solve_adjoint(&p, &u, &y).unwrap();

    // zero direction maps to zero, and the map is linear
    let zero = jacobian_apply(&p, &u, &y, &phi, c, &vec![0.0; n]).unwrap();
    assert!(zero.iter().all(|&x| x == 0.0));
    let jd = jacobian_apply(&p, &u, &y, &phi, c, &dw).unwrap();
    let dw2: Vec<f64> = dw.iter().map(|x| 2.0 * x).collect();
    let jd2 = jacobian_apply(&p, &u, &y, &phi, c, &dw2).unwrap();
    for (a, b) in jd.iter().zip(&jd2) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-8));
    }

    // finite differences of compute_lambda
    let rho = 1e-5;
    let lam_at = |scale: f64| {
        let w: Vec<f64> = uw.iter().zip(&dw).map(|(a, b)| a + scale * b).collect();
        let up = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
        let yp = solve_state(&p, &Measure::Atomic(up.clone())).unwrap();
        let phip = solve_adjoint(&p, &up, &yp).unwrap();
        compute_lambda(&p, &up, &yp, &phip, Some(c))
    };
    let lp = lam_at(rho);
    let lm = lam_at(-rho);
    for k in 0..n {
        let fd = (lp[k] - lm[k]) / (2.0 * rho);
        let rel = (jd[k] - fd).abs() / fd.abs().max(1.0);
        assert!(rel < 1e-4, "node {k}: jac {:e} vs fd {fd:e}", jd[k]);
    }
}
