//! Self-contained derivative and adjointness checks, runnable on any
//! problem instance. Each check compares two independent routes to the
//! same quantity and reports pass/fail against a fixed tolerance.

use crate::delay::{adjoint_delay_source, delay_source, AdjointTrajectory, Prehistory, StateTrajectory};
use crate::fem::TimeGrid;
use crate::measures::{AtomicMeasure, ControlGrid, Measure};
use crate::optimality::{compute_lambda, grad_f_direction, tracking_cost};
use crate::pde::{
    l2q_diff, l2q_diff_adjoint, solve_adjoint, solve_linearized_adjoint, solve_linearized_state,
    solve_state, ProblemSpec,
};
use crate::ssn::jacobian_apply;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Small deterministic xorshift generator; the checks must not depend on
/// external randomness.
struct Rng(u64);

impl Rng {
    fn next(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }
    fn weights(&mut self, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| scale * self.next()).collect()
    }
}

/// Discrete K/K* adjointness on a companion uniform grid of the given
/// problem: `Σ_i Δs ⟨K[u]z(s_i), w(s_i)⟩_M = Σ_i Δs ⟨z(s_i), K*[u]w(s_i)⟩_M`
/// for `z` with zero prehistory and `w` vanishing from `T` on.
pub fn adjointness_check(p: &ProblemSpec, trials: usize, seed: u64) -> CheckResult {
    let nx = p.nx();
    let steps = p.n_steps().max(8);
    let tgrid = Arc::new(TimeGrid::uniform(p.tgrid.horizon(), steps).unwrap());
    let cgrid = ControlGrid::new(tgrid.nodes().to_vec()).unwrap();
    let dt = p.tgrid.horizon() / steps as f64;
    let mut rng = Rng(seed | 1);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let u = AtomicMeasure::new(cgrid.clone(), rng.weights(cgrid.len(), 2.0)).unwrap();
        let z_rows: Vec<Vec<f64>> = (0..=steps).map(|_| rng.weights(nx, 1.0)).collect();
        let mut w_rows: Vec<Vec<f64>> = (0..=steps).map(|_| rng.weights(nx, 1.0)).collect();
        w_rows[steps].iter_mut().for_each(|v| *v = 0.0);
        let z = StateTrajectory::from_rows(
            p.mesh.clone(),
            tgrid.clone(),
            Arc::new(Prehistory::zero()),
            z_rows,
        );
        let mut w = AdjointTrajectory::zeros(tgrid.clone(), nx);
        for i in 0..=steps {
            w.row_mut(i).copy_from_slice(&w_rows[i]);
        }
        let um = Measure::Atomic(u.clone());
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for i in 0..=steps {
            let t = tgrid.nodes()[i];
            let (c0, mut kz) = delay_source(&um, &z.view(), t);
            for (v, zi) in kz.iter_mut().zip(z.row(i)) {
                *v += c0 * zi;
            }
            lhs += dt * p.ops.l2_inner(&kz, w.row(i)).unwrap();
            let (c0w, mut kw) = adjoint_delay_source(&u, &w, t);
            for (v, wi) in kw.iter_mut().zip(w.row(i)) {
                *v += c0w * wi;
            }
            rhs += dt * p.ops.l2_inner(z.row(i), &kw).unwrap();
        }
        let scale = lhs.abs().max(rhs.abs()).max(1e-30);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    CheckResult {
        name: "K/K* pairing adjointness",
        passed: worst < 1e-12,
        detail: format!("worst relative mismatch {worst:.2e} over {trials} random measures"),
    }
}

/// Adjoint gradient vs the linearized-state route.
pub fn gradient_identity_check(p: &ProblemSpec, seed: u64) -> CheckResult {
    let n = p.control_grid.len();
    let mut rng = Rng(seed | 1);
    let u = AtomicMeasure::new(p.control_grid.clone(), rng.weights(n, 1.0)).unwrap();
    let v = AtomicMeasure::new(p.control_grid.clone(), rng.weights(n, 1.0)).unwrap();
    let run = || -> Result<f64, crate::pde::SolveError> {
        let y = solve_state(p, &Measure::Atomic(u.clone()))?;
        let phi = solve_adjoint(p, &u, &y)?;
        let z = solve_linearized_state(p, &u, &y, &v)?;
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
        let pairing = grad_f_direction(p, &y, &phi, &v);
        Ok((direct - pairing).abs() / direct.abs().max(1e-300))
    };
    match run() {
        Ok(rel) => CheckResult {
            name: "adjoint gradient identity",
            passed: rel < 1e-10,
            detail: format!("relative mismatch {rel:.2e}"),
        },
        Err(e) => CheckResult {
            name: "adjoint gradient identity",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Central finite differences of the tracking cost against the adjoint
/// derivative, `ρ = 1e−5`.
pub fn finite_difference_check(p: &ProblemSpec, directions: usize, seed: u64) -> CheckResult {
    let n = p.control_grid.len();
    let mut rng = Rng(seed | 1);
    let uw = rng.weights(n, 1.0);
    let u = AtomicMeasure::new(p.control_grid.clone(), uw.clone()).unwrap();
    let mut run = || -> Result<f64, crate::pde::SolveError> {
        let y = solve_state(p, &Measure::Atomic(u.clone()))?;
        let phi = solve_adjoint(p, &u, &y)?;
        let rho = 1e-5;
        let mut worst = 0.0f64;
        for _ in 0..directions {
            let vw = rng.weights(n, 1.0);
            let v = AtomicMeasure::new(p.control_grid.clone(), vw.clone()).unwrap();
            let exact = grad_f_direction(p, &y, &phi, &v);
            let f_at = |scale: f64| -> Result<f64, crate::pde::SolveError> {
                let w: Vec<f64> = uw.iter().zip(&vw).map(|(a, b)| a + scale * b).collect();
                let up = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
                Ok(tracking_cost(p, &solve_state(p, &Measure::Atomic(up))?))
            };
            let fd = (f_at(rho)? - f_at(-rho)?) / (2.0 * rho);
            worst = worst.max((exact - fd).abs() / fd.abs().max(1e-12));
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => CheckResult {
            name: "gradient vs central differences",
            passed: worst < 1e-5,
            detail: format!("worst relative error {worst:.2e} over {directions} directions"),
        },
        Err(e) => CheckResult {
            name: "gradient vs central differences",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Taylor remainders of the linearized state and adjoint solves over
/// `ρ ∈ {1e−2, 1e−3, 1e−4}`; both observed orders must reach 1.9.
pub fn taylor_checks(p: &ProblemSpec, seed: u64) -> Vec<CheckResult> {
    let n = p.control_grid.len();
    let mut rng = Rng(seed | 1);
    let uw = rng.weights(n, 1.0);
    let vw = rng.weights(n, 1.0);
    let u = AtomicMeasure::new(p.control_grid.clone(), uw.clone()).unwrap();
    let v = AtomicMeasure::new(p.control_grid.clone(), vw.clone()).unwrap();
    let run = || -> Result<(f64, f64, f64, f64), crate::pde::SolveError> {
        let y = solve_state(p, &Measure::Atomic(u.clone()))?;
        let phi = solve_adjoint(p, &u, &y)?;
        let z = solve_linearized_state(p, &u, &y, &v)?;
        let eta = solve_linearized_adjoint(p, &u, &y, &phi, &v, &z)?;
        let mut rs = Vec::new();
        let mut ra = Vec::new();
        for rho in [1e-2, 1e-3, 1e-4] {
            let w: Vec<f64> = uw.iter().zip(&vw).map(|(a, b)| a + rho * b).collect();
            let up = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
            let yp = solve_state(p, &Measure::Atomic(up.clone()))?;
            let phip = solve_adjoint(p, &up, &yp)?;
            let rows: Vec<Vec<f64>> = (0..=p.n_steps())
                .map(|i| {
                    y.row(i)
                        .iter()
                        .zip(z.row(i))
                        .map(|(a, b)| a + rho * b)
                        .collect()
                })
                .collect();
            let first = StateTrajectory::from_rows(
                p.mesh.clone(),
                p.tgrid.clone(),
                Arc::new(Prehistory::zero()),
                rows,
            );
            rs.push(l2q_diff(&p.ops, &p.tgrid, &yp, &first));
            let mut firsta = AdjointTrajectory::zeros(p.tgrid.clone(), p.nx());
            for i in 0..=p.n_steps() {
                for (j, val) in firsta.row_mut(i).iter_mut().enumerate() {
                    *val = phi.row(i)[j] + rho * eta.row(i)[j];
                }
            }
            ra.push(l2q_diff_adjoint(&p.ops, &p.tgrid, &phip, &firsta));
        }
        Ok((
            (rs[0] / rs[1]).log10(),
            (rs[1] / rs[2]).log10(),
            (ra[0] / ra[1]).log10(),
            (ra[1] / ra[2]).log10(),
        ))
    };
    match run() {
        Ok((s1, s2, a1, a2)) => vec![
            CheckResult {
                name: "linearized state Taylor order",
                passed: s1 >= 1.9 && s2 >= 1.9,
                detail: format!("observed orders {s1:.2}, {s2:.2}"),
            },
            CheckResult {
                name: "linearized adjoint Taylor order",
                passed: a1 >= 1.9 && a2 >= 1.9,
                detail: format!("observed orders {a1:.2}, {a2:.2}"),
            },
        ],
        Err(e) => vec![CheckResult {
            name: "linearized Taylor orders",
            passed: false,
            detail: e.to_string(),
        }],
    }
}

/// `j'(u; v)` against one-sided finite differences at `ρ = 1e−8`.
pub fn jprime_check(p: &ProblemSpec, trials: usize, seed: u64) -> CheckResult {
    let n = p.control_grid.len();
    let mut rng = Rng(seed | 1);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let uw: Vec<f64> = rng
            .weights(n, 2.0)
            .into_iter()
            .map(|x| if x.abs() < 0.4 { 0.0 } else { x })
            .collect();
        let vw = rng.weights(n, 2.0);
        let u = AtomicMeasure::new(p.control_grid.clone(), uw.clone()).unwrap();
        let v = AtomicMeasure::new(p.control_grid.clone(), vw.clone()).unwrap();
        let exact = u.directional_derivative_j(&v).unwrap();
        let rho = 1e-8;
        let j = |w: &[f64]| w.iter().map(|x| x.abs()).sum::<f64>();
        let pert: Vec<f64> = uw.iter().zip(&vw).map(|(a, b)| a + rho * b).collect();
        let fd = (j(&pert) - j(&uw)) / rho;
        worst = worst.max((exact - fd).abs());
    }
    CheckResult {
        name: "j' vs one-sided differences",
        passed: worst < 1e-6,
        detail: format!("worst absolute error {worst:.2e} over {trials} pairs"),
    }
}

/// `jacobian_apply` against finite differences of `compute_lambda`.
pub fn jacobian_check(p: &ProblemSpec, seed: u64) -> CheckResult {
    let n = p.control_grid.len();
    let mut rng = Rng(seed | 1);
    let uw = rng.weights(n, 1.0);
    let dw = rng.weights(n, 1.0);
    let c = 50.0;
    let run = || -> Result<f64, crate::pde::SolveError> {
        let u = AtomicMeasure::new(p.control_grid.clone(), uw.clone()).unwrap();
        let y = solve_state(p, &Measure::Atomic(u.clone()))?;
        let phi = solve_adjoint(p, &u, &y)?;
        let jd = jacobian_apply(p, &u, &y, &phi, c, &dw)?;
        let rho = 1e-5;
        let lam_at = |scale: f64| -> Result<Vec<f64>, crate::pde::SolveError> {
            let w: Vec<f64> = uw.iter().zip(&dw).map(|(a, b)| a + scale * b).collect();
            let up = AtomicMeasure::new(p.control_grid.clone(), w).unwrap();
            let yp = solve_state(p, &Measure::Atomic(up.clone()))?;
            let phip = solve_adjoint(p, &up, &yp)?;
            Ok(compute_lambda(p, &up, &yp, &phip, Some(c)))
        };
        let lp = lam_at(rho)?;
        let lm = lam_at(-rho)?;
        let mut worst = 0.0f64;
        for k in 0..n {
            let fd = (lp[k] - lm[k]) / (2.0 * rho);
            worst = worst.max((jd[k] - fd).abs() / fd.abs().max(1.0));
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => CheckResult {
            name: "lambda Jacobian vs differences",
            passed: worst < 1e-4,
            detail: format!("worst relative error {worst:.2e}"),
        },
        Err(e) => CheckResult {
            name: "lambda Jacobian vs differences",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Full battery used by the `gradcheck` subcommand.
pub fn run_all(p: &ProblemSpec) -> Vec<CheckResult> {
    let mut out = vec![
        adjointness_check(p, 20, 0x5eed_0001),
        gradient_identity_check(p, 0x5eed_0002),
        finite_difference_check(p, 3, 0x5eed_0003),
    ];
    out.extend(taylor_checks(p, 0x5eed_0004));
    out.push(jprime_check(p, 50, 0x5eed_0005));
    out.push(jacobian_check(p, 0x5eed_0006));
    out
}
