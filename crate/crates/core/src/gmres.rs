//! Restarted GMRES for the matrix-free Newton systems of the optimizer.
//!
//! The operators are small (one row per active control node) but each
//! application costs two PDE sweeps, so the full Arnoldi basis is kept up
//! to the restart length and re-orthogonalized once for stability.

/// Matrix-free linear operator `y = A x`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct GmresSettings {
    /// Relative residual tolerance on `‖b − Ax‖ / ‖b‖`.
    pub tol: f64,
    pub restart: usize,
    pub max_iters: usize,
}

impl Default for GmresSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            restart: 50,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b`, overwriting `x` (initial guess). Deterministic:
/// no randomized components, fixed restart cycle.
pub fn gmres(op: &dyn LinearOperator, b: &[f64], x: &mut [f64], cfg: &GmresSettings) -> GmresOutcome {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return GmresOutcome {
            converged: true,
            iterations: 0,
            residual: 0.0,
        };
    }
    let tol_abs = cfg.tol * bnorm;
    let m = cfg.restart.min(n).max(1);
    let mut total_iters = 0;
    let mut r = vec![0.0; n];
    let mut ax = vec![0.0; n];

    loop {
        op.apply(x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        let beta = norm(&r);
        if beta <= tol_abs {
            return GmresOutcome {
                converged: true,
                iterations: total_iters,
                residual: beta / bnorm,
            };
        }
        if total_iters >= cfg.max_iters {
            return GmresOutcome {
                converged: false,
                iterations: total_iters,
                residual: beta / bnorm,
            };
        }

        // Arnoldi with modified Gram-Schmidt + one re-orthogonalization pass
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0f64; m]; m + 1];
        // Givens rotations
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_used = 0;

        for k in 0..m {
            if total_iters >= cfg.max_iters {
                break;
            }
            total_iters += 1;
            let mut w = vec![0.0; n];
            op.apply(&basis[k], &mut w);
            for j in 0..=k {
                let hjk = dot(&w, &basis[j]);
                h[j][k] = hjk;
                for i in 0..n {
                    w[i] -= hjk * basis[j][i];
                }
            }
            for j in 0..=k {
                let corr = dot(&w, &basis[j]);
                h[j][k] += corr;
                for i in 0..n {
                    w[i] -= corr * basis[j][i];
                }
            }
            let wnorm = norm(&w);
            h[k + 1][k] = wnorm;
            if wnorm > 0.0 {
                basis.push(w.iter().map(|v| v / wnorm).collect());
            } else {
                basis.push(vec![0.0; n]);
            }

            // apply previous rotations to the new column
            for j in 0..k {
                let tmp = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = tmp;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                k_used = k + 1;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() <= tol_abs || wnorm == 0.0 {
                break;
            }
        }

        // back substitution for the least-squares coefficients
        let mut yk = vec![0.0f64; k_used];
        for j in (0..k_used).rev() {
            let mut s = g[j];
            for l in j + 1..k_used {
                s -= h[j][l] * yk[l];
            }
            yk[j] = s / h[j][j];
        }
        for j in 0..k_used {
            for i in 0..n {
                x[i] += yk[j] * basis[j][i];
            }
        }
        if k_used == 0 {
            // no progress possible
            return GmresOutcome {
                converged: false,
                iterations: total_iters,
                residual: beta / bnorm,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense(Vec<Vec<f64>>);

    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for (i, row) in self.0.iter().enumerate() {
                y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
    }

    fn random_spd_ish(n: usize, seed: u64) -> Dense {
        let mut state = seed;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rng() * 0.5;
                if i == j {
                    *v += n as f64;
                }
            }
        }
        Dense(a)
    }

    #[test]
    fn solves_diagonally_dominant_system() {
        let n = 30;
        let a = random_spd_ish(n, 0xabcdef12345);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut b = vec![0.0; n];
        a.apply(&x_true, &mut b);
        let mut x = vec![0.0; n];
        let out = gmres(&a, &b, &mut x, &GmresSettings::default());
        assert!(out.converged);
        for (g, w) in x.iter().zip(&x_true) {
            assert!((g - w).abs() < 1e-7);
        }
    }

    #[test]
    fn restart_path_still_converges() {
        let n = 25;
        let a = random_spd_ish(n, 99);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let out = gmres(
            &a,
            &b,
            &mut x,
            &GmresSettings {
                tol: 1e-10,
                restart: 5,
                max_iters: 500,
            },
        );
        assert!(out.converged, "residual {}", out.residual);
        let mut ax = vec![0.0; n];
        a.apply(&x, &mut ax);
        let res: f64 = ax
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        assert!(res < 1e-9 * (n as f64).sqrt());
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = random_spd_ish(4, 7);
        let b = vec![0.0; 4];
        let mut x = vec![1.0; 4];
        let out = gmres(&a, &b, &mut x, &GmresSettings::default());
        assert!(out.converged);
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
