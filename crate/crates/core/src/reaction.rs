//! Polynomial reaction terms `R(y)` with the derivatives needed by the
//! linearized and adjoint equations.
//!
//! Admissible models have `R'` bounded below: odd degree with positive
//! leading coefficient, or affine/constant. The bistable cubic
//! `R(y) = ρ (y − y_1)(y − y_2)(y − y_3)` is the family used by all
//! experiment presets.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReactionError {
    #[error("R' must be bounded below: need odd degree with positive leading coefficient, or an affine model")]
    UnboundedDerivative,
    #[error("cubic constructor needs rho > 0 and y1 < y2 < y3")]
    BadCubic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionModel {
    /// `a_0 … a_K`, value `Σ a_i y^i`; trailing zeros trimmed.
    coeffs: Vec<f64>,
}

impl ReactionModel {
    pub fn from_coefficients(mut coeffs: Vec<f64>) -> Result<Self, ReactionError> {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        let degree = coeffs.len() - 1;
        let ok = degree <= 1 || (degree % 2 == 1 && *coeffs.last().unwrap() > 0.0);
        if !ok {
            return Err(ReactionError::UnboundedDerivative);
        }
        Ok(Self { coeffs })
    }

    /// `R(y) = ρ (y − y1)(y − y2)(y − y3)` with `ρ > 0`, `y1 < y2 < y3`.
    /// `y1`, `y3` are the stable fixed points, `y2` the unstable one.
    pub fn cubic(rho: f64, y1: f64, y2: f64, y3: f64) -> Result<Self, ReactionError> {
        if !(rho > 0.0 && y1 < y2 && y2 < y3) {
            return Err(ReactionError::BadCubic);
        }
        let e1 = y1 + y2 + y3;
        let e2 = y1 * y2 + y1 * y3 + y2 * y3;
        let e3 = y1 * y2 * y3;
        Ok(Self {
            coeffs: vec![-rho * e3, rho * e2, -rho * e1, rho],
        })
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    /// `R(y) = slope · y` (used by linear test problems).
    pub fn linear(slope: f64) -> Self {
        Self {
            coeffs: vec![0.0, slope],
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `R`, `R'` or `R''` at `y`, by Horner evaluation of the differentiated
    /// coefficients.
    pub fn eval(&self, y: f64, order: u8) -> f64 {
        debug_assert!(order <= 2);
        let n = self.coeffs.len();
        let mut acc = 0.0;
        for i in (order as usize..n).rev() {
            let mut c = self.coeffs[i];
            for d in 0..order as usize {
                c *= (i - d) as f64;
            }
            acc = acc * y + c;
        }
        acc
    }

    pub fn value(&self, y: f64) -> f64 {
        self.eval(y, 0)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.eval(y, 1)
    }

    pub fn second_derivative(&self, y: f64) -> f64 {
        self.eval(y, 2)
    }

    pub fn is_linear(&self) -> bool {
        self.coeffs.len() <= 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_roots_are_roots() {
        let r = ReactionModel::cubic(1.0 / 3.0, -(3f64.sqrt()), 0.0, 3f64.sqrt()).unwrap();
        assert!(r.value(0.0).abs() < 1e-15);
        assert!(r.value(3f64.sqrt()).abs() < 1e-14);
        // expanded form is (y^3 - 3y)/3
        assert!((r.value(2.0) - (8.0 - 6.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cubic_derivative_at_simple_root() {
        // at a simple root, R' equals rho times the product of remaining factors
        let r = ReactionModel::cubic(1.0, 0.0, 0.25, 1.0).unwrap();
        assert!(r.value(1.0).abs() < 1e-15);
        assert!((r.derivative(1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..30 {
            let (mut a, mut b, mut c) = (rng(), rng(), rng());
            // sort to satisfy y1 < y2 < y3, nudging collisions apart
            let mut ys = [a, b, c];
            ys.sort_by(f64::total_cmp);
            a = ys[0];
            b = ys[1].max(a + 0.1);
            c = ys[2].max(b + 0.1);
            let rho = rng().abs() + 0.1;
            let r = ReactionModel::cubic(rho, a, b, c).unwrap();
            let y = rng();
            let h = 1e-6;
            let fd = (r.value(y + h) - r.value(y - h)) / (2.0 * h);
            let exact = r.derivative(y);
            let scale = exact.abs().max(1.0);
            assert!((fd - exact).abs() / scale < 1e-6, "fd {fd} vs {exact}");
            let fd2 = (r.derivative(y + h) - r.derivative(y - h)) / (2.0 * h);
            let exact2 = r.second_derivative(y);
            assert!((fd2 - exact2).abs() / exact2.abs().max(1.0) < 1e-5);
        }
    }

    #[test]
    fn derivative_bounded_below_on_sample() {
        // R' of a cubic rho(y-y1)(y-y2)(y-y3) is an upward parabola; its
        // analytic minimum is at the vertex.
        let (rho, y1, y2, y3) = (0.7, -1.5, 0.2, 2.0);
        let r = ReactionModel::cubic(rho, y1, y2, y3).unwrap();
        let e1 = y1 + y2 + y3;
        let e2 = y1 * y2 + y1 * y3 + y2 * y3;
        // R' = rho(3y^2 - 2 e1 y + e2), vertex y* = e1/3
        let ystar = e1 / 3.0;
        let analytic_min = rho * (3.0 * ystar * ystar - 2.0 * e1 * ystar + e2);
        let reach = 10.0 * y3.abs().max(y1.abs());
        let mut sample_min = f64::INFINITY;
        let n = 20_000;
        for i in 0..=n {
            let y = -reach + 2.0 * reach * i as f64 / n as f64;
            sample_min = sample_min.min(r.derivative(y));
        }
        assert!(sample_min >= analytic_min - 1e-9);
        assert!((sample_min - analytic_min).abs() < 1e-4);
    }

    #[test]
    fn invalid_models_rejected() {
        assert_eq!(
            ReactionModel::from_coefficients(vec![0.0, 0.0, 1.0]),
            Err(ReactionError::UnboundedDerivative)
        );
        assert_eq!(
            ReactionModel::from_coefficients(vec![0.0, 1.0, 0.0, -2.0]),
            Err(ReactionError::UnboundedDerivative)
        );
        assert!(ReactionModel::from_coefficients(vec![3.0]).is_ok());
        assert!(ReactionModel::from_coefficients(vec![3.0, -5.0]).is_ok());
        assert_eq!(
            ReactionModel::cubic(-1.0, 0.0, 1.0, 2.0),
            Err(ReactionError::BadCubic)
        );
        assert_eq!(
            ReactionModel::cubic(1.0, 0.0, 0.0, 2.0),
            Err(ReactionError::BadCubic)
        );
    }

    #[test]
    fn quintic_accepted_and_evaluated() {
        let r = ReactionModel::from_coefficients(vec![1.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(r.value(1.0), 3.0);
        assert_eq!(r.derivative(1.0), 10.0);
        assert_eq!(r.second_derivative(1.0), 40.0);
    }
}
