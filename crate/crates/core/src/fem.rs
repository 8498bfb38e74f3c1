//! 1-D continuous piecewise-linear finite elements with homogeneous
//! Neumann conditions, plus the time grids used by the parabolic solvers.
//!
//! Assembly produces the consistent (non-lumped) tridiagonal mass matrix
//! `M` and stiffness matrix `A`; `A 𝟙 = 0` holds exactly, so spatially
//! constant states are preserved by every solver step.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("space mesh needs >= 3 strictly increasing nodes")]
    InvalidMesh,
    #[error("time grid needs strictly increasing nodes starting at 0")]
    InvalidTimeGrid,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

/// Interval mesh `x_a = x_0 < … < x_{N-1} = x_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceMesh {
    nodes: Vec<f64>,
}

impl SpaceMesh {
    pub fn new(nodes: Vec<f64>) -> Result<Self, GridError> {
        if nodes.len() < 3 || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GridError::InvalidMesh);
        }
        Ok(Self { nodes })
    }

    pub fn uniform(xa: f64, xb: f64, n_nodes: usize) -> Result<Self, GridError> {
        if n_nodes < 3 || xb <= xa {
            return Err(GridError::InvalidMesh);
        }
        let nodes = (0..n_nodes)
            .map(|j| xa + (xb - xa) * j as f64 / (n_nodes - 1) as f64)
            .collect();
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn measure(&self) -> f64 {
        self.nodes.last().unwrap() - self.nodes.first().unwrap()
    }

    /// Nodal samples of `f`.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }
}

/// State-time nodes `0 = s_0 < … < s_{N_t} = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self, GridError> {
        if nodes.len() < 2 || nodes[0] != 0.0 || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GridError::InvalidTimeGrid);
        }
        Ok(Self { nodes })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self, GridError> {
        if steps == 0 || horizon <= 0.0 {
            return Err(GridError::InvalidTimeGrid);
        }
        let nodes = (0..=steps)
            .map(|i| horizon * i as f64 / steps as f64)
            .collect();
        Self::new(nodes)
    }

    /// Grid refined toward `t = 0`: `s_i = T (i/N)^power`. `power = 1` is
    /// uniform; larger powers concentrate nodes near the start, where delay
    /// kernels read the prehistory.
    pub fn graded(horizon: f64, steps: usize, power: f64) -> Result<Self, GridError> {
        if steps == 0 || horizon <= 0.0 || power < 1.0 {
            return Err(GridError::InvalidTimeGrid);
        }
        let nodes = (0..=steps)
            .map(|i| horizon * (i as f64 / steps as f64).powf(power))
            .collect();
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of steps `N_t` (= nodes − 1).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn step_size(&self, i: usize) -> f64 {
        self.nodes[i] - self.nodes[i - 1]
    }

    /// Largest interval index `j` with `s_j <= t` (clamped to the last
    /// interval start). Assumes `t >= 0`.
    pub fn interval_index(&self, t: f64) -> usize {
        debug_assert!(t >= 0.0);
        let k = self.nodes.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.nodes.len() - 2)
    }

    /// Index of the node closest to `t` (ties to the earlier node).
    pub fn nearest_node(&self, t: f64) -> usize {
        let j = self.interval_index(t.clamp(0.0, self.horizon()));
        let (a, b) = (self.nodes[j], self.nodes[j + 1]);
        if (t - a).abs() <= (b - t).abs() {
            j
        } else {
            j + 1
        }
    }

    /// Composite trapezoid weights for `∫_{s_ia}^{s_ib} · dt` over node range
    /// `ia..=ib`; zero elsewhere.
    pub fn trapezoid_weights(&self, ia: usize, ib: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.nodes.len()];
        for i in ia..ib {
            let h = self.nodes[i + 1] - self.nodes[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        w
    }
}

/// Symmetric tridiagonal matrix stored by diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    /// `off[j]` couples rows `j` and `j+1`.
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = self · x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.diag.len();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(y.len(), n);
        for j in 0..n {
            let mut v = self.diag[j] * x[j];
            if j > 0 {
                v += self.off[j - 1] * x[j - 1];
            }
            if j + 1 < n {
                v += self.off[j] * x[j + 1];
            }
            y[j] = v;
        }
    }

    pub fn mul_vec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.mul_vec(x, &mut y);
        y
    }
}

/// General (non-symmetric) tridiagonal system, solved by the Thomas
/// algorithm. Used for the per-step implicit solves.
#[derive(Debug, Clone)]
pub struct TridiagSystem {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TridiagSystem {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n - 1],
            diag: vec![0.0; n],
            upper: vec![0.0; n - 1],
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.diag.len();
        for j in 0..n {
            let mut v = self.diag[j] * x[j];
            if j > 0 {
                v += self.lower[j - 1] * x[j - 1];
            }
            if j + 1 < n {
                v += self.upper[j] * x[j + 1];
            }
            y[j] = v;
        }
    }

    /// Solve `self · x = rhs` in place; returns `false` on a (near-)singular
    /// pivot.
    pub fn solve(&self, rhs: &mut [f64], scratch: &mut Vec<f64>) -> bool {
        let n = self.diag.len();
        scratch.clear();
        scratch.resize(n, 0.0);
        let cprime = scratch;
        let mut denom = self.diag[0];
        if denom == 0.0 || !denom.is_finite() {
            return false;
        }
        cprime[0] = self.upper.first().copied().unwrap_or(0.0) / denom;
        rhs[0] /= denom;
        for j in 1..n {
            denom = self.diag[j] - self.lower[j - 1] * cprime[j - 1];
            if denom == 0.0 || !denom.is_finite() {
                return false;
            }
            if j + 1 < n {
                cprime[j] = self.upper[j] / denom;
            }
            rhs[j] = (rhs[j] - self.lower[j - 1] * rhs[j - 1]) / denom;
        }
        for j in (0..n - 1).rev() {
            rhs[j] -= cprime[j] * rhs[j + 1];
        }
        true
    }
}

/// Assembled P1 operators: consistent mass `M` and stiffness `A`.
#[derive(Debug, Clone)]
pub struct FemOperators {
    pub mass: Tridiagonal,
    pub stiffness: Tridiagonal,
    element_sizes: Vec<f64>,
    n: usize,
}

/// Standard P1 assembly on an interval mesh: per element of length `h`,
/// mass `(h/6)[[2,1],[1,2]]` and stiffness `(1/h)[[1,-1],[-1,1]]`.
pub fn assemble(mesh: &SpaceMesh) -> FemOperators {
    let n = mesh.len();
    let mut mass = Tridiagonal::zeros(n);
    let mut stiffness = Tridiagonal::zeros(n);
    let x = mesh.nodes();
    for e in 0..n - 1 {
        let h = x[e + 1] - x[e];
        mass.diag[e] += h / 3.0;
        mass.diag[e + 1] += h / 3.0;
        mass.off[e] += h / 6.0;
        stiffness.diag[e] += 1.0 / h;
        stiffness.diag[e + 1] += 1.0 / h;
        stiffness.off[e] -= 1.0 / h;
    }
    let sizes = (0..n - 1).map(|e| x[e + 1] - x[e]).collect();
    FemOperators {
        mass,
        stiffness,
        element_sizes: sizes,
        n,
    }
}

impl FemOperators {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `y = A x` computed element-wise in difference form, so constant
    /// vectors map to exactly zero (Neumann kernel, bit-exact).
    pub fn apply_stiffness(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (e, &h) in self.element_sizes.iter().enumerate() {
            let w = (x[e] - x[e + 1]) / h;
            y[e] += w;
            y[e + 1] -= w;
        }
    }

    /// `aᵀ M b`, the discrete `L²(Ω)` inner product.
    pub fn l2_inner(&self, a: &[f64], b: &[f64]) -> Result<f64, GridError> {
        if a.len() != self.n || b.len() != self.n {
            return Err(GridError::Dimension(a.len(), b.len()));
        }
        let mut mb = vec![0.0; self.n];
        self.mass.mul_vec(b, &mut mb);
        Ok(a.iter().zip(&mb).map(|(x, y)| x * y).sum())
    }

    pub fn l2_norm_sq(&self, a: &[f64]) -> f64 {
        self.l2_inner(a, a).expect("dimension checked by caller")
    }

    /// `aᵀ A a`, the discrete `∫ |∂_x a|²`.
    pub fn h1_semi_sq(&self, a: &[f64]) -> f64 {
        let mut sa = vec![0.0; self.n];
        self.apply_stiffness(a, &mut sa);
        a.iter().zip(&sa).map(|(x, y)| x * y).sum()
    }
}
