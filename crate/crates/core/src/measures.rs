//! Signed Borel measures on the control interval `[0, T_c]`.
//!
//! Controls are measures acting as kernels of the delay integral
//! `∫ y(x, t−s) du(s)`. Two concrete representations are supported:
//!
//! * [`AtomicMeasure`] — `Σ_k u_k δ_{t_k}` on a fixed [`ControlGrid`];
//!   the optimizer's unknown.
//! * [`GeneralMeasure`] — finitely many atoms plus piecewise-constant
//!   densities; covers every delay kernel used by the experiments
//!   (single/multiple Pyragas delays, uniform averaging windows).
//!
//! The grid projection [`project_onto_grid`] maps a general measure to
//! grid atoms carrying the mass of the half-open bins `I_k = (t_{k−1}, t_k]`
//! (`I_0 = {0}`), and is norm-nonincreasing.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("control grid needs at least 2 strictly increasing nodes starting at 0, got {0}")]
    InvalidGrid(String),
    #[error("expected one weight per grid node ({expected}), got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("measures live on different control grids")]
    GridMismatch,
    #[error("atom location {0} outside [0, {1}]")]
    AtomOutOfRange(f64, f64),
    #[error("density interval [{0}, {1}] degenerate or outside [0, {2}]")]
    BadDensityInterval(f64, f64, f64),
}

/// Strictly increasing control-time nodes `0 = t_0 < … < t_{N_τ} = T_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    nodes: Vec<f64>,
}

impl ControlGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self, MeasureError> {
        if nodes.len() < 2 {
            return Err(MeasureError::InvalidGrid(format!("{} nodes", nodes.len())));
        }
        if nodes[0] != 0.0 {
            return Err(MeasureError::InvalidGrid(format!("t_0 = {}", nodes[0])));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MeasureError::InvalidGrid("nodes not strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// Uniform grid with `intervals` equal steps on `[0, horizon]`.
    pub fn uniform(horizon: f64, intervals: usize) -> Result<Self, MeasureError> {
        if intervals == 0 || horizon <= 0.0 {
            return Err(MeasureError::InvalidGrid(format!(
                "horizon {horizon}, intervals {intervals}"
            )));
        }
        let nodes = (0..=intervals)
            .map(|k| horizon * k as f64 / intervals as f64)
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

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Largest spacing `τ = max_k (t_k − t_{k−1})`.
    pub fn max_spacing(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Bin index of the half-open partition `I_0 = {0}`, `I_k = (t_{k−1}, t_k]`.
    /// Returns `None` for locations outside `[0, T_c]`.
    pub fn bin_of(&self, location: f64) -> Option<usize> {
        if location < 0.0 || location > self.horizon() {
            return None;
        }
        if location == 0.0 {
            return Some(0);
        }
        // partition_point: first k with t_k >= location, so location ∈ (t_{k-1}, t_k].
        Some(self.nodes.partition_point(|&t| t < location))
    }
}

/// Discrete control `Σ_k u_k δ_{t_k}`; one weight per grid node, zeros kept.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    grid: ControlGrid,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(grid: ControlGrid, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if weights.len() != grid.len() {
            return Err(MeasureError::WeightCount {
                expected: grid.len(),
                got: weights.len(),
            });
        }
        Ok(Self { grid, weights })
    }

    pub fn zero(grid: ControlGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            weights: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &ControlGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Mass of the atom at `s = 0` (the part treated implicitly by the solvers).
    pub fn mass_at_zero(&self) -> f64 {
        self.weights[0]
    }

    /// `(t_k, u_k)` pairs with `t_k > 0` and `u_k ≠ 0`.
    pub fn positive_time_atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid
            .nodes()
            .iter()
            .zip(self.weights.iter())
            .skip(1)
            .filter(|(_, &w)| w != 0.0)
            .map(|(&t, &w)| (t, w))
    }

    pub fn total_variation(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// Jordan decomposition `u = u⁺ − u⁻` with `u⁺_k u⁻_k = 0`.
    pub fn jordan_decompose(&self) -> (AtomicMeasure, AtomicMeasure) {
        let pos = self.weights.iter().map(|&w| w.max(0.0)).collect();
        let neg = self.weights.iter().map(|&w| (-w).max(0.0)).collect();
        (
            Self {
                grid: self.grid.clone(),
                weights: pos,
            },
            Self {
                grid: self.grid.clone(),
                weights: neg,
            },
        )
    }

    /// Directional derivative of `j(u) = ‖u‖_ℳ` at `u` in direction `v`
    /// (both on the same grid):
    /// `j'(u; v) = Σ_{u_k ≠ 0} sign(u_k) v_k + Σ_{u_k = 0} |v_k|`.
    pub fn directional_derivative_j(&self, v: &AtomicMeasure) -> Result<f64, MeasureError> {
        if self.grid != v.grid {
            return Err(MeasureError::GridMismatch);
        }
        Ok(self
            .weights
            .iter()
            .zip(v.weights.iter())
            .map(|(&u, &w)| if u != 0.0 { u.signum() * w } else { w.abs() })
            .sum())
    }
}

/// Atoms plus piecewise-constant densities on `[0, T_c]`.
///
/// Atoms at the same location are merged on construction and exact zeros
/// dropped; density pieces must be non-degenerate. `horizon` fixes the
/// interval the measure lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralMeasure {
    horizon: f64,
    atoms: Vec<(f64, f64)>,
    /// `(a, b, value)`: density `value` per unit time on `[a, b]`.
    density_pieces: Vec<(f64, f64, f64)>,
}

impl GeneralMeasure {
    pub fn new(
        horizon: f64,
        atoms: Vec<(f64, f64)>,
        density_pieces: Vec<(f64, f64, f64)>,
    ) -> Result<Self, MeasureError> {
        for &(loc, _) in &atoms {
            if !(0.0..=horizon).contains(&loc) {
                return Err(MeasureError::AtomOutOfRange(loc, horizon));
            }
        }
        for &(a, b, _) in &density_pieces {
            if !(a < b && a >= 0.0 && b <= horizon) {
                return Err(MeasureError::BadDensityInterval(a, b, horizon));
            }
        }
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        let mut sorted = atoms;
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (loc, w) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == loc => last.1 += w,
                _ => merged.push((loc, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        Ok(Self {
            horizon,
            atoms: merged,
            density_pieces,
        })
    }

    /// Single Dirac atom `w δ_loc`.
    pub fn dirac(horizon: f64, loc: f64, w: f64) -> Result<Self, MeasureError> {
        Self::new(horizon, vec![(loc, w)], vec![])
    }

    /// Pyragas kernel `κ(δ_τ − δ_0)`, i.e. feedback `κ(y(t−τ) − y(t))`.
    pub fn pyragas(horizon: f64, kappa: f64, tau: f64) -> Result<Self, MeasureError> {
        Self::new(horizon, vec![(tau, kappa), (0.0, -kappa)], vec![])
    }

    /// Nonlocal Pyragas kernel `κ(mean over [a,b] − δ_0)`: a uniform density
    /// of total mass `κ` on `[a, b]` minus `κ δ_0`.
    pub fn averaging_window(
        horizon: f64,
        kappa: f64,
        a: f64,
        b: f64,
    ) -> Result<Self, MeasureError> {
        Self::new(
            horizon,
            vec![(0.0, -kappa)],
            vec![(a, b, kappa / (b - a))],
        )
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn density_pieces(&self) -> &[(f64, f64, f64)] {
        &self.density_pieces
    }

    pub fn mass_at_zero(&self) -> f64 {
        self.atoms
            .iter()
            .find(|&&(loc, _)| loc == 0.0)
            .map_or(0.0, |&(_, w)| w)
    }

    pub fn positive_time_atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms
            .iter()
            .filter(|&&(loc, _)| loc > 0.0)
            .map(|&(loc, w)| (loc, w))
    }

    pub fn total_variation(&self) -> f64 {
        let atom_part: f64 = self.atoms.iter().map(|(_, w)| w.abs()).sum();
        let density_part: f64 = self
            .density_pieces
            .iter()
            .map(|&(a, b, v)| v.abs() * (b - a))
            .sum();
        atom_part + density_part
    }
}

/// Total variation `‖m‖_ℳ = |m|([0, T_c])` for either representation.
pub fn total_variation(m: &Measure) -> f64 {
    match m {
        Measure::Atomic(u) => u.total_variation(),
        Measure::General(u) => u.total_variation(),
    }
}

/// Either control representation, for operations accepting both.
#[derive(Debug, Clone)]
pub enum Measure {
    Atomic(AtomicMeasure),
    General(GeneralMeasure),
}

impl Measure {
    pub fn mass_at_zero(&self) -> f64 {
        match self {
            Measure::Atomic(u) => u.mass_at_zero(),
            Measure::General(u) => u.mass_at_zero(),
        }
    }
}

impl From<AtomicMeasure> for Measure {
    fn from(u: AtomicMeasure) -> Self {
        Measure::Atomic(u)
    }
}

impl From<GeneralMeasure> for Measure {
    fn from(u: GeneralMeasure) -> Self {
        Measure::General(u)
    }
}

/// Grid projection `Λ_τ m = Σ_k m(I_k) δ_{t_k}` with `I_k = (t_{k−1}, t_k]`,
/// `I_0 = {0}`. Atom bins use exact comparisons on grid nodes; densities
/// contribute `value · |I_k ∩ [a, b]|`.
pub fn project_onto_grid(
    m: &GeneralMeasure,
    grid: &ControlGrid,
) -> Result<AtomicMeasure, MeasureError> {
    let mut weights = vec![0.0; grid.len()];
    for &(loc, w) in m.atoms() {
        let k = grid
            .bin_of(loc)
            .ok_or(MeasureError::AtomOutOfRange(loc, grid.horizon()))?;
        weights[k] += w;
    }
    let nodes = grid.nodes();
    for &(a, b, v) in m.density_pieces() {
        if b > grid.horizon() {
            return Err(MeasureError::BadDensityInterval(a, b, grid.horizon()));
        }
        for k in 1..nodes.len() {
            let overlap = (b.min(nodes[k]) - a.max(nodes[k - 1])).max(0.0);
            weights[k] += v * overlap;
        }
    }
    AtomicMeasure::new(grid.clone(), weights)
}

/// `∫ y dm` for a scalar test function (used by the weak-* consistency checks).
pub fn integrate_against(m: &GeneralMeasure, y: impl Fn(f64) -> f64) -> f64 {
    let atom_part: f64 = m.atoms().iter().map(|&(loc, w)| w * y(loc)).sum();
    // Densities are integrated by fine composite Simpson; exact enough for
    // the Lipschitz bounds the callers assert.
    let mut density_part = 0.0;
    for &(a, b, v) in m.density_pieces() {
        let n = 2048;
        let h = (b - a) / n as f64;
        let mut s = y(a) + y(b);
        for j in 1..n {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            s += w * y(a + j as f64 * h);
        }
        density_part += v * s * h / 3.0;
    }
    atom_part + density_part
}

/// `∫ y du_τ` for an atomic measure.
pub fn integrate_atomic(u: &AtomicMeasure, y: impl Fn(f64) -> f64) -> f64 {
    u.grid()
        .nodes()
        .iter()
        .zip(u.weights())
        .map(|(&t, &w)| w * y(t))
        .sum()
}
