//! Evaluation of the delay term `∫_{[0,T]} y(x, t−s) du(s)` on discrete
//! trajectories, and of its adjoint counterpart
//! `(K*[u]w)(x,t) = ∫_{[0,T−t)} w(x, t+s) du(s)`.
//!
//! The delay integral splits into the mass of the atom at `s = 0`, which
//! multiplies the *current* state value and is treated implicitly by the
//! time steppers, and an explicit part collecting all `s > 0`
//! contributions. Lookups at `t − s < 0` read the prescribed prehistory,
//! which realizes the source `g_u` covering the initial data.
//!
//! Time lookups interpolate linearly between trajectory rows and are exact
//! whenever the control atoms lie on the state-time grid. During a forward
//! sweep only rows up to the previous step are available; queries beyond
//! the last valid row clamp to it (first-order consistent, and the
//! linearized/adjoint solvers reuse the identical stencils so that
//! transposition stays exact).

use crate::fem::{SpaceMesh, TimeGrid};
use crate::measures::{AtomicMeasure, Measure};
use std::sync::Arc;

/// Prescribed state on `Ω × [−T, 0]`. The value at `t = 0` supplies the
/// initial condition.
#[derive(Clone)]
pub enum Prehistory {
    Constant(f64),
    /// Traveling front `½(y1+y3) + ½(y1−y3) tanh((y3−y1)/(2√2) (x − ct))`
    /// with speed `c = (y1+y3−2y2)/√2`.
    TravelingFront { y1: f64, y2: f64, y3: f64 },
    /// `amplitude · cos²(omega t)`, spatially homogeneous.
    CosineSquared { amplitude: f64, omega: f64 },
    /// `p(t) · sin²(π x)` with polynomial coefficients `p = Σ c_i t^i`.
    PolynomialSineSq { coeffs: Vec<f64> },
    /// Nodal samples at given times in `[−T, 0]` (ascending); linear
    /// interpolation in time, clamped at the ends.
    Gridded {
        times: Arc<Vec<f64>>,
        rows: Arc<Vec<Vec<f64>>>,
    },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Prehistory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prehistory::Constant(c) => write!(f, "Constant({c})"),
            Prehistory::TravelingFront { y1, y2, y3 } => {
                write!(f, "TravelingFront({y1}, {y2}, {y3})")
            }
            Prehistory::CosineSquared { amplitude, omega } => {
                write!(f, "CosineSquared({amplitude}, {omega})")
            }
            Prehistory::PolynomialSineSq { coeffs } => write!(f, "PolynomialSineSq({coeffs:?})"),
            Prehistory::Gridded { times, .. } => write!(f, "Gridded({} rows)", times.len()),
            Prehistory::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Prehistory {
    pub fn zero() -> Self {
        Prehistory::Constant(0.0)
    }

    /// Pointwise value; `Gridded` falls back to nodal lookup semantics and
    /// is only meaningful through [`Prehistory::sample_into`].
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            Prehistory::Constant(c) => *c,
            Prehistory::TravelingFront { y1, y2, y3 } => {
                let speed = (y1 + y3 - 2.0 * y2) / 2f64.sqrt();
                0.5 * (y1 + y3)
                    + 0.5 * (y1 - y3) * ((y3 - y1) / (2.0 * 2f64.sqrt()) * (x - speed * t)).tanh()
            }
            Prehistory::CosineSquared { amplitude, omega } => {
                let c = (omega * t).cos();
                amplitude * c * c
            }
            Prehistory::PolynomialSineSq { coeffs } => {
                let mut p = 0.0;
                for &c in coeffs.iter().rev() {
                    p = p * t + c;
                }
                let s = (std::f64::consts::PI * x).sin();
                p * s * s
            }
            Prehistory::Gridded { times, rows } => {
                // nearest-in-time row, nearest node in space; exact sampling
                // goes through sample_into
                let (ti, theta) = bracket(times, t);
                let row = &rows[ti];
                let v0 = row[0];
                let _ = theta;
                let _ = x;
                v0
            }
            Prehistory::Custom(f) => f(x, t),
        }
    }

    /// Nodal samples of `y_0(·, t)` on `mesh`, `t ∈ [−T, 0]`.
    pub fn sample_into(&self, mesh: &SpaceMesh, t: f64, out: &mut [f64]) {
        match self {
            Prehistory::Gridded { times, rows } => {
                let (ti, theta) = bracket(times, t);
                let r0 = &rows[ti];
                let r1 = &rows[(ti + 1).min(rows.len() - 1)];
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (1.0 - theta) * r0[j] + theta * r1[j];
                }
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(mesh.nodes()) {
                    *o = self.eval(x, t);
                }
            }
        }
    }
}

/// Bracketing index and interpolation weight for `t` in an ascending list,
/// clamped to the ends.
fn bracket(times: &[f64], t: f64) -> (usize, f64) {
    if t <= times[0] {
        return (0, 0.0);
    }
    if t >= *times.last().unwrap() {
        return (times.len() - 1, 0.0);
    }
    let k = times.partition_point(|&s| s <= t) - 1;
    let theta = (t - times[k]) / (times[k + 1] - times[k]);
    (k, theta)
}

/// Nodal state values on the time grid plus a prehistory for `t < 0`.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    mesh: Arc<SpaceMesh>,
    tgrid: Arc<TimeGrid>,
    prehistory: Arc<Prehistory>,
    /// `(N_t + 1) × N_x`, row-major by time node.
    data: Vec<f64>,
}

impl StateTrajectory {
    /// Allocates a trajectory with row 0 set to `y_0(·, 0)`; remaining rows
    /// are filled by the solvers.
    pub fn with_initial_row(
        mesh: Arc<SpaceMesh>,
        tgrid: Arc<TimeGrid>,
        prehistory: Arc<Prehistory>,
    ) -> Self {
        let nx = mesh.len();
        let mut data = vec![0.0; (tgrid.steps() + 1) * nx];
        prehistory.sample_into(&mesh, 0.0, &mut data[..nx]);
        Self {
            mesh,
            tgrid,
            prehistory,
            data,
        }
    }

    /// Builds a trajectory from explicit rows (tests and target generation).
    pub fn from_rows(
        mesh: Arc<SpaceMesh>,
        tgrid: Arc<TimeGrid>,
        prehistory: Arc<Prehistory>,
        rows: Vec<Vec<f64>>,
    ) -> Self {
        assert_eq!(rows.len(), tgrid.steps() + 1);
        let nx = mesh.len();
        let mut data = Vec::with_capacity(rows.len() * nx);
        for r in rows {
            assert_eq!(r.len(), nx);
            data.extend_from_slice(&r);
        }
        Self {
            mesh,
            tgrid,
            prehistory,
            data,
        }
    }

    pub fn mesh(&self) -> &Arc<SpaceMesh> {
        &self.mesh
    }

    pub fn tgrid(&self) -> &Arc<TimeGrid> {
        &self.tgrid
    }

    pub fn prehistory(&self) -> &Arc<Prehistory> {
        &self.prehistory
    }

    pub fn nx(&self) -> usize {
        self.mesh.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nx = self.nx();
        &self.data[i * nx..(i + 1) * nx]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let nx = self.nx();
        &mut self.data[i * nx..(i + 1) * nx]
    }

    /// View exposing all rows.
    pub fn view(&self) -> HistoryView<'_> {
        self.view_prefix(self.tgrid.steps() + 1)
    }

    /// View exposing rows `0..valid_rows` only, as seen mid-assembly at
    /// step `i = valid_rows`.
    pub fn view_prefix(&self, valid_rows: usize) -> HistoryView<'_> {
        HistoryView {
            mesh: &self.mesh,
            tgrid: &self.tgrid,
            prehistory: &self.prehistory,
            data: &self.data,
            valid_rows,
        }
    }

    /// Max abs difference over all rows; trajectories must share grids.
    pub fn max_abs_diff(&self, other: &StateTrajectory) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Interpolation stencil resolved against a (possibly partial) trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stencil {
    /// Query fell in `t < 0`: read the prehistory at this time.
    History(f64),
    /// `w0 · row(j0) + w1 · row(j1)`; `w1 = 0` encodes clamping/exact hits.
    Rows {
        j0: usize,
        w0: f64,
        j1: usize,
        w1: f64,
    },
}

/// Read-only sampling window over a trajectory prefix.
#[derive(Clone, Copy)]
pub struct HistoryView<'a> {
    pub(crate) mesh: &'a SpaceMesh,
    pub(crate) tgrid: &'a TimeGrid,
    pub(crate) prehistory: &'a Prehistory,
    pub(crate) data: &'a [f64],
    pub(crate) valid_rows: usize,
}

impl<'a> HistoryView<'a> {
    pub fn nx(&self) -> usize {
        self.mesh.len()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        debug_assert!(i < self.valid_rows);
        let nx = self.mesh.len();
        &self.data[i * nx..(i + 1) * nx]
    }

    /// Stencil for a query time `t ∈ [−T, T]`; row indices stay below
    /// `valid_rows`.
    pub fn stencil(&self, t: f64) -> Stencil {
        if t < 0.0 {
            return Stencil::History(t);
        }
        let last = self.valid_rows - 1;
        let nodes = self.tgrid.nodes();
        if t >= nodes[last] {
            return Stencil::Rows {
                j0: last,
                w0: 1.0,
                j1: last,
                w1: 0.0,
            };
        }
        let j = self.tgrid.interval_index(t);
        let theta = (t - nodes[j]) / (nodes[j + 1] - nodes[j]);
        Stencil::Rows {
            j0: j,
            w0: 1.0 - theta,
            j1: j + 1,
            w1: theta,
        }
    }

    /// `out += scale · y(·, t)` using the stencil rules above.
    pub fn accumulate_sample(&self, t: f64, scale: f64, out: &mut [f64], scratch: &mut Vec<f64>) {
        match self.stencil(t) {
            Stencil::History(tq) => {
                scratch.clear();
                scratch.resize(out.len(), 0.0);
                self.prehistory.sample_into(self.mesh, tq, scratch);
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o += scale * s;
                }
            }
            Stencil::Rows { j0, w0, j1, w1 } => {
                let r0 = self.row(j0);
                if w1 == 0.0 {
                    for (o, a) in out.iter_mut().zip(r0) {
                        *o += scale * w0 * a;
                    }
                } else {
                    let r1 = self.row(j1);
                    for ((o, a), b) in out.iter_mut().zip(r0).zip(r1) {
                        *o += scale * (w0 * a + w1 * b);
                    }
                }
            }
        }
    }

    pub fn sample(&self, t: f64, out: &mut [f64], scratch: &mut Vec<f64>) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.accumulate_sample(t, 1.0, out, scratch);
    }
}

/// `y(·, t)` for `t ∈ [−T, T]`: trajectory rows (linear interpolation in
/// time) for `t ≥ 0`, prehistory samples for `t < 0`.
pub fn sample_delayed(traj: &StateTrajectory, t: f64) -> Result<Vec<f64>, String> {
    let horizon = traj.tgrid.horizon();
    if !(-horizon..=horizon).contains(&t) {
        return Err(format!("sample time {t} outside [-{horizon}, {horizon}]"));
    }
    let mut out = vec![0.0; traj.nx()];
    let mut scratch = Vec::new();
    traj.view().sample(t, &mut out, &mut scratch);
    Ok(out)
}

/// Splits `∫ y(x, t−s) du(s)` at time `t` into the coefficient of the
/// unknown `y(·, t)` (the mass `u({0})`) and the explicit nodal vector
/// collecting every `s > 0` contribution, with prehistory lookups standing
/// in for `g_u`. Density pieces are integrated by composite trapezoid on
/// the state-time grid restricted to the piece.
pub fn delay_source(u: &Measure, view: &HistoryView<'_>, t: f64) -> (f64, Vec<f64>) {
    let mut explicit = vec![0.0; view.nx()];
    let mut scratch = Vec::new();
    let implicit = match u {
        Measure::Atomic(ua) => {
            atoms_into(
                ua.positive_time_atoms(),
                view,
                t,
                &mut explicit,
                &mut scratch,
            );
            ua.mass_at_zero()
        }
        Measure::General(ug) => {
            atoms_into(
                ug.positive_time_atoms(),
                view,
                t,
                &mut explicit,
                &mut scratch,
            );
            for &(a, b, value) in ug.density_pieces() {
                density_into(a, b, value, view, t, &mut explicit, &mut scratch);
            }
            ug.mass_at_zero()
        }
    };
    (implicit, explicit)
}

fn atoms_into<'m>(
    atoms: impl Iterator<Item = (f64, f64)> + 'm,
    view: &HistoryView<'_>,
    t: f64,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    for (tk, w) in atoms {
        view.accumulate_sample(t - tk, w, out, scratch);
    }
}

fn density_into(
    a: f64,
    b: f64,
    value: f64,
    view: &HistoryView<'_>,
    t: f64,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    // quadrature points: piece endpoints plus interior state-grid nodes
    let nodes = view.tgrid.nodes();
    let lo = nodes.partition_point(|&s| s <= a);
    let mut prev = a;
    let mut k = lo;
    loop {
        let next = if k < nodes.len() && nodes[k] < b {
            let s = nodes[k];
            k += 1;
            s
        } else {
            b
        };
        let h = next - prev;
        if h > 0.0 {
            view.accumulate_sample(t - prev, 0.5 * h * value, out, scratch);
            view.accumulate_sample(t - next, 0.5 * h * value, out, scratch);
        }
        if next >= b {
            break;
        }
        prev = next;
    }
}

/// Adjoint state on the time grid, implicitly extended by zero on `[T, 2T]`.
/// The last row is identically zero.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    tgrid: Arc<TimeGrid>,
    nx: usize,
    data: Vec<f64>,
}

impl AdjointTrajectory {
    pub fn zeros(tgrid: Arc<TimeGrid>, nx: usize) -> Self {
        let data = vec![0.0; (tgrid.steps() + 1) * nx];
        Self { tgrid, nx, data }
    }

    pub fn tgrid(&self) -> &Arc<TimeGrid> {
        &self.tgrid
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.nx..(i + 1) * self.nx]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.nx..(i + 1) * self.nx]
    }

    /// `out += scale · φ(·, t)`, with `φ ≡ 0` for `t ≥ T` and linear
    /// interpolation between rows otherwise.
    pub fn accumulate_sample(&self, t: f64, scale: f64, out: &mut [f64]) {
        if t >= self.tgrid.horizon() || t < 0.0 {
            return;
        }
        let nodes = self.tgrid.nodes();
        let j = self.tgrid.interval_index(t);
        let theta = (t - nodes[j]) / (nodes[j + 1] - nodes[j]);
        let r0 = self.row(j);
        let r1 = self.row(j + 1);
        for ((o, a), b) in out.iter_mut().zip(r0).zip(r1) {
            *o += scale * ((1.0 - theta) * a + theta * b);
        }
    }

    pub fn max_abs_diff(&self, other: &AdjointTrajectory) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `(K*[u]w)(·, t) = ∫_{[0, T−t)} w(·, t+s) du(s)` split like
/// [`delay_source`]: the atom at `s = 0` is returned as the implicit
/// coefficient; atoms with `t_k ≥ T − t` contribute nothing since the
/// integration domain is open at `T − t` and `w` vanishes beyond `T`.
pub fn adjoint_delay_source(
    u: &AtomicMeasure,
    phi: &AdjointTrajectory,
    t: f64,
) -> (f64, Vec<f64>) {
    let horizon = phi.tgrid().horizon();
    let mut explicit = vec![0.0; phi.nx()];
    for (tk, w) in u.positive_time_atoms() {
        if tk < horizon - t {
            phi.accumulate_sample(t + tk, w, &mut explicit);
        }
    }
    (u.mass_at_zero(), explicit)
}
