//! Explicit initial-value-problem integration.
//!
//! Two integrators are provided: fixed-step classical RK4 and adaptive
//! Dormand–Prince 5(4) with continuous output. Second-order fields are
//! integrated through [`reduce_second_order`], which lifts them to a
//! first-order system over `(x, v)`.

mod dopri5;
mod expm;
mod rk4;
mod second_order;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use expm::{expm, matrix_exponential_solution};
pub(crate) use rk4::substeps as rk4_substeps;
pub use second_order::{reduce_second_order, ReducedField};

/// States whose magnitude exceeds this bound are treated as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Time grid plus row-major state matrix (`len × dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<f64>,
    dim: usize,
}

#[derive(Deserialize)]
struct RawTrajectory {
    times: Vec<f64>,
    states: Vec<f64>,
    dim: usize,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = Error;

    fn try_from(raw: RawTrajectory) -> Result<Self> {
        Self::from_flat(raw.times, raw.states, raw.dim)
    }
}

impl Trajectory {
    pub fn new(times: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("trajectory rows have unequal lengths"));
        }
        Self::from_flat(times, rows.concat(), dim)
    }

    pub fn from_flat(times: Vec<f64>, states: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("trajectory dimension must be positive"));
        }
        if states.len() != times.len() * dim {
            return Err(Error::arg(format!(
                "state matrix has {} entries, expected {} rows x {} columns",
                states.len(),
                times.len(),
                dim
            )));
        }
        check_times(&times)?;
        if let Some(bad) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite state at row {}", bad / dim)));
        }
        Ok(Self { times, states, dim })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn flat_states(&self) -> &[f64] {
        &self.states
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Keeps only the first `cols` state components.
    pub fn leading_columns(&self, cols: usize) -> Trajectory {
        assert!(cols > 0 && cols <= self.dim);
        let states = self.rows().flat_map(|r| r[..cols].iter().copied()).collect();
        Trajectory { times: self.times.clone(), states, dim: cols }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Trajectory> {
        let times = indices.iter().map(|&k| self.times[k]).collect();
        let states = indices.iter().flat_map(|&k| self.row(k).iter().copied()).collect();
        Trajectory::from_flat(times, states, self.dim)
    }

    /// Applies `f(column, value)` to every entry.
    pub fn map_states(&self, mut f: impl FnMut(usize, f64) -> f64) -> Trajectory {
        let dim = self.dim;
        let states = self.states.iter().enumerate().map(|(i, &v)| f(i % dim, v)).collect();
        Trajectory { times: self.times.clone(), states, dim }
    }

    /// Largest absolute entry-wise difference against another trajectory on the same grid.
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        assert_eq!(self.states.len(), other.states.len(), "trajectory shapes differ");
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.states.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::arg("time grid is empty"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::arg("time grid contains non-finite values"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg("time grid is not strictly increasing"));
    }
    Ok(())
}

pub fn uniform_grid(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && t1 > t0);
    let dt = (t1 - t0) / (points - 1) as f64;
    (0..points).map(|k| if k + 1 == points { t1 } else { t0 + dt * k as f64 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    First,
    Second,
}

/// A (possibly time-dependent) vector field over `n` variables.
///
/// First-order fields map a state of length `n` to its derivative.
/// Second-order fields map `(x, v)` of length `2n` to the acceleration
/// (length `n`).
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn order(&self) -> Order {
        Order::First
    }

    fn state_len(&self) -> usize {
        match self.order() {
            Order::First => self.dim(),
            Order::Second => 2 * self.dim(),
        }
    }

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]);

    fn eval_vec(&self, t: f64, state: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(t, state, &mut out);
        out
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn order(&self) -> Order {
        (**self).order()
    }
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (**self).eval(t, state, out)
    }
}

impl<F: VectorField + ?Sized> VectorField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn order(&self) -> Order {
        (**self).order()
    }
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (**self).eval(t, state, out)
    }
}

impl<F: VectorField + ?Sized> VectorField for std::sync::Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn order(&self) -> Order {
        (**self).order()
    }
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (**self).eval(t, state, out)
    }
}

/// Closure-backed field.
pub struct FnField<F> {
    dim: usize,
    order: Order,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    pub fn first_order(dim: usize, f: F) -> Self {
        Self { dim, order: Order::First, f }
    }

    pub fn second_order(dim: usize, f: F) -> Self {
        Self { dim, order: Order::Second, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn order(&self) -> Order {
        self.order
    }
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (self.f)(t, state, out)
    }
}

/// Affine field `A y + c`. For second-order systems `A` is `n × 2n`
/// acting on `(x, v)`, i.e. `[W2 | W1]` for `ẍ = W1 ẋ + W2 x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub order: Order,
}

impl LinearField {
    pub fn first_order(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::arg("first-order linear field needs a square matrix"));
        }
        let n = matrix.nrows();
        Ok(Self { matrix, offset: DVector::zeros(n), order: Order::First })
    }

    /// `ẍ = w1 ẋ + w2 x`.
    pub fn second_order(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<Self> {
        let n = w1.nrows();
        if !w1.is_square() || w2.shape() != (n, n) {
            return Err(Error::arg("second-order blocks must be square and of equal size"));
        }
        let mut matrix = DMatrix::zeros(n, 2 * n);
        matrix.view_mut((0, 0), (n, n)).copy_from(w2);
        matrix.view_mut((0, n), (n, n)).copy_from(w1);
        Ok(Self { matrix, offset: DVector::zeros(n), order: Order::Second })
    }

    pub fn with_offset(mut self, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != self.matrix.nrows() {
            return Err(Error::arg("offset length must equal the number of variables"));
        }
        self.offset = offset;
        Ok(self)
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn order(&self) -> Order {
        self.order
    }
    fn eval(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        let (rows, cols) = self.matrix.shape();
        for i in 0..rows {
            let mut acc = self.offset[i];
            for j in 0..cols {
                acc += self.matrix[(i, j)] * state[j];
            }
            out[i] = acc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Dopri5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Fixed step for RK4.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl SolverConfig {
    pub fn rk4(step: f64) -> Self {
        Self { method: Method::Rk4, step, ..Self::generation() }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self { method: Method::Dopri5, step: 1e-2, rtol, atol, max_steps: 1_000_000 }
    }

    /// Tolerances used when generating ground-truth data.
    pub fn generation() -> Self {
        Self::dopri5(1e-7, 1e-9)
    }

    /// Looser tolerances for predictions from trained fields.
    pub fn training() -> Self {
        Self::dopri5(1e-5, 1e-7)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::arg("solver step must be positive"));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::arg("solver tolerances must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::arg("max_steps must be positive"));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::generation()
    }
}

/// Integrates a first-order field from `x0` at `times[0]`, reporting the
/// state at every entry of `times`. Row 0 is `x0` verbatim.
pub fn solve_ivp<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_times(times)?;
    if field.order() != Order::First {
        return Err(Error::arg("solve_ivp needs a first-order field; use reduce_second_order"));
    }
    if x0.len() != field.dim() {
        return Err(Error::arg(format!(
            "initial state has length {}, field dimension is {}",
            x0.len(),
            field.dim()
        )));
    }
    if divergent(x0).is_some() {
        return Err(Error::IntegrationFailure { t: times[0], reason: "initial state is not finite".into() });
    }
    let states = match cfg.method {
        Method::Rk4 => rk4::integrate(field, x0, times, cfg)?,
        Method::Dopri5 => dopri5::integrate(field, x0, times, cfg)?,
    };
    Ok(Trajectory { times: times.to_vec(), states, dim: x0.len() })
}

/// Integrates a field of either order. Second-order fields need `v0` and
/// yield rows `(x, ẋ)`; `v0` is ignored for first-order fields.
pub fn simulate<F: VectorField>(field: F, x0: &[f64], v0: Option<&[f64]>, times: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    match field.order() {
        Order::First => solve_ivp(&field, x0, times, cfg),
        Order::Second => {
            let v0 = v0.ok_or_else(|| Error::arg("second-order simulation needs an initial velocity"))?;
            let (reduced, u0) = reduce_second_order(field, x0, v0)?;
            solve_ivp(&reduced, &u0, times, cfg)
        }
    }
}

/// Returns the offending component if the state is non-finite or beyond the divergence bound.
pub(crate) fn divergent(state: &[f64]) -> Option<usize> {
    state.iter().position(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_field(n: usize) -> LinearField {
        LinearField::first_order(DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn zero_field_keeps_state() {
        let f = FnField::first_order(2, |_, _, out: &mut [f64]| out.fill(0.0));
        for cfg in [SolverConfig::rk4(0.1), SolverConfig::generation()] {
            let traj = solve_ivp(&f, &[1.0, 1.0], &[0.0, 0.5, 1.0], &cfg).unwrap();
            for row in traj.rows() {
                assert_eq!(row, &[1.0, 1.0]);
            }
        }
    }

    #[test]
    fn identity_system_reaches_e() {
        let f = identity_field(2);
        let traj = solve_ivp(&f, &[1.0, 1.0], &[0.0, 1.0], &SolverConfig::generation()).unwrap();
        let e = std::f64::consts::E;
        assert!((traj.row(1)[0] - e).abs() < 1e-6);
        assert!((traj.row(1)[1] - e).abs() < 1e-6);
    }

    #[test]
    fn first_row_is_initial_state_verbatim() {
        let f = identity_field(3);
        let x0 = [0.1, -0.7, 1.0 / 3.0];
        let traj = solve_ivp(&f, &x0, &[0.25, 1.0], &SolverConfig::generation()).unwrap();
        assert_eq!(traj.row(0), &x0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = identity_field(2);
        let cfg = SolverConfig::generation();
        assert!(matches!(solve_ivp(&f, &[1.0], &[0.0, 1.0], &cfg), Err(Error::Argument(_))));
        assert!(matches!(solve_ivp(&f, &[1.0, 1.0], &[0.0, 0.0], &cfg), Err(Error::Argument(_))));
        let bad = SolverConfig { rtol: 0.0, ..cfg };
        assert!(solve_ivp(&f, &[1.0, 1.0], &[0.0, 1.0], &bad).is_err());
    }

    #[test]
    fn divergence_reports_last_valid_time() {
        let f = FnField::first_order(1, |_, x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
        // Blows up at t = 1.
        for cfg in [SolverConfig::rk4(1e-3), SolverConfig::generation()] {
            match solve_ivp(&f, &[1.0], &[0.0, 0.5, 2.0], &cfg) {
                Err(Error::IntegrationFailure { t, .. }) => assert!(t > 0.5 && t < 1.01, "t = {t}"),
                Err(Error::MaxSteps { .. }) => {}
                other => panic!("expected failure, got {other:?}"),
            }
        }
    }

    #[test]
    fn max_steps_is_enforced() {
        let f = identity_field(1);
        let cfg = SolverConfig { max_steps: 3, ..SolverConfig::generation() };
        assert!(matches!(solve_ivp(&f, &[1.0], &[0.0, 10.0], &cfg), Err(Error::MaxSteps { .. })));
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new(vec![0.0, 1.0], vec![vec![1.0], vec![f64::NAN]]).is_err());
        assert!(Trajectory::new(vec![1.0, 0.0], vec![vec![1.0], vec![2.0]]).is_err());
        assert!(Trajectory::new(vec![0.0], vec![vec![1.0, 2.0], vec![3.0]]).is_err());
        let t = Trajectory::new(vec![0.0, 1.0], vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.column(1), vec![2.0, 4.0]);
    }
}
