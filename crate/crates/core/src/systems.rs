//! Ground-truth systems and the datasets generated from them.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{simulate, uniform_grid, LinearField, Order, SolverConfig, Trajectory, VectorField};
use crate::structure::CausalGraph;

/// Trajectories whose sup-norm exceeds this on the window are rejected.
pub const STABILITY_BOUND: f64 = 1e3;
pub const MAX_OBSERVATIONS: usize = 200;

/// `ẍ = W1 ẋ + W2 x` with its initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSecondOrderSystem {
    /// Velocity coefficients.
    pub w1: DMatrix<f64>,
    /// Position coefficients.
    pub w2: DMatrix<f64>,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
}

impl LinearSecondOrderSystem {
    pub fn new(w1: DMatrix<f64>, w2: DMatrix<f64>, x0: Vec<f64>, v0: Vec<f64>) -> Result<Self> {
        let n = w1.nrows();
        if !w1.is_square() || w2.shape() != (n, n) || x0.len() != n || v0.len() != n {
            return Err(Error::arg("W1, W2, x0 and v0 must share one dimension"));
        }
        let finite = w1.iter().chain(w2.iter()).chain(&x0).chain(&v0).all(|v| v.is_finite());
        if !finite {
            return Err(Error::arg("system coefficients must be finite"));
        }
        Ok(Self { w1, w2, x0, v0 })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn field(&self) -> LinearField {
        LinearField::second_order(&self.w1, &self.w2).expect("validated shapes")
    }

    /// Edge `j → i` wherever `W1[i][j]` or `W2[i][j]` is non-zero.
    pub fn truth_graph(&self) -> CausalGraph {
        CausalGraph::from_support(&[&self.w1, &self.w2]).expect("square blocks")
    }

    /// Rows `(x, ẋ)` at `times`.
    pub fn simulate_states(&self, times: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
        simulate(self.field(), &self.x0, Some(&self.v0), times, cfg)
    }

    /// Positions only.
    pub fn simulate(&self, times: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
        Ok(self.simulate_states(times, cfg)?.leading_columns(self.dim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseSystemSpec {
    pub dim: usize,
    /// Probability that an ordered pair `(i, j)` is an edge. Only pairs
    /// with `i != j` are drawn when `restoring` is set.
    pub density: f64,
    /// Coefficient magnitudes are uniform on this range, with random sign.
    pub magnitude: (f64, f64),
    /// Magnitude range of the spring term `-k x_i` every variable receives.
    /// `None` leaves the diagonal to the random edge draw.
    pub restoring: Option<(f64, f64)>,
    /// Magnitude range of the friction term `-c ẋ_i` drawn with `restoring`.
    pub friction: (f64, f64),
    pub max_retries: usize,
    /// Draws whose fastest mode grows faster than this are damped down to it.
    /// `None` keeps raw draws and relies on rejection alone.
    pub max_growth_rate: Option<f64>,
    pub seed: u64,
}

impl Default for SparseSystemSpec {
    fn default() -> Self {
        Self {
            dim: 10,
            density: 0.3,
            magnitude: (0.3, 1.0),
            restoring: Some((0.5, 1.5)),
            friction: (0.1, 0.3),
            max_retries: 1000,
            max_growth_rate: Some(0.1),
            seed: 0,
        }
    }
}

impl SparseSystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::arg("dim must be at least 2"));
        }
        if !(self.density >= 0.0 && self.density <= 1.0) {
            return Err(Error::arg("density must lie in [0, 1]"));
        }
        let ranges = [("magnitude", Some(self.magnitude)), ("restoring", self.restoring), ("friction", Some(self.friction))];
        for (name, range) in ranges {
            if let Some((lo, hi)) = range {
                if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(Error::arg(format!("{name} range must satisfy 0 <= lo <= hi < inf")));
                }
            }
        }
        if self.max_retries == 0 {
            return Err(Error::arg("max_retries must be positive"));
        }
        if self.max_growth_rate.is_some_and(|r| !r.is_finite()) {
            return Err(Error::arg("max_growth_rate must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedLinear {
    pub system: LinearSecondOrderSystem,
    pub truth: CausalGraph,
    /// Observed positions.
    pub trajectory: Trajectory,
    /// Number of rejected draws before acceptance.
    pub rejected: usize,
}

fn magnitude(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn signed_magnitude(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    let m = magnitude(rng, range);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Largest real part among the eigenvalues of `[[0, I], [W2, W1]]`.
pub fn growth_rate(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> f64 {
    let n = w1.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, n), (n, n)).fill_with_identity();
    m.view_mut((n, 0), (n, n)).copy_from(w2);
    m.view_mut((n, n), (n, n)).copy_from(w1);
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Coefficients of `x = e^{-ct} y` when `ÿ = W1 ẏ + W2 y`: every eigenvalue
/// moves by `-c`.
pub fn damp(w1: &DMatrix<f64>, w2: &DMatrix<f64>, c: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = w1.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    (w1 - &eye * (2.0 * c), w2 + w1 * c - eye * (c * c))
}

/// Random sparse `ẍ = W1 ẋ + W2 x`. With `restoring` set every variable is a
/// damped oscillator (`W2[i][i] < 0`, `W1[i][i] < 0`) and the couplings
/// between variables are sparse. Every sampled coupling is carried by `W1`,
/// `W2` or both with equal probability. Draws growing faster than
/// `max_growth_rate` are damped, which adds self-loops.
pub fn gen_random_linear(spec: &SparseSystemSpec, times: &[f64]) -> Result<GeneratedLinear> {
    spec.validate()?;
    if times.len() > MAX_OBSERVATIONS {
        return Err(Error::arg(format!("at most {MAX_OBSERVATIONS} observation times are supported")));
    }
    let n = spec.dim;
    let cfg = SolverConfig::generation();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for attempt in 0..spec.max_retries {
        let mut w1 = DMatrix::zeros(n, n);
        let mut w2 = DMatrix::zeros(n, n);
        for i in 0..n {
            if let Some(range) = spec.restoring {
                w2[(i, i)] = -magnitude(&mut rng, range);
                w1[(i, i)] = -magnitude(&mut rng, spec.friction);
            }
            for j in 0..n {
                if (spec.restoring.is_some() && i == j) || !rng.random_bool(spec.density) {
                    continue;
                }
                match rng.random_range(0..3) {
                    0 => w1[(i, j)] = signed_magnitude(&mut rng, spec.magnitude),
                    1 => w2[(i, j)] = signed_magnitude(&mut rng, spec.magnitude),
                    _ => {
                        w1[(i, j)] = signed_magnitude(&mut rng, spec.magnitude);
                        w2[(i, j)] = signed_magnitude(&mut rng, spec.magnitude);
                    }
                }
            }
        }
        if let Some(cap) = spec.max_growth_rate {
            let excess = growth_rate(&w1, &w2) - cap;
            if excess > 0.0 {
                (w1, w2) = damp(&w1, &w2, excess);
            }
        }
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let system = LinearSecondOrderSystem::new(w1, w2, x0, v0)?;
        let Ok(trajectory) = system.simulate(times, &cfg) else { continue };
        if trajectory.sup_norm() > STABILITY_BOUND {
            continue;
        }
        let truth = system.truth_graph();
        return Ok(GeneratedLinear { system, truth, trajectory, rejected: attempt });
    }
    Err(Error::Generation(format!(
        "no system with sup-norm below {STABILITY_BOUND} in {} draws; try smaller coefficient magnitudes or a lower density",
        spec.max_retries
    )))
}

/// `ẋ0 = -α x0³ + β x1³`, `ẋ1 = -β x0³ + α x1³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spiral {
    pub alpha: f64,
    pub beta: f64,
}

pub fn spiral_field(alpha: f64, beta: f64) -> Spiral {
    Spiral { alpha, beta }
}

impl Spiral {
    /// Coefficients on the cubed state.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-self.alpha, self.beta, -self.beta, self.alpha])
    }

    pub fn truth_graph(&self) -> CausalGraph {
        CausalGraph::from_support(&[&self.coefficient_matrix()]).expect("square")
    }
}

impl VectorField for Spiral {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let (c0, c1) = (x[0].powi(3), x[1].powi(3));
        out[0] = -self.alpha * c0 + self.beta * c1;
        out[1] = -self.beta * c0 + self.alpha * c1;
    }
}

/// Predator–prey system. The default form is
/// `ẋ0 = -α x0 - β x0 x1`, `ẋ1 = -δ x1 + γ x0 x1`; `classical` switches
/// the prey to `ẋ0 = α x0 - β x0 x1`, which has closed orbits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotkaVolterra {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    #[serde(default)]
    pub classical: bool,
}

pub fn lotka_volterra_field(alpha: f64, beta: f64, gamma: f64, delta: f64) -> LotkaVolterra {
    LotkaVolterra { alpha, beta, gamma, delta, classical: false }
}

impl Default for LotkaVolterra {
    fn default() -> Self {
        lotka_volterra_field(1.5, 1.0, 1.0, 3.0)
    }
}

impl LotkaVolterra {
    pub fn classical(self) -> Self {
        Self { classical: true, ..self }
    }

    pub fn truth_graph(&self) -> CausalGraph {
        CausalGraph::from_adjacency(&DMatrix::from_element(2, 2, true)).expect("square")
    }

    /// Invariant of the classical form along its orbits.
    pub fn conserved_quantity(&self, x: &[f64]) -> f64 {
        self.gamma * x[0] - self.delta * x[0].ln() + self.beta * x[1] - self.alpha * x[1].ln()
    }

    /// Exact Jacobian `∂f_i/∂x_j`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let a = if self.classical { self.alpha } else { -self.alpha };
        DMatrix::from_row_slice(
            2,
            2,
            &[a - self.beta * x[1], -self.beta * x[0], self.gamma * x[1], -self.delta + self.gamma * x[0]],
        )
    }
}

impl VectorField for LotkaVolterra {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let a = if self.classical { self.alpha } else { -self.alpha };
        out[0] = a * x[0] - self.beta * x[0] * x[1];
        out[1] = -self.delta * x[1] + self.gamma * x[0] * x[1];
    }
}

/// Time course of the transcription rate, given by its own scalar ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AlphaProfile {
    /// `α̇ = 0`.
    Constant,
    /// `α̇ = r α (1 - α / K)`.
    Logistic { rate: f64, capacity: f64 },
}

impl AlphaProfile {
    pub fn derivative(&self, alpha: f64) -> f64 {
        match *self {
            Self::Constant => 0.0,
            Self::Logistic { rate, capacity } => rate * alpha * (1.0 - alpha / capacity),
        }
    }
}

/// State `(α, u, s)`: `α̇` from the profile, `u̇ = α - β u`, `ṡ = β u - γ s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transcription {
    pub profile: AlphaProfile,
    pub beta: f64,
    pub gamma: f64,
}

pub fn transcription_field(profile: AlphaProfile, beta: f64, gamma: f64) -> Transcription {
    Transcription { profile, beta, gamma }
}

impl Transcription {
    /// α→α, α→u, u→u, u→s, s→s.
    pub fn truth_graph(&self) -> CausalGraph {
        CausalGraph::from_edges(3, &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]).expect("valid edges")
    }
}

impl VectorField for Transcription {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.profile.derivative(x[0]);
        out[1] = x[0] - self.beta * x[1];
        out[2] = self.beta * x[1] - self.gamma * x[2];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    /// Standard deviation of additive Gaussian noise, in data units.
    pub sigma: f64,
    /// Fraction of rows dropped.
    pub irr: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::arg("sigma must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.irr) {
            return Err(Error::arg("irr must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Adds i.i.d. `N(0, σ²)` noise to every entry, then drops `⌊irr·N⌋`
/// rows chosen uniformly among all rows but the first.
pub fn corrupt(traj: &Trajectory, spec: &CorruptionSpec) -> Result<Trajectory> {
    spec.validate()?;
    let rows = traj.len();
    let drop = (spec.irr * rows as f64).floor() as usize;
    if rows - drop.min(rows) < 2 {
        return Err(Error::arg(format!("dropping {drop} of {rows} rows leaves fewer than two")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noisy = if spec.sigma > 0.0 {
        traj.map_states(|_, v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + spec.sigma * z
        })
    } else {
        traj.clone()
    };
    if drop == 0 {
        return Ok(noisy);
    }
    let mut dropped = vec![false; rows];
    for k in sample(&mut rng, rows - 1, drop) {
        dropped[k + 1] = true;
    }
    let keep: Vec<usize> = (0..rows).filter(|&k| !dropped[k]).collect();
    noisy.select_rows(&keep)
}

/// Observation window shared by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_end: f64,
    pub points: usize,
}

impl Default for Window {
    fn default() -> Self {
        Self { t_end: 10.0, points: MAX_OBSERVATIONS }
    }
}

impl Window {
    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(0.0, self.t_end, self.points)
    }
}

/// Any of the shipped systems, with initial state and observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "lowercase")]
pub enum SystemSpec {
    Linear {
        #[serde(flatten)]
        spec: SparseSystemSpec,
        #[serde(default)]
        window: Window,
    },
    Spiral {
        alpha: f64,
        beta: f64,
        x0: Vec<f64>,
        window: Window,
    },
    Lv {
        #[serde(flatten)]
        params: LotkaVolterra,
        x0: Vec<f64>,
        window: Window,
    },
    Transcription {
        #[serde(flatten)]
        field: Transcription,
        x0: Vec<f64>,
        window: Window,
    },
}

impl SystemSpec {
    pub fn default_linear(dim: usize, seed: u64) -> Self {
        Self::Linear { spec: SparseSystemSpec { dim, seed, ..Default::default() }, window: Window::default() }
    }

    pub fn default_spiral() -> Self {
        Self::Spiral { alpha: 0.1, beta: 2.0, x0: vec![1.0, 0.0], window: Window { t_end: 2.5, points: 200 } }
    }

    pub fn default_lv() -> Self {
        Self::Lv { params: LotkaVolterra::default(), x0: vec![2.0, 1.0], window: Window { t_end: 2.0, points: 200 } }
    }

    pub fn default_transcription() -> Self {
        Self::Transcription {
            field: transcription_field(AlphaProfile::Logistic { rate: 1.0, capacity: 2.0 }, 1.0, 0.5),
            x0: vec![0.1, 0.0, 0.0],
            window: Window::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear { .. } => "linear",
            Self::Spiral { .. } => "spiral",
            Self::Lv { .. } => "lv",
            Self::Transcription { .. } => "transcription",
        }
    }

    pub fn window(&self) -> Window {
        match self {
            Self::Linear { window, .. }
            | Self::Spiral { window, .. }
            | Self::Lv { window, .. }
            | Self::Transcription { window, .. } => *window,
        }
    }

    /// Order of the generating dynamics.
    pub fn order(&self) -> Order {
        match self {
            Self::Linear { .. } => Order::Second,
            _ => Order::First,
        }
    }
}

/// A clean generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: SystemSpec,
    pub truth: CausalGraph,
    pub trajectory: Trajectory,
    /// Present for linear systems.
    pub linear: Option<LinearSecondOrderSystem>,
}

fn check_x0(x0: &[f64], dim: usize) -> Result<()> {
    if x0.len() != dim {
        return Err(Error::arg(format!("x0 has length {}, the system has {dim} variables", x0.len())));
    }
    Ok(())
}

pub fn generate(spec: &SystemSpec) -> Result<Dataset> {
    let window = spec.window();
    if window.points < 2 || window.points > MAX_OBSERVATIONS || !(window.t_end > 0.0) {
        return Err(Error::arg(format!("window needs 2..={MAX_OBSERVATIONS} points and t_end > 0")));
    }
    let times = window.grid();
    let cfg = SolverConfig::generation();
    let (truth, trajectory, linear) = match spec {
        SystemSpec::Linear { spec: s, .. } => {
            let g = gen_random_linear(s, &times)?;
            (g.truth, g.trajectory, Some(g.system))
        }
        SystemSpec::Spiral { alpha, beta, x0, .. } => {
            check_x0(x0, 2)?;
            let f = spiral_field(*alpha, *beta);
            (f.truth_graph(), simulate(f, x0, None, &times, &cfg)?, None)
        }
        SystemSpec::Lv { params, x0, .. } => {
            check_x0(x0, 2)?;
            (params.truth_graph(), simulate(*params, x0, None, &times, &cfg)?, None)
        }
        SystemSpec::Transcription { field, x0, .. } => {
            check_x0(x0, 3)?;
            (field.truth_graph(), simulate(*field, x0, None, &times, &cfg)?, None)
        }
    };
    Ok(Dataset { spec: spec.clone(), truth, trajectory, linear })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::solve_ivp;

    #[test]
    fn zero_density_gives_free_motion() {
        let spec = SparseSystemSpec { dim: 3, density: 0.0, restoring: None, ..Default::default() };
        let times = uniform_grid(0.0, 10.0, 50);
        let g = gen_random_linear(&spec, &times).unwrap();
        assert_eq!(g.truth.edge_count(), 0);
        assert!(g.system.w1.iter().chain(g.system.w2.iter()).all(|&v| v == 0.0));
        for (k, row) in g.trajectory.rows().enumerate() {
            for i in 0..3 {
                let expect = g.system.x0[i] + g.system.v0[i] * times[k];
                assert!((row[i] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SparseSystemSpec { dim: 4, seed: 11, ..Default::default() };
        let times = uniform_grid(0.0, 10.0, 200);
        let a = gen_random_linear(&spec, &times).unwrap();
        let b = gen_random_linear(&spec, &times).unwrap();
        assert_eq!(a.system, b.system);
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn graph_density_tracks_request() {
        let times = uniform_grid(0.0, 10.0, 200);
        let mut total = 0.0;
        for seed in 0..20 {
            let spec = SparseSystemSpec { seed, ..Default::default() };
            let g = gen_random_linear(&spec, &times).unwrap();
            assert!(g.trajectory.flat_states().iter().all(|v| v.is_finite()));
            assert!(g.trajectory.sup_norm() <= STABILITY_BOUND);
            let couplings = g.truth.edge_count() - 10;
            total += couplings as f64 / 90.0;
        }
        let mean = total / 20.0;
        assert!((mean - 0.3).abs() <= 0.15, "mean density {mean}");
    }

    #[test]
    fn every_variable_oscillates_by_default() {
        let times = uniform_grid(0.0, 10.0, 200);
        for seed in 0..5 {
            let g = gen_random_linear(&SparseSystemSpec { dim: 3, seed, ..Default::default() }, &times).unwrap();
            for i in 0..3 {
                assert!(g.system.w2[(i, i)] < 0.0 && g.system.w1[(i, i)] < 0.0);
                assert!(g.truth.has_edge(i, i));
            }
        }
    }

    #[test]
    fn damping_shifts_the_spectrum() {
        let w1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.0, -0.2]);
        let w2 = DMatrix::from_row_slice(2, 2, &[0.0, -0.7, 0.9, 0.4]);
        let (d1, d2) = damp(&w1, &w2, 0.75);
        assert!((growth_rate(&d1, &d2) - (growth_rate(&w1, &w2) - 0.75)).abs() < 1e-9);
    }

    #[test]
    fn large_systems_are_generated() {
        let times = uniform_grid(0.0, 10.0, 200);
        let spec = SparseSystemSpec { dim: 50, seed: 1, ..Default::default() };
        let g = gen_random_linear(&spec, &times).unwrap();
        assert!(growth_rate(&g.system.w1, &g.system.w2) <= 0.1 + 1e-9);
    }

    #[test]
    fn too_many_times_rejected() {
        let spec = SparseSystemSpec::default();
        assert!(gen_random_linear(&spec, &uniform_grid(0.0, 10.0, 201)).is_err());
    }

    #[test]
    fn exhausted_retries_is_a_generation_error() {
        let spec = SparseSystemSpec {
            dim: 5,
            density: 1.0,
            magnitude: (50.0, 60.0),
            restoring: None,
            max_retries: 3,
            max_growth_rate: None,
            ..Default::default()
        };
        let r = gen_random_linear(&spec, &uniform_grid(0.0, 10.0, 100));
        assert!(matches!(r, Err(Error::Generation(_))));
    }

    #[test]
    fn spiral_values() {
        let zero = spiral_field(0.0, 0.0);
        assert_eq!(zero.eval_vec(0.0, &[1.3, -0.7]), vec![0.0, 0.0]);
        let f = spiral_field(0.1, 2.0);
        let out = f.eval_vec(0.0, &[1.0, 1.0]);
        assert!((out[0] - 1.9).abs() < 1e-15 && (out[1] + 1.9).abs() < 1e-15);
        assert_eq!(f.truth_graph().edge_count(), 4);
    }

    #[test]
    fn spiral_dopri5_matches_fine_rk4() {
        let f = spiral_field(0.1, 2.0);
        let times = uniform_grid(0.0, 2.5, 51);
        let coarse = solve_ivp(&f, &[2.0, 0.0], &times, &SolverConfig::generation()).unwrap();
        let fine = solve_ivp(&f, &[2.0, 0.0], &times, &SolverConfig::rk4(1e-4)).unwrap();
        assert!(coarse.sup_distance(&fine) < 1e-5);
        let norm = |r: &[f64]| (r[0] * r[0] + r[1] * r[1]).sqrt();
        for k in 0..times.len() {
            assert!((norm(coarse.row(k)) - norm(fine.row(k))).abs() < 1e-5);
        }
    }

    #[test]
    fn lotka_volterra_values() {
        let f = LotkaVolterra::default();
        let out = f.eval_vec(0.0, &[0.0, 0.7]);
        assert_eq!(out, vec![0.0, -3.0 * 0.7]);
        let out = f.eval_vec(0.0, &[1.0, 1.0]);
        assert_eq!(out, vec![-1.5 - 1.0, -3.0 + 1.0]);
        let j = f.jacobian(&[2.0, 0.5]);
        assert_eq!(j[(0, 1)], -2.0);
    }

    #[test]
    fn classical_lotka_volterra_conserves_invariant() {
        let f = LotkaVolterra::default().classical();
        let times = uniform_grid(0.0, 10.0, 401);
        let traj = solve_ivp(&f, &[3.0, 1.0], &times, &SolverConfig::dopri5(1e-10, 1e-12)).unwrap();
        let v0 = f.conserved_quantity(traj.row(0));
        for row in traj.rows() {
            assert!((f.conserved_quantity(row) - v0).abs() < 1e-4);
        }
    }

    #[test]
    fn transcription_fixed_point_and_analytic_u() {
        let f = transcription_field(AlphaProfile::Constant, 2.0, 0.5);
        let u0 = 1.5 / 2.0;
        let s0 = 2.0 * u0 / 0.5;
        let times = uniform_grid(0.0, 5.0, 11);
        let traj = solve_ivp(&f, &[1.5, u0, s0], &times, &SolverConfig::generation()).unwrap();
        for row in traj.rows() {
            assert!((row[1] - u0).abs() < 1e-12 && (row[2] - s0).abs() < 1e-12);
        }

        let f = transcription_field(AlphaProfile::Constant, 1.0, 1.0);
        let traj = solve_ivp(&f, &[1.0, 0.0, 0.0], &[0.0, 1.0], &SolverConfig::dopri5(1e-10, 1e-12)).unwrap();
        assert!((traj.row(1)[1] - 0.6321206).abs() < 1e-7);
    }

    #[test]
    fn transcription_truth_graph() {
        let t = SystemSpec::default_transcription();
        let SystemSpec::Transcription { field, .. } = t else { unreachable!() };
        let g = field.truth_graph();
        assert_eq!(g.edge_count(), 5);
        assert!(!g.has_edge(0, 1) && !g.has_edge(0, 2));
    }

    #[test]
    fn corruption_identity_and_counts() {
        let times = uniform_grid(0.0, 1.0, 200);
        let rows: Vec<Vec<f64>> = times.iter().map(|t| vec![t.sin(), t.cos()]).collect();
        let clean = Trajectory::new(times, rows).unwrap();
        assert_eq!(corrupt(&clean, &CorruptionSpec::default()).unwrap(), clean);

        let dropped = corrupt(&clean, &CorruptionSpec { irr: 0.5, seed: 3, ..Default::default() }).unwrap();
        assert_eq!(dropped.len(), 100);
        assert_eq!(dropped.row(0), clean.row(0));
        assert!(dropped.times().windows(2).all(|w| w[0] < w[1]));

        let noisy = corrupt(&clean, &CorruptionSpec { sigma: 0.1, seed: 9, ..Default::default() }).unwrap();
        let diffs: Vec<f64> =
            noisy.flat_states().iter().zip(clean.flat_states()).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((0.008..=0.012).contains(&var), "variance {var}");
    }

    #[test]
    fn corruption_rejects_bad_specs() {
        let clean = Trajectory::new(vec![0.0, 1.0, 2.0], vec![vec![0.0]; 3]).unwrap();
        assert!(corrupt(&clean, &CorruptionSpec { irr: 0.9, ..Default::default() }).is_err());
        assert!(corrupt(&clean, &CorruptionSpec { sigma: -1.0, ..Default::default() }).is_err());
        assert!(corrupt(&clean, &CorruptionSpec { irr: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn system_specs_round_trip_json() {
        for spec in [
            SystemSpec::default_linear(3, 7),
            SystemSpec::default_spiral(),
            SystemSpec::default_lv(),
            SystemSpec::default_transcription(),
        ] {
            let json = serde_json::to_string(&spec).unwrap();
            let back: SystemSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, spec);
            let d = generate(&spec).unwrap();
            assert_eq!(d.trajectory.dim(), d.truth.dim());
        }
    }
}
