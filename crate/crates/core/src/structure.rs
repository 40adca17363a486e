//! Causal graphs read off trained fields, and their comparison against
//! ground truth.
//!
//! Graphs use the row-is-effect convention throughout: entry `(i, j)`
//! carries the evidence that `X_j` is a parent of `X_i`. Self-loops and
//! cycles are allowed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FeatureMap, NeuralField};
use crate::train::TrainedModel;
use crate::ode::{matrix_exponential_solution, solve_ivp, uniform_grid, LinearField, Order, SolverConfig, Trajectory};

/// Default edge threshold on normalized data.
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    scores: DMatrix<f64>,
    threshold: f64,
    /// Signs of the path matrix (`n × n` or `n × 2n`), linear mode only.
    signs: Option<DMatrix<f64>>,
    /// Position- and velocity-block scores of a second-order field.
    blocks: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl CausalGraph {
    pub fn from_scores(scores: DMatrix<f64>, threshold: f64) -> Result<Self> {
        if !scores.is_square() {
            return Err(Error::arg("score matrix must be square"));
        }
        if scores.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("scores must be finite and non-negative"));
        }
        if !(threshold >= 0.0) {
            return Err(Error::arg("threshold must be non-negative"));
        }
        Ok(Self { scores, threshold, signs: None, blocks: None })
    }

    /// Ground-truth style graph: score 1 on edges, 0 elsewhere, threshold 0.
    pub fn from_adjacency(adjacency: &DMatrix<bool>) -> Result<Self> {
        Self::from_scores(adjacency.map(|b| if b { 1.0 } else { 0.0 }), 0.0)
    }

    /// Graph of the non-zero pattern of one or more coefficient matrices
    /// (an edge wherever any of them is non-zero).
    pub fn from_support(matrices: &[&DMatrix<f64>]) -> Result<Self> {
        let first = matrices.first().ok_or_else(|| Error::arg("no matrices given"))?;
        let adj = DMatrix::from_fn(first.nrows(), first.ncols(), |i, j| matrices.iter().any(|m| m[(i, j)] != 0.0));
        Self::from_adjacency(&adj)
    }

    /// Directed edges given as `(cause, effect)` pairs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = DMatrix::from_element(n, n, false);
        for &(cause, effect) in edges {
            if cause >= n || effect >= n {
                return Err(Error::arg("edge endpoint out of range"));
            }
            adj[(effect, cause)] = true;
        }
        Self::from_adjacency(&adj)
    }

    pub fn empty(n: usize) -> Self {
        Self::from_scores(DMatrix::zeros(n, n), 0.0).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.scores.nrows()
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn signs(&self) -> Option<&DMatrix<f64>> {
        self.signs.as_ref()
    }

    /// `(position block, velocity block)` scores for second-order fields.
    pub fn blocks(&self) -> Option<&(DMatrix<f64>, DMatrix<f64>)> {
        self.blocks.as_ref()
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        let mut g = Self::from_scores(self.scores.clone(), threshold)?;
        g.signs = self.signs.clone();
        g.blocks = self.blocks.clone();
        Ok(g)
    }

    /// Whether `X_cause` is a parent of `X_effect`.
    pub fn has_edge(&self, effect: usize, cause: usize) -> bool {
        self.scores[(effect, cause)] > self.threshold
    }

    pub fn adjacency(&self) -> DMatrix<bool> {
        self.scores.map(|s| s > self.threshold)
    }

    pub fn edge_count(&self) -> usize {
        self.scores.iter().filter(|&&s| s > self.threshold).count()
    }

    /// `(cause, effect)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.dim();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.has_edge(i, j) {
                    out.push((j, i));
                }
            }
        }
        out
    }

    /// Variables reachable from `source` along directed edges (excluding
    /// `source` unless it lies on a cycle through itself).
    pub fn descendants(&self, source: usize) -> Vec<bool> {
        let n = self.dim();
        let mut seen = vec![false; n];
        let mut stack = vec![source];
        while let Some(c) = stack.pop() {
            for e in 0..n {
                if self.has_edge(e, c) && !seen[e] {
                    seen[e] = true;
                    stack.push(e);
                }
            }
        }
        seen
    }
}

/// How reversed edges enter the structural Hamming distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShdMode {
    /// An edge estimated in the opposite direction of a one-way true edge
    /// counts once instead of as one missing plus one extra edge.
    #[default]
    Reversal,
    /// Missing plus extra edges only.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    /// Normalized by `n²`.
    pub shd: f64,
    pub shd_bar: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub missing: usize,
    pub extra: usize,
    pub reversed: usize,
}

pub fn score_graph(estimated: &CausalGraph, truth: &CausalGraph) -> Result<GraphMetrics> {
    score_graph_with(estimated, truth, ShdMode::Reversal)
}

pub fn score_graph_with(estimated: &CausalGraph, truth: &CausalGraph, mode: ShdMode) -> Result<GraphMetrics> {
    let n = truth.dim();
    if estimated.dim() != n {
        return Err(Error::arg(format!("graph dimensions differ: {} vs {n}", estimated.dim())));
    }
    let est = estimated.adjacency();
    let tru = truth.adjacency();
    let mut consumed = DMatrix::from_element(n, n, false);
    let mut reversed = 0;
    if mode == ShdMode::Reversal {
        for i in 0..n {
            for j in 0..n {
                // est has j→i, truth has only i→j, and neither direction agrees.
                if i != j && est[(i, j)] && !tru[(i, j)] && tru[(j, i)] && !est[(j, i)] && !consumed[(i, j)] {
                    reversed += 1;
                    consumed[(i, j)] = true;
                    consumed[(j, i)] = true;
                }
            }
        }
    }
    let (mut missing, mut extra) = (0, 0);
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let (e, t) = (est[(i, j)], tru[(i, j)]);
            if t {
                pos += 1;
                tp += e as usize;
            } else {
                neg += 1;
                tn += (!e) as usize;
            }
            if consumed[(i, j)] {
                continue;
            }
            if t && !e {
                missing += 1;
            }
            if e && !t {
                extra += 1;
            }
        }
    }
    let shd = (missing + extra + reversed) as f64 / (n * n) as f64;
    let rate = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(GraphMetrics { shd, shd_bar: 1.0 - shd, tpr: rate(tp, pos), tnr: rate(tn, neg), missing, extra, reversed })
}

fn sign_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
}

/// Splits an `n × 2n` matrix over `(x, ẋ)` into its position and velocity blocks.
pub fn split_blocks(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    (m.columns(0, n).into_owned(), m.columns(n, n).into_owned())
}

fn combine(order: Order, abs_scores: DMatrix<f64>) -> (DMatrix<f64>, Option<(DMatrix<f64>, DMatrix<f64>)>) {
    match order {
        Order::First => (abs_scores, None),
        Order::Second => {
            let (pos, vel) = split_blocks(&abs_scores);
            (pos.zip_map(&vel, f64::max), Some((pos, vel)))
        }
    }
}

/// Graph from the weight-path product of a linear-activation field.
pub fn extract_linear(field: &NeuralField, epsilon: f64) -> Result<CausalGraph> {
    if !field.activation().is_linear() {
        return Err(Error::UnsupportedMode(
            "path-matrix extraction needs a linear-activation field; use extract_nonlinear".into(),
        ));
    }
    let path = field.path_matrix();
    let (scores, blocks) = combine(field.order(), path.abs());
    let mut g = CausalGraph::from_scores(scores, epsilon)?;
    g.signs = Some(sign_matrix(&path));
    g.blocks = blocks;
    Ok(g)
}

/// How per-time Jacobian magnitudes are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreAggregation {
    /// Mean over time points; independent of grid density.
    #[default]
    Mean,
    /// Plain sum over time points.
    Sum,
}

/// Input Jacobians of the field along a trajectory of network inputs
/// (`x` for first-order fields, `(x, ẋ)` for second-order ones).
pub fn jacobian_timeseries(field: &NeuralField, traj: &Trajectory) -> Result<Vec<DMatrix<f64>>> {
    let width = field.net().input_width();
    if traj.dim() != width {
        return Err(Error::arg(format!(
            "trajectory has {} columns, the field takes {width} inputs",
            traj.dim()
        )));
    }
    traj.rows().map(|row| field.input_jacobian(row)).collect()
}

/// Graph from accumulated absolute input-Jacobian entries along a trajectory.
pub fn extract_nonlinear(field: &NeuralField, traj: &Trajectory, epsilon: f64) -> Result<CausalGraph> {
    extract_nonlinear_with(field, traj, epsilon, ScoreAggregation::Mean)
}

pub fn extract_nonlinear_with(
    field: &NeuralField,
    traj: &Trajectory,
    epsilon: f64,
    aggregation: ScoreAggregation,
) -> Result<CausalGraph> {
    if traj.is_empty() {
        return Err(Error::arg("trajectory is empty"));
    }
    let jacobians = jacobian_timeseries(field, traj)?;
    let mut acc = DMatrix::zeros(field.dim(), field.net().input_width());
    for j in &jacobians {
        acc += j.abs();
    }
    if aggregation == ScoreAggregation::Mean {
        acc /= jacobians.len() as f64;
    }
    let (scores, blocks) = combine(field.order(), acc);
    let mut g = CausalGraph::from_scores(scores, epsilon)?;
    g.blocks = blocks;
    Ok(g)
}

/// Which extractor reads the graph off a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    /// Weight-path product; linear-activation fields only.
    Linear,
    /// Input Jacobians along the observed trajectory.
    Jacobian,
}

impl ExtractionMode {
    /// Path products when the field admits them, Jacobians otherwise.
    pub fn default_for(model: &TrainedModel) -> Self {
        if model.field.activation().is_linear() && model.field.net().features() == FeatureMap::Identity {
            Self::Linear
        } else {
            Self::Jacobian
        }
    }
}

/// Graph of a trained model; Jacobians are taken in normalized units along
/// [`TrainedModel::network_inputs`].
pub fn infer_structure(
    model: &TrainedModel,
    observed: &Trajectory,
    mode: ExtractionMode,
    epsilon: f64,
    aggregation: ScoreAggregation,
) -> Result<CausalGraph> {
    match mode {
        ExtractionMode::Linear => extract_linear(&model.field, epsilon),
        ExtractionMode::Jacobian => {
            extract_nonlinear_with(&model.field, &model.network_inputs(observed)?, epsilon, aggregation)
        }
    }
}

/// Numerical confirmation that two different linear systems share one solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnidentifiabilityReport {
    /// Sup-norm gap between the two analytic solutions on `[0, 2]`.
    pub analytic_deviation: f64,
    /// Same gap between two dopri5 solutions.
    pub dopri5_deviation: f64,
    pub l11_identity: f64,
    pub l11_swap: f64,
    pub nonzero_identity: usize,
    pub nonzero_swap: usize,
    /// Euclidean gap at `t = 1` from the off-diagonal start `(1, -1)`.
    pub control_deviation: f64,
    pub summary: String,
}

pub fn verify_unidentifiability() -> Result<UnidentifiabilityReport> {
    let a = DMatrix::<f64>::identity(2, 2);
    let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let x0 = [1.0, 1.0];
    let times = uniform_grid(0.0, 2.0, 201);

    let analytic_deviation =
        matrix_exponential_solution(&a, &x0, &times)?.sup_distance(&matrix_exponential_solution(&b, &x0, &times)?);
    let cfg = SolverConfig::generation();
    let sol_a = solve_ivp(&LinearField::first_order(a.clone())?, &x0, &times, &cfg)?;
    let sol_b = solve_ivp(&LinearField::first_order(b.clone())?, &x0, &times, &cfg)?;
    let dopri5_deviation = sol_a.sup_distance(&sol_b);

    let l11 = |m: &DMatrix<f64>| m.iter().map(|v| v.abs()).sum::<f64>();
    let nnz = |m: &DMatrix<f64>| m.iter().filter(|v| **v != 0.0).count();

    let control = [1.0, -1.0];
    let ca = matrix_exponential_solution(&a, &control, &[0.0, 1.0])?;
    let cb = matrix_exponential_solution(&b, &control, &[0.0, 1.0])?;
    let control_deviation =
        ca.row(1).iter().zip(cb.row(1)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();

    let report = UnidentifiabilityReport {
        analytic_deviation,
        dopri5_deviation,
        l11_identity: l11(&a),
        l11_swap: l11(&b),
        nonzero_identity: nnz(&a),
        nonzero_swap: nnz(&b),
        control_deviation,
        summary: String::new(),
    };
    let summary = format!(
        "A = I and B = [[0,1],[1,0]] from x0 = (1,1) on [0,2]\n\
         sup |X_A - X_B| (matrix exponential): {:.3e}\n\
         sup |X_A - X_B| (dopri5):             {:.3e}\n\
         ||A||_11 = {}, ||B||_11 = {}; non-zero entries: {} and {}\n\
         control x0 = (1,-1), |X_A(1) - X_B(1)| = {:.6}",
        report.analytic_deviation,
        report.dopri5_deviation,
        report.l11_identity,
        report.l11_swap,
        report.nonzero_identity,
        report.nonzero_swap,
        report.control_deviation
    );
    Ok(UnidentifiabilityReport { summary, ..report })
}
