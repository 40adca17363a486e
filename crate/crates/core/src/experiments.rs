//! Reference experiments shared by the command-line tool and the acceptance
//! suite. Every routine is a pure function of its arguments and seed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervene::{compare_interventions, learned_linear_field, Clamp, InterventionReport, InterventionSpec, Subject, SystemEdit};
use crate::nn::{Activation, Architecture, FeatureMap, NeuralField};
use crate::ode::{uniform_grid, LinearField, Order, SolverConfig, Trajectory, VectorField};
use crate::structure::{
    extract_linear, extract_nonlinear, jacobian_timeseries, score_graph, CausalGraph, GraphMetrics, DEFAULT_EPSILON,
};
use crate::systems::{
    corrupt, generate, CorruptionSpec, Dataset, LinearSecondOrderSystem, SystemSpec, Window,
};
use crate::train::{rollout, train, TrainConfig, TrainedModel};
use crate::var::{fit_var, var_to_graph, VarConfig};

/// Training settings for linear second-order data.
pub fn linear_config(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 0.01, lambda: 1e-3, epochs: 10_000, seed, ..TrainConfig::default() }
}

/// Training settings for the three-variable intervention system.
pub fn intervention_config(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 0.01, lambda: 3e-5, epochs: 20_000, seed, ..TrainConfig::default() }
}

/// Linear-activation second-order architecture of the default width.
pub fn linear_architecture(dim: usize) -> Architecture {
    Architecture::default_for(dim, Order::Second).with_activation(Activation::Linear)
}

/// Training settings for the spiral with cubic input features. The cubic
/// map only commutes with pure scaling, so the data stay in original units.
pub fn spiral_config(seed: u64) -> TrainConfig {
    TrainConfig { lambda: 0.0, normalize: false, seed, ..TrainConfig::default() }
}

/// Training settings for the nonlinear (ELU) fits.
pub fn nonlinear_config(seed: u64) -> TrainConfig {
    TrainConfig { lambda: 0.0, seed, ..TrainConfig::default() }
}

/// Training settings for the transcription network. A small penalty trims
/// some cross terms; ELU networks can cancel signed path products, so it
/// does not act on every Jacobian entry.
pub fn transcription_config(seed: u64) -> TrainConfig {
    TrainConfig { lambda: 0.003, epochs: 8000, seed, ..TrainConfig::default() }
}

pub fn spiral_spec() -> SystemSpec {
    SystemSpec::default_spiral()
}

/// Max relative error between rollout gradients and central finite
/// differences of the unrolled loss, for a random 2-variable linear field
/// observed at 5 times. Entries whose magnitude is below `1e-3` of the
/// largest gradient are compared against that floor instead of themselves.
pub fn gradient_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture {
        dim: 2,
        order: Order::First,
        hidden: vec![4, 4],
        activation: Activation::Linear,
        features: FeatureMap::Identity,
        velocity_hidden: Vec::new(),
    };
    let mut field = NeuralField::new(&arch, &mut rng)?;
    let times = uniform_grid(0.0, 1.0, 5);
    let x0: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = 0.05;

    let loss = |f: &NeuralField| -> Result<(f64, Vec<f64>)> {
        let r = rollout(f, &x0, &times, h)?;
        let out = r.outputs();
        let denom = out.len() as f64;
        let l = out.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / denom;
        let cot: Vec<f64> = out.iter().zip(&target).map(|(p, t)| 2.0 * (p - t) / denom).collect();
        Ok((l, r.backprop(f, &cot)?.params))
    };
    let (_, grad) = loss(&field)?;
    let step = 1e-5;
    let mut fd = vec![0.0; grad.len()];
    for (k, slot) in fd.iter_mut().enumerate() {
        let orig = field.net().params()[k];
        field.net_mut().params_mut()[k] = orig + step;
        let up = loss(&field)?.0;
        field.net_mut().params_mut()[k] = orig - step;
        let down = loss(&field)?.0;
        field.net_mut().params_mut()[k] = orig;
        *slot = (up - down) / (2.0 * step);
    }
    let floor = 1e-3 * grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
    Ok(grad
        .iter()
        .zip(&fd)
        .map(|(g, f)| (g - f).abs() / g.abs().max(f.abs()).max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max))
}

/// One train-and-extract run on a generated linear system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearRun {
    pub dim: usize,
    pub seed: u64,
    pub corruption: CorruptionSpec,
    pub metrics: GraphMetrics,
    pub final_data_loss: f64,
    pub wall_clock_seconds: f64,
}

/// Generates the `dim`-variable system for `seed`, corrupts it, trains a
/// linear second-order field and scores the extracted graph.
pub fn run_linear(
    dim: usize,
    seed: u64,
    corruption: CorruptionSpec,
    cfg: &TrainConfig,
) -> Result<(LinearRun, TrainedModel, Dataset)> {
    let data = generate(&SystemSpec::default_linear(dim, seed))?;
    let observed = corrupt(&data.trajectory, &corruption)?;
    let model = train(&observed, &linear_architecture(dim), cfg)?;
    let graph = extract_linear(&model.field, DEFAULT_EPSILON)?;
    let metrics = score_graph(&graph, &data.truth)?;
    let run = LinearRun {
        dim,
        seed,
        corruption,
        metrics,
        final_data_loss: model.report.final_data_loss,
        wall_clock_seconds: model.report.wall_clock_seconds,
    };
    Ok((run, model, data))
}

/// Seed-averaged metrics of one (dim, σ, irr) setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub dim: usize,
    pub sigma: f64,
    pub irr: f64,
    pub seeds: Vec<u64>,
    pub shd_bar: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub runs: Vec<LinearRun>,
}

impl CellSummary {
    pub fn from_runs(dim: usize, sigma: f64, irr: f64, runs: Vec<LinearRun>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::arg("a cell needs at least one seed"));
        }
        let k = runs.len() as f64;
        let mean = |f: fn(&GraphMetrics) -> f64| runs.iter().map(|r| f(&r.metrics)).sum::<f64>() / k;
        Ok(Self {
            dim,
            sigma,
            irr,
            seeds: runs.iter().map(|r| r.seed).collect(),
            shd_bar: mean(|m| m.shd_bar),
            tpr: mean(|m| m.tpr),
            tnr: mean(|m| m.tnr),
            runs,
        })
    }

    pub const CSV_HEADER: &'static str = "dim,sigma,irr,seeds,shd_bar,tpr,tnr";

    pub fn csv_row(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!("{},{},{},{},{},{},{}", self.dim, self.sigma, self.irr, seeds.join(" "), self.shd_bar, self.tpr, self.tnr)
    }
}

/// Noise and irregularity are drawn with the system seed.
pub fn table_cell(dim: usize, sigma: f64, irr: f64, seeds: &[u64], cfg: impl Fn(u64) -> TrainConfig) -> Result<CellSummary> {
    let runs = seeds
        .iter()
        .map(|&seed| run_linear(dim, seed, CorruptionSpec { sigma, irr, seed }, &cfg(seed)).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    CellSummary::from_runs(dim, sigma, irr, runs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpiralRun {
    pub sigma: f64,
    /// Learned coefficients on the cubed state (linear mode only).
    pub path: Option<DMatrix<f64>>,
    pub truth_coefficients: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    pub metrics: GraphMetrics,
    pub final_data_loss: f64,
}

impl SpiralRun {
    pub fn max_coefficient_error(&self) -> Option<f64> {
        self.path.as_ref().map(|p| (p - &self.truth_coefficients).abs().max())
    }
}

/// Fits the spiral. Linear activation uses cubic input features and reads
/// the coefficients off the path matrix; other activations use plain inputs
/// and Jacobian scores.
pub fn spiral_fit(activation: Activation, sigma: f64, seed: u64) -> Result<SpiralRun> {
    let data = generate(&spiral_spec())?;
    let SystemSpec::Spiral { alpha, beta, .. } = data.spec else { unreachable!() };
    let observed = corrupt(&data.trajectory, &CorruptionSpec { sigma, irr: 0.0, seed })?;
    let linear = activation.is_linear();
    let features = if linear { FeatureMap::Cubic } else { FeatureMap::Identity };
    let arch = Architecture::default_for(2, Order::First).with_activation(activation).with_features(features);
    let cfg = if linear { spiral_config(seed) } else { nonlinear_config(seed) };
    let model = train(&observed, &arch, &cfg)?;
    let graph = if linear {
        extract_linear(&model.field, DEFAULT_EPSILON)?
    } else {
        extract_nonlinear(&model.field, &model.normalization.normalize(&observed), DEFAULT_EPSILON)?
    };
    Ok(SpiralRun {
        sigma,
        path: linear.then(|| model.field.path_matrix()),
        truth_coefficients: crate::systems::spiral_field(alpha, beta).coefficient_matrix(),
        scores: graph.scores().clone(),
        metrics: score_graph(&graph, &data.truth)?,
        final_data_loss: model.report.final_data_loss,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisePoint {
    pub sigma: f64,
    pub full_graph: bool,
    /// Mean squared difference to the score matrix of the noise-free fit.
    pub score_mse: f64,
    pub run: SpiralRun,
}

/// Spiral fits (cubic features, linear activation) at each noise level,
/// compared with the noise-free fit.
pub fn noise_sweep(sigmas: &[f64], seed: u64) -> Result<Vec<NoisePoint>> {
    let reference = spiral_fit(Activation::Linear, 0.0, seed)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let run = if sigma == 0.0 { reference.clone() } else { spiral_fit(Activation::Linear, sigma, seed)? };
            let diff = &run.scores - &reference.scores;
            let score_mse = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
            let full_graph = run.scores.iter().all(|&s| s > DEFAULT_EPSILON);
            Ok(NoisePoint { sigma, full_graph, score_mse, run })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LotkaVolterraRun {
    /// Pearson correlation between the learned `∂f₀/∂x₁` and `x₁` along the data.
    pub corr_with_x1: f64,
    /// Same, against the analytic `∂f₀/∂x₁` of the generating field.
    pub corr_with_truth: f64,
    pub metrics: GraphMetrics,
    pub scores: DMatrix<f64>,
    pub final_data_loss: f64,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// ELU fit of the default Lotka–Volterra data. Returns the model for reuse
/// in intervention experiments.
pub fn lotka_volterra_fit(seed: u64) -> Result<(LotkaVolterraRun, TrainedModel, Dataset)> {
    let data = generate(&SystemSpec::default_lv())?;
    let SystemSpec::Lv { params, .. } = &data.spec else { unreachable!() };
    let arch = Architecture::default_for(2, Order::First);
    let model = train(&data.trajectory, &arch, &nonlinear_config(seed))?;
    let normalized = model.normalization.normalize(&data.trajectory);
    let jac = jacobian_timeseries(&model.field, &normalized)?;
    let learned: Vec<f64> = jac.iter().map(|j| j[(0, 1)]).collect();
    let x1 = data.trajectory.column(1);
    let analytic: Vec<f64> = data.trajectory.rows().map(|r| params.jacobian(r)[(0, 1)]).collect();
    let graph = extract_nonlinear(&model.field, &normalized, DEFAULT_EPSILON)?;
    let run = LotkaVolterraRun {
        corr_with_x1: pearson(&learned, &x1),
        corr_with_truth: pearson(&learned, &analytic),
        metrics: score_graph(&graph, &data.truth)?,
        scores: graph.scores().clone(),
        final_data_loss: model.report.final_data_loss,
    };
    Ok((run, model, data))
}

/// Three-variable damped system in which `x₁` has no path from `x₀`.
pub fn intervention_system() -> LinearSecondOrderSystem {
    LinearSecondOrderSystem::new(
        DMatrix::from_row_slice(3, 3, &[-0.2, 0.0, 0.0, 0.0, -0.3, 0.0, 0.0, 0.5, -0.2]),
        DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 0.0, -0.5, 0.0, 0.8, 0.0, -1.0]),
        vec![1.0, 0.5, -0.5],
        vec![0.0, 0.2, 0.1],
    )
    .expect("square blocks")
}

/// Outcome of the linear system edit and clamp experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearInterventionRun {
    pub final_data_loss: f64,
    /// Per-variable sup-norm change of the learned prediction caused by
    /// scaling the `x₀ → ẍ₀` coefficient by 8.
    pub edit_change: Vec<f64>,
    /// Same change under the generating system.
    pub edit_change_truth: Vec<f64>,
    /// Clamp `x₀ := 0.4` on both systems.
    pub clamp: InterventionReport,
    /// Largest deviation of the clamped component from its clamp value.
    pub clamp_drift: f64,
}

pub fn linear_interventions(cfg: &TrainConfig) -> Result<(LinearInterventionRun, TrainedModel)> {
    let system = intervention_system();
    let window = Window::default();
    let times = window.grid();
    let observed = system.simulate(&times, &SolverConfig::generation())?;
    let model = train(&observed, &linear_architecture(3), cfg)?;
    let learned = learned_linear_field(&model)?;
    let x0 = system.x0.clone();
    let v0 = model.initial_velocity(&x0)?;

    let edit = InterventionSpec { edits: vec![SystemEdit::scale(0, 0, 8.0)], ..Default::default() };
    let change = |field: &LinearField, v0: &[f64]| -> Result<Vec<f64>> {
        let subject = Subject::linear(field.clone(), Some(v0.to_vec()));
        let cfg = crate::train::prediction_solver();
        let base = subject.simulate(&InterventionSpec::default(), &x0, &times, &cfg)?.0;
        let edited = subject.simulate(&edit, &x0, &times, &cfg)?.0;
        Ok((0..3).map(|i| sup_column_gap(&base, &edited, i)).collect())
    };
    let edit_change = change(&learned, &v0)?;
    let edit_change_truth = change(&system.field(), &system.v0)?;

    let spec = InterventionSpec { clamps: vec![Clamp { index: 0, value: 0.4 }], ..Default::default() };
    let clamp = compare_interventions(
        &Subject::linear(system.field(), Some(system.v0.clone())),
        &Subject::linear(learned, Some(v0)),
        &spec,
        &x0,
        &times,
    )?;
    let clamp_drift = clamp
        .learned
        .iter()
        .chain(clamp.truth.iter())
        .flat_map(|t| t.column(0))
        .map(|v| (v - 0.4).abs())
        .fold(0.0, f64::max);
    let run = LinearInterventionRun {
        final_data_loss: model.report.final_data_loss,
        edit_change,
        edit_change_truth,
        clamp,
        clamp_drift,
    };
    Ok((run, model))
}

fn sup_column_gap(a: &Trajectory, b: &Trajectory, i: usize) -> f64 {
    a.rows().zip(b.rows()).map(|(p, q)| (p[i] - q[i]).abs()).fold(0.0, f64::max)
}

/// Clamp experiments on a trained Lotka–Volterra field: `x₁ := 1` and `x₀ := 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LotkaVolterraInterventions {
    pub clamp_x1: InterventionReport,
    pub clamp_x0: InterventionReport,
    /// Sign agreement of the free variable's derivative under each clamp.
    pub free_sign_agreement: [f64; 2],
}

pub fn lotka_volterra_interventions(model: &TrainedModel, data: &Dataset) -> Result<LotkaVolterraInterventions> {
    let SystemSpec::Lv { params, x0, window } = &data.spec else {
        return Err(Error::arg("dataset is not a Lotka–Volterra system"));
    };
    let truth: &dyn VectorField = params;
    let learned = model.original_units_field();
    let times = window.grid();
    let run = |index: usize| {
        let spec = InterventionSpec { clamps: vec![Clamp { index, value: 1.0 }], ..Default::default() };
        compare_interventions(&Subject::field(truth, None), &Subject::field(&learned, None), &spec, x0, &times)
    };
    let clamp_x1 = run(1)?;
    let clamp_x0 = run(0)?;
    let free_sign_agreement = [clamp_x1.sign_agreement[0], clamp_x0.sign_agreement[1]];
    Ok(LotkaVolterraInterventions { clamp_x1, clamp_x0, free_sign_agreement })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptionRun {
    pub metrics: GraphMetrics,
    pub scores: DMatrix<f64>,
    pub edges: Vec<(usize, usize)>,
    /// No edge from `u` or `s` into the driving signal.
    pub driver_isolated: bool,
    pub final_data_loss: f64,
}

pub fn transcription_fit(seed: u64) -> Result<TranscriptionRun> {
    let data = generate(&SystemSpec::default_transcription())?;
    let arch = Architecture::default_for(3, Order::First);
    let model = train(&data.trajectory, &arch, &transcription_config(seed))?;
    let graph = extract_nonlinear(&model.field, &model.normalization.normalize(&data.trajectory), DEFAULT_EPSILON)?;
    Ok(TranscriptionRun {
        metrics: score_graph(&graph, &data.truth)?,
        scores: graph.scores().clone(),
        edges: graph.edges(),
        driver_isolated: !graph.has_edge(0, 1) && !graph.has_edge(0, 2),
        final_data_loss: model.report.final_data_loss,
    })
}

/// Lagged-regression baseline against the neural pipeline on one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub neural: GraphMetrics,
    pub baseline: GraphMetrics,
    /// Acyclicity score of the baseline's instantaneous matrix.
    pub acyclicity: f64,
}

pub fn compare_with_baseline(dim: usize, seed: u64, cfg: &TrainConfig) -> Result<BaselineComparison> {
    let (run, _, data) = run_linear(dim, seed, CorruptionSpec::default(), cfg)?;
    let var = fit_var(&data.trajectory, &VarConfig::default())?;
    let graph: CausalGraph = var_to_graph(&var, DEFAULT_EPSILON)?;
    Ok(BaselineComparison { neural: run.metrics, baseline: score_graph(&graph, &data.truth)?, acyclicity: var.acyclicity() })
}
