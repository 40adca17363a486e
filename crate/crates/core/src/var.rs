//! Lagged vector-autoregressive baseline (`var-baseline`): L1-penalized
//! regression of `x(t)` on `x(t)..x(t-k)` with a smooth acyclicity score on
//! the instantaneous matrix.
//!
//! Matrices follow the row-is-effect convention: `W[i][j]` is the effect of
//! `x_j` on `x_i`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{expm, uniform_grid, Trajectory};
use crate::structure::CausalGraph;
use crate::train::{Adam, Normalization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VarConfig {
    pub lag: usize,
    pub lambda0: f64,
    pub lambda_rest: f64,
    pub mu: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Fit on data mapped to `[0, 1]` per variable.
    pub normalize: bool,
}

impl Default for VarConfig {
    fn default() -> Self {
        Self {
            lag: 2,
            lambda0: 0.01,
            lambda_rest: 0.01,
            mu: 10.0,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 2000,
            normalize: true,
        }
    }
}

impl VarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(Error::arg("lag must be at least 1"));
        }
        for (name, v) in [("lambda0", self.lambda0), ("lambda_rest", self.lambda_rest), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 {
            return Err(Error::arg("learning rate and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    /// `weights[τ]` multiplies `x(t-τ)`; `weights[0]` has a zero diagonal.
    pub weights: Vec<DMatrix<f64>>,
    pub config: VarConfig,
    /// Objective value before each update.
    pub objective: Vec<f64>,
    /// Residual term of the final model.
    pub residual: f64,
    pub warnings: Vec<String>,
}

impl VarModel {
    pub fn dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn lag(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn acyclicity(&self) -> f64 {
        acyclicity(&self.weights[0]).0
    }
}

/// `h(W) = tr(exp(W ∘ W)) - n` and its gradient `exp(W ∘ W)ᵀ ∘ 2W`.
pub fn acyclicity(w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let e = expm(&w.component_mul(w));
    let h = e.trace() - w.nrows() as f64;
    let grad = e.transpose().component_mul(&(w * 2.0));
    (h, grad)
}

/// Linear interpolation of `traj` onto `points` uniform times over its span.
pub fn resample_uniform(traj: &Trajectory, points: usize) -> Result<Trajectory> {
    let times = traj.times();
    let grid = uniform_grid(times[0], times[times.len() - 1], points);
    let mut rows = Vec::with_capacity(points);
    let mut k = 0;
    for &t in &grid {
        while k + 2 < times.len() && times[k + 1] < t {
            k += 1;
        }
        let (t0, t1) = (times[k], times[k + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        rows.push(traj.row(k).iter().zip(traj.row(k + 1)).map(|(a, b)| a + w * (b - a)).collect());
    }
    Trajectory::new(grid, rows)
}

fn is_uniform(times: &[f64]) -> bool {
    let h = times[1] - times[0];
    times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0))
}

struct Design {
    /// `lagged[τ]` holds `x(t-τ)` for `t = k..N-1` as columns.
    lagged: Vec<DMatrix<f64>>,
    samples: usize,
}

impl Design {
    fn new(traj: &Trajectory, lag: usize) -> Self {
        let (n, len) = (traj.dim(), traj.len());
        let samples = len - lag;
        let lagged = (0..=lag)
            .map(|tau| DMatrix::from_fn(n, samples, |i, c| traj.row(c + lag - tau)[i]))
            .collect();
        Self { lagged, samples }
    }

    fn residual(&self, weights: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut r = self.lagged[0].clone();
        for (w, x) in weights.iter().zip(&self.lagged) {
            r -= w * x;
        }
        r
    }
}

struct Objective {
    total: f64,
    residual: f64,
}

fn evaluate(design: &Design, weights: &[DMatrix<f64>], cfg: &VarConfig, grads: Option<&mut [DMatrix<f64>]>) -> Objective {
    let n = weights[0].nrows();
    let denom = (design.samples * n) as f64;
    let r = design.residual(weights);
    let residual = r.norm_squared() / denom;
    let l1 = |w: &DMatrix<f64>| w.iter().map(|v| v.abs()).sum::<f64>();
    let (h, h_grad) = acyclicity(&weights[0]);
    let mut total = residual + cfg.lambda0 * l1(&weights[0]) + cfg.mu * h;
    for w in &weights[1..] {
        total += cfg.lambda_rest * l1(w);
    }
    if let Some(grads) = grads {
        for (tau, g) in grads.iter_mut().enumerate() {
            let lambda = if tau == 0 { cfg.lambda0 } else { cfg.lambda_rest };
            *g = &r * design.lagged[tau].transpose() * (-2.0 / denom) + weights[tau].map(|v| lambda * sgn(v));
        }
        grads[0] += &h_grad * cfg.mu;
        for i in 0..n {
            grads[0][(i, i)] = 0.0;
        }
    }
    Objective { total, residual }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fits the lagged model by full-batch Adam. Irregular grids are first
/// linearly interpolated onto a uniform one (recorded in `warnings`).
pub fn fit_var(traj: &Trajectory, cfg: &VarConfig) -> Result<VarModel> {
    cfg.validate()?;
    if traj.len() < cfg.lag + 2 {
        return Err(Error::arg(format!(
            "{} samples are too few for lag {}; need at least {}",
            traj.len(),
            cfg.lag,
            cfg.lag + 2
        )));
    }
    let mut warnings = Vec::new();
    let uniform = if is_uniform(traj.times()) {
        traj.clone()
    } else {
        warnings.push("irregular time grid linearly interpolated onto a uniform grid".to_string());
        resample_uniform(traj, traj.len())?
    };
    let data = if cfg.normalize { Normalization::fit(&uniform).normalize(&uniform) } else { uniform };
    let n = data.dim();
    let design = Design::new(&data, cfg.lag);

    let count = cfg.lag + 1;
    let mut weights = vec![DMatrix::<f64>::zeros(n, n); count];
    let mut grads = weights.clone();
    let mut flat = vec![0.0; count * n * n];
    let mut flat_grad = flat.clone();
    let mut opt = Adam::new(flat.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut objective = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let obj = evaluate(&design, &weights, cfg, Some(&mut grads));
        if !obj.total.is_finite() {
            return Err(Error::TrainingDiverged { epoch, reason: "var-baseline objective is not finite".into() });
        }
        objective.push(obj.total);
        for (g, chunk) in grads.iter().zip(flat_grad.chunks_mut(n * n)) {
            chunk.copy_from_slice(g.as_slice());
        }
        opt.step(&mut flat, &flat_grad);
        for (w, chunk) in weights.iter_mut().zip(flat.chunks(n * n)) {
            w.copy_from_slice(chunk);
        }
        for i in 0..n {
            weights[0][(i, i)] = 0.0;
            flat[i * n + i] = 0.0;
        }
    }
    let residual = evaluate(&design, &weights, cfg, None).residual;
    Ok(VarModel { weights, config: cfg.clone(), objective, residual, warnings })
}

/// `S[i][j] = max_τ |W(τ)[i][j]|`, thresholded at `epsilon`.
pub fn var_to_graph(model: &VarModel, epsilon: f64) -> Result<CausalGraph> {
    let n = model.dim();
    let scores = DMatrix::from_fn(n, n, |i, j| model.weights.iter().map(|w| w[(i, j)].abs()).fold(0.0, f64::max));
    CausalGraph::from_scores(scores, epsilon)
}
