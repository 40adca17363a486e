//! Fitting a [`NeuralField`] to one observed trajectory.
//!
//! The loss is the mean squared error between an RK4 rollout started from
//! the first observed row and every observed row, plus `λ‖W^{L+1}⋯W^1‖₁,₁`.
//! Gradients come from an exact reverse pass through the unrolled solver.
//! Second-order fields also train their initial-velocity network through
//! the same loss.

mod adam;
mod normalize;
mod rollout;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, FieldSnapshot, Mlp, NeuralField};
use crate::ode::{reduce_second_order, solve_ivp, Order, SolverConfig, Trajectory, VectorField};

pub use adam::Adam;
pub use normalize::Normalization;
pub use rollout::{rollout, Rollout, RolloutGrad};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the path-product L1 penalty.
    pub lambda: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// RK4 substep used by the rollout; `None` means a quarter of the
    /// smallest observed spacing.
    pub h_train: Option<f64>,
    /// Map every variable onto `[0, 1]` before training.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 2000,
            h_train: None,
            normalize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with λ raised to 0.1 for 50 or more variables.
    pub fn default_for_dim(dim: usize) -> Self {
        let lambda = if dim >= 50 { 0.1 } else { 0.01 };
        Self { lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::arg("lambda must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::arg("invalid Adam hyperparameters"));
        }
        if let Some(h) = self.h_train {
            if !(h > 0.0) {
                return Err(Error::arg("h_train must be positive"));
            }
        }
        Ok(())
    }

    pub fn resolved_step(&self, times: &[f64]) -> f64 {
        self.h_train.unwrap_or_else(|| {
            times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) / 4.0
        })
    }
}

/// Per-epoch losses. `penalty` holds the unweighted `‖A‖₁,₁`; the
/// penalty term of the objective is `lambda * penalty`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub lambda: f64,
    pub data_loss: Vec<f64>,
    pub penalty: Vec<f64>,
    /// Losses of the returned parameters (after the last update).
    pub final_data_loss: f64,
    pub final_penalty: f64,
    /// Not serialized, so checkpoints of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.data_loss.len()
    }

    pub fn total_loss(&self, epoch: usize) -> f64 {
        self.data_loss[epoch] + self.lambda * self.penalty[epoch]
    }

    /// `epoch,data_loss,penalty` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,data_loss,penalty\n");
        for (k, (d, p)) in self.data_loss.iter().zip(&self.penalty).enumerate() {
            s.push_str(&format!("{k},{d:e},{p:e}\n"));
        }
        s
    }
}

/// A trained field together with everything needed to use it in the
/// original data units.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub field: NeuralField,
    pub normalization: Normalization,
    pub config: TrainConfig,
    pub architecture: Architecture,
    pub h_train: f64,
    pub report: TrainReport,
}

/// Stateful optimizer over one training run. It owns all of its state and
/// can be moved between threads between epochs.
pub struct Trainer {
    field: NeuralField,
    architecture: Architecture,
    cfg: TrainConfig,
    normalization: Normalization,
    observed: Trajectory,
    rollout: Rollout,
    net_opt: Adam,
    vel_opt: Option<Adam>,
    report: TrainReport,
    h_train: f64,
    started: Instant,
}

struct Evaluation {
    data_loss: f64,
    penalty: f64,
    net_grad: Vec<f64>,
    vel_grad: Option<Vec<f64>>,
}

impl Trainer {
    pub fn new(observed: &Trajectory, arch: &Architecture, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let field = NeuralField::new(arch, &mut rng)?;
        Self::with_field(observed, field, arch, cfg)
    }

    /// Starts from a given field instead of a seeded initialization.
    pub fn with_field(observed: &Trajectory, field: NeuralField, arch: &Architecture, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if observed.len() < 2 {
            return Err(Error::arg("training needs at least two observed time points"));
        }
        if observed.dim() != field.dim() {
            return Err(Error::arg(format!(
                "observed trajectory has {} variables, architecture expects {}",
                observed.dim(),
                field.dim()
            )));
        }
        let normalization =
            if cfg.normalize { Normalization::fit(observed) } else { Normalization::identity(observed.dim()) };
        let observed = normalization.normalize(observed);
        let h_train = cfg.resolved_step(observed.times());
        let rollout = Rollout::plan(&field, observed.times(), h_train)?;
        let net_opt = Adam::new(field.net().param_len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
        let vel_opt = field
            .velocity_net()
            .map(|v| Adam::new(v.param_len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps));
        Ok(Self {
            field,
            architecture: arch.clone(),
            cfg: cfg.clone(),
            normalization,
            observed,
            rollout,
            net_opt,
            vel_opt,
            report: TrainReport { lambda: cfg.lambda, ..Default::default() },
            h_train,
            started: Instant::now(),
        })
    }

    pub fn field(&self) -> &NeuralField {
        &self.field
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn h_train(&self) -> f64 {
        self.h_train
    }

    /// Observed data in the normalized training space.
    pub fn observed(&self) -> &Trajectory {
        &self.observed
    }

    fn evaluate(&mut self, with_grad: bool) -> Result<Evaluation> {
        let n = self.field.dim();
        let x0 = self.observed.row(0).to_vec();
        let (u0, vel_tape) = match self.field.velocity_net() {
            Some(vnet) => {
                let (v0, tape) = vnet.forward(&x0)?;
                (x0.iter().chain(&v0).copied().collect::<Vec<_>>(), Some(tape))
            }
            None => match self.field.order() {
                Order::First => (x0.clone(), None),
                Order::Second => (x0.iter().copied().chain(std::iter::repeat_n(0.0, n)).collect(), None),
            },
        };
        self.rollout.run(&self.field, &u0)?;

        let len = self.rollout.state_len();
        let rows = self.observed.len();
        let denom = (rows * n) as f64;
        let mut data_loss = 0.0;
        let mut cot = vec![0.0; self.rollout.outputs().len()];
        for (k, obs) in self.observed.rows().enumerate() {
            let pred = &self.rollout.outputs()[k * len..k * len + n];
            for i in 0..n {
                let e = pred[i] - obs[i];
                data_loss += e * e;
                cot[k * len + i] = 2.0 * e / denom;
            }
        }
        data_loss /= denom;
        let (penalty, pen_grad) = self.field.l1_path_penalty();

        if !with_grad {
            return Ok(Evaluation { data_loss, penalty, net_grad: Vec::new(), vel_grad: None });
        }
        let mut net_grad: Vec<f64> = pen_grad.iter().map(|g| self.cfg.lambda * g).collect();
        let u0_bar = self.rollout.backprop_into(&self.field, &cot, &mut net_grad)?;
        let vel_grad = match (self.field.velocity_net(), vel_tape) {
            (Some(vnet), Some(tape)) => Some(vnet.grad_params(&tape, &u0_bar[n..])?),
            _ => None,
        };
        Ok(Evaluation { data_loss, penalty, net_grad, vel_grad })
    }

    /// One full-batch Adam update. Returns `(data_loss, penalty)` of the
    /// parameters before the update.
    pub fn epoch(&mut self) -> Result<(f64, f64)> {
        let epoch = self.report.epochs();
        let eval = self.evaluate(true).map_err(|e| match e {
            Error::IntegrationFailure { reason, t } => {
                Error::TrainingDiverged { epoch, reason: format!("rollout diverged at t = {t}: {reason}") }
            }
            other => other,
        })?;
        if !eval.data_loss.is_finite() || !eval.penalty.is_finite() {
            return Err(Error::TrainingDiverged { epoch, reason: "non-finite loss".into() });
        }
        let grads_finite = eval.net_grad.iter().chain(eval.vel_grad.iter().flatten()).all(|g| g.is_finite());
        if !grads_finite {
            return Err(Error::TrainingDiverged { epoch, reason: "non-finite gradient".into() });
        }
        self.net_opt.step(self.field.net_mut().params_mut(), &eval.net_grad);
        if let (Some(opt), Some(g), Some(vnet)) =
            (self.vel_opt.as_mut(), eval.vel_grad.as_ref(), self.field.velocity_net_mut())
        {
            opt.step(vnet.params_mut(), g);
        }
        self.report.data_loss.push(eval.data_loss);
        self.report.penalty.push(eval.penalty);
        Ok((eval.data_loss, eval.penalty))
    }

    /// Losses of the current parameters without updating them.
    pub fn current_loss(&mut self) -> Result<(f64, f64)> {
        let eval = self.evaluate(false)?;
        Ok((eval.data_loss, eval.penalty))
    }

    pub fn finish(mut self) -> Result<TrainedModel> {
        let epoch = self.report.epochs();
        let (d, p) = self.current_loss().map_err(|e| Error::TrainingDiverged { epoch, reason: e.to_string() })?;
        self.report.final_data_loss = d;
        self.report.final_penalty = p;
        self.report.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        Ok(TrainedModel {
            field: self.field,
            normalization: self.normalization,
            config: self.cfg,
            architecture: self.architecture,
            h_train: self.h_train,
            report: self.report,
        })
    }
}

/// Trains a fresh field of the given architecture on `observed`.
pub fn train(observed: &Trajectory, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut trainer = Trainer::new(observed, arch, cfg)?;
    for _ in 0..cfg.epochs {
        trainer.epoch()?;
    }
    trainer.finish()
}

/// Initial velocity predicted by `velocity_net` from the first observed row.
pub fn estimate_initial_velocity(observed: &Trajectory, velocity_net: &Mlp) -> Result<Vec<f64>> {
    if observed.len() < 2 {
        return Err(Error::arg("need at least two observed rows"));
    }
    if velocity_net.input_width() != observed.dim() || velocity_net.output_width() != observed.dim() {
        return Err(Error::arg("velocity network width does not match the observed dimension"));
    }
    Ok(velocity_net.forward(observed.row(0))?.0)
}

/// A trained field expressed in the original (unnormalized) data units.
#[derive(Debug, Clone)]
pub struct DenormalizedField {
    field: NeuralField,
    norm: Normalization,
}

impl DenormalizedField {
    pub fn new(field: NeuralField, norm: Normalization) -> Result<Self> {
        if norm.dim() != field.dim() {
            return Err(Error::arg("normalization dimension does not match field"));
        }
        Ok(Self { field, norm })
    }
}

impl VectorField for DenormalizedField {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn order(&self) -> Order {
        self.field.order()
    }

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let n = self.field.dim();
        let mut z = self.norm.to_normalized(&state[..n]);
        if self.field.order() == Order::Second {
            z.extend(self.norm.velocity_to_normalized(&state[n..]));
        }
        self.field.eval(t, &z, out);
        for (j, o) in out.iter_mut().enumerate() {
            *o *= self.norm.scale[j];
        }
    }
}

/// Tolerances used by [`TrainedModel::predict`].
pub fn prediction_solver() -> SolverConfig {
    SolverConfig::dopri5(1e-10, 1e-12)
}

impl TrainedModel {
    /// The learned field in original units.
    pub fn original_units_field(&self) -> DenormalizedField {
        DenormalizedField { field: self.field.clone(), norm: self.normalization.clone() }
    }

    /// Initial velocity (original units) the model assigns to `x0`.
    pub fn initial_velocity(&self, x0: &[f64]) -> Result<Vec<f64>> {
        let z0 = self.normalization.to_normalized(x0);
        let v = self.field.initial_velocity(&z0)?;
        Ok(self.normalization.velocity_to_original(&v))
    }

    /// Full state trajectory (positions then velocities for second-order
    /// fields) in original units, integrated with dopri5.
    pub fn predict_states(&self, x0: &[f64], times: &[f64], v0: Option<&[f64]>, cfg: &SolverConfig) -> Result<Trajectory> {
        let field = self.original_units_field();
        match self.field.order() {
            Order::First => solve_ivp(&field, x0, times, cfg),
            Order::Second => {
                let v0 = match v0 {
                    Some(v) => v.to_vec(),
                    None => self.initial_velocity(x0)?,
                };
                let (reduced, u0) = reduce_second_order(field, x0, &v0)?;
                solve_ivp(&reduced, &u0, times, cfg)
            }
        }
    }

    /// Predicted positions at arbitrary times, in original units.
    pub fn predict(&self, x0: &[f64], times: &[f64], v0: Option<&[f64]>) -> Result<Trajectory> {
        let full = self.predict_states(x0, times, v0, &prediction_solver())?;
        Ok(full.leading_columns(self.field.dim()))
    }

    /// Network inputs (normalized units) along an observed trajectory: the
    /// observations themselves for first-order fields, and the model's own
    /// `(x, ẋ)` prediction from the first observation for second-order ones.
    pub fn network_inputs(&self, observed: &Trajectory) -> Result<Trajectory> {
        let n = self.field.dim();
        if observed.dim() != n {
            return Err(Error::arg(format!("trajectory has {} columns, the model {n} variables", observed.dim())));
        }
        match self.field.order() {
            Order::First => Ok(self.normalization.normalize(observed)),
            Order::Second => {
                let states = self.predict_states(observed.row(0), observed.times(), None, &prediction_solver())?;
                let rows = states
                    .rows()
                    .map(|r| {
                        let mut z = self.normalization.to_normalized(&r[..n]);
                        z.extend(self.normalization.velocity_to_normalized(&r[n..]));
                        z
                    })
                    .collect();
                Trajectory::new(observed.times().to_vec(), rows)
            }
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            field: FieldSnapshot::new(&self.field, Some(self.normalization.clone())),
            architecture: self.architecture.clone(),
            config: self.config.clone(),
            h_train: self.h_train,
            report: self.report.clone(),
        }
    }
}

/// On-disk form of a [`TrainedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub field: FieldSnapshot,
    pub architecture: Architecture,
    pub config: TrainConfig,
    pub h_train: f64,
    pub report: TrainReport,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<TrainedModel> {
        let field = self.field.to_field()?;
        let normalization = self.field.normalization.clone().unwrap_or_else(|| Normalization::identity(field.dim()));
        Ok(TrainedModel {
            field,
            normalization,
            config: self.config,
            architecture: self.architecture,
            h_train: self.h_train,
            report: self.report,
        })
    }
}

#[cfg(test)]
mod tests;
