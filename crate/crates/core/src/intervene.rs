//! Variable interventions (clamping) and system interventions (coefficient
//! edits), applied alike to ground-truth and learned fields.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::FeatureMap;
use crate::ode::{simulate, LinearField, Order, SolverConfig, Trajectory, VectorField};
use crate::systems::Window;
use crate::train::{prediction_solver, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamp {
    pub index: usize,
    pub value: f64,
}

/// Scales or replaces one coefficient. For second-order fields columns
/// `0..n` address the position block and `n..2n` the velocity block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemEdit {
    pub row: usize,
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_to: Option<f64>,
}

impl SystemEdit {
    pub fn scale(row: usize, col: usize, multiplier: f64) -> Self {
        Self { row, col, multiplier: Some(multiplier), set_to: None }
    }

    pub fn set(row: usize, col: usize, value: f64) -> Self {
        Self { row, col, multiplier: None, set_to: Some(value) }
    }

    fn apply(&self, current: f64) -> Result<f64> {
        match (self.multiplier, self.set_to) {
            (Some(m), None) => Ok(current * m),
            (None, Some(v)) => Ok(v),
            _ => Err(Error::arg(format!(
                "edit ({}, {}) needs exactly one of multiplier and set_to",
                self.row, self.col
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionSpec {
    pub clamps: Vec<Clamp>,
    pub edits: Vec<SystemEdit>,
    /// Simulation grid starting at `t = 0`; callers supply their own grid when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Window>,
}

impl InterventionSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        check_clamps(&self.clamps, dim)?;
        for e in &self.edits {
            e.apply(0.0)?;
        }
        Ok(())
    }
}

fn check_clamps(clamps: &[Clamp], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    for c in clamps {
        if c.index >= dim {
            return Err(Error::arg(format!("clamp index {} out of range for {dim} variables", c.index)));
        }
        if seen[c.index] {
            return Err(Error::arg(format!("variable {} is clamped twice", c.index)));
        }
        if !c.value.is_finite() {
            return Err(Error::arg("clamp values must be finite"));
        }
        seen[c.index] = true;
    }
    Ok(())
}

/// A field with some variables held fixed: their derivatives are zero and
/// every other component sees the clamp value in their place.
#[derive(Debug, Clone)]
pub struct ClampedField<F> {
    inner: F,
    clamps: Vec<Clamp>,
}

pub fn clamp_variables<F: VectorField>(field: F, clamps: &[Clamp]) -> Result<ClampedField<F>> {
    check_clamps(clamps, field.dim())?;
    Ok(ClampedField { inner: field, clamps: clamps.to_vec() })
}

impl<F: VectorField> ClampedField<F> {
    pub fn inner(&self) -> &F {
        &self.inner
    }

    pub fn clamps(&self) -> &[Clamp] {
        &self.clamps
    }

    /// Initial position with clamped components overwritten.
    pub fn clamp_position(&self, x0: &[f64]) -> Vec<f64> {
        let mut x = x0.to_vec();
        for c in &self.clamps {
            x[c.index] = c.value;
        }
        x
    }

    /// Initial velocity with clamped components zeroed.
    pub fn clamp_velocity(&self, v0: &[f64]) -> Vec<f64> {
        let mut v = v0.to_vec();
        for c in &self.clamps {
            v[c.index] = 0.0;
        }
        v
    }
}

impl<F: VectorField> VectorField for ClampedField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn order(&self) -> Order {
        self.inner.order()
    }

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let n = self.inner.dim();
        let mut y = state.to_vec();
        for c in &self.clamps {
            y[c.index] = c.value;
            if self.inner.order() == Order::Second {
                y[n + c.index] = 0.0;
            }
        }
        self.inner.eval(t, &y, out);
        for c in &self.clamps {
            out[c.index] = 0.0;
        }
    }
}

/// Applies coefficient edits to a linear field.
pub fn edit_linear_system(field: &LinearField, edits: &[SystemEdit]) -> Result<LinearField> {
    let mut out = field.clone();
    let (rows, cols) = out.matrix.shape();
    for e in edits {
        if e.row >= rows || e.col >= cols {
            return Err(Error::arg(format!("edit ({}, {}) outside the {rows}×{cols} system", e.row, e.col)));
        }
        out.matrix[(e.row, e.col)] = e.apply(out.matrix[(e.row, e.col)])?;
    }
    Ok(out)
}

/// The affine system a linear-activation model represents, in original units.
pub fn learned_linear_field(model: &TrainedModel) -> Result<LinearField> {
    let field = &model.field;
    if !field.activation().is_linear() || field.net().features() != FeatureMap::Identity {
        return Err(Error::UnsupportedMode(
            "system edits need a linear-activation field without feature maps".into(),
        ));
    }
    let n = field.dim();
    let path = field.path_matrix();
    let bias = DVector::from_vec(field.net().forward(&vec![0.0; field.net().input_width()])?.0);
    let norm = &model.normalization;
    let s = DVector::from_column_slice(&norm.scale);
    let m = DVector::from_column_slice(&norm.offset);
    // A = S P S⁻¹ per block.
    let matrix = DMatrix::from_fn(n, path.ncols(), |i, j| s[i] * path[(i, j)] / s[j % n]);
    let position_block = matrix.columns(0, n);
    let offset = s.component_mul(&bias) - position_block * m;
    LinearField { matrix, offset: DVector::zeros(n), order: field.order() }.with_offset(offset)
}

/// Either an arbitrary field or an explicit linear system (which also
/// accepts system edits), plus its initial velocity for second-order fields.
pub enum Subject<'a> {
    Field { field: &'a dyn VectorField, v0: Option<Vec<f64>> },
    Linear { field: LinearField, v0: Option<Vec<f64>> },
}

impl<'a> Subject<'a> {
    pub fn field(field: &'a dyn VectorField, v0: Option<Vec<f64>>) -> Self {
        Self::Field { field, v0 }
    }

    pub fn linear(field: LinearField, v0: Option<Vec<f64>>) -> Self {
        Self::Linear { field, v0 }
    }

    fn dim(&self) -> usize {
        match self {
            Self::Field { field, .. } => field.dim(),
            Self::Linear { field, .. } => field.dim(),
        }
    }

    /// Simulates under the intervention. Rows are `(x, ẋ)` for
    /// second-order subjects. Also returns the derivative of every
    /// position along the path.
    pub fn simulate(&self, spec: &InterventionSpec, x0: &[f64], times: &[f64], cfg: &SolverConfig) -> Result<(Trajectory, Trajectory)> {
        match self {
            Self::Field { field, v0 } => {
                if !spec.edits.is_empty() {
                    return Err(Error::UnsupportedMode(
                        "system edits apply to linear systems only; pass the subject as a linear system".into(),
                    ));
                }
                run(*field, spec, x0, v0.as_deref(), times, cfg)
            }
            Self::Linear { field, v0 } => {
                let edited = edit_linear_system(field, &spec.edits)?;
                run(&edited, spec, x0, v0.as_deref(), times, cfg)
            }
        }
    }
}

fn run<F: VectorField>(
    field: F,
    spec: &InterventionSpec,
    x0: &[f64],
    v0: Option<&[f64]>,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<(Trajectory, Trajectory)> {
    let n = field.dim();
    let order = field.order();
    let clamped = clamp_variables(field, &spec.clamps)?;
    let x0 = clamped.clamp_position(x0);
    let v0 = v0.map(|v| clamped.clamp_velocity(v));
    let traj = simulate(&clamped, &x0, v0.as_deref(), times, cfg)?;
    let derivs: Vec<Vec<f64>> = match order {
        Order::First => traj.rows().map(|r| clamped.eval_vec(0.0, r)).collect(),
        Order::Second => traj.rows().map(|r| r[n..].to_vec()).collect(),
    };
    Ok((traj, Trajectory::new(times.to_vec(), derivs)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub times: Vec<f64>,
    /// Positions under the intervention.
    pub truth: Option<Trajectory>,
    pub learned: Option<Trajectory>,
    pub truth_failure: Option<String>,
    pub learned_failure: Option<String>,
    /// Per-variable sup-norm gap between the two predictions.
    pub gap: Vec<f64>,
    /// Per-variable fraction of grid points where the signs of `ẋ_i` agree.
    pub sign_agreement: Vec<f64>,
    pub note: String,
}

pub const AMPLIFICATION_NOTE: &str = "exponential regimes amplify small parameter errors; \
     sign agreement of derivatives is the robust comparison";

/// Intervenes on both subjects identically and compares their dopri5
/// simulations from `x0` on `times`. A failed simulation is reported, not raised.
pub fn compare_interventions(
    truth: &Subject,
    learned: &Subject,
    spec: &InterventionSpec,
    x0: &[f64],
    times: &[f64],
) -> Result<InterventionReport> {
    let n = truth.dim();
    if learned.dim() != n || x0.len() != n {
        return Err(Error::arg("truth, learned field and x0 must share one dimension"));
    }
    spec.validate(n)?;
    let cfg = prediction_solver();
    let run = |s: &Subject| match s.simulate(spec, x0, times, &cfg) {
        Ok(r) => Ok(Ok(r)),
        Err(e) if e.is_numeric() => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    };
    let t = run(truth)?;
    let l = run(learned)?;
    let (mut gap, mut sign_agreement) = (vec![f64::NAN; n], vec![f64::NAN; n]);
    if let (Ok((tt, td)), Ok((lt, ld))) = (&t, &l) {
        for i in 0..n {
            gap[i] = tt.rows().zip(lt.rows()).map(|(a, b)| (a[i] - b[i]).abs()).fold(0.0, f64::max);
            let agree = td.rows().zip(ld.rows()).filter(|(a, b)| sign(a[i]) == sign(b[i])).count();
            sign_agreement[i] = agree as f64 / times.len() as f64;
        }
    }
    let split = |r: std::result::Result<(Trajectory, Trajectory), String>| match r {
        Ok((traj, _)) => (Some(traj.leading_columns(n)), None),
        Err(msg) => (None, Some(msg)),
    };
    let (truth, truth_failure) = split(t);
    let (learned, learned_failure) = split(l);
    Ok(InterventionReport {
        times: times.to_vec(),
        truth,
        learned,
        truth_failure,
        learned_failure,
        gap,
        sign_agreement,
        note: AMPLIFICATION_NOTE.into(),
    })
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}
