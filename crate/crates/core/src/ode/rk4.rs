use super::{divergent, SolverConfig, VectorField};
use crate::error::{Error, Result};

/// Number of equal substeps used to cover `span` with steps no longer than `h`.
pub(crate) fn substeps(span: f64, h: f64) -> usize {
    ((span / h) - 1e-9).ceil().max(1.0) as usize
}

/// One classical RK4 step, writing the new state into `out`.
pub(crate) fn step<F: VectorField + ?Sized>(
    field: &F,
    t: f64,
    y: &[f64],
    h: f64,
    work: &mut [Vec<f64>; 5],
    out: &mut [f64],
) {
    let [k1, k2, k3, k4, tmp] = work;
    let n = y.len();
    field.eval(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    field.eval(t + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    field.eval(t + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    field.eval(t + h, tmp, k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

pub(crate) fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let n = x0.len();
    let mut states = Vec::with_capacity(times.len() * n);
    states.extend_from_slice(x0);
    let mut y = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut work: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut taken = 0usize;
    for w in times.windows(2) {
        let m = substeps(w[1] - w[0], cfg.step);
        let h = (w[1] - w[0]) / m as f64;
        for s in 0..m {
            let t = w[0] + h * s as f64;
            taken += 1;
            if taken > cfg.max_steps {
                return Err(Error::MaxSteps { t, max_steps: cfg.max_steps });
            }
            step(field, t, &y, h, &mut work, &mut next);
            if let Some(i) = divergent(&next) {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("component {i} diverged"),
                });
            }
            std::mem::swap(&mut y, &mut next);
        }
        states.extend_from_slice(&y);
    }
    Ok(states)
}
