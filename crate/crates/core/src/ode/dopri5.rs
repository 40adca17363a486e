//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.

use super::{divergent, SolverConfig, VectorField};
use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn rms(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

fn initial_step<F: VectorField + ?Sized>(
    field: &F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    span: f64,
    cfg: &SolverConfig,
) -> f64 {
    let n = y0.len();
    let sk: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let d0 = rms(y0.iter().zip(&sk).map(|(y, s)| y / s), n);
    let d1 = rms(f0.iter().zip(&sk).map(|(f, s)| f / s), n);
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    field.eval(t0 + h0, &y1, &mut f1);
    let d2 = rms(f1.iter().zip(f0).zip(&sk).map(|((a, b), s)| (a - b) / s), n) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dmax).powf(0.2) };
    (100.0 * h0).min(h1).min(span)
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
    if times.len() == 1 {
        return Ok(states);
    }
    let t_end = *times.last().unwrap();
    let mut t = times[0];
    let mut y = x0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut cont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    field.eval(t, &y, &mut k[0]);
    let mut h = initial_step(field, t, &y, &k[0], t_end - t, cfg);
    let mut next_out = 1;
    let mut attempts = 0usize;
    let mut rejected_last = false;

    while next_out < times.len() {
        attempts += 1;
        if attempts > cfg.max_steps {
            return Err(Error::MaxSteps { t, max_steps: cfg.max_steps });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::IntegrationFailure { t, reason: "step size underflow".into() });
        }

        let [k1, k2, k3, k4, k5, k6, k7] = &mut k;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        field.eval(t + C2 * h, &tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        field.eval(t + C3 * h, &tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        field.eval(t + C4 * h, &tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        field.eval(t + C5 * h, &tmp, k5);
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        field.eval(t + h, &tmp, k6);
        for i in 0..n {
            y_new[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        field.eval(t + h, &y_new, k7);

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sk).powi(2);
        }
        let err = (err_sq / n as f64).sqrt();
        if !err.is_finite() {
            // Stage evaluations overflowed; retry smaller unless already tiny.
            h *= FAC_MIN;
            rejected_last = true;
            continue;
        }

        if err <= 1.0 {
            if let Some(i) = divergent(&y_new) {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("component {i} diverged"),
                });
            }
            let t_new = if last { t_end } else { t + h };
            let mut needs_dense = false;
            while next_out < times.len() && times[next_out] <= t_new {
                if !needs_dense && times[next_out] < t_new {
                    needs_dense = true;
                    for i in 0..n {
                        let ydiff = y_new[i] - y[i];
                        let bspl = h * k1[i] - ydiff;
                        cont[0][i] = y[i];
                        cont[1][i] = ydiff;
                        cont[2][i] = bspl;
                        cont[3][i] = ydiff - h * k7[i] - bspl;
                        cont[4][i] = h
                            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                    }
                }
                if times[next_out] == t_new {
                    states.extend_from_slice(&y_new);
                } else {
                    let theta = (times[next_out] - t) / h;
                    let theta1 = 1.0 - theta;
                    for i in 0..n {
                        states.push(
                            cont[0][i]
                                + theta
                                    * (cont[1][i]
                                        + theta1
                                            * (cont[2][i]
                                                + theta * (cont[3][i] + theta1 * cont[4][i]))),
                        );
                    }
                }
                next_out += 1;
            }
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            t = t_new;
            let mut fac = (SAFETY * err.max(1e-10).powf(-0.2)).clamp(FAC_MIN, FAC_MAX);
            if rejected_last {
                fac = fac.min(1.0);
            }
            rejected_last = false;
            h *= fac;
        } else {
            h *= (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            rejected_last = true;
        }
    }
    Ok(states)
}
