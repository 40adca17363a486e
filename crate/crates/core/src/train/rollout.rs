//! Fixed-step RK4 rollout of a neural field with an exact reverse pass
//! through every unrolled step (discretize-then-optimize).

use crate::error::{Error, Result};
use crate::nn::{Mlp, NeuralField, Tape};
use crate::ode::{check_times, divergent, Order, Trajectory};

/// Recorded forward rollout. Holds one tape per RK4 stage so the reverse
/// pass can replay the exact computation.
#[derive(Debug, Clone)]
pub struct Rollout {
    order: Order,
    dim: usize,
    times: Vec<f64>,
    /// Substep count and length for each output interval.
    intervals: Vec<(usize, f64)>,
    tapes: Vec<[Tape; 4]>,
    outputs: Vec<f64>,
}

/// Gradients produced by [`Rollout::backprop`].
#[derive(Debug, Clone)]
pub struct RolloutGrad {
    pub params: Vec<f64>,
    /// Cotangent of the initial state (`2n` long for second-order fields).
    pub initial_state: Vec<f64>,
}

struct Buffers {
    y: Vec<f64>,
    tmp: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Rollout {
    /// Plans a rollout over `times` with substeps of at most `h`.
    pub fn plan(field: &NeuralField, times: &[f64], h: f64) -> Result<Self> {
        check_times(times)?;
        if !(h > 0.0) {
            return Err(Error::arg("rollout step must be positive"));
        }
        let intervals: Vec<(usize, f64)> = times
            .windows(2)
            .map(|w| {
                let m = crate::ode::rk4_substeps(w[1] - w[0], h);
                (m, (w[1] - w[0]) / m as f64)
            })
            .collect();
        let total: usize = intervals.iter().map(|i| i.0).sum();
        let proto = Tape::for_net(field.net());
        let state_len = match field.order() {
            Order::First => field.dim(),
            Order::Second => 2 * field.dim(),
        };
        Ok(Self {
            order: field.order(),
            dim: field.dim(),
            times: times.to_vec(),
            intervals,
            tapes: (0..total).map(|_| std::array::from_fn(|_| proto.clone())).collect(),
            outputs: vec![0.0; times.len() * state_len],
        })
    }

    pub fn state_len(&self) -> usize {
        match self.order {
            Order::First => self.dim,
            Order::Second => 2 * self.dim,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.tapes.len()
    }

    /// Output states, row-major `times × state_len`.
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        Trajectory::from_flat(self.times.clone(), self.outputs.clone(), self.state_len())
    }

    fn stage(order: Order, dim: usize, net: &Mlp, input: &[f64], tape: &mut Tape, out: &mut [f64]) {
        let acc = net.forward_into(input, tape);
        match order {
            Order::First => out.copy_from_slice(acc),
            Order::Second => {
                out[..dim].copy_from_slice(&input[dim..]);
                out[dim..].copy_from_slice(acc);
            }
        }
    }

    /// Runs the forward pass from `u0`, overwriting the recorded tapes.
    pub fn run(&mut self, field: &NeuralField, u0: &[f64]) -> Result<()> {
        let len = self.state_len();
        if u0.len() != len {
            return Err(Error::arg(format!("initial state has length {}, expected {len}", u0.len())));
        }
        if self.tapes.first().is_some_and(|t| t[0].input().len() != field.net().input_width()) {
            return Err(Error::StaleTape("rollout was planned for a different field".into()));
        }
        let net = field.net();
        let (order, dim) = (self.order, self.dim);
        let mut buf = Buffers { y: u0.to_vec(), tmp: vec![0.0; len], k: std::array::from_fn(|_| vec![0.0; len]) };
        self.outputs[..len].copy_from_slice(u0);
        let mut step = 0;
        for (interval, &(m, h)) in self.intervals.iter().enumerate() {
            for s in 0..m {
                let tapes = &mut self.tapes[step];
                let Buffers { y, tmp, k } = &mut buf;
                let [k1, k2, k3, k4] = k;
                Self::stage(order, dim, net, y, &mut tapes[0], k1);
                for i in 0..len {
                    tmp[i] = y[i] + 0.5 * h * k1[i];
                }
                Self::stage(order, dim, net, tmp, &mut tapes[1], k2);
                for i in 0..len {
                    tmp[i] = y[i] + 0.5 * h * k2[i];
                }
                Self::stage(order, dim, net, tmp, &mut tapes[2], k3);
                for i in 0..len {
                    tmp[i] = y[i] + h * k3[i];
                }
                Self::stage(order, dim, net, tmp, &mut tapes[3], k4);
                for i in 0..len {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                if let Some(i) = divergent(y) {
                    let t = self.times[interval] + h * s as f64;
                    return Err(Error::IntegrationFailure { t, reason: format!("component {i} diverged") });
                }
                step += 1;
            }
            self.outputs[(interval + 1) * len..(interval + 2) * len].copy_from_slice(&buf.y);
        }
        Ok(())
    }

    /// Maps cotangents of the output states (row-major, same layout as
    /// [`outputs`](Self::outputs)) to parameter and initial-state gradients
    /// by reversing every recorded step.
    pub fn backprop(&self, field: &NeuralField, cotangents: &[f64]) -> Result<RolloutGrad> {
        let mut params = vec![0.0; field.net().param_len()];
        let initial_state = self.backprop_into(field, cotangents, &mut params)?;
        Ok(RolloutGrad { params, initial_state })
    }

    /// Like [`backprop`](Self::backprop) but accumulates parameter
    /// gradients into `grad`; returns the initial-state cotangent.
    pub fn backprop_into(&self, field: &NeuralField, cotangents: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let len = self.state_len();
        if cotangents.len() != self.outputs.len() {
            return Err(Error::arg("cotangent layout does not match rollout outputs"));
        }
        if grad.len() != field.net().param_len() {
            return Err(Error::StaleTape("gradient buffer does not match field parameters".into()));
        }
        let net = field.net();
        let (order, dim) = (self.order, self.dim);
        let mut scratch = net.scratch();
        let mut zbar = vec![0.0; net.input_width()];
        let vjp = |tape: &Tape, kbar: &[f64], grad: &mut [f64], zbar: &mut [f64], scratch: &mut [Vec<f64>; 2]| {
            match order {
                Order::First => net.backward_into(tape, kbar, grad, Some(zbar), scratch),
                Order::Second => {
                    net.backward_into(tape, &kbar[dim..], grad, Some(zbar), scratch);
                    for i in 0..dim {
                        zbar[dim + i] += kbar[i];
                    }
                }
            }
        };

        let last = self.times.len() - 1;
        let mut ybar = cotangents[last * len..].to_vec();
        let mut acc = vec![0.0; len];
        let mut kbar: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
        let mut step = self.tapes.len();
        for interval in (0..self.intervals.len()).rev() {
            let (m, h) = self.intervals[interval];
            for _ in 0..m {
                step -= 1;
                let tapes = &self.tapes[step];
                for i in 0..len {
                    kbar[0][i] = h / 6.0 * ybar[i];
                    kbar[1][i] = h / 3.0 * ybar[i];
                    kbar[2][i] = h / 3.0 * ybar[i];
                    kbar[3][i] = h / 6.0 * ybar[i];
                }
                acc.copy_from_slice(&ybar);
                // stage 4: input y + h k3
                vjp(&tapes[3], &kbar[3], grad, &mut zbar, &mut scratch);
                for i in 0..len {
                    acc[i] += zbar[i];
                    kbar[2][i] += h * zbar[i];
                }
                // stage 3: input y + h/2 k2
                vjp(&tapes[2], &kbar[2], grad, &mut zbar, &mut scratch);
                for i in 0..len {
                    acc[i] += zbar[i];
                    kbar[1][i] += 0.5 * h * zbar[i];
                }
                // stage 2: input y + h/2 k1
                vjp(&tapes[1], &kbar[1], grad, &mut zbar, &mut scratch);
                for i in 0..len {
                    acc[i] += zbar[i];
                    kbar[0][i] += 0.5 * h * zbar[i];
                }
                vjp(&tapes[0], &kbar[0], grad, &mut zbar, &mut scratch);
                for i in 0..len {
                    acc[i] += zbar[i];
                }
                std::mem::swap(&mut ybar, &mut acc);
            }
            for i in 0..len {
                ybar[i] += cotangents[interval * len + i];
            }
        }
        Ok(ybar)
    }
}

/// Forward rollout of `field` from `u0` through `times` with substeps of at
/// most `h`. The returned [`Rollout`] carries the reverse pass.
pub fn rollout(field: &NeuralField, u0: &[f64], times: &[f64], h: f64) -> Result<Rollout> {
    let mut r = Rollout::plan(field, times, h)?;
    r.run(field, u0)?;
    Ok(r)
}
