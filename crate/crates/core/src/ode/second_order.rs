use super::{Order, VectorField};
use crate::error::{Error, Result};

/// First-order lift `u' = (v, f(x, v, t))` of a second-order field over `u = (x, v)`.
#[derive(Debug, Clone)]
pub struct ReducedField<F> {
    inner: F,
}

impl<F: VectorField> ReducedField<F> {
    pub fn inner(&self) -> &F {
        &self.inner
    }
}

impl<F: VectorField> VectorField for ReducedField<F> {
    fn dim(&self) -> usize {
        2 * self.inner.dim()
    }

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let n = self.inner.dim();
        out[..n].copy_from_slice(&state[n..]);
        self.inner.eval(t, state, &mut out[n..]);
    }
}

/// Lifts a second-order field to a first-order one over `2n` variables and
/// builds the matching initial state `(x0, v0)`.
pub fn reduce_second_order<F: VectorField>(
    field: F,
    x0: &[f64],
    v0: &[f64],
) -> Result<(ReducedField<F>, Vec<f64>)> {
    if field.order() != Order::Second {
        return Err(Error::arg("reduce_second_order needs a second-order field"));
    }
    let n = field.dim();
    if x0.len() != n || v0.len() != n {
        return Err(Error::arg(format!(
            "position/velocity lengths {}/{} do not match dimension {n}",
            x0.len(),
            v0.len()
        )));
    }
    let u0 = x0.iter().chain(v0).copied().collect();
    Ok((ReducedField { inner: field }, u0))
}
