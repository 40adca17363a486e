use serde::{Deserialize, Serialize};

use crate::ode::Trajectory;

/// Per-variable affine map `z = (x - offset) / scale` onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self { offset: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Min/max over the observed window. Constant variables keep scale 1.
    pub fn fit(traj: &Trajectory) -> Self {
        let dim = traj.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in traj.rows() {
            for j in 0..dim {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h - l > 1e-12 { h - l } else { 1.0 })
            .collect();
        Self { offset: lo, scale }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn is_identity(&self) -> bool {
        self.offset.iter().all(|&o| o == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    pub fn to_normalized(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, v)| (v - self.offset[j]) / self.scale[j]).collect()
    }

    pub fn to_original(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(j, v)| v * self.scale[j] + self.offset[j]).collect()
    }

    /// Velocities only scale.
    pub fn velocity_to_normalized(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(j, x)| x / self.scale[j]).collect()
    }

    pub fn velocity_to_original(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(j, x)| x * self.scale[j]).collect()
    }

    pub fn normalize(&self, traj: &Trajectory) -> Trajectory {
        traj.map_states(|j, v| (v - self.offset[j]) / self.scale[j])
    }

    pub fn denormalize(&self, traj: &Trajectory) -> Trajectory {
        traj.map_states(|j, v| v * self.scale[j] + self.offset[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_window_onto_unit_interval() {
        let t = Trajectory::new(vec![0.0, 1.0, 2.0], vec![vec![2.0, 5.0], vec![4.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let n = Normalization::fit(&t);
        let z = n.normalize(&t);
        assert_eq!(z.column(0), vec![0.0, 1.0, 0.5]);
        // constant column: offset removed, unit scale
        assert_eq!(z.column(1), vec![0.0, 0.0, 0.0]);
        assert_eq!(n.denormalize(&z), t);
    }
}
