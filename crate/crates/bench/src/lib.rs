//! Shared inputs for the benchmarks.

use odecausal::nalgebra::DMatrix;
use odecausal::nn::Architecture;
use odecausal::systems::{generate, SystemSpec};
use odecausal::{Activation, LinearField, Order, Trajectory};

/// Clean trajectory of the default random linear system with `dim` variables.
pub fn linear_trajectory(dim: usize) -> Trajectory {
    generate(&SystemSpec::default_linear(dim, 0)).expect("default system generates").trajectory
}

pub fn linear_architecture(dim: usize) -> Architecture {
    Architecture::default_for(dim, Order::Second).with_activation(Activation::Linear)
}

/// Damped rotation with a slow drift; eigenvalues in the left half plane.
pub fn test_matrix(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| match (i as isize - j as isize).rem_euclid(dim as isize) {
        0 => -0.3,
        1 => 1.0,
        d if d == dim as isize - 1 => -1.0,
        _ => 0.05,
    })
}

pub fn first_order(dim: usize) -> LinearField {
    LinearField::first_order(test_matrix(dim)).expect("square matrix")
}
