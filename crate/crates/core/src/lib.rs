//! Learning ODE vector fields from a single trajectory and reading off
//! their causal structure.
//!
//! The crate is organized around the pipeline: [`ode`] integrates systems,
//! [`nn`] holds the neural vector field, [`train`] fits it by
//! backpropagating through an unrolled RK4 rollout with an L1 penalty on
//! the weight-path product, [`structure`] extracts and scores causal
//! graphs, and [`intervene`] simulates variable and system interventions.
//! [`systems`] generates the benchmark datasets and [`var`] provides a
//! lagged vector-autoregressive baseline.

pub mod error;
pub mod experiments;
pub mod intervene;
pub mod io;
pub mod nn;
pub mod ode;
pub mod structure;
pub mod systems;
pub mod train;
pub mod var;

pub use error::{Error, Result};
pub use nn::{Activation, FeatureMap, NeuralField};
pub use ode::{solve_ivp, LinearField, Order, SolverConfig, Trajectory, VectorField};
pub use structure::{score_graph, CausalGraph, GraphMetrics};
pub use train::{train, TrainConfig, TrainReport, TrainedModel};

pub use nalgebra;
