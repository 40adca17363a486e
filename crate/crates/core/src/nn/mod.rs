//! Neural vector field `f_θ` with reverse-mode gradients, input Jacobians
//! and the weight-path product used by the sparsity penalty.

mod mlp;
mod snapshot;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Order, VectorField};

pub use mlp::{Activation, FeatureMap, Mlp, Tape};
pub use snapshot::{FieldSnapshot, NetSnapshot};

/// Shape of a neural field: hidden widths, activation, input features and,
/// for second-order fields, the initial-velocity network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub dim: usize,
    pub order: Order,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub features: FeatureMap,
    pub velocity_hidden: Vec<usize>,
}

impl Architecture {
    /// Two hidden layers whose width grows with the number of variables.
    pub fn default_for(dim: usize, order: Order) -> Self {
        let width = match dim {
            0..=10 => 20,
            11..=20 => 50,
            _ => 100,
        };
        Self {
            dim,
            order,
            hidden: vec![width, width],
            activation: Activation::Elu,
            features: FeatureMap::Identity,
            velocity_hidden: vec![20, 20],
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_features(mut self, features: FeatureMap) -> Self {
        self.features = features;
        self
    }

    pub fn input_width(&self) -> usize {
        match self.order {
            Order::First => self.dim,
            Order::Second => 2 * self.dim,
        }
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(&self.hidden);
        sizes.push(self.dim);
        sizes
    }
}

/// The learned vector field.
///
/// First-order fields map `x ↦ ẋ`; second-order fields map the
/// concatenation `(x, ẋ) ↦ ẍ` and carry a tanh network estimating the
/// initial velocity from the first observed state.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField {
    dim: usize,
    order: Order,
    net: Mlp,
    velocity: Option<Mlp>,
}

impl NeuralField {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        if arch.dim == 0 {
            return Err(Error::arg("field dimension must be positive"));
        }
        let net = Mlp::new(&arch.layer_sizes(), arch.activation, arch.features, rng)?;
        let velocity = match arch.order {
            Order::First => None,
            Order::Second => {
                let mut sizes = vec![arch.dim];
                sizes.extend(&arch.velocity_hidden);
                sizes.push(arch.dim);
                Some(Mlp::new(&sizes, Activation::Tanh, FeatureMap::Identity, rng)?)
            }
        };
        Ok(Self { dim: arch.dim, order: arch.order, net, velocity })
    }

    pub fn from_parts(dim: usize, order: Order, net: Mlp, velocity: Option<Mlp>) -> Result<Self> {
        let expected_in = match order {
            Order::First => dim,
            Order::Second => 2 * dim,
        };
        if net.input_width() != expected_in || net.output_width() != dim {
            return Err(Error::arg(format!(
                "network maps {} -> {}, expected {expected_in} -> {dim}",
                net.input_width(),
                net.output_width()
            )));
        }
        match (&velocity, order) {
            (Some(v), Order::Second) if v.input_width() == dim && v.output_width() == dim => {}
            (None, Order::First) => {}
            (None, Order::Second) => {}
            _ => return Err(Error::arg("velocity network shape does not fit the field")),
        }
        Ok(Self { dim, order, net, velocity })
    }

    /// Convenience constructor for a first-order field from explicit layers.
    pub fn first_order_from_layers(layers: &[(DMatrix<f64>, Vec<f64>)], activation: Activation) -> Result<Self> {
        let net = Mlp::from_layers(layers, activation, FeatureMap::Identity)?;
        let dim = net.output_width();
        Self::from_parts(dim, Order::First, net, None)
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn activation(&self) -> Activation {
        self.net.activation()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn velocity_net(&self) -> Option<&Mlp> {
        self.velocity.as_ref()
    }

    pub fn velocity_net_mut(&mut self) -> Option<&mut Mlp> {
        self.velocity.as_mut()
    }

    pub fn forward(&self, y: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.net.forward(y)
    }

    pub fn grad_params(&self, tape: &Tape, cot: &[f64]) -> Result<Vec<f64>> {
        self.net.grad_params(tape, cot)
    }

    /// `n × n` (first order) or `n × 2n` (second order) input Jacobian.
    pub fn input_jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.net.input_jacobian(y)
    }

    pub fn path_matrix(&self) -> DMatrix<f64> {
        self.net.path_matrix()
    }

    pub fn l1_path_penalty(&self) -> (f64, Vec<f64>) {
        self.net.l1_path_penalty()
    }

    /// Initial velocity predicted from the first observed state. Zero when
    /// the field has no velocity network.
    pub fn initial_velocity(&self, x0: &[f64]) -> Result<Vec<f64>> {
        if x0.len() != self.dim {
            return Err(Error::arg("initial state length does not match field dimension"));
        }
        match &self.velocity {
            Some(v) => Ok(v.forward(x0)?.0),
            None => Ok(vec![0.0; self.dim]),
        }
    }
}

impl VectorField for NeuralField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn order(&self) -> Order {
        self.order
    }

    fn eval(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        let mut tape = Tape::for_net(&self.net);
        out.copy_from_slice(self.net.forward_into(state, &mut tape));
    }
}
