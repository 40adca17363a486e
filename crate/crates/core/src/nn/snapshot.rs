use serde::{Deserialize, Serialize};

use super::{Activation, FeatureMap, Mlp, NeuralField};
use crate::error::{Error, Result};
use crate::ode::Order;
use crate::train::Normalization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub activation: Activation,
    pub features: FeatureMap,
    pub layers: Vec<LayerSnapshot>,
}

/// JSON form of a [`NeuralField`] plus the data normalization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub dim: usize,
    pub order: Order,
    pub net: NetSnapshot,
    pub velocity: Option<NetSnapshot>,
    pub normalization: Option<Normalization>,
}

impl From<&Mlp> for NetSnapshot {
    fn from(net: &Mlp) -> Self {
        let layers = (0..net.num_layers())
            .map(|l| {
                let (w, b) = net.layer_range(l);
                LayerSnapshot {
                    rows: net.sizes()[l + 1],
                    cols: net.sizes()[l],
                    weights: net.params()[w].to_vec(),
                    bias: net.params()[b].to_vec(),
                }
            })
            .collect();
        Self { activation: net.activation(), features: net.features(), layers }
    }
}

impl NetSnapshot {
    pub fn to_mlp(&self) -> Result<Mlp> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if l.weights.len() != l.rows * l.cols {
                    return Err(Error::Parse(format!(
                        "layer declares {}x{} but holds {} weights",
                        l.rows,
                        l.cols,
                        l.weights.len()
                    )));
                }
                Ok((nalgebra::DMatrix::from_row_slice(l.rows, l.cols, &l.weights), l.bias.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(&layers, self.activation, self.features)
    }
}

impl FieldSnapshot {
    pub fn new(field: &NeuralField, normalization: Option<Normalization>) -> Self {
        Self {
            dim: field.dim(),
            order: field.order(),
            net: field.net().into(),
            velocity: field.velocity_net().map(Into::into),
            normalization,
        }
    }

    pub fn to_field(&self) -> Result<NeuralField> {
        let velocity = self.velocity.as_ref().map(NetSnapshot::to_mlp).transpose()?;
        NeuralField::from_parts(self.dim, self.order, self.net.to_mlp()?, velocity)
    }
}
