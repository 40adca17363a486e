use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    /// ELU with α = 1.
    Elu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a = σ(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
        }
    }

    pub fn is_linear(self) -> bool {
        self == Activation::Linear
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            other => Err(Error::arg(format!("unknown activation '{other}'"))),
        }
    }
}

/// Fixed element-wise transform applied to the input before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    #[default]
    Identity,
    /// `y ↦ y³`, element-wise.
    Cubic,
}

impl FeatureMap {
    #[inline]
    fn apply(self, y: f64) -> f64 {
        match self {
            FeatureMap::Identity => y,
            FeatureMap::Cubic => y * y * y,
        }
    }

    #[inline]
    fn derivative(self, y: f64) -> f64 {
        match self {
            FeatureMap::Identity => 1.0,
            FeatureMap::Cubic => 3.0 * y * y,
        }
    }
}

/// Intermediates of one forward pass.
///
/// `post[0]` holds the input features, `post[l]` the output of layer `l`
/// (after the activation for hidden layers); `pre[l]` the affine part of
/// layer `l + 1`.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    param_len: usize,
}

impl Tape {
    pub fn for_net(net: &Mlp) -> Self {
        let sizes = net.sizes();
        Self {
            input: vec![0.0; sizes[0]],
            pre: sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            post: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            param_len: net.param_len(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    fn fits(&self, net: &Mlp) -> bool {
        self.param_len == net.param_len()
            && self.post.len() == net.sizes.len()
            && self.post.iter().zip(&net.sizes).all(|(p, &s)| p.len() == s)
    }
}

/// Fully connected feed-forward network with one activation shared by all
/// hidden layers and an affine output layer.
///
/// Parameters live in one flat vector, layer by layer: row-major weights
/// followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
    features: FeatureMap,
}

impl Mlp {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        features: FeatureMap,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation, features)?;
        for l in 0..net.num_layers() {
            let bound = 1.0 / (net.sizes[l] as f64).sqrt();
            let (w, _) = net.layer_range(l);
            for v in &mut net.params[w] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation, features: FeatureMap) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::arg("network needs at least two positive layer widths"));
        }
        let len = sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; len], activation, features })
    }

    /// Builds a network from explicit `(weights, bias)` pairs, weights row-major.
    pub fn from_layers(
        layers: &[(DMatrix<f64>, Vec<f64>)],
        activation: Activation,
        features: FeatureMap,
    ) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::arg("no layers given"))?;
        let mut sizes = vec![first.0.ncols()];
        for (w, b) in layers {
            if w.ncols() != *sizes.last().unwrap() {
                return Err(Error::arg("consecutive layer shapes do not compose"));
            }
            if b.len() != w.nrows() {
                return Err(Error::arg("bias length must equal layer output width"));
            }
            sizes.push(w.nrows());
        }
        let mut net = Self::zeros(&sizes, activation, features)?;
        for (l, (w, b)) in layers.iter().enumerate() {
            net.set_weight_matrix(l, w);
            let (_, br) = net.layer_range(l);
            net.params[br].copy_from_slice(b);
        }
        if net.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite parameter"));
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn features(&self) -> FeatureMap {
        self.features
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.sizes[..=l].windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Index ranges of the weights and bias of layer `l`.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = self.layer_offset(l);
        let w_len = self.sizes[l + 1] * self.sizes[l];
        (start..start + w_len, start + w_len..start + w_len + self.sizes[l + 1])
    }

    pub fn weight_matrix(&self, l: usize) -> DMatrix<f64> {
        let (w, _) = self.layer_range(l);
        DMatrix::from_row_slice(self.sizes[l + 1], self.sizes[l], &self.params[w])
    }

    pub fn set_weight_matrix(&mut self, l: usize, m: &DMatrix<f64>) {
        let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
        assert_eq!(m.shape(), (rows, cols), "weight shape mismatch");
        let (w, _) = self.layer_range(l);
        let dst = &mut self.params[w];
        for i in 0..rows {
            for j in 0..cols {
                dst[i * cols + j] = m[(i, j)];
            }
        }
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.layer_range(l);
        &self.params[b]
    }

    /// Zeroes column `j` of the first weight matrix, cutting input `j` off entirely.
    pub fn mask_input(&mut self, j: usize) {
        let cols = self.sizes[0];
        let (w, _) = self.layer_range(0);
        for i in 0..self.sizes[1] {
            self.params[w.start + i * cols + j] = 0.0;
        }
    }

    /// Forward pass recording intermediates into a reusable tape.
    pub fn forward_into<'t>(&self, y: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        debug_assert!(tape.fits(self) && y.len() == self.sizes[0]);
        tape.input.copy_from_slice(y);
        for (a, &v) in tape.post[0].iter_mut().zip(y) {
            *a = self.features.apply(v);
        }
        let last = self.num_layers() - 1;
        let mut offset = 0;
        for l in 0..=last {
            let (cols, rows) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + rows * cols];
            let b = &self.params[offset + rows * cols..offset + rows * cols + rows];
            offset += rows * cols + rows;
            let (before, after) = tape.post.split_at_mut(l + 1);
            let input = &before[l];
            let z = &mut tape.pre[l];
            for i in 0..rows {
                let row = &w[i * cols..(i + 1) * cols];
                z[i] = b[i] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
            }
            let out = &mut after[0];
            if l == last {
                out.copy_from_slice(z);
            } else {
                for (o, &zi) in out.iter_mut().zip(z.iter()) {
                    *o = self.activation.apply(zi);
                }
            }
        }
        tape.post.last().unwrap()
    }

    pub fn forward(&self, y: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if y.len() != self.input_width() {
            return Err(Error::arg(format!(
                "input has length {}, network expects {}",
                y.len(),
                self.input_width()
            )));
        }
        let mut tape = Tape::for_net(self);
        let out = self.forward_into(y, &mut tape).to_vec();
        Ok((out, tape))
    }

    /// Reverse sweep: accumulates `∂⟨cot, f(y)⟩/∂θ` into `grad` and, when
    /// asked, writes `∂⟨cot, f(y)⟩/∂y` into `input_cot`.
    ///
    /// `scratch` must hold two buffers at least as wide as the widest layer.
    pub fn backward_into(
        &self,
        tape: &Tape,
        cot: &[f64],
        grad: &mut [f64],
        input_cot: Option<&mut [f64]>,
        scratch: &mut [Vec<f64>; 2],
    ) {
        debug_assert!(tape.fits(self) && grad.len() == self.params.len());
        let [delta, prev] = scratch;
        let last = self.num_layers() - 1;
        delta[..cot.len()].copy_from_slice(cot);
        let need_input = input_cot.is_some();
        for l in (0..=last).rev() {
            let (cols, rows) = (self.sizes[l], self.sizes[l + 1]);
            let offset = self.layer_offset(l);
            let input = &tape.post[l];
            {
                let (gw, gb) = grad[offset..offset + rows * cols + rows].split_at_mut(rows * cols);
                for i in 0..rows {
                    let d = delta[i];
                    if d != 0.0 {
                        gb[i] += d;
                        for (g, x) in gw[i * cols..(i + 1) * cols].iter_mut().zip(input) {
                            *g += d * x;
                        }
                    }
                }
            }
            if l == 0 && !need_input {
                break;
            }
            let w = &self.params[offset..offset + rows * cols];
            prev[..cols].fill(0.0);
            for i in 0..rows {
                let d = delta[i];
                if d != 0.0 {
                    for (p, a) in prev[..cols].iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                        *p += d * a;
                    }
                }
            }
            if l > 0 {
                let z = &tape.pre[l - 1];
                let a = &tape.post[l];
                for j in 0..cols {
                    prev[j] *= self.activation.derivative(z[j], a[j]);
                }
            }
            std::mem::swap(delta, prev);
        }
        if let Some(out) = input_cot {
            for (j, o) in out.iter_mut().enumerate() {
                *o = delta[j] * self.features.derivative(tape.input[j]);
            }
        }
    }

    pub fn scratch(&self) -> [Vec<f64>; 2] {
        let w = *self.sizes.iter().max().unwrap();
        [vec![0.0; w], vec![0.0; w]]
    }

    pub fn grad_params(&self, tape: &Tape, cot: &[f64]) -> Result<Vec<f64>> {
        if !tape.fits(self) {
            return Err(Error::StaleTape("layer shapes differ from the recorded pass".into()));
        }
        if cot.len() != self.output_width() {
            return Err(Error::arg("cotangent length must equal output width"));
        }
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(tape, cot, &mut grad, None, &mut self.scratch());
        Ok(grad)
    }

    /// Exact Jacobian `∂f_i/∂y_j` by one reverse sweep per output.
    pub fn input_jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let (_, tape) = self.forward(y)?;
        let mut jac = DMatrix::zeros(self.output_width(), self.input_width());
        self.jacobian_from_tape(&tape, &mut jac);
        Ok(jac)
    }

    pub(crate) fn jacobian_from_tape(&self, tape: &Tape, jac: &mut DMatrix<f64>) {
        let (m, n) = (self.output_width(), self.input_width());
        let mut scratch = self.scratch();
        let mut cot = vec![0.0; m];
        let mut row = vec![0.0; n];
        // Parameter gradients are discarded; reuse one buffer.
        let mut sink = vec![0.0; self.params.len()];
        for i in 0..m {
            cot.fill(0.0);
            cot[i] = 1.0;
            self.backward_into(tape, &cot, &mut sink, Some(&mut row), &mut scratch);
            for j in 0..n {
                jac[(i, j)] = row[j];
            }
        }
    }

    /// `W^{L+1} ⋯ W^1`, biases ignored.
    pub fn path_matrix(&self) -> DMatrix<f64> {
        (1..self.num_layers()).fold(self.weight_matrix(0), |acc, l| self.weight_matrix(l) * acc)
    }

    /// `‖path_matrix‖₁,₁` and its subgradient (sign(0) = 0) w.r.t. all parameters.
    pub fn l1_path_penalty(&self) -> (f64, Vec<f64>) {
        let layers = self.num_layers();
        let weights: Vec<DMatrix<f64>> = (0..layers).map(|l| self.weight_matrix(l)).collect();
        // prefix[l] = W_l ⋯ W_0 ; suffix[l] = W_last ⋯ W_l
        let mut prefix = Vec::with_capacity(layers);
        for (l, w) in weights.iter().enumerate() {
            prefix.push(if l == 0 { w.clone() } else { w * &prefix[l - 1] });
        }
        let mut suffix = vec![DMatrix::zeros(0, 0); layers];
        for l in (0..layers).rev() {
            suffix[l] = if l + 1 == layers { weights[l].clone() } else { &suffix[l + 1] * &weights[l] };
        }
        let a = &prefix[layers - 1];
        let value = a.iter().map(|v| v.abs()).sum();
        let sign = a.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });

        let mut grad = vec![0.0; self.params.len()];
        for l in 0..layers {
            // ∂‖A‖/∂W_l = (W_last ⋯ W_{l+1})ᵀ sign(A) (W_{l-1} ⋯ W_0)ᵀ
            let mut g = sign.clone();
            if l + 1 < layers {
                g = suffix[l + 1].transpose() * g;
            }
            if l > 0 {
                g *= prefix[l - 1].transpose();
            }
            let (range, _) = self.layer_range(l);
            let cols = self.sizes[l];
            for (k, slot) in grad[range].iter_mut().enumerate() {
                *slot = g[(k / cols, k % cols)];
            }
        }
        (value, grad)
    }
}
