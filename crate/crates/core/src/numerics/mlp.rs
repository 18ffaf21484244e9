//! Feed-forward networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tape::{softplus, Tape, Var};
use crate::numerics::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Softplus,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Softplus => softplus(x),
            Activation::Identity => x,
        }
    }

    fn on_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::LeakyRelu(alpha) => tape.leaky_relu(v, alpha),
            Activation::Softplus => tape.softplus(v),
            Activation::Identity => v,
        }
    }
}

/// One affine layer, `x · weight + bias` with `weight` shaped `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Multilayer perceptron. The hidden activation follows every layer except
/// the last, which is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
    hidden_activation: Activation,
}

/// Tape handles for the weights and biases of one [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, hidden_activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.shape() != (1, layer.fan_out()) {
                return Err(Error::Shape(format!(
                    "layer {i}: bias is {}x{}, expected 1x{}",
                    layer.bias.rows(),
                    layer.bias.cols(),
                    layer.fan_out()
                )));
            }
            if !layer.weight.is_finite() || !layer.bias.is_finite() {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.fan_in() != layer.fan_out() {
                    return Err(Error::Shape(format!(
                        "layer {} expects input width {}, layer {i} produces {}",
                        i + 1,
                        next.fan_in(),
                        layer.fan_out()
                    )));
                }
            }
        }
        Ok(Self {
            layers,
            hidden_activation,
        })
    }

    /// All-zero network with the given widths (`sizes[0]` is the input width).
    pub fn zeros(sizes: &[usize], hidden_activation: Activation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Tensor2::zeros(w[0], w[1]),
                bias: Tensor2::zeros(1, w[1]),
            })
            .collect();
        Self {
            layers,
            hidden_activation,
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(rng: &mut Rng, sizes: &[usize], hidden_activation: Activation) -> Self {
        let mut net = Self::zeros(sizes, hidden_activation);
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = limit * (2.0 * rng.uniform() - 1.0);
            }
        }
        net
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Hidden widths, excluding input and output.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::fan_out)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Tensor2::row_vector(input))?.into_data())
    }

    /// Row-wise forward pass over a `B × input_dim` batch.
    pub fn forward_batch(&self, input: &Tensor2) -> Result<Tensor2> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "layer 0 expects input width {}, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = h.matmul(&layer.weight)?;
            let bias = layer.bias.data();
            let act = if i == last {
                Activation::Identity
            } else {
                self.hidden_activation
            };
            for r in 0..out.rows() {
                for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
                    *v = act.apply(*v + b);
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Registers the parameters as tape leaves.
    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        }
    }

    /// Forward pass recorded on `tape` using previously bound parameters.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Result<Var> {
        let width = tape.value(input).cols();
        if width != self.input_dim() {
            return Err(Error::Shape(format!(
                "layer 0 expects input width {}, got {width}",
                self.input_dim()
            )));
        }
        let last = vars.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let lin = tape.matmul(h, w);
            let aff = tape.add_bias(lin, b);
            h = if i == last {
                aff
            } else {
                self.hidden_activation.on_tape(tape, aff)
            };
        }
        Ok(h)
    }

    /// Parameter tensors in a fixed order: weight then bias, layer by layer.
    pub fn tensors(&self) -> Vec<&Tensor2> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Names matching [`MlpParams::tensors`], prefixed with `prefix`.
    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| {
                [
                    format!("{prefix}.layer{i}.weight"),
                    format!("{prefix}.layer{i}.bias"),
                ]
            })
            .collect()
    }
}

impl MlpVars {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}
