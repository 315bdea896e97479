//! Fully connected network stack and its forward pass.
//!
//! Layers follow the convention `y_k = W_kᵀ x_{k-1} (+ b_k)` with `W_k` stored
//! as `[in_dim × out_dim]`. Layer indices are 1-based; `x_0` is the network
//! input (a flattened activation vector, not an image).

mod format;
mod synthetic;

pub use format::{decode_network, encode_network, load_network, save_network};
pub use synthetic::make_synthetic_network;

use crate::error::{Error, Result};
use crate::linalg::{matvec_transposed, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Softmax => "softmax",
        }
    }
}

/// One fully connected layer. Weights and bias are held at single precision:
/// values are rounded through `f32` on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    weights: Matrix,
    bias: Option<Vector>,
    activation: Activation,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl LayerSpec {
    pub fn new(mut weights: Matrix, bias: Option<Vector>, activation: Activation) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::InvalidNetwork(format!(
                "layer dims must be >= 1, got {}x{}",
                weights.rows(),
                weights.cols()
            )));
        }
        weights.map_in_place(round_f32);
        if weights.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer weights"));
        }
        let bias = match bias {
            Some(b) => {
                if b.len() != weights.cols() {
                    return Err(Error::DimensionMismatch {
                        op: "layer bias (out_dim vs bias length)",
                        left: weights.cols(),
                        right: b.len(),
                    });
                }
                let b: Vector = b.iter().map(|&v| round_f32(v)).collect();
                if !b.is_finite() {
                    return Err(Error::NonFinite("layer bias"));
                }
                Some(b)
            }
            None => None,
        };
        Ok(LayerSpec {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> Option<&Vector> {
        self.bias.as_ref()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: &[f64]) -> Result<Vector> {
        let y = matvec_transposed(&self.weights, x)?;
        Ok(match &self.bias {
            Some(b) => y.iter().zip(b.iter()).map(|(y, b)| y + b).collect(),
            None => y,
        })
    }
}

/// An immutable chain of fully connected layers ending in a SoftMax.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least 2 layers, got {}",
                layers.len()
            )));
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ChainViolation {
                    layer: idx + 1,
                    next: idx + 2,
                    out_dim: pair[0].out_dim(),
                    in_dim: pair[1].in_dim(),
                });
            }
        }
        let last = layers.len();
        for (idx, layer) in layers.iter().enumerate() {
            let is_last = idx + 1 == last;
            match (layer.activation, is_last) {
                (Activation::Softmax, false) => {
                    return Err(Error::InvalidNetwork(format!(
                        "softmax only allowed on the last layer, found on layer {}",
                        idx + 1
                    )))
                }
                (a, true) if a != Activation::Softmax => {
                    return Err(Error::InvalidNetwork(format!(
                        "last layer must use softmax, found {}",
                        a.name()
                    )))
                }
                _ => {}
            }
        }
        Ok(Network { layers })
    }

    /// Number of layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Layer `k`, 1-based.
    pub fn layer(&self, k: usize) -> Result<&LayerSpec> {
        self.check_index(k)?;
        Ok(&self.layers[k - 1])
    }

    pub(crate) fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.layers.len() {
            return Err(Error::InvalidLayer {
                index: k,
                layers: self.layers.len(),
            });
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Number of output classes `P`.
    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[in_dim of layer 1, out_dim of layer 1, …, out_dim of layer L]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(LayerSpec::out_dim))
            .collect()
    }

    /// Runs the stack on `input`, applying SoftMax at temperature `tau` on the
    /// last layer, and records every pre- and post-activation.
    pub fn forward(&self, input: &[f64], tau: f64) -> Result<ForwardTrace> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidTemperature(tau));
        }
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "forward (network input dim vs input length)",
                left: self.input_dim(),
                right: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vector> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().map(Vector::as_slice).unwrap_or(input);
            let y = layer.pre_activation(x)?;
            if !y.is_finite() {
                return Err(Error::NonFinite("pre-activation"));
            }
            let out = match layer.activation {
                Activation::Relu => y.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                Activation::Identity => y.clone(),
                Activation::Softmax => tempered_softmax(&y, tau)?,
            };
            pre.push(y);
            post.push(out);
        }
        Ok(ForwardTrace {
            input: Vector::new(input.to_vec()),
            pre,
            post,
            tau,
        })
    }
}

/// `exp(y/τ) / Σ_i exp(y_i/τ)`, evaluated after subtracting the max logit.
pub fn tempered_softmax(y: &[f64], tau: f64) -> Result<Vector> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidTemperature(tau));
    }
    if y.is_empty() {
        return Ok(Vector::zeros(0));
    }
    let scaled: Vec<f64> = y.iter().map(|v| v / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / sum).collect())
}

/// Pre- and post-activations of every layer for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    input: Vector,
    pre: Vec<Vector>,
    post: Vec<Vector>,
    tau: f64,
}

impl ForwardTrace {
    pub fn num_layers(&self) -> usize {
        self.pre.len()
    }

    pub fn input(&self) -> &Vector {
        &self.input
    }

    /// `y_k`, 1-based.
    pub fn pre_activation(&self, k: usize) -> Option<&Vector> {
        k.checked_sub(1).and_then(|i| self.pre.get(i))
    }

    /// `x_k`; `k = 0` is the input.
    pub fn activation(&self, k: usize) -> Option<&Vector> {
        if k == 0 {
            Some(&self.input)
        } else {
            self.post.get(k - 1)
        }
    }

    /// The tempered class probabilities `x_L`.
    pub fn output(&self) -> &Vector {
        self.post.last().expect("trace has at least one layer")
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}
