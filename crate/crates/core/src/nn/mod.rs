//! Small fully-connected networks with exact reverse-mode gradients.
//!
//! Everything is double precision and explicit: an [`MlpParams`] is a list
//! of affine layers, [`mlp_forward`] records the intermediate values needed
//! for the backward pass in a [`ForwardTape`], and [`mlp_backward`] replays
//! the tape to produce exact gradients for every weight, bias, and the
//! network input. Hidden layers use the exact (erf-based) GELU; the output
//! layer is affine.

mod adamw;
pub(crate) mod io;

pub use adamw::{AdamWConfig, AdamWState, adamw_step};
pub use io::{
    load_mlp, read_container, save_mlp, write_container, ParamBlock, ParamContainer,
};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Exact GELU: `x * Phi(x)` with the Gaussian CDF evaluated through `erf`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
pub fn gelu_prime(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

/// One affine layer. `weight` is `(fan_in, fan_out)` so a batch multiplies
/// from the left: `z = x . weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A feed-forward network: GELU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<LayerParams>,
}

impl MlpParams {
    /// Wraps explicit layers, validating that consecutive shapes chain.
    pub fn from_layers(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for (idx, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.ncols() {
                return Err(Error::shape(format!(
                    "layer {idx}: bias length {} does not match fan-out {}",
                    layer.bias.len(),
                    layer.weight.ncols()
                )));
            }
            if idx > 0 && layers[idx - 1].weight.ncols() != layer.weight.nrows() {
                return Err(Error::shape(format!(
                    "layer {idx}: fan-in {} does not match previous fan-out {}",
                    layer.weight.nrows(),
                    layers[idx - 1].weight.ncols()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    /// `[input, hidden..., output]` widths.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weight.ncols()));
        sizes
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub(crate) fn iter_layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.layers.iter_mut()
    }
}

/// Glorot-uniform initialization: weights from
/// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`, biases zero,
/// drawn from a ChaCha stream seeded with `seed`.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(
            "layer sizes need at least an input and an output width",
        ));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("layer widths must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
    for win in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight =
            Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit));
        layers.push(LayerParams {
            weight,
            bias: Array1::zeros(fan_out),
        });
    }
    MlpParams::from_layers(layers)
}

/// Intermediate values recorded during a forward pass.
///
/// `layer_inputs[l]` is what layer `l` consumed and `pre_activations[l]` is
/// its affine output before the nonlinearity.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    layer_inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

/// Runs the network on a batch (rows are samples) and records a tape for
/// the backward pass.
pub fn mlp_forward(params: &MlpParams, input: &Array2<f64>) -> Result<(Array2<f64>, ForwardTape)> {
    if input.ncols() != params.input_dim() {
        return Err(Error::shape(format!(
            "input width {} does not match network input {}",
            input.ncols(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut current = input.clone();
    for (idx, layer) in params.layers.iter().enumerate() {
        let z = current.dot(&layer.weight) + &layer.bias;
        layer_inputs.push(current);
        current = if idx + 1 < n_layers {
            z.mapv(gelu)
        } else {
            z.clone()
        };
        pre_activations.push(z);
    }
    Ok((
        current,
        ForwardTape {
            layer_inputs,
            pre_activations,
        },
    ))
}

/// Gradients matching an [`MlpParams`] layer for layer.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl MlpGrads {
    /// Zero gradients with the same shapes as `params`, handy for
    /// accumulation.
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }
}

/// Exact reverse-mode pass: given `d loss / d output`, returns gradients
/// for every parameter and for the network input.
pub fn mlp_backward(
    params: &MlpParams,
    tape: &ForwardTape,
    grad_output: &Array2<f64>,
) -> Result<(MlpGrads, Array2<f64>)> {
    let n_layers = params.layers.len();
    if tape.layer_inputs.len() != n_layers {
        return Err(Error::shape("tape does not match network depth".to_string()));
    }
    let last_z = &tape.pre_activations[n_layers - 1];
    if grad_output.dim() != last_z.dim() {
        return Err(Error::shape(format!(
            "grad_output shape {:?} does not match output shape {:?}",
            grad_output.dim(),
            last_z.dim()
        )));
    }

    let mut grads: Vec<LayerGrads> = Vec::with_capacity(n_layers);
    // d loss / d z for the layer currently being processed; the output
    // layer is affine so it starts as grad_output itself.
    let mut delta = grad_output.clone();
    for idx in (0..n_layers).rev() {
        let layer = &params.layers[idx];
        let layer_input = &tape.layer_inputs[idx];
        grads.push(LayerGrads {
            weight: layer_input.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        });
        let grad_input = delta.dot(&layer.weight.t());
        delta = if idx > 0 {
            grad_input * tape.pre_activations[idx - 1].mapv(gelu_prime)
        } else {
            grad_input
        };
    }
    grads.reverse();
    Ok((MlpGrads { layers: grads }, delta))
}
