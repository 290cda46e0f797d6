use rand::Rng;

use super::tensor::{Activation, ConvGeometry};
use super::{ParamId, ParamSet, Tape, Var};
use crate::error::Result;

/// Affine map `x · W + b` over row vectors.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weight = params.add_uniform(format!("{name}.w"), &[inputs, outputs], inputs, rng);
        let bias = params.add_uniform(format!("{name}.b"), &[outputs], inputs, rng);
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Stack of [`Linear`] layers with an activation between layers.
/// `final_activation` decides whether the last layer is activated too.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub final_activation: bool,
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        widths: &[usize],
        activation: Activation,
        final_activation: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp {
            layers,
            activation,
            final_activation,
        }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, params, x)?;
            if i + 1 < n || self.final_activation {
                x = tape.activation(x, self.activation);
            }
        }
        Ok(x)
    }
}

/// Square-kernel convolution over a `[c, h, w]` input.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = params.add_uniform(format!("{name}.w"), &[out_channels, fan_in], fan_in, rng);
        let bias = params.add_uniform(format!("{name}.b"), &[out_channels], fan_in, rng);
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let geom = ConvGeometry {
            in_channels: self.in_channels,
            height: shape.get(1).copied().unwrap_or(0),
            width: shape.get(2).copied().unwrap_or(0),
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        };
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        tape.conv2d(x, w, b, geom)
    }
}
