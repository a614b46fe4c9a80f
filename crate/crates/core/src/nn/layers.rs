//! Parameterized layers. Each layer registers its parameters in a
//! [`ParamStore`] at construction and reads them back through the
//! [`Bindings`] of the current tape.

use rand::Rng;

use crate::error::Result;
use crate::nn::param::{prelu_gain, uniform_fan_in};
use crate::nn::tape::{Bindings, Tape, Var};
use crate::nn::{ParamId, ParamStore, Scalar, Tensor};

pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(rng, vec![out_channels, in_channels, kernel, kernel], fan_in, gain),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]));
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Bindings, x: Var) -> Result<Var> {
        tape.conv2d(x, b.var(self.weight), b.var(self.bias), self.stride, self.padding)
    }
}

/// 3x3 transposed convolution that exactly doubles spatial extent
/// (stride 2, padding 1, output padding 1).
#[derive(Debug, Clone)]
pub struct Deconv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Deconv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        gain: f64,
    ) -> Self {
        // Each output pixel sees on average 9/4 taps per input channel.
        let fan_in = (in_channels * 9).div_ceil(4);
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(rng, vec![in_channels, out_channels, 3, 3], fan_in, gain),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]));
        Deconv2d {
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Bindings, x: Var) -> Result<Var> {
        tape.deconv2d(x, b.var(self.weight), b.var(self.bias), 2, 1, 1)
    }
}

#[derive(Debug, Clone)]
pub struct Prelu {
    pub alpha: ParamId,
}

impl Prelu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let alpha = store.add(
            format!("{name}.alpha"),
            Tensor::full(vec![channels], T::from_f64(PRELU_INIT)),
        );
        Prelu { alpha }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, b: &Bindings, x: Var) -> Result<Var> {
        tape.prelu(x, b.var(self.alpha))
    }
}

/// Gain for layers followed by PReLU at its initial slope.
pub fn prelu_layer_gain() -> f64 {
    prelu_gain(PRELU_INIT)
}
