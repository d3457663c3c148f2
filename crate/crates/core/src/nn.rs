//! Parameterized layers. Weights are leaf tensors; switching a layer between
//! trainable and frozen rebuilds the leaves with a different `requires_grad`.

use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fan-in scaled uniform init, `U(-√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform<F: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: f64, rng: &mut R) -> Tensor<F> {
    let bound = (6.0 / fan_in).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// `y = x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: he_uniform(&[input, output], input as f64, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.matmul(&self.weight)?.add(&self.bias)?)
    }

    pub fn params(&self) -> [(&'static str, &Tensor<F>); 2] {
        [("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Strided convolution with a per-channel bias; kernel `[co, ci, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub padding: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new<R: Rng + ?Sized>(ci: usize, co: usize, k: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        Self {
            weight: he_uniform(&[co, ci, k, k], (ci * k * k) as f64, rng),
            bias: Tensor::zeros(&[co]),
            stride,
            padding,
        }
    }

    /// Pre-bias correlation, exposed for callers that need the raw map.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let co = self.bias.numel();
        let y = x.conv2d(&self.weight, self.stride, self.padding)?;
        Ok(y.add(&self.bias.reshape(&[co, 1, 1])?)?)
    }

    pub fn params(&self) -> [(&'static str, &Tensor<F>); 2] {
        [("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution with bias; kernel `[ci, co, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub padding: usize,
}

impl<F: Scalar> ConvTranspose2d<F> {
    pub fn new<R: Rng + ?Sized>(ci: usize, co: usize, k: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        // each output pixel sees about ci·k²/stride² taps
        let fan_in = (ci * k * k) as f64 / (stride * stride) as f64;
        Self {
            weight: he_uniform(&[ci, co, k, k], fan_in, rng),
            bias: Tensor::zeros(&[co]),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let co = self.bias.numel();
        let y = x.conv_transpose2d(&self.weight, self.stride, self.padding)?;
        Ok(y.add(&self.bias.reshape(&[co, 1, 1])?)?)
    }

    pub fn params(&self) -> [(&'static str, &Tensor<F>); 2] {
        [("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
