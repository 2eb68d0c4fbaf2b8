//! Differentiable wrappers that record tensor-core kernels on a [`Tape`].

use crate::error::Result;
use crate::ops::{activation, conv, linear, norm, resample, shape};
use crate::ops::Conv2dSpec;
use crate::tensor::{Real, Tensor};

use super::tape::{Tape, Var};

impl<T: Real> Tape<T> {
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_with(x, weight, bias, Conv2dSpec::symmetric(stride, padding))
    }

    pub fn conv2d_with(&mut self, x: Var, weight: Var, bias: Var, spec: Conv2dSpec) -> Result<Var> {
        let y = conv::conv2d_with(self.value(x), self.value(weight), Some(self.value(bias)), &spec)?;
        Ok(self.push(
            "conv2d",
            vec![x, weight, bias],
            y,
            Some(Box::new(move |g, inp, _| {
                let (gx, gw, gb) = conv::conv2d_backward(inp[0], inp[1], g, &spec)?;
                Ok(vec![gx, gw, gb])
            })),
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let y = activation::leaky_relu(self.value(x), slope);
        self.push(
            "leaky_relu",
            vec![x],
            y,
            Some(Box::new(move |g, inp, _| {
                Ok(vec![activation::leaky_relu_backward(inp[0], g, slope)?])
            })),
        )
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let y = norm::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            "layer_norm",
            vec![x, gamma, beta],
            y,
            Some(Box::new(move |g, inp, _| {
                let (gx, gg, gb) = norm::layer_norm_backward(inp[0], inp[1], inp[2], eps, g)?;
                Ok(vec![gx, gg, gb])
            })),
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let y = activation::softmax(self.value(x), axis)?;
        Ok(self.push(
            "softmax",
            vec![x],
            y,
            Some(Box::new(move |g, _, out| {
                Ok(vec![activation::softmax_backward(out, g, axis)?])
            })),
        ))
    }

    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = resample::bilinear_upsample(self.value(x), factor)?;
        Ok(self.push(
            "bilinear_upsample",
            vec![x],
            y,
            Some(Box::new(move |g, inp, _| {
                Ok(vec![resample::bilinear_upsample_backward(inp[0].shape(), g, factor)?])
            })),
        ))
    }

    pub fn transpose_lc(&mut self, x: Var) -> Result<Var> {
        let y = shape::transpose_lc(self.value(x))?;
        Ok(self.push(
            "transpose_lc",
            vec![x],
            y,
            Some(Box::new(|g, inp, _| {
                Ok(vec![shape::transpose_lc(g)?.with_layout(inp[0].layout())?])
            })),
        ))
    }

    pub fn flatten_spatial(&mut self, x: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let y = shape::flatten_spatial(self.value(x))?;
        Ok(self.push(
            "flatten_spatial",
            vec![x],
            y,
            Some(Box::new(move |g, _, _| Ok(vec![shape::unflatten_spatial(g, h, w)?]))),
        ))
    }

    pub fn unflatten_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = shape::unflatten_spatial(self.value(x), h, w)?;
        Ok(self.push(
            "unflatten_spatial",
            vec![x],
            y,
            Some(Box::new(|g, _, _| Ok(vec![shape::flatten_spatial(g)?]))),
        ))
    }

    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(new_shape)?;
        Ok(self.push(
            "reshape",
            vec![x],
            y,
            Some(Box::new(|g, inp, _| {
                g.clone().reshape(inp[0].shape())?.with_layout(inp[0].layout()).map(|t| vec![t])
            })),
        ))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = shape::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(
            "concat_channels",
            vec![a, b],
            y,
            Some(Box::new(|g, inp, _| {
                let (ga, gb) = shape::split_channels(g, inp[0].shape()[1])?;
                Ok(vec![ga, gb])
            })),
        ))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = linear::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(
            "hadamard",
            vec![a, b],
            y,
            Some(Box::new(|g, inp, _| {
                Ok(vec![linear::hadamard(g, inp[1])?, linear::hadamard(g, inp[0])?])
            })),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(
            "add",
            vec![a, b],
            y,
            Some(Box::new(|g, _, _| Ok(vec![g.clone(), g.clone()]))),
        ))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let y = self.value(x).scale(s);
        self.push("scale", vec![x], y, Some(Box::new(move |g, _, _| Ok(vec![g.scale(s)]))))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = linear::linear(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.push(
            "linear",
            vec![x, weight, bias],
            y,
            Some(Box::new(|g, inp, _| {
                let (gx, gw, gb) = linear::linear_backward(inp[0], inp[1], g)?;
                Ok(vec![gx, gw, gb])
            })),
        ))
    }

    pub fn depthwise_conv1d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = conv::depthwise_conv1d(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.push(
            "depthwise_conv1d",
            vec![x, weight, bias],
            y,
            Some(Box::new(|g, inp, _| {
                let (gx, gw, gb) = conv::depthwise_conv1d_backward(inp[0], inp[1], g)?;
                Ok(vec![gx, gw, gb])
            })),
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(
            "sum",
            vec![x],
            y,
            Some(Box::new(|g, inp, _| Ok(vec![Tensor::full(inp[0].shape(), g.item())]))),
        )
    }

    /// `Σ x ⊙ w` against a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let prod = linear::hadamard(self.value(x), &weights)?;
        let y = Tensor::scalar(prod.sum());
        Ok(self.push(
            "weighted_sum",
            vec![x],
            y,
            Some(Box::new(move |g, _, _| Ok(vec![weights.scale(g.item())]))),
        ))
    }

    /// Mean absolute error between `pred` and a constant `target`.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let diff = self.value(pred).sub(target)?;
        let n = T::of(diff.len() as f64);
        let y = Tensor::scalar(diff.map(|v| v.abs()).sum() / n);
        let sign = diff.map(|v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        });
        Ok(self.push(
            "l1_loss",
            vec![pred],
            y,
            Some(Box::new(move |g, _, _| Ok(vec![sign.scale(g.item() / n)]))),
        ))
    }

    /// Mean squared error between `pred` and a constant `target`.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let diff = self.value(pred).sub(target)?;
        let n = T::of(diff.len() as f64);
        let y = Tensor::scalar(diff.map(|v| v * v).sum() / n);
        Ok(self.push(
            "mse_loss",
            vec![pred],
            y,
            Some(Box::new(move |g, _, _| Ok(vec![diff.scale(T::of(2.0) * g.item() / n)]))),
        ))
    }
}
