//! Elementwise activations and the axis softmax.

use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Elementwise `max(x, slope·x)` for `slope` in (0, 1).
pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    x.zip_map(grad, |v, g| if v >= T::zero() { g } else { g * slope })
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    // ln(1 + e^x) without overflow for large x
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Softmax along `axis`, stabilized by subtracting the per-slice maximum.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut m = T::neg_infinity();
            for j in 0..n {
                m = m.max(d[at(j)]);
            }
            let mut total = T::zero();
            for j in 0..n {
                let e = (d[at(j)] - m).exp();
                d[at(j)] = e;
                total = total + e;
            }
            for j in 0..n {
                d[at(j)] = d[at(j)] / total;
            }
        }
    }
    Ok(out)
}

/// Given the softmax output `y`, maps upstream `grad` to the input gradient
/// `y ⊙ (g − Σ g⊙y)` along `axis`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    y.expect_same_shape(grad, "softmax backward")?;
    let (outer, n, inner) = axis_split(y.shape(), axis)?;
    let (yd, gd) = (y.data(), grad.data());
    let mut out = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let dot: T = (0..n).map(|j| yd[at(j)] * gd[at(j)]).sum();
            for j in 0..n {
                out[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
            }
        }
    }
    Tensor::from_vec(y.shape(), out)
}
