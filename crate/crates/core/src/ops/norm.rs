//! Layer normalization over the channel (last) axis of a (B, L, C) tensor.

use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

fn check<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = *x.shape().last().unwrap();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return dim_err(format!(
            "layer_norm: gamma {:?} / beta {:?} must both have length {c}",
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(c)
}

fn row_stats<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let c = check(x, gamma, beta)?;
    let (g, b) = (gamma.data(), beta.data());
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let (mean, inv_std) = row_stats(row, eps);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv_std * g[j] + b[j];
        }
    }
    Ok(out)
}

/// Returns (grad_x, grad_gamma, grad_beta).
pub fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = check(x, gamma, beta)?;
    x.expect_same_shape(grad, "layer_norm backward")?;
    let g = gamma.data();
    let n = T::of(c as f64);
    let mut gx = vec![T::zero(); x.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); c];
    let mut gxhat = vec![T::zero(); c];
    for ((row, grow), out) in x
        .data()
        .chunks(c)
        .zip(grad.data().chunks(c))
        .zip(gx.chunks_mut(c))
    {
        let (mean, inv_std) = row_stats(row, eps);
        for j in 0..c {
            xhat[j] = (row[j] - mean) * inv_std;
            gxhat[j] = grow[j] * g[j];
            gg[j] = gg[j] + grow[j] * xhat[j];
            gb[j] = gb[j] + grow[j];
        }
        let mean_g = gxhat.iter().copied().sum::<T>() / n;
        let mean_gx = gxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
        for j in 0..c {
            out[j] = inv_std * (gxhat[j] - mean_g - xhat[j] * mean_gx);
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(&[c], gg)?,
        Tensor::from_vec(&[c], gb)?,
    ))
}
