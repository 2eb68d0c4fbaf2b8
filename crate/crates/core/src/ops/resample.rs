//! Bilinear upsampling (half-pixel centers, edge clamped) plus reflect
//! padding and cropping used at inference time.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Source taps for one output index: (low index, high index, high weight).
fn taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * factor)
        .map(|i| {
            let src = ((i as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn bilinear_upsample<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 2 {
        return Err(Error::Config(format!("upsample factor must be >= 2, got {factor}")));
    }
    let (b, c, h, w) = x.dims4()?;
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![T::zero(); b * c * ho * wo];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(&[b, c, ho, wo], out)
}

/// Scatter-adds the upstream gradient back through the interpolation weights.
pub fn bilinear_upsample_backward<T: Real>(
    input_shape: &[usize],
    grad: &Tensor<T>,
    factor: usize,
) -> Result<Tensor<T>> {
    let [b, c, h, w] = input_shape[..] else {
        return dim_err(format!("upsample backward: bad input shape {input_shape:?}"));
    };
    let (ho, wo) = (h * factor, w * factor);
    if grad.shape() != [b, c, ho, wo] {
        return dim_err(format!(
            "upsample backward: upstream {:?} does not match {:?}",
            grad.shape(),
            [b, c, ho, wo]
        ));
    }
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let mut out = vec![T::zero(); b * c * h * w];
    for (g, dst) in grad.data().chunks(ho * wo).zip(out.chunks_mut(h * w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let v = g[oy * wo + ox];
                let (top, bot) = (v * (T::one() - fy), v * fy);
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - fx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - fx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
            }
        }
    }
    Tensor::from_vec(input_shape, out)
}

fn reflect(i: isize, n: usize) -> usize {
    // mirror without repeating the edge pixel: -1 -> 1, n -> n-2
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Pads the bottom and right edges by reflection up to (`h_to`, `w_to`).
pub fn reflect_pad_to<T: Real>(x: &Tensor<T>, h_to: usize, w_to: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if h_to < h || w_to < w {
        return dim_err(format!("cannot pad {h}x{w} down to {h_to}x{w_to}"));
    }
    let mut out = vec![T::zero(); b * c * h_to * w_to];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(h_to * w_to)) {
        for y in 0..h_to {
            let sy = reflect(y as isize, h);
            for xx in 0..w_to {
                dst[y * w_to + xx] = src[sy * w + reflect(xx as isize, w)];
            }
        }
    }
    Tensor::from_vec(&[b, c, h_to, w_to], out)
}

/// Keeps the top-left `h`×`w` window.
pub fn crop<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (b, c, hi, wi) = x.dims4()?;
    if h > hi || w > wi {
        return dim_err(format!("cannot crop {hi}x{wi} to {h}x{w}"));
    }
    let mut out = Vec::with_capacity(b * c * h * w);
    for plane in x.data().chunks(hi * wi) {
        for y in 0..h {
            out.extend_from_slice(&plane[y * wi..y * wi + w]);
        }
    }
    Tensor::from_vec(&[b, c, h, w], out)
}
