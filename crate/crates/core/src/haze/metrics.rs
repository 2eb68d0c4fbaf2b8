//! Image quality metrics, computed in f64 whatever the tensor precision.
//!
//! Images are (3, H, W) or (B, 3, H, W) with values in [0, 1]; batched
//! metrics are averaged over the batch.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64().unwrap()).collect()
}

pub fn mse<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(gt, "mse")?;
    if pred.is_empty() {
        return Err(Error::Dimension("mse of empty tensors".into()));
    }
    let (a, b) = (to_f64(pred), to_f64(gt));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

pub fn l1<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(gt, "l1")?;
    if pred.is_empty() {
        return Err(Error::Dimension("l1 of empty tensors".into()));
    }
    let (a, b) = (to_f64(pred), to_f64(gt));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Peak signal-to-noise ratio for unit data range, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [3, h, w] => Ok((1, h, w)),
        [b, 3, h, w] => Ok((b, h, w)),
        _ => Err(Error::Dimension(format!("expected (3,H,W) or (B,3,H,W) RGB image, got {shape:?}"))),
    }
}

/// BT.601 luma of each image, `b` planes of `h·w`.
fn luma(data: &[f64], b: usize, plane: usize) -> Vec<Vec<f64>> {
    (0..b)
        .map(|i| {
            let img = &data[i * 3 * plane..(i + 1) * 3 * plane];
            (0..plane)
                .map(|p| 0.299 * img[p] + 0.587 * img[plane + p] + 0.114 * img[2 * plane + p])
                .collect()
        })
        .collect()
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable valid-mode Gaussian filter of an `h×w` plane.
fn filter(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid region of the luma channel, 11×11 Gaussian
/// window (σ = 1.5), unit data range.
pub fn ssim<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(gt, "ssim")?;
    let (b, h, w) = image_dims(pred.shape())?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let ya = luma(&to_f64(pred), b, h * w);
    let yb = luma(&to_f64(gt), b, h * w);
    let mut total = 0.0;
    for (x, y) in ya.iter().zip(&yb) {
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect() };
        let mx = filter(x, h, w, &g);
        let my = filter(y, h, w, &g);
        let mxx = filter(&prod(&|p, _| p * p), h, w, &g);
        let myy = filter(&prod(&|_, q| q * q), h, w, &g);
        let mxy = filter(&prod(&|p, q| p * q), h, w, &g);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = mxx[i] - ux * ux;
            let syy = myy[i] - uy * uy;
            let sxy = mxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * sxy + c2)) / ((ux * ux + uy * uy + c1) * (sxx + syy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        Tensor::rand_uniform(&[3, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn psnr_of_uniform_offset_is_twenty_db() {
        let gt = Tensor::<f64>::zeros(&[3, 8, 8]);
        let pred = Tensor::full(&[3, 8, 8], 0.1);
        assert!((psnr(&pred, &gt).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_of_full_scale_error_is_zero() {
        let gt = Tensor::<f64>::zeros(&[3, 4, 4]);
        assert_eq!(psnr(&Tensor::ones(&[3, 4, 4]), &gt).unwrap(), 0.0);
        assert!(matches!(psnr(&Tensor::ones(&[3, 4, 5]), &gt), Err(Error::Dimension(_))));
    }

    #[test]
    fn psnr_identical_is_capped() {
        let a = img(8, 8, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_is_symmetric_and_monotone() {
        let gt = img(12, 12, 2);
        let noise = img(12, 12, 3).map(|v| v - 0.5);
        let mut last = f64::INFINITY;
        for amp in [0.05, 0.1, 0.2] {
            let pred = gt.zip_map(&noise, |g, n| g + amp * n).unwrap();
            let p = psnr(&pred, &gt).unwrap();
            assert_eq!(p, psnr(&gt, &pred).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = img(16, 20, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    /// Direct 2-D window sum over every valid position.
    fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let (_, h, w) = a.dims3().unwrap();
        let plane = h * w;
        let y = |t: &Tensor<f64>, p: usize| 0.299 * t.data()[p] + 0.587 * t.data()[plane + p] + 0.114 * t.data()[2 * plane + p];
        let mut win = [[0.0; 11]; 11];
        let mut s = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (-(((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / 4.5)).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = win[i][j] / s;
                        let p = (y0 + i) * w + x0 + j;
                        let (u, v) = (y(a, p), y(b, p));
                        mx += wt * u;
                        my += wt * v;
                        xx += wt * u * u;
                        yy += wt * v * v;
                        xy += wt * u * v;
                    }
                }
                let (c1, c2) = (1e-4, 9e-4);
                total += (2.0 * mx * my + c1) * (2.0 * (xy - mx * my) + c2)
                    / ((mx * mx + my * my + c1) * (xx - mx * mx + yy - my * my + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_window_sum() {
        for (seed, (h, w)) in [(11, 11), (16, 16), (13, 17), (24, 16)].into_iter().enumerate() {
            let a = img(h, w, 10 + seed as u64);
            let b = a.zip_map(&img(h, w, 20 + seed as u64), |x, n| 0.7 * x + 0.3 * n).unwrap();
            let got = ssim(&a, &b).unwrap();
            assert!((got - ssim_oracle(&a, &b)).abs() < 1e-10, "{h}x{w}");
            assert!((got - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_against_negative_is_below_one() {
        let a = img(16, 16, 6);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 1.0);
    }

    #[test]
    fn ssim_batch_is_mean_of_items() {
        let (a0, a1, b0, b1) = (img(12, 12, 30), img(12, 12, 31), img(12, 12, 32), img(12, 12, 33));
        let cat = |x: &Tensor<f64>, y: &Tensor<f64>| Tensor::from_vec(&[2, 3, 12, 12], [x.data(), y.data()].concat()).unwrap();
        let batched = ssim(&cat(&a0, &a1), &cat(&b0, &b1)).unwrap();
        let mean = (ssim(&a0, &b0).unwrap() + ssim(&a1, &b1).unwrap()) / 2.0;
        assert!((batched - mean).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = img(10, 16, 5);
        assert!(matches!(ssim(&a, &a), Err(Error::Config(_))));
    }

    #[test]
    fn window_is_normalized() {
        assert!((gaussian_window().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
