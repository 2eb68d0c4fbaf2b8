//! Pure data permutations between image and sequence layouts.

use crate::error::{dim_err, Result};
use crate::tensor::{Layout, Real, Tensor};

/// Swaps the last two axes of a rank-3 tensor: (B, L, C) ⇄ (B, C, L).
/// The layout tag flips between `Blc` and `Bcl`.
pub fn transpose_lc<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m, n) = x.dims3()?;
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for bi in 0..b {
        let s = &src[bi * m * n..(bi + 1) * m * n];
        let d = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                d[j * m + i] = s[i * n + j];
            }
        }
    }
    let layout = match x.layout() {
        Layout::Bcl => Layout::Blc,
        _ => Layout::Bcl,
    };
    Tensor::from_vec(&[b, n, m], out)?.with_layout(layout)
}

/// (B, C, H, W) → (B, H·W, C) with position `l = h·W + w`.
pub fn flatten_spatial<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    transpose_lc(&x.clone().reshape(&[b, c, h * w])?)?.with_layout(Layout::Blc)
}

/// Inverse of [`flatten_spatial`].
pub fn unflatten_spatial<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (b, l, c) = x.dims3()?;
    if h * w != l {
        return dim_err(format!("unflatten: {h}x{w} = {} != sequence length {l}", h * w));
    }
    transpose_lc(x)?.reshape(&[b, c, h, w])
}

/// Concatenates two (B, C_i, H, W) tensors along channels.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return dim_err(format!(
            "concat: shapes {:?} and {:?} differ outside the channel axis",
            a.shape(),
            b.shape()
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * hw..(i + 1) * ca * hw]);
        out.extend_from_slice(&b.data()[i * cb * hw..(i + 1) * cb * hw]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], out)
}

/// Splits channels at `at`, the inverse of [`concat_channels`].
pub fn split_channels<T: Real>(x: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if at == 0 || at >= c {
        return dim_err(format!("split: index {at} outside 1..{c}"));
    }
    let hw = h * w;
    let mut a = Vec::with_capacity(n * at * hw);
    let mut b = Vec::with_capacity(n * (c - at) * hw);
    for img in x.data().chunks(c * hw) {
        a.extend_from_slice(&img[..at * hw]);
        b.extend_from_slice(&img[at * hw..]);
    }
    Ok((
        Tensor::from_vec(&[n, at, h, w], a)?,
        Tensor::from_vec(&[n, c - at, h, w], b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transpose_shape_and_index_map() {
        let x = Tensor::<f32>::zeros(&[1, 4, 2]);
        assert_eq!(transpose_lc(&x).unwrap().shape(), &[1, 2, 4]);

        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let y = transpose_lc(&x).unwrap();
        assert_eq!(y.layout(), Layout::Bcl);
        for b in 0..2 {
            for l in 0..3 {
                for c in 0..4 {
                    assert_eq!(x.data()[(b * 3 + l) * 4 + c], y.data()[(b * 4 + c) * 3 + l]);
                }
            }
        }
    }

    #[test]
    fn flatten_index_map() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64 + 1.0);
        let y = flatten_spatial(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 2]);
        for c in 0..2 {
            for h in 0..2 {
                for w in 0..2 {
                    assert_eq!(y.data()[(h * 2 + w) * 2 + c], x.data()[(c * 2 + h) * 2 + w]);
                }
            }
        }
    }

    #[test]
    fn flatten_degenerate_spatial() {
        let x = Tensor::<f32>::from_fn(&[1, 5, 1, 1], |i| i as f32);
        let y = flatten_spatial(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn unflatten_rejects_wrong_extent() {
        let x = Tensor::<f32>::zeros(&[1, 6, 2]);
        assert!(unflatten_spatial(&x, 2, 2).is_err());
    }

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::<f32>::from_fn(&[2, 1, 2, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[2, 3, 2, 2], |i| -(i as f32));
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    proptest! {
        #[test]
        fn permutations_round_trip_exactly(
            b in 1usize..3, c in 1usize..5, h in 1usize..6, w in 1usize..6, seed in any::<u64>(),
        ) {
            let x = Tensor::<f32>::from_fn(&[b, c, h, w], |i| ((i as u64 ^ seed) % 1000) as f32 * 0.37);
            let seq = flatten_spatial(&x).unwrap();
            prop_assert_eq!(&unflatten_spatial(&seq, h, w).unwrap(), &x);
            let back = transpose_lc(&transpose_lc(&seq).unwrap()).unwrap();
            prop_assert_eq!(back, seq);
        }
    }
}
