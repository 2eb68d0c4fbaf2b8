//! Per-position affine maps and the elementwise (Hadamard) product.

use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

fn dims<T: Real>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let cin = *x.shape().last().unwrap();
    let (cout, wcin) = weight.dims2()?;
    if wcin != cin {
        return dim_err(format!(
            "linear: input has {cin} channels, weight {:?} expects {wcin}",
            weight.shape()
        ));
    }
    Ok((x.len() / cin, cin, cout))
}

/// `y = x·Wᵀ + b` applied at every position of the last axis.
/// `weight` is (C_out, C_in), `bias` is (C_out).
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cin, cout) = dims(x, weight)?;
    if bias.shape() != [cout] {
        return dim_err(format!("linear: bias {:?} vs {cout} outputs", bias.shape()));
    }
    let mut out = Vec::with_capacity(rows * cout);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    T::gemm(rows, cin, cout, x.data(), false, weight.data(), true, T::one(), &mut out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    Tensor::from_vec(&shape, out)
}

/// Returns (grad_x, grad_weight, grad_bias).
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (rows, cin, cout) = dims(x, weight)?;
    if grad.len() != rows * cout {
        return dim_err(format!("linear backward: upstream {:?}", grad.shape()));
    }
    let mut gx = vec![T::zero(); rows * cin];
    T::gemm(rows, cout, cin, grad.data(), false, weight.data(), false, T::zero(), &mut gx);
    let mut gw = vec![T::zero(); cout * cin];
    T::gemm(cout, rows, cin, grad.data(), true, x.data(), false, T::zero(), &mut gw);
    let mut gb = vec![T::zero(); cout];
    for row in grad.data().chunks(cout) {
        for (a, &g) in gb.iter_mut().zip(row) {
            *a = *a + g;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[cout], gb)?,
    ))
}

pub fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::rand_uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);
    }

    #[test]
    fn hand_example() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[3.5]);
    }

    #[test]
    fn random_matches_matvec_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::rand_uniform(&[2, 5, 3], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[4], -1.0, 1.0, &mut rng);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 5, 4]);
        for r in 0..10 {
            for o in 0..4 {
                let mut acc = b.data()[o];
                for i in 0..3 {
                    acc += w.data()[o * 3 + i] * x.data()[r * 3 + i];
                }
                assert!((y.data()[r * 4 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hadamard_examples() {
        let x = Tensor::<f64>::from_vec(&[2], vec![2.0, 3.0]).unwrap();
        let y = Tensor::<f64>::from_vec(&[2], vec![4.0, 5.0]).unwrap();
        assert_eq!(hadamard(&x, &y).unwrap().data(), &[8.0, 15.0]);
        assert_eq!(hadamard(&Tensor::ones(&[2]), &x).unwrap(), x);
        assert_eq!(hadamard(&x, &Tensor::zeros(&[2])).unwrap(), Tensor::zeros(&[2]));
        assert!(hadamard(&x, &Tensor::zeros(&[3])).is_err());
    }
}
