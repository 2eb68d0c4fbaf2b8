//! Single-head scaled dot-product attention along axis 1 of (B, L, D).
//! The L×L probability matrix is recomputed in the backward pass.

use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Default cap on the attended sequence length (memory is quadratic in L).
pub const DEFAULT_SDP_MAX_LEN: usize = 4096;

fn dims<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, max_len: usize) -> Result<(usize, usize, usize)> {
    let (b, l, d) = q.dims3()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return dim_err(format!(
            "sdp attention: q {:?}, k {:?}, v {:?} must match",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if l > max_len {
        return Err(Error::Resource(format!(
            "sdp attention over {l} positions exceeds the cap of {max_len} (memory grows as L²)"
        )));
    }
    Ok((b, l, d))
}

/// Row-softmax of `q·kᵀ/√d` for one batch element, into `p` (L×L).
fn probs<T: Real>(q: &[T], k: &[T], l: usize, d: usize, p: &mut [T]) {
    let scale = T::one() / T::of(d as f64).sqrt();
    T::gemm(l, d, l, q, false, k, true, T::zero(), p);
    for row in p.chunks_mut(l) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = ((*v - m) * scale).exp();
            s = s + *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
}

/// `softmax(q·kᵀ/√d)·v` per batch element.
pub fn sdp_attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, max_len: usize) -> Result<Tensor<T>> {
    let (_, l, d) = dims(q, k, v, max_len)?;
    let mut out = vec![T::zero(); q.len()];
    if l == 0 {
        return Tensor::from_vec(q.shape(), out);
    }
    out.par_chunks_mut(l * d).enumerate().for_each(|(bi, o)| {
        let r = bi * l * d..(bi + 1) * l * d;
        let mut p = vec![T::zero(); l * l];
        probs(&q.data()[r.clone()], &k.data()[r.clone()], l, d, &mut p);
        T::gemm(l, l, d, &p, false, &v.data()[r], false, T::zero(), o);
    });
    Tensor::from_vec(q.shape(), out)
}

/// Returns (grad_q, grad_k, grad_v).
pub fn sdp_attention_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    grad: &Tensor<T>,
    max_len: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, l, d) = dims(q, k, v, max_len)?;
    grad.expect_same_shape(q, "sdp attention upstream")?;
    let scale = T::one() / T::of(d as f64).sqrt();
    let per: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let r = bi * l * d..(bi + 1) * l * d;
            let (qd, kd, vd, gd) = (&q.data()[r.clone()], &k.data()[r.clone()], &v.data()[r.clone()], &grad.data()[r]);
            let mut p = vec![T::zero(); l * l];
            probs(qd, kd, l, d, &mut p);
            let mut gv = vec![T::zero(); l * d];
            T::gemm(l, l, d, &p, true, gd, false, T::zero(), &mut gv);
            let mut ds = vec![T::zero(); l * l];
            T::gemm(l, d, l, gd, false, vd, true, T::zero(), &mut ds);
            for (srow, prow) in ds.chunks_mut(l).zip(p.chunks(l)) {
                let dot: T = srow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (s, &pv) in srow.iter_mut().zip(prow) {
                    *s = pv * (*s - dot) * scale;
                }
            }
            let mut gq = vec![T::zero(); l * d];
            T::gemm(l, l, d, &ds, false, kd, false, T::zero(), &mut gq);
            let mut gk = vec![T::zero(); l * d];
            T::gemm(l, l, d, &ds, true, qd, false, T::zero(), &mut gk);
            (gq, gk, gv)
        })
        .collect();
    let mut gq = Vec::with_capacity(q.len());
    let mut gk = Vec::with_capacity(q.len());
    let mut gv = Vec::with_capacity(q.len());
    for (a, b, c) in per {
        gq.extend(a);
        gk.extend(b);
        gv.extend(c);
    }
    Ok((
        Tensor::from_vec(q.shape(), gq)?,
        Tensor::from_vec(q.shape(), gk)?,
        Tensor::from_vec(q.shape(), gv)?,
    ))
}

impl<T: Real> Tape<T> {
    pub fn sdp_attention(&mut self, q: Var, k: Var, v: Var, max_len: usize) -> Result<Var> {
        let y = sdp_attention(self.value(q), self.value(k), self.value(v), max_len)?
            .with_layout(self.value(q).layout())?;
        Ok(self.push(
            "sdp_attention",
            vec![q, k, v],
            y,
            Some(Box::new(move |g, inp, _| {
                let (gq, gk, gv) = sdp_attention_backward(inp[0], inp[1], inp[2], g, max_len)?;
                Ok(vec![gq, gk, gv])
            })),
        ))
    }
}
