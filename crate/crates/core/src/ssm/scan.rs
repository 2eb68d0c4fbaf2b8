//! Forward scans over (B, L, C) inputs and the reverse-time adjoint.
//!
//! Every (batch, channel) pair is an independent lane. Lanes run in parallel;
//! per-lane gradient contributions are reduced in lane order so results do not
//! depend on the worker count.

use std::borrow::Borrow;

use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::ops::linear::linear_backward;
use crate::ops::{linear, sigmoid, softplus};
use crate::tensor::{Real, Tensor};

use super::assoc::{exclusive_scan, Affine};
use super::discretize::{zoh_input_factor, zoh_input_factor_da};
use super::{SsmMix, SsmMode, SsmParams};

/// Continuous coefficients and per-position mixing values for one input.
struct Coeffs<T> {
    bsz: usize,
    len: usize,
    ch: usize,
    n: usize,
    /// (C, N), strictly negative.
    a: Vec<T>,
    /// (B·L·C) softplus argument and its output Δ.
    pre: Vec<T>,
    delta: Vec<T>,
    /// Fixed: (C, N). Selective: (B·L, N).
    bv: Vec<T>,
    cv: Vec<T>,
    selective: bool,
    d: Vec<T>,
}

impl<T: Real> Coeffs<T> {
    fn new<P: Borrow<Tensor<T>>>(u: &Tensor<T>, p: &SsmParams<P>) -> Result<Self> {
        let (c, n) = p.validate()?;
        let (bsz, len, ch) = u.dims3()?;
        if ch != c {
            return dim_err(format!(
                "ssm scan: input channel axis (axis 2) has {ch} entries, parameters expect {c}"
            ));
        }
        let a = p.a_log.borrow().data().iter().map(|&v| -v.exp()).collect();
        let (pre, bv, cv, selective) = match &p.mix {
            SsmMix::Fixed { b, c: cc } => {
                let bias = p.delta_bias.borrow().data();
                let pre = (0..bsz * len).flat_map(|_| bias.iter().copied()).collect();
                (pre, b.borrow().data().to_vec(), cc.borrow().data().to_vec(), false)
            }
            SsmMix::Selective { delta_proj, b_proj, c_proj } => {
                let zero = Tensor::zeros(&[n]);
                let pre = linear(u, delta_proj.borrow(), p.delta_bias.borrow())?.into_data();
                let bv = linear(u, b_proj.borrow(), &zero)?.into_data();
                let cv = linear(u, c_proj.borrow(), &zero)?.into_data();
                (pre, bv, cv, true)
            }
        };
        let delta = pre.iter().map(|&x| softplus(x)).collect();
        Ok(Self {
            bsz,
            len,
            ch,
            n,
            a,
            pre,
            delta,
            bv,
            cv,
            selective,
            d: p.d.borrow().data().to_vec(),
        })
    }

    /// Offset of the N mixing values for lane `(b, c)` at step `t`.
    #[inline]
    fn mix_at(&self, b: usize, t: usize, c: usize) -> usize {
        if self.selective {
            (b * self.len + t) * self.n
        } else {
            c * self.n
        }
    }

    #[inline]
    fn pos(&self, b: usize, t: usize, c: usize) -> usize {
        (b * self.len + t) * self.ch + c
    }

    fn lanes(&self) -> usize {
        self.bsz * self.ch
    }

    /// Sequential recurrence for one lane; fills `h` (L×N) if given.
    fn lane_sequential(&self, u: &[T], lane: usize, mut h_all: Option<&mut [T]>) -> Vec<T> {
        let (b, c, n) = (lane / self.ch, lane % self.ch, self.n);
        let a = &self.a[c * n..(c + 1) * n];
        let mut h = vec![T::zero(); n];
        let mut y = Vec::with_capacity(self.len);
        for t in 0..self.len {
            let i = self.pos(b, t, c);
            let (ut, dl) = (u[i], self.delta[i]);
            let m = self.mix_at(b, t, c);
            let mut yt = self.d[c] * ut;
            for k in 0..n {
                let abar = (dl * a[k]).exp();
                let bbar = zoh_input_factor(a[k], dl) * self.bv[m + k];
                h[k] = abar * h[k] + bbar * ut;
                yt = yt + self.cv[m + k] * h[k];
            }
            if let Some(buf) = h_all.as_deref_mut() {
                buf[t * n..(t + 1) * n].copy_from_slice(&h);
            }
            y.push(yt);
        }
        y
    }

    /// Chunked two-pass scan for one lane: local scans per chunk, an
    /// exclusive scan over chunk aggregates, then a carry fix-up.
    fn lane_chunked(&self, u: &[T], lane: usize, chunk: usize) -> Vec<T> {
        let (b, c, n, len) = (lane / self.ch, lane % self.ch, self.n, self.len);
        let a = &self.a[c * n..(c + 1) * n];
        let mut abar = vec![T::zero(); len * n];
        let mut h = vec![T::zero(); len * n];
        for t in 0..len {
            let i = self.pos(b, t, c);
            let (ut, dl) = (u[i], self.delta[i]);
            let m = self.mix_at(b, t, c);
            for k in 0..n {
                abar[t * n + k] = (dl * a[k]).exp();
                h[t * n + k] = zoh_input_factor(a[k], dl) * self.bv[m + k] * ut;
            }
        }

        // pass 1: local scans; `abar` becomes the running product within the chunk
        let aggregates: Vec<Vec<Affine<T>>> = h
            .par_chunks_mut(chunk * n)
            .zip(abar.par_chunks_mut(chunk * n))
            .map(|(hc, ac)| {
                for t in 1..hc.len() / n {
                    for k in 0..n {
                        let (prev_h, prev_p) = (hc[(t - 1) * n + k], ac[(t - 1) * n + k]);
                        hc[t * n + k] = ac[t * n + k] * prev_h + hc[t * n + k];
                        ac[t * n + k] = ac[t * n + k] * prev_p;
                    }
                }
                let last = hc.len() - n;
                (0..n)
                    .map(|k| Affine {
                        mul: ac[last + k],
                        add: hc[last + k],
                    })
                    .collect()
            })
            .collect();

        // pass 2: carry into each chunk, per state
        let chunks = aggregates.len();
        let mut carry = vec![T::zero(); chunks * n];
        for k in 0..n {
            let col: Vec<Affine<T>> = aggregates.iter().map(|agg| agg[k]).collect();
            for (j, pref) in exclusive_scan(&col).into_iter().enumerate() {
                carry[j * n + k] = pref.apply(T::zero());
            }
        }

        // pass 3: fix-up
        h.par_chunks_mut(chunk * n)
            .zip(abar.par_chunks(chunk * n))
            .enumerate()
            .skip(1)
            .for_each(|(j, (hc, ac))| {
                for (i, (hv, &pv)) in hc.iter_mut().zip(ac).enumerate() {
                    *hv = *hv + pv * carry[j * n + i % n];
                }
            });

        (0..len)
            .map(|t| {
                let i = self.pos(b, t, c);
                let m = self.mix_at(b, t, c);
                let mut yt = self.d[c] * u[i];
                for k in 0..n {
                    yt = yt + self.cv[m + k] * h[t * n + k];
                }
                yt
            })
            .collect()
    }

    fn assemble(&self, u: &Tensor<T>, lanes: Vec<Vec<T>>) -> Result<Tensor<T>> {
        let mut out = vec![T::zero(); u.len()];
        for (lane, ys) in lanes.into_iter().enumerate() {
            let (b, c) = (lane / self.ch, lane % self.ch);
            for (t, y) in ys.into_iter().enumerate() {
                out[self.pos(b, t, c)] = y;
            }
        }
        Tensor::from_vec(u.shape(), out)?.with_layout(u.layout())
    }
}

/// Runs the recurrence step by step along axis 1 of `u` (B, L, C).
pub fn ssm_scan_sequential<T: Real, P: Borrow<Tensor<T>>>(u: &Tensor<T>, p: &SsmParams<P>) -> Result<Tensor<T>> {
    let co = Coeffs::new(u, p)?;
    let lanes = (0..co.lanes())
        .into_par_iter()
        .map(|lane| co.lane_sequential(u.data(), lane, None))
        .collect();
    co.assemble(u, lanes)
}

/// Same map as [`ssm_scan_sequential`], computed per lane by a chunked
/// associative scan. `chunk ≥ L` takes the sequential path.
pub fn ssm_scan_parallel<T: Real, P: Borrow<Tensor<T>>>(
    u: &Tensor<T>,
    p: &SsmParams<P>,
    chunk: usize,
) -> Result<Tensor<T>> {
    if chunk == 0 {
        return Err(Error::Config("ssm scan chunk size must be at least 1".into()));
    }
    let (_, len, _) = u.dims3()?;
    if chunk >= len {
        return ssm_scan_sequential(u, p);
    }
    let co = Coeffs::new(u, p)?;
    let lanes = (0..co.lanes())
        .into_par_iter()
        .map(|lane| co.lane_chunked(u.data(), lane, chunk))
        .collect();
    co.assemble(u, lanes)
}

struct LaneGrad<T> {
    du: Vec<T>,
    ddelta: Vec<T>,
    dd: T,
    da: Vec<T>,
    /// Fixed: N values. Selective: L×N values.
    db: Vec<T>,
    dc: Vec<T>,
}

impl<T: Real> Coeffs<T> {
    fn lane_backward(&self, u: &[T], gy: &[T], lane: usize) -> LaneGrad<T> {
        let (b, c, n, len) = (lane / self.ch, lane % self.ch, self.n, self.len);
        let a = &self.a[c * n..(c + 1) * n];
        let mut h = vec![T::zero(); len * n];
        self.lane_sequential(u, lane, Some(&mut h));

        let mix_len = if self.selective { len * n } else { n };
        let mut g = LaneGrad {
            du: vec![T::zero(); len],
            ddelta: vec![T::zero(); len],
            dd: T::zero(),
            da: vec![T::zero(); n],
            db: vec![T::zero(); mix_len],
            dc: vec![T::zero(); mix_len],
        };
        // lam[k] holds ā[t+1]·λ[t+1] on entry to step t
        let mut lam = vec![T::zero(); n];
        for t in (0..len).rev() {
            let i = self.pos(b, t, c);
            let (ut, gyt, dl) = (u[i], gy[i], self.delta[i]);
            let m = self.mix_at(b, t, c);
            let gm = if self.selective { t * n } else { 0 };
            g.dd = g.dd + gyt * ut;
            let mut du = gyt * self.d[c];
            let mut ddel = T::zero();
            for k in 0..n {
                let abar = (dl * a[k]).exp();
                let fac = zoh_input_factor(a[k], dl);
                let (bk, ck) = (self.bv[m + k], self.cv[m + k]);
                let l = lam[k] + gyt * ck;
                g.dc[gm + k] = g.dc[gm + k] + gyt * h[t * n + k];
                du = du + l * fac * bk;
                g.db[gm + k] = g.db[gm + k] + l * fac * ut;
                let h_prev = if t > 0 { h[(t - 1) * n + k] } else { T::zero() };
                let d_abar = l * h_prev;
                let d_fac = l * bk * ut;
                // ∂ā/∂Δ = a·ā, ∂fac/∂Δ = ā
                ddel = ddel + d_abar * a[k] * abar + d_fac * abar;
                g.da[k] = g.da[k] + d_abar * dl * abar + d_fac * zoh_input_factor_da(a[k], dl);
                lam[k] = l * abar;
            }
            g.du[t] = du;
            g.ddelta[t] = ddel;
        }
        g
    }
}

/// Vector-Jacobian product of the scan: returns the gradient for `u` and for
/// every parameter, given the upstream gradient of the output.
pub fn ssm_backward<T: Real, P: Borrow<Tensor<T>>>(
    u: &Tensor<T>,
    p: &SsmParams<P>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, SsmParams<Tensor<T>>)> {
    let co = Coeffs::new(u, p)?;
    if upstream.shape() != u.shape() {
        return dim_err(format!(
            "ssm backward: upstream {:?} does not match input {:?}",
            upstream.shape(),
            u.shape()
        ));
    }
    let (c, n, len) = (co.ch, co.n, co.len);
    let lanes: Vec<LaneGrad<T>> = (0..co.lanes())
        .into_par_iter()
        .map(|lane| co.lane_backward(u.data(), upstream.data(), lane))
        .collect();

    let mut gu = vec![T::zero(); u.len()];
    let mut dpre = vec![T::zero(); u.len()];
    let mut ga = vec![T::zero(); c * n];
    let mut gd = vec![T::zero(); c];
    let mix_rows = if co.selective { co.bsz * len } else { c };
    let mut gbv = vec![T::zero(); mix_rows * n];
    let mut gcv = vec![T::zero(); mix_rows * n];
    for (lane, lg) in lanes.into_iter().enumerate() {
        let (b, ch) = (lane / c, lane % c);
        for t in 0..len {
            let i = co.pos(b, t, ch);
            gu[i] = lg.du[t];
            dpre[i] = lg.ddelta[t] * sigmoid(co.pre[i]);
        }
        gd[ch] = gd[ch] + lg.dd;
        for k in 0..n {
            ga[ch * n + k] = ga[ch * n + k] + lg.da[k] * co.a[ch * n + k];
        }
        let off = if co.selective { b * len * n } else { ch * n };
        for (j, (&db, &dc)) in lg.db.iter().zip(&lg.dc).enumerate() {
            gbv[off + j] = gbv[off + j] + db;
            gcv[off + j] = gcv[off + j] + dc;
        }
    }

    let a_log = Tensor::from_vec(&[c, n], ga)?;
    let d = Tensor::from_vec(&[c], gd)?;
    let mut gu = Tensor::from_vec(u.shape(), gu)?;
    let (delta_bias, mix) = match &p.mix {
        SsmMix::Fixed { .. } => {
            let mut gbias = vec![T::zero(); c];
            for row in dpre.chunks(c) {
                for (acc, &v) in gbias.iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
            let mix = SsmMix::Fixed {
                b: Tensor::from_vec(&[c, n], gbv)?,
                c: Tensor::from_vec(&[c, n], gcv)?,
            };
            (Tensor::from_vec(&[c], gbias)?, mix)
        }
        SsmMix::Selective { delta_proj, b_proj, c_proj } => {
            let dpre = Tensor::from_vec(u.shape(), dpre)?;
            let (gx_d, g_dproj, gbias) = linear_backward(u, delta_proj.borrow(), &dpre)?;
            let mix_shape = [co.bsz, len, n];
            let (gx_b, g_bproj, _) = linear_backward(u, b_proj.borrow(), &Tensor::from_vec(&mix_shape, gbv)?)?;
            let (gx_c, g_cproj, _) = linear_backward(u, c_proj.borrow(), &Tensor::from_vec(&mix_shape, gcv)?)?;
            gu.add_assign(&gx_d)?;
            gu.add_assign(&gx_b)?;
            gu.add_assign(&gx_c)?;
            let mix = SsmMix::Selective {
                delta_proj: g_dproj,
                b_proj: g_bproj,
                c_proj: g_cproj,
            };
            (gbias, mix)
        }
    };
    let grads = SsmParams { a_log, delta_bias, d, mix };
    debug_assert_eq!(grads.mode(), if co.selective { SsmMode::Selective } else { SsmMode::Fixed });
    Ok((gu.with_layout(u.layout())?, grads))
}
