//! Diagonal state-space sequence layer.
//!
//! Per channel `c` and state `n` the layer runs
//!
//! ```text
//! h[t] = ā[t]·h[t-1] + b̄[t]·u[t],   h[-1] = 0
//! y[t] = Σ_n c[t,n]·h[t,n] + d·u[t]
//! ```
//!
//! with `a = −exp(a_log) < 0`, `Δ = softplus(·) > 0` and zero-order-hold
//! coefficients `ā = e^{Δa}`, `b̄ = ((e^{Δa} − 1)/a)·b`. In fixed mode `Δ`, `b`
//! and `c` are constants per channel. In selective mode they are computed at
//! every position from the input: `Δ[t] = softplus(W_Δ·u[t] + bias)`,
//! `b[t] = W_B·u[t]`, `c[t] = W_C·u[t]`, with `b[t]`, `c[t]` shared by all
//! channels.

pub mod assoc;
pub mod discretize;
mod scan;
mod tape;

use std::borrow::Borrow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::params::join;
use crate::tensor::{Real, Tensor};

pub use discretize::discretize_zoh;
pub use scan::{ssm_backward, ssm_scan_parallel, ssm_scan_sequential};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SsmMode {
    Fixed,
    #[default]
    Selective,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SsmMix<P> {
    /// Constant `b`, `c`, both (C, N).
    Fixed { b: P, c: P },
    /// Projections: `delta_proj` (C, C), `b_proj` and `c_proj` (N, C).
    Selective { delta_proj: P, b_proj: P, c_proj: P },
}

/// Parameters of one SSM layer over `C` channels with `N` states.
/// `P` is the storage slot: an owned [`Tensor`], a reference, or a tape
/// handle.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<P> {
    /// (C, N); the continuous coefficient is `−exp(a_log)`.
    pub a_log: P,
    /// (C); bias inside the softplus that produces `Δ`.
    pub delta_bias: P,
    /// (C) skip coefficient.
    pub d: P,
    pub mix: SsmMix<P>,
}

impl<P> SsmParams<P> {
    pub fn mode(&self) -> SsmMode {
        match self.mix {
            SsmMix::Fixed { .. } => SsmMode::Fixed,
            SsmMix::Selective { .. } => SsmMode::Selective,
        }
    }

    /// Slots in canonical order: a_log, delta_bias, d, then the mix slots.
    pub fn slots(&self) -> Vec<(&'static str, &P)> {
        let mut v = vec![("a_log", &self.a_log), ("delta_bias", &self.delta_bias), ("d", &self.d)];
        match &self.mix {
            SsmMix::Fixed { b, c } => v.extend([("b", b), ("c", c)]),
            SsmMix::Selective { delta_proj, b_proj, c_proj } => {
                v.extend([("delta_proj", delta_proj), ("b_proj", b_proj), ("c_proj", c_proj)])
            }
        }
        v
    }

    /// Rebuilds from slots in [`Self::slots`] order.
    pub fn from_slots<I: IntoIterator<Item = P>>(mode: SsmMode, slots: I) -> Self {
        let mut it = slots.into_iter();
        let mut next = || it.next().expect("too few SSM parameter slots");
        let (a_log, delta_bias, d) = (next(), next(), next());
        let mix = match mode {
            SsmMode::Fixed => SsmMix::Fixed { b: next(), c: next() },
            SsmMode::Selective => SsmMix::Selective {
                delta_proj: next(),
                b_proj: next(),
                c_proj: next(),
            },
        };
        Self { a_log, delta_bias, d, mix }
    }

    pub fn try_map<'a, Q>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P) -> Result<Q>) -> Result<SsmParams<Q>> {
        let mapped = self
            .slots()
            .into_iter()
            .map(|(name, p)| f(join(prefix, name), p))
            .collect::<Result<Vec<Q>>>()?;
        Ok(SsmParams::from_slots(self.mode(), mapped))
    }

    pub fn as_refs(&self) -> SsmParams<&P> {
        SsmParams::from_slots(self.mode(), self.slots().into_iter().map(|(_, p)| p))
    }

    /// Checks every slot against (C, N) implied by `a_log`.
    pub fn validate<T: Real>(&self) -> Result<(usize, usize)>
    where
        P: Borrow<Tensor<T>>,
    {
        let (c, n) = self.a_log.borrow().dims2()?;
        let expect = |name: &str, t: &Tensor<T>, shape: &[usize]| {
            if t.shape() != shape {
                return dim_err(format!("ssm `{name}` has shape {:?}, expected {shape:?}", t.shape()));
            }
            Ok(())
        };
        expect("delta_bias", self.delta_bias.borrow(), &[c])?;
        expect("d", self.d.borrow(), &[c])?;
        match &self.mix {
            SsmMix::Fixed { b, c: cc } => {
                expect("b", b.borrow(), &[c, n])?;
                expect("c", cc.borrow(), &[c, n])?;
            }
            SsmMix::Selective { delta_proj, b_proj, c_proj } => {
                expect("delta_proj", delta_proj.borrow(), &[c, c])?;
                expect("b_proj", b_proj.borrow(), &[n, c])?;
                expect("c_proj", c_proj.borrow(), &[n, c])?;
            }
        }
        Ok((c, n))
    }
}

/// Inverse of softplus, `ln(e^y − 1)`.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub const DELTA_INIT_MIN: f64 = 0.01;
pub const DELTA_INIT_MAX: f64 = 0.1;

impl<T: Real> SsmParams<Tensor<T>> {
    /// `a` spans −1…−N over the state index; `Δ` starts log-uniform in
    /// [0.01, 0.1]; projections use fan-in scaled uniform weights.
    pub fn init<R: Rng + ?Sized>(channels: usize, state_dim: usize, mode: SsmMode, rng: &mut R) -> Self {
        let (c, n) = (channels, state_dim);
        let a_log = Tensor::from_fn(&[c, n], |i| T::of(((i % n) + 1) as f64).ln());
        let (lo, hi) = (DELTA_INIT_MIN.ln(), DELTA_INIT_MAX.ln());
        let delta_bias = Tensor::from_fn(&[c], |_| T::of(inv_softplus(rng.random_range(lo..hi).exp())));
        let d = Tensor::ones(&[c]);
        let bound = 1.0 / (c as f64).sqrt();
        let mix = match mode {
            SsmMode::Fixed => SsmMix::Fixed {
                b: Tensor::ones(&[c, n]),
                c: Tensor::rand_uniform(&[c, n], -1.0 / (n as f64).sqrt(), 1.0 / (n as f64).sqrt(), rng),
            },
            SsmMode::Selective => SsmMix::Selective {
                delta_proj: Tensor::rand_uniform(&[c, c], -bound, bound, rng),
                b_proj: Tensor::rand_uniform(&[n, c], -bound, bound, rng),
                c_proj: Tensor::rand_uniform(&[n, c], -bound, bound, rng),
            },
        };
        Self { a_log, delta_bias, d, mix }
    }

    pub fn numel(&self) -> usize {
        self.slots().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> SsmParams<Tensor<U>> {
        SsmParams::from_slots(self.mode(), self.slots().into_iter().map(|(_, t)| t.cast()))
    }
}

/// Number of parameters of an SSM layer, mirroring [`SsmParams::init`].
pub fn ssm_param_count(channels: usize, state_dim: usize, mode: SsmMode) -> usize {
    let (c, n) = (channels, state_dim);
    let base = c * n + 2 * c;
    base + match mode {
        SsmMode::Fixed => 2 * c * n,
        SsmMode::Selective => c * c + 2 * n * c,
    }
}
