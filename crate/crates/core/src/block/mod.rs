//! The Bi-SSM block: (B, C, H, W) → (B, C, H, W).
//!
//! ```text
//! z  = layer_norm(flatten(x))                      (B, L, C)
//! r  = roll(mix_seq(expand_seq(z)))                scan along L, then across channels
//! g  = softmax(mix_attn(expand_attn(z)))           attention map
//! out = unflatten(proj_out(r ⊙ g)) + x
//! ```
//!
//! The roll moves the channel axis into sequence position. Its mixer has a
//! single channel whose parameters are shared by every spatial position, so
//! the block does not depend on the image resolution. Because the roll is a
//! pure transpose, scanning the rolled (B, C', L) tensor along C' with shared
//! parameters is the same as scanning each position's channel vector of the
//! (B, L, C') tensor; the implementation does the latter without copying.
//!
//! Variants replace every scan by a depthwise 1-D convolution (kernel 3) or
//! by single-head scaled dot-product attention along the same axis.

pub mod sdp;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{join, Dense};
use crate::ssm::{ssm_param_count, SsmMode, SsmParams};
use crate::tensor::{Real, Tensor};

pub use sdp::{sdp_attention, sdp_attention_backward, DEFAULT_SDP_MAX_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Ssm,
    Conv1d,
    Sdp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ssm => "ssm",
            Variant::Conv1d => "conv1d",
            Variant::Sdp => "sdp",
        }
    }
}

/// Axis of the attention-map softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttnAxis {
    #[default]
    Channel,
    Sequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    pub expansion: usize,
    pub state_dim: usize,
    pub variant: Variant,
    pub ssm_mode: SsmMode,
    pub attn_axis: AttnAxis,
    pub residual: bool,
    /// Chunk size of the parallel scan; `None` scans sequentially.
    pub scan_chunk: Option<usize>,
    pub sdp_max_len: usize,
    pub ln_eps: f64,
}

impl BlockConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            expansion: 2,
            state_dim: 16,
            variant: Variant::Ssm,
            ssm_mode: SsmMode::Selective,
            attn_axis: AttnAxis::Channel,
            residual: true,
            scan_chunk: None,
            sdp_max_len: DEFAULT_SDP_MAX_LEN,
            ln_eps: 1e-5,
        }
    }

    pub fn inner(&self) -> usize {
        self.channels * self.expansion
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.expansion == 0 || self.state_dim == 0 {
            return Err(Error::Config(format!(
                "block needs channels, expansion and state_dim ≥ 1 (got {}, {}, {})",
                self.channels, self.expansion, self.state_dim
            )));
        }
        Ok(())
    }
}

/// A sequence mixer acting along axis 1 of a (B, L, C) tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum Mixer<P> {
    Ssm(SsmParams<P>),
    /// Depthwise kernel (C, 3) and bias (C).
    Conv1d(Dense<P>),
    /// Per-position Q, K, V maps, each (C, C). The key map has no bias: it
    /// would add a per-row constant to the scores, which softmax cancels.
    Sdp { q: Dense<P>, k: P, v: Dense<P> },
}

impl<P> Mixer<P> {
    pub fn try_map<'a, Q>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P) -> Result<Q>) -> Result<Mixer<Q>> {
        Ok(match self {
            Mixer::Ssm(p) => Mixer::Ssm(p.try_map(prefix, f)?),
            Mixer::Conv1d(d) => Mixer::Conv1d(d.try_map(prefix, f)?),
            Mixer::Sdp { q, k, v } => Mixer::Sdp {
                q: q.try_map(&join(prefix, "q"), f)?,
                k: f(join(prefix, "k.weight"), k)?,
                v: v.try_map(&join(prefix, "v"), f)?,
            },
        })
    }
}

fn uniform_dense<T: Real, R: Rng + ?Sized>(out: usize, fan_in: usize, cols: usize, rng: &mut R) -> Dense<Tensor<T>> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Dense {
        weight: Tensor::rand_uniform(&[out, cols], -bound, bound, rng),
        bias: Tensor::zeros(&[out]),
    }
}

impl<T: Real> Mixer<Tensor<T>> {
    pub fn init<R: Rng + ?Sized>(channels: usize, cfg: &BlockConfig, rng: &mut R) -> Self {
        match cfg.variant {
            Variant::Ssm => Mixer::Ssm(SsmParams::init(channels, cfg.state_dim, cfg.ssm_mode, rng)),
            Variant::Conv1d => Mixer::Conv1d(uniform_dense(channels, 3, 3, rng)),
            Variant::Sdp => Mixer::Sdp {
                q: uniform_dense(channels, channels, channels, rng),
                k: uniform_dense::<T, R>(channels, channels, channels, rng).weight,
                v: uniform_dense(channels, channels, channels, rng),
            },
        }
    }
}

fn mixer_param_count(channels: usize, cfg: &BlockConfig) -> usize {
    match cfg.variant {
        Variant::Ssm => ssm_param_count(channels, cfg.state_dim, cfg.ssm_mode),
        Variant::Conv1d => channels * 3 + channels,
        Variant::Sdp => 3 * channels * channels + 2 * channels,
    }
}

/// Multiply-accumulates of one mixer over `lanes` independent sequences of
/// length `len` with `channels` channels.
fn mixer_macs(lanes: usize, len: usize, channels: usize, cfg: &BlockConfig) -> u64 {
    let (b, l, c, n) = (lanes as u64, len as u64, channels as u64, cfg.state_dim as u64);
    b * match cfg.variant {
        Variant::Ssm => {
            let scan = (3 * n + 1) * l * c;
            let proj = match cfg.ssm_mode {
                SsmMode::Fixed => 0,
                SsmMode::Selective => l * c * (c + 2 * n),
            };
            scan + proj
        }
        Variant::Conv1d => 3 * l * c,
        Variant::Sdp => 3 * l * c * c + 2 * l * l * c,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiSsmBlockParams<P> {
    pub norm_gamma: P,
    pub norm_beta: P,
    pub expand_seq: Dense<P>,
    pub expand_attn: Dense<P>,
    /// Mixer along the flattened spatial axis (E·C channels).
    pub mix_seq: Mixer<P>,
    /// Mixer along the channel axis after the roll (one shared channel).
    pub mix_chan: Mixer<P>,
    /// Mixer feeding the attention map (E·C channels).
    pub mix_attn: Mixer<P>,
    pub proj_out: Dense<P>,
}

impl<P> BiSsmBlockParams<P> {
    pub fn try_map<'a, Q>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P) -> Result<Q>) -> Result<BiSsmBlockParams<Q>> {
        Ok(BiSsmBlockParams {
            norm_gamma: f(join(prefix, "norm.gamma"), &self.norm_gamma)?,
            norm_beta: f(join(prefix, "norm.beta"), &self.norm_beta)?,
            expand_seq: self.expand_seq.try_map(&join(prefix, "expand_seq"), f)?,
            expand_attn: self.expand_attn.try_map(&join(prefix, "expand_attn"), f)?,
            mix_seq: self.mix_seq.try_map(&join(prefix, "mix_seq"), f)?,
            mix_chan: self.mix_chan.try_map(&join(prefix, "mix_chan"), f)?,
            mix_attn: self.mix_attn.try_map(&join(prefix, "mix_attn"), f)?,
            proj_out: self.proj_out.try_map(&join(prefix, "proj_out"), f)?,
        })
    }

    /// Ordered (name, slot) pairs.
    pub fn named(&self, prefix: &str) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        let _ = self.try_map(prefix, &mut |name, p| {
            out.push((name, p));
            Ok(())
        });
        out
    }
}

impl<T: Real> BiSsmBlockParams<Tensor<T>> {
    pub fn init<R: Rng + ?Sized>(cfg: &BlockConfig, rng: &mut R) -> Self {
        let (c, e) = (cfg.channels, cfg.inner());
        Self {
            norm_gamma: Tensor::ones(&[c]),
            norm_beta: Tensor::zeros(&[c]),
            expand_seq: uniform_dense(e, c, c, rng),
            expand_attn: uniform_dense(e, c, c, rng),
            mix_seq: Mixer::init(e, cfg, rng),
            mix_chan: Mixer::init(1, cfg, rng),
            mix_attn: Mixer::init(e, cfg, rng),
            proj_out: uniform_dense(c, e, e, rng),
        }
    }

    pub fn numel(&self) -> usize {
        self.named("").iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every tensor on the tape as a named parameter.
    pub fn to_tape(&self, tape: &mut Tape<T>, prefix: &str) -> Result<BiSsmBlockParams<Var>> {
        self.try_map(prefix, &mut |name, t| Ok(tape.param(name, t.clone())))
    }
}

pub fn block_param_count(cfg: &BlockConfig) -> usize {
    let (c, e) = (cfg.channels, cfg.inner());
    2 * c + 2 * (e * c + e) + 2 * mixer_param_count(e, cfg) + mixer_param_count(1, cfg) + (c * e + c)
}

/// Multiply-accumulates of one block on a `len`-position sequence (batch 1).
/// Norms, softmax and elementwise products are not counted.
pub fn block_macs(cfg: &BlockConfig, len: usize) -> u64 {
    let (c, e, l) = (cfg.channels as u64, cfg.inner() as u64, len as u64);
    let linears = 2 * l * c * e + l * e * c;
    linears + 2 * mixer_macs(1, len, cfg.inner(), cfg) + mixer_macs(len, cfg.inner(), 1, cfg)
}

/// Applies a mixer along axis 1 of `u` (B, L, C).
fn apply_mixer<T: Real>(tape: &mut Tape<T>, u: Var, m: &Mixer<Var>, cfg: &BlockConfig) -> Result<Var> {
    match m {
        Mixer::Ssm(p) => tape.ssm_scan(u, p, cfg.scan_chunk),
        Mixer::Conv1d(d) => tape.depthwise_conv1d(u, d.weight, d.bias),
        Mixer::Sdp { q, k, v } => {
            let q = tape.linear(u, q.weight, q.bias)?;
            let c = tape.value(*k).shape()[0];
            let no_bias = tape.leaf(Tensor::zeros(&[c]));
            let k = tape.linear(u, *k, no_bias)?;
            let v = tape.linear(u, v.weight, v.bias)?;
            tape.sdp_attention(q, k, v, cfg.sdp_max_len)
        }
    }
}

/// Branch 1: mixer along L, roll, mixer along the channel axis, roll back.
pub fn roll_branch_on<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    p: &BiSsmBlockParams<Var>,
    cfg: &BlockConfig,
) -> Result<Var> {
    let (b, l, c) = tape.value(z).dims3()?;
    let s = apply_mixer(tape, z, &p.mix_seq, cfg)?;
    let lanes = tape.reshape(s, &[b * l, c, 1])?;
    let r = apply_mixer(tape, lanes, &p.mix_chan, cfg)?;
    tape.reshape(r, &[b, l, c])
}

/// Branch 2: mixer along L followed by the attention softmax.
pub fn attention_branch_on<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    p: &BiSsmBlockParams<Var>,
    cfg: &BlockConfig,
) -> Result<Var> {
    let s = apply_mixer(tape, z, &p.mix_attn, cfg)?;
    let axis = match cfg.attn_axis {
        AttnAxis::Channel => 2,
        AttnAxis::Sequence => 1,
    };
    tape.softmax(s, axis)
}

/// Records the block on `tape`.
pub fn bi_ssm_block_on<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &BiSsmBlockParams<Var>,
    cfg: &BlockConfig,
) -> Result<Var> {
    let (_, c, h, w) = tape.value(x).dims4()?;
    if c != cfg.channels {
        return crate::error::dim_err(format!(
            "bi-ssm block: input has {c} channels (axis 1), block expects {}",
            cfg.channels
        ));
    }
    let flat = tape.flatten_spatial(x)?;
    let z = tape.layer_norm(flat, p.norm_gamma, p.norm_beta, T::of(cfg.ln_eps))?;
    let e1 = tape.linear(z, p.expand_seq.weight, p.expand_seq.bias)?;
    let e2 = tape.linear(z, p.expand_attn.weight, p.expand_attn.bias)?;
    let r = roll_branch_on(tape, e1, p, cfg)?;
    let g = attention_branch_on(tape, e2, p, cfg)?;
    let merged = tape.hadamard(r, g)?;
    let out = tape.linear(merged, p.proj_out.weight, p.proj_out.bias)?;
    let out = tape.unflatten_spatial(out, h, w)?;
    if cfg.residual {
        tape.add(out, x)
    } else {
        Ok(out)
    }
}

fn eval<T: Real>(
    p: &BiSsmBlockParams<Tensor<T>>,
    input: &Tensor<T>,
    f: impl FnOnce(&mut Tape<T>, Var, &BiSsmBlockParams<Var>) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let vars = p.try_map("", &mut |_, t| Ok(tape.leaf(t.clone())))?;
    let x = tape.leaf(input.clone());
    let y = f(&mut tape, x, &vars)?;
    Ok(tape.value(y).clone())
}

/// Forward pass of the block for any variant.
pub fn bi_ssm_forward<T: Real>(x: &Tensor<T>, p: &BiSsmBlockParams<Tensor<T>>, cfg: &BlockConfig) -> Result<Tensor<T>> {
    eval(p, x, |tape, x, v| bi_ssm_block_on(tape, x, v, cfg))
}

pub fn roll_branch<T: Real>(z: &Tensor<T>, p: &BiSsmBlockParams<Tensor<T>>, cfg: &BlockConfig) -> Result<Tensor<T>> {
    eval(p, z, |tape, z, v| roll_branch_on(tape, z, v, cfg))
}

pub fn attention_branch<T: Real>(
    z: &Tensor<T>,
    p: &BiSsmBlockParams<Tensor<T>>,
    cfg: &BlockConfig,
) -> Result<Tensor<T>> {
    eval(p, z, |tape, z, v| attention_branch_on(tape, z, v, cfg))
}

fn expect_variant(cfg: &BlockConfig, want: Variant) -> Result<()> {
    if cfg.variant != want {
        return Err(Error::Config(format!(
            "block configured as {:?}, called as {want:?}",
            cfg.variant
        )));
    }
    Ok(())
}

/// The block with every scan replaced by a depthwise kernel-3 convolution.
pub fn block_variant_conv1d<T: Real>(
    x: &Tensor<T>,
    p: &BiSsmBlockParams<Tensor<T>>,
    cfg: &BlockConfig,
) -> Result<Tensor<T>> {
    expect_variant(cfg, Variant::Conv1d)?;
    bi_ssm_forward(x, p, cfg)
}

/// The block with every scan replaced by scaled dot-product attention.
pub fn block_variant_sdp<T: Real>(
    x: &Tensor<T>,
    p: &BiSsmBlockParams<Tensor<T>>,
    cfg: &BlockConfig,
) -> Result<Tensor<T>> {
    expect_variant(cfg, Variant::Sdp)?;
    bi_ssm_forward(x, p, cfg)
}
