//! The U-shaped dehazing network.
//!
//! ```text
//! stem 3×3 conv (3 → w0)
//! encoder stage s: convs_per_block × [x + leaky(conv3×3(x))], Bi-SSM block,
//!                  save skip, stride-2 3×3 conv (w_s → w_{s+1}) except last
//! decoder stage s: bilinear ×2, fuse with skip (concat + 1×1 conv, or
//!                  1×1 projection + add), convs_per_block residual conv units
//! head 3×3 conv (w0 → 3), plus the input when `global_residual` is on
//! ```
//!
//! Stage widths are `w_s = min(base_width·2^s, 8·base_width)`. The stride-2
//! convolutions pad one row/column before the image and none after, so even
//! extents halve exactly.

mod checkpoint;
mod count;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::block::{bi_ssm_block_on, AttnAxis, BiSsmBlockParams, BlockConfig, Variant, DEFAULT_SDP_MAX_LEN};
use crate::error::{Error, Result};
use crate::ops::{Conv2dSpec, DEFAULT_LEAKY_SLOPE};
use crate::params::{join, Dense};
use crate::ssm::SsmMode;
use crate::tensor::{Real, Tensor};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use count::{conv_macs, conv_params, count_macs, count_params, linear_macs, linear_params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    #[default]
    Concat,
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UvmNetConfig {
    pub base_width: usize,
    pub stages: usize,
    pub convs_per_block: usize,
    pub state_dim: usize,
    pub expansion: usize,
    pub variant: Variant,
    pub ssm_mode: SsmMode,
    pub attn_axis: AttnAxis,
    pub block_residual: bool,
    pub global_residual: bool,
    pub skip_mode: SkipMode,
    /// Chunk size for the parallel scan; absent means sequential.
    pub scan_chunk: Option<usize>,
    pub sdp_max_len: usize,
}

impl Default for UvmNetConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            stages: 4,
            convs_per_block: 2,
            state_dim: 16,
            expansion: 2,
            variant: Variant::Ssm,
            ssm_mode: SsmMode::Selective,
            attn_axis: AttnAxis::Channel,
            block_residual: true,
            global_residual: true,
            skip_mode: SkipMode::Concat,
            scan_chunk: None,
            sdp_max_len: DEFAULT_SDP_MAX_LEN,
        }
    }
}

impl UvmNetConfig {
    /// The small configuration used for desk-scale training.
    pub fn tiny() -> Self {
        Self {
            base_width: 8,
            stages: 2,
            state_dim: 2,
            expansion: 1,
            ..Self::default()
        }
    }

    pub fn width(&self, stage: usize) -> usize {
        (self.base_width << stage.min(3)).min(8 * self.base_width)
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.stages.saturating_sub(1)
    }

    pub fn block_config(&self, stage: usize) -> BlockConfig {
        BlockConfig {
            channels: self.width(stage),
            expansion: self.expansion,
            state_dim: self.state_dim,
            variant: self.variant,
            ssm_mode: self.ssm_mode,
            attn_axis: self.attn_axis,
            residual: self.block_residual,
            scan_chunk: self.scan_chunk,
            sdp_max_len: self.sdp_max_len,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.base_width == 0 {
            return bad("base_width must be ≥ 1".into());
        }
        if self.stages == 0 || self.stages > 8 {
            return bad(format!("stages must be in 1..=8, got {}", self.stages));
        }
        if self.state_dim == 0 || self.expansion == 0 {
            return bad("state_dim and expansion must be ≥ 1".into());
        }
        if self.scan_chunk == Some(0) {
            return bad("scan_chunk must be ≥ 1".into());
        }
        Ok(())
    }

    /// Checks that an H×W input fits the stage ladder.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h == 0 || w == 0 || !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "input {h}x{w} must have height and width divisible by {d} (2^(stages-1) with stages = {})",
                self.stages
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage<P> {
    pub convs: Vec<Dense<P>>,
    pub block: BiSsmBlockParams<P>,
    pub down: Option<Dense<P>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage<P> {
    pub fuse: Dense<P>,
    pub convs: Vec<Dense<P>>,
}

/// All network parameters. Decoder stages are stored from the deepest
/// (`stages − 2`) to stage 0, in execution order.
#[derive(Clone, Debug, PartialEq)]
pub struct UvmNetParams<P> {
    pub stem: Dense<P>,
    pub enc: Vec<EncoderStage<P>>,
    pub dec: Vec<DecoderStage<P>>,
    pub head: Dense<P>,
}

fn map_convs<'a, P, Q>(
    convs: &'a [Dense<P>],
    prefix: &str,
    f: &mut dyn FnMut(String, &'a P) -> Result<Q>,
) -> Result<Vec<Dense<Q>>> {
    convs
        .iter()
        .enumerate()
        .map(|(i, c)| c.try_map(&join(prefix, &format!("conv{i}")), f))
        .collect()
}

impl<P> UvmNetParams<P> {
    /// Maps every tensor slot, visiting them in the canonical order with
    /// their dotted names.
    pub fn try_map<'a, Q>(&'a self, f: &mut dyn FnMut(String, &'a P) -> Result<Q>) -> Result<UvmNetParams<Q>> {
        let stem = self.stem.try_map("stem", f)?;
        let mut enc = Vec::with_capacity(self.enc.len());
        for (s, st) in self.enc.iter().enumerate() {
            let pre = format!("enc{s}");
            enc.push(EncoderStage {
                convs: map_convs(&st.convs, &pre, f)?,
                block: st.block.try_map(&join(&pre, "block"), f)?,
                down: st.down.as_ref().map(|d| d.try_map(&join(&pre, "down"), f)).transpose()?,
            });
        }
        let mut dec = Vec::with_capacity(self.dec.len());
        for (i, st) in self.dec.iter().enumerate() {
            let pre = format!("dec{}", self.dec.len() - 1 - i);
            dec.push(DecoderStage {
                fuse: st.fuse.try_map(&join(&pre, "fuse"), f)?,
                convs: map_convs(&st.convs, &pre, f)?,
            });
        }
        let head = self.head.try_map("head", f)?;
        Ok(UvmNetParams { stem, enc, dec, head })
    }

    /// Ordered (name, slot) pairs.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        let _ = self.try_map(&mut |name, p| {
            out.push((name, p));
            Ok(())
        });
        out
    }
}

fn conv_init<T: Real, R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Dense<Tensor<T>> {
    let bound = 1.0 / ((cin * k * k) as f64).sqrt();
    Dense {
        weight: Tensor::rand_uniform(&[cout, cin, k, k], -bound, bound, rng),
        bias: Tensor::zeros(&[cout]),
    }
}

impl<T: Real> UvmNetParams<Tensor<T>> {
    /// Fan-in uniform weights, zero biases, identity layer norms and a zero
    /// head, so a fresh network with global residual is the identity.
    pub fn init<R: Rng + ?Sized>(cfg: &UvmNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let stages = cfg.stages;
        let stem = conv_init(3, cfg.width(0), 3, rng);
        let enc = (0..stages)
            .map(|s| {
                let w = cfg.width(s);
                EncoderStage {
                    convs: (0..cfg.convs_per_block).map(|_| conv_init(w, w, 3, rng)).collect(),
                    block: BiSsmBlockParams::init(&cfg.block_config(s), rng),
                    down: (s + 1 < stages).then(|| conv_init(w, cfg.width(s + 1), 3, rng)),
                }
            })
            .collect();
        let dec = (0..stages.saturating_sub(1))
            .rev()
            .map(|s| {
                let (w, deeper) = (cfg.width(s), cfg.width(s + 1));
                let fuse = match cfg.skip_mode {
                    SkipMode::Concat => conv_init(deeper + w, w, 1, rng),
                    SkipMode::Add => conv_init(deeper, w, 1, rng),
                };
                DecoderStage {
                    fuse,
                    convs: (0..cfg.convs_per_block).map(|_| conv_init(w, w, 3, rng)).collect(),
                }
            })
            .collect();
        let w0 = cfg.width(0);
        let head = Dense {
            weight: Tensor::zeros(&[3, w0, 3, 3]),
            bias: Tensor::zeros(&[3]),
        };
        Ok(Self { stem, enc, dec, head })
    }

    pub fn numel(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every tensor as a named parameter on `tape`.
    pub fn to_tape(&self, tape: &mut Tape<T>) -> Result<UvmNetParams<Var>> {
        self.try_map(&mut |name, t| Ok(tape.param(name, t.clone())))
    }

    pub fn cast<U: Real>(&self) -> UvmNetParams<Tensor<U>> {
        self.try_map(&mut |_, t| Ok(t.cast())).expect("cast is infallible")
    }
}

fn residual_conv<T: Real>(tape: &mut Tape<T>, x: Var, c: &Dense<Var>) -> Result<Var> {
    let y = tape.conv2d(x, c.weight, c.bias, 1, 1)?;
    let y = tape.leaky_relu(y, T::of(DEFAULT_LEAKY_SLOPE));
    tape.add(x, y)
}

/// Downsampling convolution geometry.
pub const DOWN_SPEC: Conv2dSpec = Conv2dSpec {
    stride: 2,
    pad_begin: 1,
    pad_end: 0,
};

/// Records the network on `tape` and returns the unclamped output.
pub fn uvm_forward_on<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &UvmNetParams<Var>,
    cfg: &UvmNetConfig,
) -> Result<Var> {
    let (_, c, h, w) = tape.value(x).dims4()?;
    if c != 3 {
        return crate::error::dim_err(format!("network input needs 3 channels (axis 1), got {c}"));
    }
    cfg.check_input(h, w)?;
    if p.enc.len() != cfg.stages || p.dec.len() + 1 != cfg.stages {
        return Err(Error::Schema(format!(
            "parameters have {} encoder stages, configuration expects {}",
            p.enc.len(),
            cfg.stages
        )));
    }
    let mut y = tape.conv2d(x, p.stem.weight, p.stem.bias, 1, 1)?;
    let mut skips = Vec::with_capacity(cfg.stages);
    for (s, st) in p.enc.iter().enumerate() {
        for conv in &st.convs {
            y = residual_conv(tape, y, conv)?;
        }
        y = bi_ssm_block_on(tape, y, &st.block, &cfg.block_config(s))?;
        if let Some(down) = &st.down {
            skips.push(y);
            y = tape.conv2d_with(y, down.weight, down.bias, DOWN_SPEC)?;
        }
    }
    for st in &p.dec {
        let skip = skips.pop().expect("one skip per decoder stage");
        let up = tape.bilinear_upsample(y, 2)?;
        y = match cfg.skip_mode {
            SkipMode::Concat => {
                let cat = tape.concat_channels(up, skip)?;
                tape.conv2d(cat, st.fuse.weight, st.fuse.bias, 1, 0)?
            }
            SkipMode::Add => {
                let proj = tape.conv2d(up, st.fuse.weight, st.fuse.bias, 1, 0)?;
                tape.add(proj, skip)?
            }
        };
        for conv in &st.convs {
            y = residual_conv(tape, y, conv)?;
        }
    }
    let out = tape.conv2d(y, p.head.weight, p.head.bias, 1, 1)?;
    if cfg.global_residual {
        tape.add(out, x)
    } else {
        Ok(out)
    }
}

/// Inference: forward pass without gradient recording, clamped to [0, 1].
pub fn uvm_forward<T: Real>(x: &Tensor<T>, cfg: &UvmNetConfig, p: &UvmNetParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let vars = p.try_map(&mut |_, t| Ok(tape.leaf(t.clone())))?;
    let xv = tape.leaf(x.clone());
    let y = uvm_forward_on(&mut tape, xv, &vars, cfg)?;
    Ok(tape.value(y).map(|v| v.max(T::zero()).min(T::one())))
}

#[cfg(test)]
mod tests;
