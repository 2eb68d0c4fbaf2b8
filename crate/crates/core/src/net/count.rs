//! Analytic parameter and multiply-accumulate counts.
//!
//! A convolution costs `C_out·C_in·k²·H_out·W_out` MACs and a linear map
//! `C_in·C_out` per position. Scans, projections and attention matmuls are
//! counted by the block. Norms, softmax, upsampling, additions and
//! elementwise products are not.

use crate::block::{block_macs, block_param_count};

use super::{SkipMode, UvmNetConfig};

pub fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

pub fn conv_macs(cin: usize, cout: usize, k: usize, h_out: usize, w_out: usize) -> u64 {
    (cout * cin * k * k) as u64 * (h_out * w_out) as u64
}

pub fn linear_params(cin: usize, cout: usize) -> usize {
    cin * cout + cout
}

pub fn linear_macs(cin: usize, cout: usize, positions: usize) -> u64 {
    (cin * cout) as u64 * positions as u64
}

pub fn count_params(cfg: &UvmNetConfig) -> usize {
    let s_max = cfg.stages;
    let mut n = conv_params(3, cfg.width(0), 3);
    for s in 0..s_max {
        let w = cfg.width(s);
        n += cfg.convs_per_block * conv_params(w, w, 3);
        n += block_param_count(&cfg.block_config(s));
        if s + 1 < s_max {
            let deeper = cfg.width(s + 1);
            n += conv_params(w, deeper, 3);
            n += match cfg.skip_mode {
                SkipMode::Concat => conv_params(deeper + w, w, 1),
                SkipMode::Add => conv_params(deeper, w, 1),
            };
            n += cfg.convs_per_block * conv_params(w, w, 3);
        }
    }
    n + conv_params(cfg.width(0), 3, 3)
}

/// MACs of one forward pass on a single H×W image.
pub fn count_macs(cfg: &UvmNetConfig, h: usize, w: usize) -> u64 {
    let s_max = cfg.stages;
    let mut m = conv_macs(3, cfg.width(0), 3, h, w);
    for s in 0..s_max {
        let (c, hs, ws) = (cfg.width(s), h >> s, w >> s);
        m += cfg.convs_per_block as u64 * conv_macs(c, c, 3, hs, ws);
        m += block_macs(&cfg.block_config(s), hs * ws);
        if s + 1 < s_max {
            let deeper = cfg.width(s + 1);
            m += conv_macs(c, deeper, 3, hs / 2, ws / 2);
            m += match cfg.skip_mode {
                SkipMode::Concat => conv_macs(deeper + c, c, 1, hs, ws),
                SkipMode::Add => conv_macs(deeper, c, 1, hs, ws),
            };
            m += cfg.convs_per_block as u64 * conv_macs(c, c, 3, hs, ws);
        }
    }
    m + conv_macs(cfg.width(0), 3, 3, h, w)
}
