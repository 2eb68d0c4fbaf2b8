//! Mixer ablation: the same run repeated for each block variant.

use std::io::Write;
use std::path::Path;

use super::config::RunConfig;
use super::train::Trainer;
use crate::block::Variant;
use crate::error::{Error, Result};
use crate::net::count_params;

pub const ABLATION_HEADER: &str = "variant,steps,params,final_loss,psnr,ssim,status";
pub const ABLATION_VARIANTS: [Variant; 3] = [Variant::Ssm, Variant::Conv1d, Variant::Sdp];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub steps: u64,
    pub params: usize,
    pub final_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// `ok`, or the numerical failure that stopped the run.
    pub status: String,
}

impl AblationRow {
    pub fn diverged(&self) -> bool {
        self.status != "ok"
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.4},{:.6},{}",
            self.variant.name(),
            self.steps,
            self.params,
            self.final_loss,
            self.psnr,
            self.ssim,
            self.status.replace(',', ";")
        )
    }
}

/// Trains `base` once per variant (same seed and data) and reports the final
/// metrics. A numerical blow-up is recorded in the row; other errors abort.
pub fn run_ablation(base: &RunConfig, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut cfg = base.clone();
        cfg.net.variant = variant;
        let mut trainer = Trainer::new(cfg.clone())?;
        let params = count_params(&cfg.net);
        let row = match trainer.run(|_| Ok(())) {
            Ok(log) => {
                let last = log.last().ok_or_else(|| Error::Config("ablation needs steps ≥ 1".into()))?;
                AblationRow {
                    variant,
                    steps: trainer.step(),
                    params,
                    final_loss: last.loss,
                    psnr: last.psnr,
                    ssim: last.ssim,
                    status: "ok".into(),
                }
            }
            Err(Error::Numerical(msg)) => AblationRow {
                variant,
                steps: trainer.step(),
                params,
                final_loss: f64::NAN,
                psnr: f64::NAN,
                ssim: f64::NAN,
                status: format!("diverged: {}", msg.split(';').next().unwrap_or_default()),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{ABLATION_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", r.csv())?;
    }
    Ok(())
}

/// Variants ordered best-first by final PSNR, diverged runs last.
pub fn ranking(rows: &[AblationRow]) -> Vec<Variant> {
    let mut ok: Vec<&AblationRow> = rows.iter().collect();
    ok.sort_by(|a, b| {
        let key = |r: &AblationRow| if r.diverged() { f64::NEG_INFINITY } else { r.psnr };
        key(b).total_cmp(&key(a))
    });
    ok.into_iter().map(|r| r.variant).collect()
}
