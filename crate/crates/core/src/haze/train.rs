//! The training loop: synthetic or folder data → forward → loss → backward
//! → AdamW, with periodic evaluation and resumable checkpoints.
//!
//! The batch for step `t` depends only on the master seed and `t`, so a run
//! resumed from a checkpoint sees exactly the data an unbroken run would.
//!
//! A checkpoint `net.uvmc` is accompanied by `net.uvmc.opt` (AdamW moments,
//! same container format) and `net.uvmc.json` (run config and step count).

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossKind, RunConfig};
use super::data::PairedDataset;
use super::metrics::{psnr, ssim};
use super::optim::AdamW;
use super::scene::{apply_haze, synth_scene};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::net::{load_checkpoint, read_checkpoint, save_checkpoint, uvm_forward, uvm_forward_on, write_checkpoint, UvmNetParams};
use crate::tensor::Tensor;

/// Held-out synthetic scenes use seeds counting down from here.
pub const EVAL_SEED_TOP: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub const METRICS_HEADER: &str = "step,loss,psnr,ssim";

impl MetricRow {
    pub fn csv(&self) -> String {
        format!("{},{:.6},{:.4},{:.6}", self.step, self.loss, self.psnr, self.ssim)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    step: u64,
    config: RunConfig,
}

pub fn sidecar_path(ckpt: &Path, ext: &str) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

enum Source {
    Synthetic,
    Fixed { hazy: Tensor<f32>, sharp: Tensor<f32> },
    Folder(PairedDataset),
}

/// Stacks (3,H,W) images into a (B,3,H,W) batch.
fn stack(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let shape = items[0].shape();
    let mut data = Vec::with_capacity(items.len() * items[0].len());
    for t in items {
        t.expect_same_shape(&items[0], "batch item")?;
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[items.len(), shape[0], shape[1], shape[2]], data)
}

fn synth_pair(seed: u64, size: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let scene = synth_scene(seed, size, size)?;
    Ok((apply_haze(&scene), scene.sharp))
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub params: UvmNetParams<Tensor<f32>>,
    pub opt: AdamW,
    /// Per-step training losses recorded by this process.
    pub losses: Vec<f64>,
    source: Source,
    eval: (Tensor<f32>, Tensor<f32>),
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let params = UvmNetParams::init(&cfg.net, &mut rng)?;
        let size = cfg.train.image_size;
        let source = match (&cfg.train.dataset, cfg.train.fixed_scene) {
            (Some(dir), _) => Source::Folder(PairedDataset::open(dir)?),
            (None, Some(seed)) => {
                let (hazy, sharp) = synth_pair(seed, size)?;
                Source::Fixed { hazy, sharp }
            }
            (None, None) => Source::Synthetic,
        };
        let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = match &source {
            Source::Synthetic => (0..cfg.train.eval_scenes as u64)
                .map(|i| synth_pair(EVAL_SEED_TOP - i, size))
                .collect::<Result<_>>()?,
            Source::Fixed { hazy, sharp } => vec![(hazy.clone(), sharp.clone())],
            Source::Folder(ds) => (0..cfg.train.eval_scenes.min(ds.len()))
                .map(|i| ds.crop(i, size, None))
                .collect::<Result<_>>()?,
        };
        let (h, s): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let eval = (stack(&h)?, stack(&s)?);
        let opt = AdamW::new(cfg.train.adamw());
        Ok(Self { cfg, params, opt, losses: Vec::new(), source, eval })
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.opt.step
    }

    /// The (hazy, sharp) batch used at step `t`, each (B, 3, S, S).
    pub fn batch_at(&self, t: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let tc = &self.cfg.train;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(t + 1);
        let mut hazy = Vec::with_capacity(tc.batch);
        let mut sharp = Vec::with_capacity(tc.batch);
        for _ in 0..tc.batch {
            let (h, s) = match &self.source {
                Source::Synthetic => synth_pair(rng.random(), tc.image_size)?,
                Source::Fixed { hazy, sharp } => (hazy.clone(), sharp.clone()),
                Source::Folder(ds) => {
                    let i = rng.random_range(0..ds.len());
                    ds.crop(i, tc.image_size, Some(&mut rng))?
                }
            };
            hazy.push(h);
            sharp.push(s);
        }
        Ok((stack(&hazy)?, stack(&sharp)?))
    }

    /// Training loss of the current parameters on the batch for the next step.
    pub fn next_loss(&self) -> Result<f64> {
        let (hazy, sharp) = self.batch_at(self.step())?;
        let mut tape = Tape::no_grad();
        let vars = self.params.to_tape(&mut tape)?;
        let x = tape.leaf(hazy);
        let y = uvm_forward_on(&mut tape, x, &vars, &self.cfg.net)?;
        let loss = self.loss_on(&mut tape, y, &sharp)?;
        Ok(tape.value(loss).item() as f64)
    }

    fn loss_on(&self, tape: &mut Tape<f32>, y: crate::autodiff::Var, target: &Tensor<f32>) -> Result<crate::autodiff::Var> {
        match self.cfg.train.loss {
            LossKind::L1 => tape.l1_loss(y, target),
            LossKind::L2 => tape.mse_loss(y, target),
        }
    }

    fn norms_report(&self) -> String {
        self.params
            .named()
            .into_iter()
            .map(|(name, t)| {
                let norm = t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                format!("{name}={norm:.3e}")
            })
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// One optimizer update; returns the loss before the update.
    pub fn train_step(&mut self) -> Result<f64> {
        let t = self.step();
        let (hazy, sharp) = self.batch_at(t)?;
        let mut tape = Tape::new();
        let vars = self.params.to_tape(&mut tape)?;
        let x = tape.leaf(hazy);
        let y = uvm_forward_on(&mut tape, x, &vars, &self.cfg.net)?;
        let loss_var = self.loss_on(&mut tape, y, &sharp)?;
        let loss = tape.value(loss_var).item() as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} at step {t}; parameter norms: {}",
                self.norms_report()
            )));
        }
        let grads = tape.backward_scalar(loss_var)?.params(&tape);
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient for {name} at step {t}; parameter norms: {}",
                self.norms_report()
            )));
        }
        let lr = self.cfg.train.lr_policy().at(t);
        let mut next = self.opt.step_all(self.params.named(), &grads, lr)?;
        self.params = self
            .params
            .try_map(&mut |name, _| next.swap_remove(&name).ok_or_else(|| Error::Schema(format!("lost parameter {name}"))))?;
        self.losses.push(loss);
        Ok(loss)
    }

    /// Mean PSNR and SSIM of the clamped prediction on the evaluation set.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let pred = uvm_forward(&self.eval.0, &self.cfg.net, &self.params)?;
        Ok((psnr(&pred, &self.eval.1)?, ssim(&pred, &self.eval.1)?))
    }

    /// Trains until `cfg.train.steps`, emitting a metric row every
    /// `eval_every` steps and at the end.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricRow) -> Result<()>) -> Result<Vec<MetricRow>> {
        let total = self.cfg.train.steps;
        let every = self.cfg.train.eval_every;
        let mut rows = Vec::new();
        let mut window = Vec::new();
        while self.step() < total {
            window.push(self.train_step()?);
            let t = self.step();
            if t.is_multiple_of(every) || t == total {
                let (p, s) = self.evaluate()?;
                let row = MetricRow { step: t, loss: window.iter().sum::<f64>() / window.len() as f64, psnr: p, ssim: s };
                window.clear();
                on_row(&row)?;
                rows.push(row);
            }
        }
        Ok(rows)
    }

    /// Like [`Trainer::run`], appending rows to the configured metrics CSV
    /// (a header is written when the file is new or empty).
    pub fn run_logged(&mut self) -> Result<Vec<MetricRow>> {
        let path = self.cfg.train.metrics.clone();
        let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true) || self.step() == 0;
        let mut file = if fresh {
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "{METRICS_HEADER}")?;
            f
        } else {
            std::fs::OpenOptions::new().append(true).open(&path)?
        };
        self.run(|row| Ok(writeln!(file, "{}", row.csv())?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        save_checkpoint(&self.params, path)?;
        let state = self.opt.state();
        write_checkpoint(state.iter().map(|(n, t)| (n.as_str(), *t)), sidecar_path(path, "opt"))?;
        let side = Sidecar { step: self.step(), config: self.cfg.clone() };
        std::fs::write(sidecar_path(path, "json"), serde_json::to_string_pretty(&side).expect("sidecar serializes"))?;
        Ok(())
    }

    /// Restores parameters, optimizer moments and step count from `path`
    /// and its sidecars; training continues under `cfg`.
    pub fn resume(cfg: RunConfig, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut trainer = Self::new(cfg)?;
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path, "json"))?)
            .map_err(|e| Error::Schema(format!("checkpoint sidecar: {e}")))?;
        if side.config.net != trainer.cfg.net {
            return Err(Error::Schema("checkpoint was trained with a different architecture".into()));
        }
        trainer.params = load_checkpoint(path, &trainer.cfg.net)?;
        let state = read_checkpoint(sidecar_path(path, "opt"))?;
        trainer.opt = AdamW::from_state(trainer.cfg.train.adamw(), side.step, state)?;
        for (name, p) in trainer.params.named() {
            if let Some(m) = trainer.opt.state().iter().find(|(k, _)| k == &format!("m.{name}")) {
                p.expect_same_shape(m.1, &name).map_err(|e| Error::Schema(e.to_string()))?;
            }
        }
        Ok(trainer)
    }
}
