//! AdamW with decoupled weight decay, and learning-rate schedules.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Weight decay applies to conv and linear kernels only; biases, norm
/// affines and SSM parameters are left alone.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight")
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    /// Number of updates applied so far.
    pub step: u64,
    m: IndexMap<String, Tensor<f32>>,
    v: IndexMap<String, Tensor<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self { cfg, step: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    /// Rebuild from saved moments (`m.<name>` / `v.<name>` entries).
    pub fn from_state(cfg: AdamWConfig, step: u64, state: IndexMap<String, Tensor<f32>>) -> Result<Self> {
        let mut opt = Self::new(cfg);
        opt.step = step;
        for (key, t) in state {
            match key.split_once('.') {
                Some(("m", name)) => opt.m.insert(name.to_string(), t),
                Some(("v", name)) => opt.v.insert(name.to_string(), t),
                _ => return Err(Error::Schema(format!("unexpected optimizer entry {key:?}"))),
            };
        }
        if opt.m.len() != opt.v.len() || opt.m.keys().any(|k| !opt.v.contains_key(k)) {
            return Err(Error::Schema("optimizer first and second moments cover different parameters".into()));
        }
        Ok(opt)
    }

    pub fn state(&self) -> Vec<(String, &Tensor<f32>)> {
        let m = self.m.iter().map(|(k, t)| (format!("m.{k}"), t));
        let v = self.v.iter().map(|(k, t)| (format!("v.{k}"), t));
        m.chain(v).collect()
    }

    /// Advance the step counter; call once before the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updated value of parameter `name`.
    pub fn update(&mut self, name: &str, param: &Tensor<f32>, grad: &Tensor<f32>, lr: f64) -> Result<Tensor<f32>> {
        param.expect_same_shape(grad, name)?;
        if self.step == 0 {
            return Err(Error::Config("AdamW::update before begin_step".into()));
        }
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = if decays(name) { 1.0 - lr * weight_decay } else { 1.0 };
        let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(param.shape()));
        let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(param.shape()));
        param.expect_same_shape(m, name)?;
        let mut out = param.clone();
        let it = out.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (mi, vi)) in it {
            let g = g as f64;
            let mn = beta1 * *mi as f64 + (1.0 - beta1) * g;
            let vn = beta2 * *vi as f64 + (1.0 - beta2) * g * g;
            *mi = mn as f32;
            *vi = vn as f32;
            let upd = (mn / bc1) / ((vn / bc2).sqrt() + eps);
            *p = (*p as f64 * decay - lr * upd) as f32;
        }
        Ok(out)
    }

    /// Apply one step to every named parameter that has a gradient.
    pub fn step_all<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a Tensor<f32>)>,
        grads: &Gradients<f32>,
        lr: f64,
    ) -> Result<IndexMap<String, Tensor<f32>>> {
        self.begin_step();
        params
            .into_iter()
            .map(|(name, p)| {
                let g = grads
                    .get(&name)
                    .ok_or_else(|| Error::Schema(format!("no gradient for parameter {name}")))?;
                let next = self.update(&name, p, g, lr)?;
                Ok((name, next))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from the base rate to `lr_min` over the run.
    Cosine,
    /// Multiply by `lr_gamma` every `lr_step_every` steps.
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrPolicy {
    pub base: f64,
    pub schedule: LrSchedule,
    pub total_steps: u64,
    pub min: f64,
    pub step_every: u64,
    pub gamma: f64,
}

impl LrPolicy {
    /// Learning rate for the 0-based update index `step`.
    pub fn at(&self, step: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.base,
            LrSchedule::Cosine => {
                let frac = (step as f64 / self.total_steps.max(1) as f64).min(1.0);
                self.min + 0.5 * (self.base - self.min) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            LrSchedule::Step => self.base * self.gamma.powi((step / self.step_every.max(1)) as i32),
        }
    }
}
