//! Run configuration: the network architecture plus training and path
//! settings, read from one flat JSON object.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::optim::{AdamWConfig, LrPolicy, LrSchedule};
use crate::error::{Error, Result};
use crate::net::UvmNetConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total number of optimizer steps (a resumed run continues up to this).
    pub steps: u64,
    pub batch: usize,
    /// Side of the square training crops / synthetic scenes.
    pub image_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub lr_min: f64,
    pub lr_step_every: u64,
    pub lr_gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Train on this one synthetic scene only (overfitting runs).
    pub fixed_scene: Option<u64>,
    pub eval_every: u64,
    pub eval_scenes: usize,
    /// Paired `hazy/` + `GT/` PNG folder; synthetic scenes when absent.
    pub dataset: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            steps: 1000,
            batch: 1,
            image_size: 64,
            lr: 1e-3,
            lr_schedule: LrSchedule::Constant,
            lr_min: 0.0,
            lr_step_every: 1000,
            lr_gamma: 0.5,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            loss: LossKind::L1,
            seed: 0,
            fixed_scene: None,
            eval_every: 100,
            eval_scenes: 4,
            dataset: None,
            checkpoint: PathBuf::from("uvmnet.uvmc"),
            metrics: PathBuf::from("metrics.csv"),
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }

    pub fn lr_policy(&self) -> LrPolicy {
        LrPolicy {
            base: self.lr,
            schedule: self.lr_schedule,
            total_steps: self.steps,
            min: self.lr_min,
            step_every: self.lr_step_every,
            gamma: self.lr_gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch == 0 {
            return bad("batch must be ≥ 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be a positive finite number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return bad("eps must be > 0 and weight_decay ≥ 0");
        }
        if self.eval_every == 0 || self.eval_scenes == 0 {
            return bad("eval_every and eval_scenes must be ≥ 1");
        }
        if self.image_size < 11 {
            return bad("image_size must be at least 11 (SSIM window)");
        }
        if self.dataset.is_some() && self.fixed_scene.is_some() {
            return bad("dataset and fixed_scene are mutually exclusive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub net: UvmNetConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses a flat JSON object; every key must be a known field.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let serde_json::Value::Object(map) = &value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let known = serde_json::to_value(Self::default()).expect("default config serializes");
        let known = known.as_object().expect("config serializes to an object");
        if let Some(key) = map.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.net.check_input(self.train.image_size, self.train.image_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Variant;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn flat_keys_reach_both_halves() {
        let cfg = RunConfig::from_json(r#"{"base_width": 8, "variant": "sdp", "steps": 7, "fixed_scene": 3}"#).unwrap();
        assert_eq!(cfg.net.base_width, 8);
        assert_eq!(cfg.net.variant, Variant::Sdp);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.fixed_scene, Some(3));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_json(r#"{"steps": 3, "learning_rate": 0.1}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = RunConfig { net: UvmNetConfig::tiny(), ..Default::default() };
        cfg.train.dataset = Some("data".into());
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_json(r#"{"lr": -1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"image_size": 60}"#).is_err());
        assert!(RunConfig::from_json(r#"{"variant": "lstm"}"#).is_err());
        assert!(RunConfig::from_json("[1]").is_err());
    }
}
