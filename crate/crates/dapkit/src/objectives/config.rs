use crate::error::{DapError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Translation ranking only.
    Tr,
    /// Translation ranking plus masked translation-pair prediction.
    TrTlm,
    /// Translation ranking plus representation translation learning.
    Dap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionMode {
    /// Reconstruct the pivot from the non-pivot side.
    XxToEn,
    /// Reconstruct the non-pivot side from the pivot.
    EnToXx,
    /// Split each batch: first ceil(B/2) examples xx->en, rest en->xx.
    Both,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub direction: DirectionMode,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Reconstruction probability per target position.
    pub rho: f64,
    pub tlm_mask_prob: f64,
    /// Score ranking pairs by cosine instead of raw dot product.
    pub cosine: bool,
    pub temperature: f64,
    /// Average the ranking loss over both retrieval directions.
    pub bidirectional: bool,
    pub log_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Dap,
            direction: DirectionMode::XxToEn,
            steps: 2000,
            batch_size: 32,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            warmup_frac: 0.05,
            rho: 1.0,
            tlm_mask_prob: 0.15,
            cosine: false,
            temperature: 1.0,
            bidirectional: false,
            log_interval: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(DapError::Config(
                "batch_size must be at least 2: ranking needs in-batch negatives".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DapError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(DapError::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(DapError::Config("adam_eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(DapError::Config("warmup_frac must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(DapError::Config(format!("rho must be in [0, 1], got {}", self.rho)));
        }
        if !(self.tlm_mask_prob > 0.0 && self.tlm_mask_prob <= 1.0) {
            return Err(DapError::Config("tlm_mask_prob must be in (0, 1]".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DapError::Config("temperature must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(DapError::Config("weight_decay must be non-negative".into()));
        }
        if self.log_interval == 0 {
            return Err(DapError::Config("log_interval must be positive".into()));
        }
        Ok(())
    }

    /// Linear warmup to `lr` over ceil(warmup_frac * steps), then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warmup = ((self.warmup_frac * self.steps as f64).ceil() as usize).max(1);
        if step + 1 >= warmup {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / warmup as f64
        }
    }
}
