//! Joint world-model, waypoint and plan training with mixed batches.

mod loss;
mod mixer;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::model::{Ablation, ModelError};
use crate::numcore::{AdamWConfig, DType, TensorError};

pub use loss::{compute_loss, progress_class, sample_input, sample_loss, LossBreakdown};
pub use mixer::{mix_seed, Batch, BatchMixer, MixerState};
pub use trainer::{batch_gradients, train, write_metrics, StepLog, TrainOutcome, Trainer, METRICS_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at step {step} on sample {sample}: {detail}")]
    NonFinite { step: u64, sample: usize, detail: String },
    #[error("training diverged at step {step}: loss {loss:.4} stayed above {factor}x its initial value {initial:.4}")]
    Diverged { step: u64, loss: f64, initial: f64, factor: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the depth loss.
    pub alpha: f64,
    /// Weight of the semantics loss.
    pub beta: f64,
    pub silog_lambda: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Cosine decay of the learning rate to zero over `steps`.
    pub cosine: bool,
    pub seed: u64,
    /// Probability that a batch is a planning batch.
    pub mix_ratio: f64,
    /// Steps between checkpoints; 0 writes only the initial and final ones.
    pub checkpoint_every: u64,
    pub checkpoint_dtype: DType,
    /// Store optimizer moments in checkpoints so runs can resume exactly.
    pub save_optimizer: bool,
    /// Ablation variant name (`full`, `-planning`, `-long`, `-all`, `-depth`, `-sem`).
    pub ablation: String,
    /// Samples per kind in the fixed probe set used to track progress.
    pub probe_size: usize,
    pub divergence_factor: f64,
    pub divergence_window: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            alpha: 0.25,
            beta: 0.3,
            silog_lambda: 0.5,
            batch_size: 4,
            steps: 5000,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            grad_clip: 1.0,
            cosine: false,
            seed: 0,
            mix_ratio: 0.5,
            checkpoint_every: 1000,
            checkpoint_dtype: DType::F64,
            save_optimizer: true,
            ablation: "full".into(),
            probe_size: 8,
            divergence_factor: 10.0,
            divergence_window: 100,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn ablation(&self) -> Result<Ablation, TrainError> {
        Ablation::from_name(&self.ablation).ok_or_else(|| {
            TrainError::Config(format!(
                "ablation={} is not one of full, -planning, -long, -all, -depth, -sem",
                self.ablation
            ))
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |k: &str, v: String| Err(TrainError::Config(format!("{k}={v} is out of range")));
        if !(self.alpha > 0.0) {
            return bad("alpha", self.alpha.to_string());
        }
        if !(self.beta > 0.0) {
            return bad("beta", self.beta.to_string());
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad("mix_ratio", self.mix_ratio.to_string());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "0".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", self.lr.to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1/beta2", format!("{}/{}", self.beta1, self.beta2));
        }
        if self.grad_clip < 0.0 {
            return bad("grad_clip", self.grad_clip.to_string());
        }
        if !(0.0..=1.0).contains(&self.silog_lambda) {
            return bad("silog_lambda", self.silog_lambda.to_string());
        }
        if self.mix_ratio == 0.0 || self.mix_ratio == 1.0 {
            log::warn!("mix_ratio={} yields single-kind batches only", self.mix_ratio);
        }
        self.ablation()?;
        Ok(())
    }

    /// Learning rate at a 0-based step.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.cosine && self.steps > 0 {
            let p = step.min(self.steps) as f64 / self.steps as f64;
            0.5 * self.lr * (1.0 + (std::f64::consts::PI * p).cos())
        } else {
            self.lr
        }
    }
}
