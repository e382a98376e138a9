//! Closed-loop rollouts, navigation metrics, prediction rendering and the
//! ablation benchmark.

mod benchmark;
mod metrics;
mod render;
mod rollout;

use serde::{Deserialize, Serialize};

use crate::model::{Ablation, ModelError};
use crate::simworld::SimError;
use crate::training::TrainError;

pub use benchmark::{
    ablation_rows, run_benchmark, write_ablation_csv, AblationRow, BenchmarkConfig, BenchmarkData, BenchmarkRun,
};
pub use metrics::{compute_metrics, EpisodeMetrics, MetricsReport};
pub use render::{
    class_strip, decode_classes, depth_strip, read_pgm, render_prediction, write_pgm, RenderSummary,
};
pub use rollout::{
    evaluate_policy, rollout, ModelPolicy, NavTask, Policy, RandomWaypointPolicy, RolloutResult,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error("checkpoint/config mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Success radius in world units.
    pub success_radius: f64,
    /// The agent stops when every predicted stop probability reaches this.
    pub stop_threshold: f64,
    /// Waypoints executed per replan.
    pub exec_horizon: usize,
    /// Step budget as a multiple of the reference path's step count.
    pub max_steps_factor: f64,
    /// Ablation variant used at inference (`full` unless evaluating an ablated run).
    pub ablation: String,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            success_radius: 1.0,
            stop_threshold: 0.5,
            exec_horizon: 1,
            max_steps_factor: 4.0,
            ablation: "full".into(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.success_radius > 0.0) {
            return Err(EvalError::Config(format!(
                "success_radius={} must be positive",
                self.success_radius
            )));
        }
        if self.exec_horizon == 0 {
            return Err(EvalError::Config("exec_horizon=0 must be at least 1".into()));
        }
        if !(self.max_steps_factor > 0.0) {
            return Err(EvalError::Config(format!(
                "max_steps_factor={} must be positive",
                self.max_steps_factor
            )));
        }
        if Ablation::from_name(&self.ablation).is_none() {
            return Err(EvalError::Config(format!("ablation={} is not a known variant", self.ablation)));
        }
        Ok(())
    }
}
