//! Navigation agent with hierarchical instruction planning and a dual-horizon
//! latent world model, trained and evaluated in a procedural 2D simulator.

pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod model;
pub mod numcore;
pub mod simworld;
pub mod training;

pub use config::{ConfigError, RunConfig};
pub use dataset::{Corpus, DatasetConfig};
pub use evaluation::{BenchmarkConfig, EvalConfig, MetricsReport};
pub use model::{Ablation, ModelConfig, NavModel};
pub use simworld::{EpisodeConfig, World, WorldConfig};
pub use training::{TrainConfig, Trainer};
