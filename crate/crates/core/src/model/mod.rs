//! Dual-horizon world-model and waypoint network on a structured-attention
//! transformer backbone.

mod config;
mod layers;
mod layout;
mod net;

pub use config::{Ablation, ModelConfig, QueryGroups};
pub use layers::{open_mask, Attention, Block, DecoderBlock, FeedForward, LayerNorm, Linear};
pub use layout::{
    build_structured_mask, build_token_layout, prepare_instruction, GroupKind, PreparedInstruction, Span,
    TokenLayout,
};
pub use net::{
    output_values, ForwardMode, ForwardVars, FrameInput, ModelInput, ModelOutput, NavModel, Prediction,
    PARAM_GROUPS,
};

use crate::numcore::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid token layout: {0}")]
    Layout(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
