//! Dense tensors, a reverse-mode autodiff tape, losses, AdamW and checkpoints.

mod checkpoint;
mod gemm;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    Checkpoint, CheckpointError, DType, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::{GradStore, ParamId, ParamStore};
pub use tape::{Tape, Var, MASK_NEG};
pub use tensor::Tensor;

pub(crate) use tape::{silog_residuals, silog_value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: range {start}..{end} out of bounds for shape {shape:?}")]
    Slice {
        op: &'static str,
        start: usize,
        end: usize,
        shape: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: non-positive input {value}")]
    NonPositive { op: &'static str, value: f64 },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
}

/// Scale-invariant log loss on plain slices (no tape).
pub fn silog(pred: &[f64], target: &[f64], lambda: f64) -> Result<f64, TensorError> {
    if pred.len() != target.len() {
        return Err(TensorError::ShapeMismatch {
            op: "silog_loss",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    if let Some(bad) = pred.iter().chain(target).find(|v| !(**v > 0.0)) {
        return Err(TensorError::NonPositive {
            op: "silog_loss",
            value: *bad,
        });
    }
    Ok(silog_value(&silog_residuals(pred, target), lambda))
}

#[cfg(test)]
mod tests;
