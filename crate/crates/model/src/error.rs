use thiserror::Error;

use cab_autodiff::AdError;
use cab_core::CoreError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("instance {id}: history has {got} states, model expects {expected}")]
    HistoryLength { id: u64, got: usize, expected: usize },
    #[error("instance {id}: future has {got} points, model expects {expected}")]
    FutureLength { id: u64, got: usize, expected: usize },
    #[error("instance {id}: raster is {got:?}, model expects {expected:?}")]
    MapShape { id: u64, got: (usize, usize, usize), expected: (usize, usize, usize) },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
