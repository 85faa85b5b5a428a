use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("non-finite pose at t=0: ({x}, {y}, {heading})")]
    NonFinitePose { x: f64, y: f64, heading: f64 },
    #[error("instance is already in the agent frame")]
    AlreadyAgentFrame,
    #[error("instance is not in the agent frame")]
    NotAgentFrame,
    #[error("empty motion history")]
    EmptyHistory,
    #[error("map data has {got} cells, expected {expected}")]
    MapSize { got: usize, expected: usize },
}
