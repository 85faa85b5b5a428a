use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what} has length {got}, expected {expected}")]
    Length { what: &'static str, got: usize, expected: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
