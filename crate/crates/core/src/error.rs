use thiserror::Error;

#[derive(Debug, Error)]
pub enum PottsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("block {block} has no vertex of color {color}")]
    EmptyColorClass { block: usize, color: usize },
    #[error("out of regime: {0}")]
    OutOfRegime(String),
    #[error("invalid start: {0}")]
    InvalidStart(String),
    #[error("state space has {states} states, above the cap of {cap}")]
    CapExceeded { states: u128, cap: u128 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Config(#[from] serde_json::Error),
}

impl PottsError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PottsError::OutOfRegime(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PottsError>;
