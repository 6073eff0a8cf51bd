use std::path::PathBuf;

use eprgail_nn::NnError;

use crate::data::StoreId;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("user {user}: unknown store id {store}")]
    UnknownStore { user: u64, store: StoreId },
    #[error("user {user}: expected slot {expected}, found slot {found}")]
    SlotGap { user: u64, expected: usize, found: usize },
    #[error("user {user}: sequence has {found} slots, grid horizon is {expected}")]
    HorizonMismatch { user: u64, expected: usize, found: usize },
    #[error("duplicate user id {0}")]
    DuplicateUser(u64),
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },
    #[error("no visited stores")]
    NoVisitedStores,
    #[error("no unvisited stores")]
    NoUnvisitedStores,
    #[error("inconsistent action: {0}")]
    InconsistentAction(String),
    #[error("insufficient {0} events")]
    InsufficientEvents(&'static str),
    #[error("power-law fit needs at least two distinct x values")]
    TooFewPoints,
    #[error("power-law samples must be strictly positive")]
    NonPositiveSample,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("histogram bins differ: {left} vs {right}")]
    BinMismatch { left: usize, right: usize },
    #[error("unknown user {0}")]
    UnknownUser(u64),
    #[error("unknown knowledge prior {0:?}")]
    UnknownKnowledge(String),
    #[error("batch size mismatch: {real} real vs {fake} generated")]
    BatchMismatch { real: usize, fake: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

impl CoreError {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        CoreError::Invalid {
            what,
            message: message.into(),
        }
    }
}
