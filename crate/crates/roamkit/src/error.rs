use thiserror::Error;

/// Crate-wide error type. Operations that can exhaust a resource budget or
/// receive out-of-scope inputs return these instead of panicking.
#[derive(Debug, Error)]
pub enum RoamkitError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown generator '{0}'")]
    UnknownGenerator(char),

    #[error("relator '{0}' reduces to the empty word")]
    TrivialRelator(String),

    #[error("small-cancellation check failed: piece '{piece}' has length {piece_len} but relator '{relator}' requires pieces shorter than {bound}")]
    SmallCancellation {
        piece: String,
        piece_len: usize,
        relator: String,
        bound: String,
    },

    #[error("budget exceeded in {stage}: needed more than {limit} {unit}")]
    BudgetExceeded {
        stage: &'static str,
        limit: u64,
        unit: &'static str,
    },

    #[error("vertex for word '{0}' is not in this ball")]
    NotInBall(String),

    #[error("elements belong to different presentations")]
    PresentationMismatch,

    #[error("{0}")]
    Unsupported(String),

    #[error("subgroup equals the whole group on the probed ball; a proper subgroup is required")]
    SubgroupNotProper,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RoamkitError>;
