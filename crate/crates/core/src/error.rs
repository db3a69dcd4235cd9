use thiserror::Error;

/// Errors raised by the detection library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside the unit interval")]
    Domain { value: f64 },

    #[error("invalid basis index {0}; indices start at 1")]
    BasisIndex(usize),

    #[error("index {index} out of range 1..={max}")]
    IndexRange { index: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite matrix entry")]
    NonFinite,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need {need} windows, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("window index {got} out of order; expected {expected}")]
    OutOfOrder { expected: usize, got: usize },

    #[error("detector already alarmed; reset before stepping")]
    AlreadyAlarmed,

    #[error("detector has not alarmed; reset is only valid after an alarm")]
    NotAlarmed,

    #[error("coordinate {0} has zero variance in the training data")]
    ZeroVariance(usize),

    #[error("degenerate rescale range on coordinate {0}")]
    DegenerateRange(usize),

    #[error("intensity {value} exceeds thinning bound {bound}")]
    BoundViolated { value: f64, bound: f64 },

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
