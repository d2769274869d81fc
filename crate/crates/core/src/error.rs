use thiserror::Error;

/// Errors raised by the library.
///
/// Variants are grouped loosely by the module that raises them; the CLI maps
/// them onto exit codes through [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    // transition / simplex
    #[error("column {column} of transition matrix sums to {sum} (expected 1)")]
    ColumnNotStochastic { column: usize, sum: f64 },
    #[error("negative entry {value} at row {row}, column {column}")]
    NegativeEntry { row: usize, column: usize, value: f64 },
    #[error("entry {value} at row {row}, column {column} is not a probability")]
    EntryOutOfRange { row: usize, column: usize, value: f64 },
    #[error("invalid matrix shape: {0}")]
    InvalidShape(String),
    #[error("invalid simplex vector: {0}")]
    InvalidSimplex(String),
    #[error("noise rate {rate} outside [0, {max})")]
    InvalidRate { rate: f64, max: f64 },
    #[error("class count {0} is invalid (need at least 2)")]
    InvalidClassCount(usize),
    #[error("class {class} appears in more than one group of the partition")]
    OverlappingPartition { class: usize },
    #[error("partition is incomplete: {0}")]
    IncompletePartition(String),
    #[error("labeling propensity {0} outside (0, 1]")]
    InvalidPropensity(f64),
    #[error("class {class} has zero prior under the given groups; it cannot be learned from them")]
    ZeroClassPrior { class: usize },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    // model
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("non-finite value in input at position {0}")]
    NonFiniteInput(usize),

    // objective
    #[error("observation {observation} of example {example} has zero probability under every class")]
    ImpossibleObservation { example: usize, observation: usize },
    #[error("no datasets given to the combined objective")]
    EmptyCombination,
    #[error("empty batch")]
    EmptyBatch,
    #[error("index {index} out of range (len {len}) in {context}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    // fisher
    #[error("theta[{index}] = {value} is not an interior probability")]
    ZeroProbability { index: usize, value: f64 },
    #[error("observation {index} has zero probability but non-zero transition mass")]
    ZeroObservationProbability { index: usize },

    // datagen
    #[error("covariance of component {component} is not positive definite")]
    NonPdCovariance { component: usize },
    #[error("group {group} is empty")]
    EmptyGroup { group: usize },

    // adult
    #[error("network failure fetching {url}: {reason}")]
    NetworkFailure { url: String, reason: String },
    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    ChecksumMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    // optimizer
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient entry at position {0}")]
    NonFiniteGradient(usize),
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification of errors, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            ColumnNotStochastic { .. }
            | NegativeEntry { .. }
            | EntryOutOfRange { .. }
            | InvalidShape(_)
            | InvalidSimplex(_)
            | InvalidRate { .. }
            | InvalidClassCount(_)
            | OverlappingPartition { .. }
            | IncompletePartition(_)
            | InvalidPropensity(_)
            | InvalidArchitecture(_)
            | InvalidConfig(_)
            | EmptyCombination
            | Json(_) => ErrorCategory::Config,
            ZeroProbability { .. }
            | ZeroObservationProbability { .. }
            | NonPdCovariance { .. }
            | NonFiniteGradient(_)
            | NonFiniteLoss { .. } => ErrorCategory::Numerical,
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
