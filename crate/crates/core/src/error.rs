use std::path::PathBuf;

use thiserror::Error;

/// Broad class of a failure, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or inconsistent configuration.
    Config,
    /// A file or table failed to parse or validate.
    InputFormat,
    /// An algorithm was asked to do something its preconditions forbid.
    Precondition,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("BudgetOutOfRange: budget {budget} not in [{min}, {max}]")]
    BudgetOutOfRange { budget: usize, min: usize, max: usize },

    #[error("NonPositiveScale: {name} = {value} must be > 0")]
    NonPositiveScale { name: &'static str, value: f64 },

    #[error("AmbiguousBeta: set either beta or churn_target, not both")]
    AmbiguousBeta,

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("BadMagic: {path} is not an embedding file")]
    BadMagic { path: PathBuf },

    #[error("TruncatedFile: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },

    #[error("NonFiniteValue at row {row}, col {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("RaggedRows: line {line} has {found} fields, expected {expected}")]
    RaggedRows { line: usize, found: usize, expected: usize },

    #[error("EmptyFile: {0}")]
    EmptyFile(PathBuf),

    #[error("ParseError: {0}")]
    Parse(String),

    #[error("HashMismatch: embedding file hash {found} does not match manifest {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("KTooLarge: k = {k} exceeds n = {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("NegativeThreshold: tau = {0}")]
    NegativeThreshold(f64),

    #[error("TooLargeForExactCurve: {size} candidates exceed limit {limit}")]
    TooLargeForExactCurve { size: usize, limit: usize },

    #[error("MissingLoss: sample {0}")]
    MissingLoss(usize),

    #[error("DuplicateLoss: sample {0}")]
    DuplicateLoss(usize),

    #[error("NegativeLoss: sample {id} has loss {loss}")]
    NegativeLoss { id: usize, loss: f64 },

    #[error("EmptyKeptSet")]
    EmptyKeptSet,

    #[error("NonPositiveBandwidth: h = {0}")]
    NonPositiveBandwidth(f64),

    #[error("DegenerateData: {0}")]
    DegenerateData(String),

    #[error("NoSignal: all cluster adjustments are zero")]
    NoSignal,

    #[error("InfeasibleBudget: budget {m} exceeds {n} samples")]
    InfeasibleBudget { m: usize, n: usize },

    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),

    #[error("IoFailure: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            BudgetOutOfRange { .. }
            | NonPositiveScale { .. }
            | AmbiguousBeta
            | InvalidConfig(_)
            | NegativeThreshold(_)
            | NonPositiveBandwidth(_)
            | InvalidSpec(_) => ErrorClass::Config,
            BadMagic { .. }
            | TruncatedFile { .. }
            | NonFiniteValue { .. }
            | RaggedRows { .. }
            | EmptyFile(_)
            | Parse(_)
            | HashMismatch { .. }
            | DimensionMismatch { .. }
            | MissingLoss(_)
            | DuplicateLoss(_)
            | NegativeLoss { .. }
            | Io { .. } => ErrorClass::InputFormat,
            KTooLarge { .. }
            | TooLargeForExactCurve { .. }
            | EmptyKeptSet
            | DegenerateData(_)
            | NoSignal
            | InfeasibleBudget { .. } => ErrorClass::Precondition,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
