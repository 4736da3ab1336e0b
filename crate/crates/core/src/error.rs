use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("row {row}: expected {expected} {what} columns, found {found}")]
    InconsistentWidth {
        row: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: capture vector is all zeros (unit cannot be observed)")]
    AllZeroCaptureRow { row: usize },
    #[error("row {row}, column y{col}: capture indicator {value} is not 0 or 1")]
    NonBinaryIndicator { row: usize, col: usize, value: f64 },
    #[error("row {row}, column x{col}: covariate is not finite")]
    NonFiniteCovariate { row: usize, col: usize },
    #[error("at least two capture lists are required, found {0}")]
    TooFewLists(usize),
    #[error("positivity violated: joint capture probability q12 = {0} is not positive")]
    PositivityViolation(f64),
    #[error("probability {name} = {value} is outside (0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("weights sum to {0}, not 1")]
    WeightsNotNormalized(f64),
    #[error("information matrix is singular")]
    DegenerateDesign,
    #[error("need {needed} rows to fit {params} parameters, found {found}")]
    TooFewRows {
        needed: usize,
        params: usize,
        found: usize,
    },
    #[error("fold count {k} is invalid for {n} units")]
    BadFoldCount { n: usize, k: usize },
    #[error("at least two influence values are required, found {0}")]
    TooFewValues(usize),
    #[error("plug-in estimate carries no variance; supply a borrowed influence variance")]
    MissingVariance,
    #[error("all-list capture probability {all} is below two-list probability {two}")]
    OrderViolation { two: f64, all: f64 },
    #[error("no unit in the population was captured")]
    AllUnobserved,
    #[error("initial nuisance {name} = {value} is not strictly inside ({eps}, 1 - {eps})")]
    InitialOutOfBounds {
        name: &'static str,
        value: f64,
        eps: f64,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
