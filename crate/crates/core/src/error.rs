use thiserror::Error;

/// Errors raised by panel handling, the solvers and the estimators.
///
/// The `Display` output always starts with the variant name so front ends can
/// emit a single machine-parsable line.
#[derive(Debug, Error)]
pub enum SmcError {
    #[error("Io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("Parse: {0}")]
    Parse(String),
    #[error("MissingValue: row {row}, column {column}")]
    MissingValue { row: usize, column: String },
    #[error("UnknownUnit: {0}")]
    UnknownUnit(String),
    #[error("InvalidSplit: t0 must satisfy 1 <= t0 < {periods} (got {t0})")]
    InvalidSplit { t0: usize, periods: usize },
    #[error("DuplicateUnit: {0}")]
    DuplicateUnit(String),
    #[error("NonFinite: {0}")]
    NonFinite(String),
    #[error("NoCovariates: panel carries no covariate rows")]
    NoCovariates,
    #[error("ZeroVarianceCovariate: covariate row {0} has zero cross-unit spread")]
    ZeroVarianceCovariate(usize),
    #[error("NegativeWeight: entry {index} is {value}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("LengthMismatch: {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("InvalidProblem: {0}")]
    InvalidProblem(String),
    #[error("NotPsd: smallest eigenvalue {min_eigenvalue}")]
    NotPsd { min_eigenvalue: f64 },
    #[error("Diverged: non-finite iterate after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("RankDeficient: control Gram matrix is singular")]
    RankDeficient,
    #[error("InsufficientPeriods: need more pre-periods ({t0}) than controls ({controls})")]
    InsufficientPeriods { t0: usize, controls: usize },
    #[error("AllUnitsDegenerate: every control is constant over the pre-period")]
    AllUnitsDegenerate,
    #[error("EmptyDonorPool: no usable control units")]
    EmptyDonorPool,
    #[error("InvalidKeepCount: {0}")]
    InvalidKeepCount(usize),
    #[error("TruthUnavailable: simulation ground truth required")]
    TruthUnavailable,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

impl SmcError {
    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SmcError::Io { .. }
                | SmcError::Parse(_)
                | SmcError::MissingValue { .. }
                | SmcError::UnknownUnit(_)
                | SmcError::InvalidSplit { .. }
                | SmcError::DuplicateUnit(_)
                | SmcError::NonFinite(_)
                | SmcError::NoCovariates
                | SmcError::NegativeWeight { .. }
                | SmcError::LengthMismatch { .. }
                | SmcError::InvalidKeepCount(_)
                | SmcError::InvalidConfig(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SmcError>;
