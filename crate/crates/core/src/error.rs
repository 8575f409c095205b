use thiserror::Error;

/// Errors raised by validation, design construction and estimation.
///
/// Row numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("row {row}: treatment must be 0 or 1, got {value}")]
    NonBinaryTreatment { row: usize, value: i64 },
    #[error("row {row}: non-finite value in {field}")]
    NonFiniteValue { row: usize, field: &'static str },
    #[error("{field} has length {found}, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("treatment fraction eta = {0} is outside (0, 1)")]
    EtaOutOfRange(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unit count {n} is not divisible by block size {k}")]
    NotDivisible { n: usize, k: usize },
    #[error("stratum {stratum}: unit count {n} is not divisible by block size {k}")]
    StratumNotDivisible { stratum: usize, n: usize, k: usize },
    #[error("eta * n = {0} is not an integer")]
    NonIntegralCount(f64),
    #[error("stratum {0} has no units")]
    EmptyStratum(usize),
    #[error("arm {0} has no units")]
    EmptyArm(u8),
    #[error("first stage {0:e} is numerically zero")]
    ZeroFirstStage(f64),
    #[error("weights sum to zero")]
    ZeroWeightMass,
    #[error("arm {arm} has mean outcome {mean}; log-odds undefined")]
    DegenerateArm { arm: u8, mean: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("{0} has no dedicated solver")]
    NoDedicatedSolver(String),
    #[error("variance estimation requires a scalar parameter; {0} is not scalar")]
    NonScalarParameter(String),
    #[error("variance estimate {0} is negative")]
    NegativeVariance(f64),
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
