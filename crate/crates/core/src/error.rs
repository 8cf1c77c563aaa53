use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature did not reach tolerance {tol:e} within {levels} bisection levels")]
    QuadratureFailure { tol: f64, levels: u32 },
    #[error("moment series diverges")]
    SeriesDivergence,
    #[error("integer overflow: population exceeds u64 (supercritical configuration?)")]
    Overflow,
    #[error("E m(xi)^kappa = {0} >= 1; the model is not in the subcritical regime")]
    NotSubcritical(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("reference survival vanishes at x = {0}")]
    ReferenceVanishes(f64),
    #[error("degenerate order statistics: threshold equals the sample maximum")]
    DegenerateOrderStats,
    #[error("non-positive value {value} at index {index}")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("pmf unavailable for continuous environment kinds")]
    PmfUnavailable,
    #[error("power iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("truncated residual mass {0:e} exceeds 1e-12")]
    ResidualTooLarge(f64),
    #[error("dump format: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
