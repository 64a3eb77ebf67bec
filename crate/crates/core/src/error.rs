use thiserror::Error;

use crate::solver::Solution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("correlation coefficient {rho} violates rho*(n-1)+1 >= 0 for n = {n}")]
    RhoOutOfRange { rho: f64, n: usize },

    #[error("invalid rank: {0}")]
    RankError(String),

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not Hermitian: {0}")]
    NotHermitian(String),

    #[error("vector is not unit norm (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("initial delay {t_d} outside [0, {max}]")]
    DelayOutOfRange { t_d: usize, max: usize },

    #[error("a flat nonzero spectrum is required: {0}")]
    FlatSpectrumRequired(String),

    #[error("infeasible region: {0}")]
    InfeasibleRegion(String),

    #[error("energy {energy} arrives at slot {slot} whose signal variance is zero")]
    ZeroVarianceWithEnergy { slot: usize, energy: f64 },

    #[error("invalid sampling plan: {0}")]
    PlanInvalid(String),

    #[error("window length {window} does not divide n = {n}")]
    WindowError { n: usize, window: usize },

    #[error("solver hit the iteration limit ({}) without converging", .0.diagnostics.iterations)]
    MaxIterations(Box<Solution>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
