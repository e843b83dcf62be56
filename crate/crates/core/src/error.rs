use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid context: {0}")]
    InvalidContext(String),

    #[error("incompatible hbar tags: {0} vs {1}")]
    IncompatibleHbarTag(f64, f64),

    #[error("need at least {needed} hbar samples, got {got}")]
    InsufficientGrid { needed: usize, got: usize },

    #[error("adjoint series diverges: |t|*|W|/d = {ratio} >= 1")]
    SeriesDiverges { ratio: f64 },

    #[error("matrix is not hermitian (defect {defect})")]
    NotHermitian { defect: f64 },

    #[error("operands live on different mode boxes")]
    BoxMismatch,

    #[error("divisor shift zeta must be nonzero")]
    ZeroShift,

    #[error("resonant mode q = {q:?}: <omega, q> vanishes")]
    ResonantMode { q: Vec<i32> },

    #[error("mode q = {q:?} lies outside the Diophantine certificate (|q|_1 > {q_max})")]
    UncertifiedMode { q: Vec<i32>, q_max: usize },

    #[error("Neumann series diverges: theta = {theta} >= 1")]
    NeumannDiverges { theta: f64 },

    #[error("atom budget exceeded: {atoms} > {budget}")]
    BudgetExceeded { atoms: usize, budget: usize },

    #[error("value is not real: imaginary part {imag} vs magnitude {magnitude}")]
    NotReal { imag: f64, magnitude: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("theta = {theta} >= 1 at step {ell}")]
    ThetaTooLarge { ell: usize, theta: f64 },

    #[error("step condition eps*A*|V|/d = {value} >= 1 at step {ell}")]
    StepConditionViolated { ell: usize, value: f64 },

    #[error("resonant frequency vector: <omega, q> = 0 for q = {worst_q:?}")]
    ResonantFrequency { worst_q: Vec<i32> },

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidContext(_) => "InvalidContext",
            Error::IncompatibleHbarTag(..) => "IncompatibleHbarTag",
            Error::InsufficientGrid { .. } => "InsufficientGrid",
            Error::SeriesDiverges { .. } => "SeriesDiverges",
            Error::NotHermitian { .. } => "NotHermitian",
            Error::BoxMismatch => "BoxMismatch",
            Error::ZeroShift => "ZeroShift",
            Error::ResonantMode { .. } => "ResonantMode",
            Error::UncertifiedMode { .. } => "UncertifiedMode",
            Error::NeumannDiverges { .. } => "NeumannDiverges",
            Error::BudgetExceeded { .. } => "BudgetExceeded",
            Error::NotReal { .. } => "NotReal",
            Error::HypothesisViolated(_) => "HypothesisViolated",
            Error::ThetaTooLarge { .. } => "ThetaTooLarge",
            Error::StepConditionViolated { .. } => "StepConditionViolated",
            Error::ResonantFrequency { .. } => "ResonantFrequency",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::Parse(_) => "Parse",
        }
    }

    /// True for input/validation problems, false for numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidContext(_) | Error::Parse(_) | Error::BoxMismatch | Error::IncompatibleHbarTag(..)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
