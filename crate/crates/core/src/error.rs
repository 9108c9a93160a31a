use thiserror::Error;

/// Failures raised by the library. Domain failures (small divisors, excluded
/// parameters) are distinguished from malformed input so callers can map
/// them to different exit statuses.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative block radius {0}")]
    NegativeDelta(f64),

    #[error("block edge from {inside:?} leaves the retained box through {outside:?}")]
    BoundaryCrossing { inside: Vec<i32>, outside: Vec<i32> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("polynomials live on different lattices")]
    ConfigMismatch,

    #[error("small divisor {value:.3e} below threshold {threshold:.3e} at k={k:?} ({context})")]
    SmallDivisor {
        k: Vec<i32>,
        value: f64,
        threshold: f64,
        context: String,
    },

    #[error("block system ill-conditioned (condition number {condition:.3e}) at {context}")]
    SolveFailure { condition: f64, context: String },

    #[error("Lie series tail {tail:.3e} exceeds tolerance {tol:.3e} after {order} brackets")]
    LieSeriesDiverged { tail: f64, tol: f64, order: usize },

    #[error("term budget exceeded: {terms} terms (limit {limit})")]
    DegreeOverflow { terms: usize, limit: usize },

    #[error("parameter excluded: {0}")]
    ParameterExcluded(String),

    #[error("matrix not Hermitian: deviation {0:.3e}")]
    NonHermitian(f64),

    #[error("missing parameter value for site {0:?}")]
    MissingParameter(Vec<i32>),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("integrator did not converge at t={t} (increment {increment:.3e})")]
    IntegratorNonConvergence { t: f64, increment: f64 },

    #[error("contraction gate failed: low-jet norm {after:.3e} did not drop below {before:.3e}")]
    NoContraction { before: f64, after: f64 },

    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures that reflect the mathematics (resonances, excluded
    /// parameters, divergence) rather than bad input.
    pub fn is_domain_failure(&self) -> bool {
        matches!(
            self,
            Error::SmallDivisor { .. }
                | Error::SolveFailure { .. }
                | Error::LieSeriesDiverged { .. }
                | Error::ParameterExcluded(_)
                | Error::NoContraction { .. }
                | Error::IntegratorNonConvergence { .. }
                | Error::DegreeOverflow { .. }
                | Error::Inconclusive(_)
        )
    }
}
