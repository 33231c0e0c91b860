use thiserror::Error;

/// Errors produced by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The ODE integrator could not make progress on `[from, to]`.
    #[error("integrator failure on [{from}, {to}] at t = {at}: {reason}")]
    Integrator {
        from: f64,
        to: f64,
        at: f64,
        reason: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// An operation needs a derivative the nonlinearity does not provide.
    #[error("nonlinearity does not provide {0}")]
    Capability(&'static str),

    /// The tail of a half-line integral could not be certified below tolerance.
    #[error("truncation error: tail bound {achieved:e} above tolerance {tol:e} at horizon {horizon}")]
    Truncation { achieved: f64, tol: f64, horizon: f64 },

    #[error("adaptive quadrature on [{a}, {b}] stopped with error estimate {estimate:e} (tolerance {tol:e})")]
    Quadrature {
        a: f64,
        b: f64,
        estimate: f64,
        tol: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// The contraction constant is not below one, so no fixed point is guaranteed.
    #[error("operator is not a contraction: q_hat = {q_hat} >= 1")]
    NotContracting { q_hat: f64 },

    #[error("Picard iteration diverging: measured ratio {ratio} at iteration {iteration}")]
    Divergence { ratio: f64, iteration: usize },

    #[error("Picard iteration cap {cap} reached with residual {residual:e}")]
    IterationCap { cap: usize, residual: f64 },

    #[error("derivative matrix is singular (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("unknown catalog entry `{0}`")]
    UnknownEntry(String),
}

pub type Result<T> = std::result::Result<T, Error>;
