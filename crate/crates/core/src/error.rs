use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Node/weight computation for a quadrature rule failed.
    #[error("quadrature construction failed for k = {k}: {reason}")]
    Quadrature { k: usize, reason: String },

    /// The nonlinear stage iteration did not converge within the allowed
    /// number of iterations (including one Jacobian refresh).
    #[error("stage iteration failed at step {step} (t = {t:.6e}) after {iters} iterations")]
    StepFailure { step: usize, t: f64, iters: usize },

    /// The right-hand side returned NaN or infinity.
    #[error("right-hand side returned a non-finite value at step {step} (t = {t:.6e})")]
    NonFiniteRhs { step: usize, t: f64 },

    /// Benchmark problem id not in the registry.
    #[error("unknown problem `{0}` (known: ex1, ex2, ex3, ex4)")]
    UnknownProblem(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by invalid input rather than a failed computation.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::UnknownProblem(_))
    }
}
