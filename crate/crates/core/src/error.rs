use thiserror::Error;

/// Errors raised by the solvers, assemblers and operators of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("operator is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("matrix is singular or rank deficient: {0}")]
    Singular(String),

    #[error(
        "eigenvalue iteration did not converge after {iterations} iterations \
         (partial estimates: min {lambda_min:e}, max {lambda_max:e})"
    )]
    NotConverged {
        iterations: usize,
        lambda_min: f64,
        lambda_max: f64,
    },

    #[error("contraction bound not applicable: mu = {mu} must exceed 1/2")]
    ContractNotApplicable { mu: f64 },

    #[error("solver failure at iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("implicit sub-step failed: back-substitution residual {residual:e} exceeds {tolerance:e}")]
    ImplicitSolve { residual: f64, tolerance: f64 },

    #[error("SPD loss at t = {time}: {reason}")]
    SpdLoss { time: f64, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
