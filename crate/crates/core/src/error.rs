use thiserror::Error;

/// Errors raised across the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("grid does not resolve the lipid channels: {0}")]
    ResolutionTooCoarse(String),

    #[error("bricks do not fit the domain: {0}")]
    GeometryOverflow(String),

    #[error("grid mismatch: expected {expected:?} cells, got {found:?}")]
    GridMismatch {
        expected: [usize; 3],
        found: [usize; 3],
    },

    #[error("singular matrix: zero pivot in column {column}")]
    SingularMatrix { column: usize },

    #[error("multigrid did not converge: relative residual {relative_residual:e} after {cycles} cycles")]
    NotConverged {
        cycles: usize,
        relative_residual: f64,
    },

    #[error("interval length {length} is not an integer multiple of the step {dt}")]
    NonIntegralSteps { length: f64, dt: f64 },

    #[error("reference state has zero norm")]
    ZeroReference,

    #[error("iteration {iteration}, subinterval {subinterval}: {source}")]
    Subinterval {
        iteration: usize,
        subinterval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("worker communication failed: {0}")]
    Backend(String),

    #[error("missing cost data: {0}")]
    MissingCost(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}
