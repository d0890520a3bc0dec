use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("topology generation failed: no connected graph after {retries} attempts (m = {m}, p_c = {p_c})")]
    TopologyGeneration { m: usize, p_c: f64, retries: usize },

    #[error("numerical failure in {what}: residual {residual:.3e} after {iterations} iterations")]
    Numerical {
        what: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("capability missing: {0}")]
    Capability(&'static str),

    #[error("non-finite iterate at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
