use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdrError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("ill-conditioned data: {0}")]
    IllConditioned(String),

    #[error("no convergence after {iterations} iterations: {message}")]
    Convergence {
        iterations: usize,
        message: String,
        /// Objective (or step-size) history up to the last iterate.
        trace: Vec<f64>,
    },

    #[error("Monte-Carlo weights degenerate in cluster {cluster}; increase the number of samples")]
    McDegeneracy { cluster: usize },

    #[error("perfect separation detected at node {node}")]
    Separation { node: usize },

    #[error("{what} failed in {failures} of {reps} replications")]
    TooManyFailures { what: String, failures: usize, reps: usize },
}

impl SdrError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        SdrError::Domain(msg.into())
    }

    pub(crate) fn ill(msg: impl Into<String>) -> Self {
        SdrError::IllConditioned(msg.into())
    }

    /// True for failures caused by the numbers rather than by the caller.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, SdrError::Domain(_))
    }
}

pub type Result<T> = std::result::Result<T, SdrError>;
