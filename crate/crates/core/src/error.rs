use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("assembly failed: {0}")]
    Assembly(String),
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: usize, loss: f64 },
}

impl Error {
    /// True for failures caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Assembly(_) | Error::NonConvergence { .. } | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(msg()))
    }
}
