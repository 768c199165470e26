use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("eigensolver did not converge (n = {n}, seed = {seed})")]
    EigenNoConvergence { n: usize, seed: u64 },
    #[error("evaluation point {z} collides with an eigenvalue")]
    PoleCollision { z: f64 },
    #[error("argument {0} lies on the cut [-2, 2]")]
    OnCut(f64),
    #[error("outside regime: {0}")]
    OutsideRegime(String),
    #[error("no root: {0}")]
    NoRoot(String),
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("oracle unreliable: effective sample size {ess:.1} < {min}")]
    LowEss { ess: f64, min: f64 },
    #[error("io: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
    #[error("{failed} of {total} replicates failed (limit 20%): {summary}")]
    TooManyFailures { failed: usize, total: usize, summary: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
