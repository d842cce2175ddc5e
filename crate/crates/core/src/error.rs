use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },

    /// Requested more components than the (possibly truncated) domain supports.
    #[error("{requested} components requested but at most {max_feasible} are feasible")]
    TooManyComponents { requested: usize, max_feasible: usize },

    /// An eigenvalue used as a divisor fell below the relative floor.
    #[error("component {m} is ill-conditioned; at most {max_usable} components are usable")]
    IllConditioned { m: usize, max_usable: usize },

    #[error("covariance operator has a negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),

    #[error("no feasible candidate: {0}")]
    NoFeasibleCandidate(String),

    #[error("slope shape has zero signal variance")]
    DegenerateShape,

    #[error("bootstrap failed after {attempts} attempts: {last}")]
    Bootstrap { attempts: usize, last: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
