use thiserror::Error;

/// Rejections raised while checking a configuration, prior and data set
/// against each other.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("anchor index out of range: s={s} must lie in 1..={r}")]
    AnchorOutOfRange { s: usize, r: usize },
    #[error("r exceeds p+1: r={r}, p={p}")]
    LagsExceedOrder { r: usize, p: usize },
    #[error("{what} must be at least {min}, got {value}")]
    TooSmall {
        what: &'static str,
        min: usize,
        value: usize,
    },
    #[error("non-finite data value at row {row}, column {col}")]
    NonFiniteData { row: usize, col: usize },
    #[error("nonpositive prior parameter {name} = {value}")]
    NonPositivePrior { name: String, value: f64 },
    #[error("discount factor {name} = {value} outside (0.8, 1]")]
    DiscountOutOfRange { name: &'static str, value: f64 },
    #[error("threshold range multiplier K = {0} must be > 0")]
    NonPositiveK(f64),
    #[error("wishart degrees of freedom {dof} must exceed p-1 = {min}")]
    WishartDof { dof: f64, min: f64 },
    #[error("invalid MCMC settings: {0}")]
    Mcmc(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure at t={t}: {what}")]
    Numerical { t: usize, what: String },
    #[error("degenerate decomposition at t={t}: repeated eigenvalues")]
    DegenerateDecomposition { t: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("sampler failed in sweep {sweep} ({step}): {source}")]
    Sampler {
        sweep: usize,
        step: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("unknown selector: {0}")]
    UnknownSelector(String),
    #[error("missing log-likelihood records in posterior draws")]
    MissingLikelihood,
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },
    #[error("draws file: {0}")]
    DrawsFormat(String),
    #[error("simulation diverged {attempts} times in a row")]
    Explosive { attempts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
