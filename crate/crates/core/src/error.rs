use thiserror::Error;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum FofError {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e} below -{tol:e})")]
    NotPositiveSemidefinite { eigenvalue: f64, tol: f64 },

    #[error("metric is singular (largest eigenvalue {0:e})")]
    SingularMetric(f64),

    #[error("projection is underdetermined: {0}")]
    UnderdeterminedProjection(String),

    #[error("predictor grids do not match: {0}")]
    GridMismatch(String),

    #[error("invalid term: {0}")]
    InvalidTerm(String),

    #[error("requested {requested} components but at most {limit} are available")]
    TooManyComponents { requested: usize, limit: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("NIPALS inner loop did not converge for component {component} after {iterations} iterations")]
    ConvergenceFailure { component: usize, iterations: usize },

    #[error("design mismatch: {0}")]
    DesignMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("near-zero denominator in relative metric at curve {curve}, grid point {point}")]
    NearZeroDenominator { curve: usize, point: usize },

    #[error("R² undefined: observed curves have zero total variation")]
    UndefinedR2,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no main terms to extend with interactions")]
    NothingToExtend,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("unknown simulation setting {0}")]
    UnknownSetting(u8),

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<FofError>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, FofError>;
