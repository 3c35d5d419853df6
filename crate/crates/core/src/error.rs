use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the domain of chart {chart}")]
    OutsideDomain { chart: String, point: Vec<f64> },

    #[error("curve left the chart domain at t = {time}")]
    ChartEscape { time: f64 },

    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },

    #[error("outside the injectivity region: {0}")]
    OutOfRange(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("shooting did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Best (y, z) iterate, stacked.
        best: Vec<f64>,
    },

    #[error("bi-exponential map is critical (sigma_min/sigma_max = {ratio:e}); endpoints may be biconjugate")]
    CriticalBiexp { ratio: f64, at: Vec<f64> },

    #[error("continuation failed at lambda = {lambda}: {source}")]
    Sweep {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("field growth overflowed at t = {time}")]
    Overflow { time: f64 },

    #[error("basis Gram matrix is ill-conditioned (cond = {0:e})")]
    IllConditionedBasis(f64),

    #[error("no negative direction found in the (delta, epsilon) search grid (smallest I = {best:e})")]
    ConstructionFailure { best: f64 },

    #[error("descent stopped after {iterations} iterations with gradient sup-norm {gradient:e}")]
    DescentNonConvergence {
        iterations: usize,
        gradient: f64,
        best: Vec<Vec<f64>>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True when the failure is a chart-domain problem rather than a solver one.
    pub fn is_domain(&self) -> bool {
        match self {
            Error::OutsideDomain { .. } | Error::ChartEscape { .. } => true,
            Error::Sweep { source, .. } => source.is_domain(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
