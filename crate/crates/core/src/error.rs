use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("smoothing window exceeds array: {0}")]
    Window(String),

    #[error("snapshot matrix of {entries} entries exceeds the materialization budget of {budget}")]
    Budget { entries: usize, budget: usize },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("estimated steering already annihilated by the noise subspace (residual {residual:e})")]
    Annihilated { residual: f64 },

    #[error("fewer than {wanted} candidate roots ({found} found)")]
    TooFewRoots { wanted: usize, found: usize },

    #[error("non-physical root: sin(theta) = {0}")]
    NonPhysicalRoot(f64),

    #[error("manifold collinear for every pairing")]
    ManifoldCollinear,

    #[error("target count {0} is not supported by exhaustive pairing (max 6)")]
    TooManyTargets(usize),

    #[error("damped normal equations are singular")]
    SingularSystem,

    #[error("targets unresolvable at this geometry (condition number {0:e})")]
    Unresolvable(f64),

    #[error("degenerate azimuth: cos(theta) = 0")]
    DegenerateAzimuth,

    #[error("fewer than {wanted} separated spectral peaks ({found} found)")]
    TooFewPeaks { wanted: usize, found: usize },

    #[error("grid of {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("slice {slice} failed: {source}")]
    Slice {
        slice: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario file: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
