use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error(
        "layer covariance is not positive definite: eigenvalue {eigenvalue:e} at frequency {frequency} (max eigenvalue {max:e}); a seed wider than half the circle needs the periodized geometry"
    )]
    NotPositiveDefinite {
        frequency: usize,
        eigenvalue: f64,
        max: f64,
    },

    #[error("spatial grid too coarse: need N >= {required} points, got {actual}")]
    GridTooCoarse { required: usize, actual: usize },

    #[error("{kernel} kernel covariance is not differentiable at gap {gap}")]
    NonDifferentiable { kernel: String, gap: f64 },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("n_max = {n_max} aliases on a grid of {grid} points (need n_max < N/2)")]
    Aliasing { n_max: usize, grid: usize },

    #[error("slope is undefined for branching gap {gap} < e")]
    UndefinedSlope { gap: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
