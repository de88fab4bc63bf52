use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("GeoJSON parse error: {0}")]
    GeoJson(String),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("point ({x:.3}, {y:.3}) is not in the fluid region")]
    NotInFluid { x: f64, y: f64 },
    #[error("wind solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    WindNotConverged { iterations: usize, residual: f64 },
    #[error("linear solver failed: {0}")]
    LinearSolver(String),
    #[error("Weibull parameters cannot be inverted for mean {mean} and std {std}")]
    WeibullInversion { mean: f64, std: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
