use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid site graph: {0}")]
    InvalidGraph(String),

    #[error("site graph is not uniformly stationary: column {site} sums to {excess:e}")]
    NotUniform { site: usize, excess: f64 },

    #[error("site graph is not reversible: r({x},{y}) = {rxy} but r({y},{x}) = {ryx}")]
    NotReversible { x: usize, y: usize, rxy: f64, ryx: f64 },

    #[error("invalid site set: {0}")]
    InvalidSiteSet(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration space with {states} states exceeds the cap of {cap}")]
    TooManyStates { states: u128, cap: u128 },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("linear solve residual {residual:e} above tolerance {tol:e}")]
    Residual { residual: f64, tol: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("grid too coarse: mesh {mesh} but test function margin {margin}")]
    GridTooCoarse { mesh: f64, margin: f64 },

    #[error("recovery sequence failed: {0}")]
    Recovery(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
