//! Error type shared by the solver, simulator and spectral modules.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{what} did not converge within {iterations} iterations (last update {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(
        "{quantity} = {value} is not an integer multiple of the time step {dt}{}",
        suggested_n.map(|n| format!(" (nearest compatible spatial resolution: n = {n})")).unwrap_or_default()
    )]
    Commensurability {
        quantity: &'static str,
        value: f64,
        dt: f64,
        suggested_n: Option<usize>,
    },

    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(
        "contour passes too close to a root (min |F| on contour = {min_abs:e} after {retries} retries)"
    )]
    ContourTooClose { min_abs: f64, retries: usize },

    #[error("root isolation failed: {0}")]
    RootIsolation(String),
}
