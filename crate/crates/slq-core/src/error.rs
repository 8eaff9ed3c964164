//! Error type shared by the solver stack.

use thiserror::Error;

/// Errors surfaced by grid construction, sweeps, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid construction or indexing problems (zero steps, bad horizon, ...).
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    /// A matrix, vector, or process had a different shape than required.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    /// A coefficient or weight table does not cover a level/node it is read at.
    #[error("table coverage error: {0}")]
    TableCoverage(String),

    /// Negative step passed to the semigroup action.
    #[error("semigroup step must be nonnegative, got {dt}")]
    NegativeStep { dt: f64 },

    /// Non-finite value produced or consumed by a sweep.
    #[error("non-finite value in {what} at level {level}")]
    NonFinite { what: String, level: usize },

    /// Problem size exceeds a dense-path or tree-depth limit.
    #[error("capacity exceeded in {what}: size {size} > limit {limit}")]
    Capacity {
        what: String,
        size: usize,
        limit: usize,
    },

    /// The quadratic form is indefinite; the minimisation is unbounded below.
    #[error("indefinite quadratic form detected ({detail}); run check_finiteness for a certified minimum eigenvalue")]
    Indefinite { detail: String },

    /// A Krylov iteration hit its iteration cap before reaching the
    /// tolerance. `best` holds the partial iterate (converted to `f64`,
    /// in the solver's flat layout) for diagnosis or warm restarts.
    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    /// Problem data is invalid for the requested operation.
    #[error("invalid problem data: {0}")]
    InvalidSpec(String),

    /// The coupled stationarity system could not be solved to tolerance.
    /// The best stacked iterate found (player 1's flat control, then player
    /// 2's, converted to `f64`) is carried for diagnosis.
    #[error("no equilibrium found: {detail}")]
    NoEquilibrium {
        detail: String,
        best_u1: Vec<f64>,
        best_u2: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
