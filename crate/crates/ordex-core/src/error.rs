//! Error type shared across the kernel algebra, distribution arithmetic and
//! the Lanczos-type driver.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("non-finite value encountered while {context} (entry {index:?})")]
    NonFinite {
        context: &'static str,
        index: Option<(usize, usize)>,
    },

    #[error("jet order q={q}, r={r} exceeds the supported total order {max}")]
    JetOrderUnsupported { q: usize, r: usize, max: usize },

    #[error("theta power must have k >= 1, got {0}")]
    InvalidThetaPower(usize),

    #[error(
        "Volterra recursion exceeded the overflow bound {bound:.3e} at entry ({row}, {col}); \
         the grid is too coarse or the input is pathological"
    )]
    VolterraOverflow { row: usize, col: usize, bound: f64 },

    #[error("delta order {order} exceeds the configured cap {cap}")]
    DeltaOrderOverflow { order: usize, cap: usize },

    #[error("grid too small: operation needs at least {needed} nodes, grid has {have}")]
    GridTooSmall { needed: usize, have: usize },

    #[error("diagonal jet of order {order} is not below tolerance, so {k} is not the minimal jet order")]
    NotMinimalJet { k: usize, order: usize },

    #[error("leading diagonal jet is identically null through order {through}; the kernel is not invertible at this order")]
    JetIdenticallyNull { through: usize },

    #[error(
        "leading diagonal jet vanishes at {} grid node(s) (first at t = {first:.6}); \
         restrict the domain to a subinterval excluding these nodes", nodes.len()
    )]
    JetZeroCrossing { nodes: Vec<usize>, first: f64 },

    #[error("input vectors must satisfy w^H v = 1, got deviation {0:.3e}")]
    NotNormalized(f64),

    #[error("iteration count m = {m} must satisfy 1 <= m <= N = {n}")]
    BadIterationCount { m: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "coefficient {what} at iteration {iter} has a residual delta part of size {residual:.3e} \
         (tolerance {tol:.3e}); the computed tridiagonal entry is not piecewise smooth"
    )]
    NonSmoothCoefficient {
        what: &'static str,
        iter: usize,
        residual: f64,
        tol: f64,
    },

    #[error("tridiagonal matrix is in the wrong superdiagonal form for this operation")]
    WrongForm,

    #[error("adaptive integrator step size underflowed at t = {t:.6e}")]
    StepSizeUnderflow { t: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
