//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TubeError>;

#[derive(Debug, Error)]
pub enum TubeError {
    /// The bracket matrix does not span the state space (Hörmander
    /// condition fails) at the reported time.
    #[error("singular bracket frame at t={t}: smallest Gram eigenvalue {lambda:.3e}")]
    SingularFrame { t: f64, lambda: f64 },

    /// Target direction has a component outside the span of the frame.
    #[error("target leaves the span of the bracket frame")]
    NoBracket,

    #[error("field index {index} out of range for noise dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    /// A lattice block holds fewer steps than the operation needs.
    #[error("lattice block [{lo}, {hi}] unresolved: {steps} steps < {needed} required")]
    UnresolvedBlock {
        lo: f64,
        hi: f64,
        steps: usize,
        needed: usize,
    },

    #[error("integration diverged: |x| exceeded {guard:.1e} at t={t}")]
    DivergedPath { t: f64, guard: f64 },

    /// `invert_phi` asked outside the certified radius `h_eta / 2`.
    #[error("|y| = {norm:.3e} exceeds the inversion radius {radius:.3e}")]
    OutOfRadius { norm: f64, radius: f64 },

    /// The contraction iteration failed to settle, which signals invalid
    /// profile constants.
    #[error("fixed-point iteration did not contract after {iters} iterations (residual {residual:.3e})")]
    NonContraction { iters: usize, residual: f64 },

    #[error("matrix B is singular (smallest eigenvalue of B*B = {lambda:.3e})")]
    SingularB { lambda: f64 },

    #[error("admissibility cap violated: {what}")]
    CapViolated { what: String },

    /// The control optimizer never brought the endpoint gap below
    /// tolerance; the distance may be large or the optimizer stuck.
    #[error("no feasible control found: best endpoint gap {gap:.3e} > tol {tol:.3e}")]
    Infeasible { gap: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
