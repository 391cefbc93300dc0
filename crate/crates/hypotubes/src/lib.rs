//! Numerical tube estimates for diffusions under a first-order Hörmander
//! condition.
//!
//! The library is organised around a diffusion model `dX = Σ σ_j(t,X) ∘ dW^j
//! + b(t,X) dt` whose vector fields, together with their first Lie brackets,
//! span the state space along a skeleton curve. It provides:
//!
//! - [`model`]: diffusion models (built-in and user supplied), directional
//!   derivatives, Lie brackets and local regularity bounds;
//! - [`frame`]: the bracket matrix `A(t,x)`, the anisotropic norm
//!   `|y|_{A_R}`, spectral splittings, the associated semi-distance and its
//!   ellipsoid bounds;
//! - [`lattice`] / [`integrate`]: reproducible Brownian lattices with
//!   iterated integrals, skeleton and Stratonovich SDE integration, and the
//!   second-order stochastic Taylor remainder;
//! - [`decomp`]: the block decomposition of linear + second-order Wiener
//!   chaos processes, conditional Gaussian covariances, support events and
//!   tail exponents for iterated integrals;
//! - [`inverse`]: a quantitative inverse-function solver and perturbed
//!   Gaussian density sandwiches;
//! - [`tube`]: Monte Carlo tube probabilities, the theoretical lower bound,
//!   regularity-class checks and the chain-grid schedule;
//! - [`control`]: a direct-transcription optimizer for the Carathéodory
//!   control distance and the local equivalence report;
//! - [`runner`]: the batch experiment runner behind the `hypotubes` binary.
//!
//! Every Monte Carlo routine is keyed by `(seed, path_index)` through a
//! counter-based generator, so results are reproducible bit-for-bit across
//! thread counts.

pub mod control;
pub mod decomp;
pub mod error;
pub mod frame;
pub mod integrate;
pub mod inverse;
pub mod lattice;
pub mod model;
pub mod report;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod tube;

pub use error::{Result, TubeError};
pub use frame::{BracketFrame, PairConvention, SplitSpectrum};
pub use lattice::BrownianLattice;
pub use model::{BuiltinModel, DiffusionModel};
