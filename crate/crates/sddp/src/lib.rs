//! Multistage stochastic linear programming with regression-based
//! conditional cuts.
//!
//! The crate simulates Markovian uncertainty (forward-curve prices, AR(1)
//! demand), estimates conditional expectations by per-cell affine
//! regression on adaptive equal-count meshes, and runs stochastic dual
//! dynamic programming whose cut coefficients are affine functions of the
//! conditioning state. A classical augmented-state variant and a
//! regression DP oracle for single-storage valuation are included for
//! cross-checking, together with a config-driven CLI.

pub mod config;
pub mod dp;
pub mod engine;
pub mod model;
pub mod partition;
pub mod rng;
pub mod scenario;
pub mod simplex;
