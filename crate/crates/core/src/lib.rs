//! Projected, running-average, and smoothed stochastic subgradient methods on
//! compact convex bodies, with per-run inequality checks and Monte Carlo
//! ensemble statistics.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod objectives;
pub mod optimizers;
pub mod rng;
pub mod smoothing;
pub mod vector;

pub use error::{Error, Result};
pub use geometry::{ConvexBody, LocalNormQuery};
pub use objectives::{ConvexObjective, StochasticObjective};
pub use optimizers::{Algorithm, RunOptions, RunTrace, Schedule};
pub use vector::Vector;
