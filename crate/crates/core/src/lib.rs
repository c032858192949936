//! Bézier loss paths through neural-network parameter space, tunnels around
//! them, and sampling-based inference in the resulting low-dimensional
//! subspace.

pub mod bezier;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod linalg;
pub mod manifest;
pub mod metrics;
pub mod mlp;
pub mod path;
pub mod polymer;
pub mod rng;
pub mod tunnel;

pub use error::{Error, Result};
