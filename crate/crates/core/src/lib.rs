//! Numerical toolkit for step-2 Carnot groups: group law, Carnot–Carathéodory
//! distances, horizontal path spaces, Brownian sampling, entropic transport,
//! Riemannian approximations and the discretized transport costs built on
//! top of them.

pub mod cc_metric;
pub mod error;
pub mod experiments;
pub mod gamma;
pub mod group;
pub mod optim;
pub mod path;
pub mod riemannian;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use group::{CarnotStructure, GroupElement};
