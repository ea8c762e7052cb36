//! Synchronization of agents on SO(n) and R^n that exchange only partial
//! state outputs `Q_i^T y_ij`.
//!
//! - [`liegroup`]: SO(n)/so(n) primitives.
//! - [`graph`]: interaction graphs, Laplacians and the collapse test.
//! - [`network`]: reference vectors, generalized Laplacian, synchronization conditions.
//! - [`dynamics`]: gradient flows, costs and integrators.
//! - [`experiments`]: scripted scenarios with pass/fail verdicts.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod liegroup;
pub mod network;
pub mod tol;

pub use error::{Error, Result};
pub use graph::Graph;
pub use liegroup::{Rotation, SkewMatrix};
pub use network::{NetworkConfig, Space};
