//! Differential analysis of two paired structural-equation networks.
//!
//! Each node is regressed on the other nodes' instrument-predicted values
//! jointly across both networks, with coefficients split into an average
//! part and a differential part. See [`pipeline::rednet_run`].

pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod screening;
pub mod solver;
pub mod synthgen;

pub use error::{Error, ErrorKind, Result};
