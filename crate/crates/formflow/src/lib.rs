//! Skew-symmetric-form analysis of differential equations.
//!
//! The crate computes commutators and closure residuals of differential
//! forms, derives and integrates characteristic strips of first-order PDEs,
//! integrates Hamiltonian flows with their Poincaré 1-form, verifies the
//! source-free Maxwell closure pair on gridded field data, and restricts
//! nonidentical evolutionary relations to pseudostructures where they
//! become identical.

pub mod charpit;
pub mod cli;
pub mod evolution;
pub mod expr;
pub mod forms;
pub mod hamilton;
pub mod maxwell;
