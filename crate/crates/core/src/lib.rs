//! Sparse and constrained attention transformations.
//!
//! The crate provides four maps from attention scores to the probability
//! simplex (softmax, sparsemax, constrained softmax and constrained sparsemax),
//! each with an exact forward solver and a backward pass, together with the
//! machinery needed to use the bounded variants in a decoder:
//!
//! - [`transforms`]: forward/backward passes and projection certificates.
//! - [`qk`]: a linear-time solver for singly-constrained separable quadratic
//!   programs, which backs constrained sparsemax.
//! - [`fertility`] and [`session`]: fertility tables and the step-by-step
//!   credit bookkeeping that turns fertilities into per-step upper bounds.
//! - [`corpus`] and [`metrics`]: corpus/alignment readers and the REP, DROP
//!   and coverage-penalty diagnostics.
//! - [`oracles`]: brute-force and finite-difference checkers used to gate the
//!   solvers above.

pub mod corpus;
pub mod fertility;
pub mod io;
pub mod metrics;
pub mod oracles;
pub mod qk;
pub mod session;
pub mod transforms;

pub use transforms::{
    AttentionWeights, BoundVector, InputGrads, Projection, ProjectionCertificate, ScoreVector,
    Transform, TransformError,
};
