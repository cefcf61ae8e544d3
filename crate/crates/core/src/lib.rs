//! Stochastic quasi-Newton optimization with SPIDER variance reduction.
//!
//! The crate provides damped limited-memory BFGS directions
//! ([`sdlbfgs`]), the SPIDER gradient estimator ([`spider`]), momentum
//! schedules ([`momentum`]) and the solver family built from them
//! ([`solvers`]), together with the objectives and data plumbing they run on.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod data;
pub mod error;
pub mod linalg;
pub mod momentum;
pub mod objectives;
pub mod rng;
pub mod sdlbfgs;
pub mod solvers;
pub mod spider;

pub use error::{Error, Result};
pub use linalg::{DenseVector, SparseExample};
