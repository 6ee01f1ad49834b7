//! Self-triggered sampling for nonlinear feedback loops.
//!
//! The crate computes inter-execution times for state-dependent homogeneous and
//! polynomial closed loops, checks the homogeneity and flow identities those
//! times rely on, and simulates periodic, event-triggered and self-triggered
//! implementations of a controller.

// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod poly;
pub mod casestudies;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod integrator;
pub mod homogeneity;
pub mod linbound;
pub mod polyhom;
pub mod simloop;
pub mod triggers;
pub mod util;
pub mod verify;

pub use error::{Error, Result};
