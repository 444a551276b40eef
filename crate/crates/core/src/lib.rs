//! Diverse teammate generation for ad hoc teamwork.
//!
//! A population of teammate policies is trained jointly with one best
//! response per teammate to maximise the trace of their cross-play return
//! matrix plus the determinant of an RBF kernel over its rows. Everything is
//! evaluated exactly on small tabular two-player games, so gradients come
//! from dynamic programming rather than sampled estimates.

// Dense matrix code indexes several arrays with the same counters.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod diversity;
pub mod error;
pub mod eval;
pub mod game;
pub mod harness;
pub mod optim;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
