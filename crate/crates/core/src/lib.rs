//! Semiparametric efficiency bounds and efficient scores for models made of
//! several conditional moment restrictions `E[g_j(Z, θ) | X^(j)] = 0` whose
//! conditioning variables differ from block to block.
//!
//! Everything here is exact on finite-support laws: conditional expectations
//! are probability-weighted sums over the support, so the information
//! sequence, the backfitting recursion, the linear-solve oracle and the
//! closed forms can be checked against each other to rounding precision.
//!
//! The crate is `no_std` and only needs `alloc`. IO, configuration and the
//! command line live in the companion `condmom` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dgp;
pub mod efficient_score;
pub mod error;
pub mod estimation;
pub mod infobound;
pub mod instruments;
pub mod missing_data;
pub mod model;
pub mod numerics;
pub mod probability;

pub use error::{Error, Result};
pub use numerics::Matrix;
