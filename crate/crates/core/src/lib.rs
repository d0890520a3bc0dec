//! Decentralized stochastic bilevel optimization over a network of agents.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod error;
pub mod hypergrad;
pub mod metrics;
pub mod numerics;
pub mod problems;
pub mod topology;

pub use error::{Error, Result};
