//! Q-gradient descent: gradient descent whose learning rate is controlled by
//! a deep Q-network trained with experience replay, plus the line-search
//! baselines it is compared against.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod descent;
pub mod dqn;
pub mod error;
pub mod features;
pub mod harness;
pub mod nn;
pub mod objective;
pub mod replay;
pub mod rewards;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
