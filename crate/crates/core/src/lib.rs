//! Learning reusable options from a handful of demonstration trajectories.
//!
//! The crate provides tabular MDPs and a four-rooms gridworld, neural option
//! models, an exactly differentiable objective scoring an option set by how
//! well it explains the demonstrations with few decisions, the incremental
//! option-learning loop, tabular (SMDP) Q-learning agents, and an experiment
//! pipeline.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod autodiff;
pub mod ddouble;
pub mod error;
pub mod gridworld;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod network;
pub mod objective;
pub mod optim;
pub mod options;
pub mod seed;

pub use error::{Error, Result};
