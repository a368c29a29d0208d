//! Distributionally safe reinforcement learning.
//!
//! The pipeline has three differentiable stages:
//!
//! * [`cbf`] turns a barrier function into affine-in-control safety rows whose
//!   offsets depend affinely on an additive dynamics perturbation `omega`,
//! * [`diffqp`] solves the resulting min-norm safety QP and differentiates its
//!   solution through the KKT conditions,
//! * [`adversary`] chains reward gradients through a recorded rollout and the QP
//!   sensitivities, then moves `omega` by projected gradient ascent inside a
//!   Euclidean ambiguity ball.
//!
//! [`ddpg`] wires these into an actor-critic learner and [`envs`] provides the
//! three control-affine test systems.

pub mod adversary;
pub mod cbf;
pub mod config;
pub mod ddpg;
pub mod diffqp;
pub mod envs;
pub mod error;
pub mod net;

pub use error::{DsrlError, Result};

/// Version string stamped into every output directory.
pub const VERSION: &str = concat!("dsrl ", env!("CARGO_PKG_VERSION"));
