//! Simulation and verification tools for subcritical branching processes
//! with immigration in a random environment.
//!
//! The chain is `X_{n+1} = theta_{n+1} o X_n + B_{n+1}`, where, given the
//! environment `xi_{n+1}`, `theta o x` sums `x` iid offspring counts and
//! `B` is an immigration count. When the immigration tail is regularly
//! varying with index `-kappa` and `E m(xi)^kappa < 1`, the stationary tail
//! is `P(B > x) / (1 - E m(xi)^kappa)`; the samplers and statistics here
//! measure that and the supporting random-sum results.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dump;
pub mod env_model;
pub mod error;
pub mod family;
pub mod oracle;
pub mod parallel;
pub mod quad;
pub mod rng;
pub mod simulator;
pub mod sre;
pub mod tailstats;

pub use env_model::{Atom, ConditionReport, EnvDraw, EnvSpec, ModelSpec};
pub use error::{Error, Result};
pub use family::{ImmigrationFamily, OffspringFamily};
pub use rng::RngState;
