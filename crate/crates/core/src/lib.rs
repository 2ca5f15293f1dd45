//! Low-switching-cost reinforcement learning for finite-horizon episodic MDPs.
//!
//! Two learners share one policy-update rule: the deployed policy is
//! recomputed only when the determinant of some layer's empirical covariance
//! has at least doubled since the last update.
//!
//! - [`eleanor`]: globally optimistic least-squares value iteration for
//!   linear Bellman-complete MDPs with bounded inherent Bellman error.
//! - [`glm_lsvi`]: LSVI-UCB with generalized linear Q-functions.
//!
//! [`envs`] provides finite environments with exact value oracles,
//! [`switching`] the doubling controller, [`linalg`] the covariance
//! machinery, and [`harness`] experiment configuration, CSV output and the
//! CLI plumbing.

pub mod eleanor;
pub mod envs;
pub mod error;
pub mod glm_lsvi;
pub mod harness;
pub mod history;
pub mod linalg;
pub mod rng;
pub mod switching;

pub use error::{Error, Result};
