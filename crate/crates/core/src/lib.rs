//! Learning maximal long-term safety probabilities of stochastic control
//! systems with a physics-informed deep Q-network.
//!
//! The safety probability of a discretized SDE over an outlook horizon is the
//! value of an additive-reward absorbing-state MDP ([`mdp`]). A multi-head tanh
//! network ([`net`]) is trained on that MDP with the usual temporal-difference
//! loss plus a PDE residual and boundary-condition penalty ([`trainer`]), and
//! checked against Monte-Carlo and analytic oracles ([`eval`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation, and the
// numeric kernels index several parallel buffers in one loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod harness;
pub mod mdp;
pub mod net;
pub mod rng;
pub mod sde;
pub mod trainer;

pub use error::{Error, Result};
