//! Functional mirror ascent policy gradient (FMA-PG) on finite MDPs.
//!
//! The crate is organised by concern:
//!
//! * [`mdp`]: exact evaluation, occupancies and analytic gradients for tabular MDPs.
//! * [`mirror`]: mirror maps and their state-weighted Bregman divergences.
//! * [`fma`]: surrogate objectives, closed-form updates, step sizes, the inner/outer loop
//!   and lower-bound verification.
//! * [`bandits`]: Bernoulli bandits with EXP3 variants and the softmax EXP3 update.
//! * [`envs`]: the Cliff gridworld and seeded random MDPs.
//! * [`harness`]: experiment configuration, orchestration, result emission and the
//!   invariant verification suite.
//!
//! Independent runs are spread across threads through [`exec::Exec`] when the `parallel`
//! feature is enabled; every run owns its own RNG stream so results never depend on the
//! thread count.

pub mod bandits;
pub mod envs;
pub mod error;
pub mod exec;
pub mod fma;
pub mod harness;
pub mod mdp;
pub mod mirror;
pub mod rng;

pub use error::{Error, Result};
pub use mdp::{DirectPolicy, EvaluationBundle, SoftmaxPolicy, TabularMdp};
pub use mirror::{MirrorKind, MirrorMap, StateWeights};

/// Row-sum tolerance for probability tables.
pub const SIMPLEX_TOL: f64 = 1e-12;
