//! Robust constrained MDPs: L1 ambiguity sets, robust dynamic programming,
//! a robust constrained policy gradient (RCPG) saddle-point learner, a robust
//! actor-critic variant and Lyapunov-based shaping and stability tools.

pub mod actor_critic;
pub mod ambiguity;
pub mod envs;
pub mod error;
pub mod io;
pub mod lyapunov;
pub mod model;
pub mod policy;
pub mod rcpg;
pub mod robust_dp;

pub use ambiguity::{worst_case_response, worst_case_value, L1Ball};
pub use error::{Error, Result};
pub use model::{Horizon, Rcmdp, Signal, TransitionDataset, TransitionRecord};
pub use policy::{PolicyTable, SoftmaxPolicy, Trajectory};
pub use robust_dp::ValueFunction;
