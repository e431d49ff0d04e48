//! Color-rule block pushing puzzles and the learners that solve them.
//!
//! A planar world with an actuated effector and colored blocks, the task
//! rules and observation encoding, a start-state curriculum, a small neural
//! network core, DDPG and Gaussian policy-gradient learners, expert mixing,
//! and a training/evaluation harness.

pub mod agents;
pub mod curriculum;
pub mod env;
pub mod imitation;
pub mod error;
pub mod harness;
pub mod neural;
pub mod physics;
pub mod policy;
pub mod rollout;
pub mod task;
pub mod trace;

pub use error::{Error, Result};
