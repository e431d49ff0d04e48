//! The two learners and their experience storage.

pub mod ddpg;
pub mod pggd;
pub mod replay;

pub use ddpg::{soft_update, DdpgAgent, DdpgParams, UpdateStats};
pub use pggd::{rewards_to_go, PgGradient, PggdAgent, PggdParams, PggdSample};
pub use replay::{ReplayBuffer, Transition};
