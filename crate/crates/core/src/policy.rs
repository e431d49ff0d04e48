use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::physics::{Action, WorldState};
use crate::task::Observation;

/// Whether a policy should explore.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    /// Exploration noise or sampled actions.
    Explore,
    /// Noise-free actions (the Gaussian mean for stochastic policies).
    Deterministic,
}

/// Anything that can drive the effector. Learned policies read the
/// observation; scripted ones may use the world state directly.
pub trait Policy: Sync {
    fn act(&self, obs: &Observation, state: &WorldState, mode: ActMode, rng: &mut dyn RngCore) -> Result<Action>;
}

/// Uniformly random actions; the negative control.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _: &Observation, _: &WorldState, _: ActMode, rng: &mut dyn RngCore) -> Result<Action> {
        let mut a = [0.0; 4];
        for v in &mut a {
            *v = rng.gen_range(-1.0..=1.0);
        }
        Ok(Action(a))
    }
}

/// Never moves.
#[derive(Debug, Clone, Copy, Default)]
pub struct StillPolicy;

impl Policy for StillPolicy {
    fn act(&self, _: &Observation, _: &WorldState, _: ActMode, _: &mut dyn RngCore) -> Result<Action> {
        Ok(Action::default())
    }
}
