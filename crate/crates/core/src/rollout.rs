//! Running whole episodes and measuring success rates.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::agents::Transition;
use crate::curriculum::{challenge_scene, sample_scene, CurriculumLevel, SpawnSpec};
use crate::env::{BlockEnv, EnvConfig};
use crate::error::Result;
use crate::physics::{Action, WorldState};
use crate::policy::{ActMode, Policy};
use crate::task::Status;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub status: Status,
    pub total_reward: f64,
}

impl Episode {
    pub fn success(&self) -> bool {
        self.status == Status::Success
    }
}

/// Plays one episode from `scene`.
pub fn run_episode(
    env: &mut BlockEnv,
    scene: WorldState,
    policy: &dyn Policy,
    mode: ActMode,
    rng: &mut dyn RngCore,
) -> Result<Episode> {
    run_episode_with(env, scene, rng, |obs, state, rng| policy.act(obs, state, mode, rng))
}

/// Plays one episode choosing each action with `choose`.
pub fn run_episode_with(
    env: &mut BlockEnv,
    scene: WorldState,
    rng: &mut dyn RngCore,
    mut choose: impl FnMut(&crate::task::Observation, &WorldState, &mut dyn RngCore) -> Result<Action>,
) -> Result<Episode> {
    let mut obs = env.reset(scene)?;
    let mut transitions = Vec::new();
    let mut total_reward = 0.0;
    while !env.is_done() {
        let action = choose(&obs, env.state(), rng)?;
        let out = env.step(&action)?;
        total_reward += out.reward;
        transitions.push(Transition {
            obs: obs.values,
            action,
            reward: out.reward,
            next_obs: out.obs.values.clone(),
            done: out.terminal,
        });
        obs = out.obs;
    }
    Ok(Episode { transitions, status: env.progress().status, total_reward })
}

/// Which start-state distribution an evaluation draws from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneSource {
    Level(CurriculumLevel),
    /// Challenge scenes with colored blocks spread as in the given level.
    Challenge(CurriculumLevel),
}

pub fn draw_scene(source: SceneSource, spec: &SpawnSpec, rng: &mut dyn RngCore) -> Result<WorldState> {
    match source {
        SceneSource::Level(level) => sample_scene(&level, spec, rng),
        SceneSource::Challenge(level) => challenge_scene(spec, &level, rng),
    }
}

/// Fraction of `n` episodes that end in success.
pub fn success_rate(
    cfg: &EnvConfig,
    source: SceneSource,
    policy: &dyn Policy,
    mode: ActMode,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let spec = SpawnSpec::from_env(cfg);
    let mut env: Option<BlockEnv> = None;
    let mut wins = 0usize;
    for _ in 0..n {
        let scene = draw_scene(source, &spec, rng)?;
        let env = match env.as_mut() {
            Some(e) => e,
            None => env.insert(BlockEnv::new(cfg.clone(), scene.clone())?),
        };
        if run_episode(env, scene, policy, mode, rng)?.success() {
            wins += 1;
        }
    }
    Ok(wins as f64 / n.max(1) as f64)
}
