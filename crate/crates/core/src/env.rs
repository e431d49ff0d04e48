//! Episode wrapper around the physics world and the task rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{detect_contacts, step_world, Action, Contact, PhysicsParams, Table, Vec3, WorldState};
use crate::task::{compute_reward, encode_observation, update_progress, EnvKind, Observation, Status, TaskProgress};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub physics: PhysicsParams,
    pub table: Table,
    pub horizon: u32,
    pub effector_radius: f64,
    pub block_radius: f64,
    /// Effector start position, identical for every episode.
    pub arm_start: Vec3,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        EnvConfig {
            kind,
            physics: PhysicsParams::default(),
            table: Table::default(),
            horizon: 50,
            effector_radius: 0.01,
            block_radius: 0.025,
            arm_start: Vec3::ZERO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        if !(self.effector_radius > 0.0 && self.block_radius > 0.0) {
            return Err(Error::config("radii must be positive"));
        }
        if !(self.table.half_x > 0.0 && self.table.half_y > 0.0) {
            return Err(Error::config("table half-extents must be positive"));
        }
        if !self.physics.workspace(&self.table).contains(self.arm_start) {
            return Err(Error::config("arm start lies outside the workspace"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    /// Episode is over (terminal status or horizon reached).
    pub done: bool,
    /// Episode ended by success or failure; bootstrapping stops here.
    pub terminal: bool,
    pub status: Status,
    pub contacts: Vec<Contact>,
}

#[derive(Debug, Clone)]
pub struct BlockEnv {
    config: EnvConfig,
    state: WorldState,
    progress: TaskProgress,
}

impl BlockEnv {
    pub fn new(config: EnvConfig, scene: WorldState) -> Result<Self> {
        config.validate()?;
        let mut env = BlockEnv { progress: TaskProgress::for_state(&scene), state: scene.clone(), config };
        env.reset(scene)?;
        Ok(env)
    }

    /// Starts a new episode from `scene`. A scene that already satisfies the
    /// task starts out terminal.
    pub fn reset(&mut self, scene: WorldState) -> Result<Observation> {
        scene.validate()?;
        let fresh = TaskProgress::for_state(&scene);
        self.progress = update_progress(&fresh, &scene, self.config.physics.contact_margin)?;
        self.state = scene;
        self.observation()
    }

    pub fn observation(&self) -> Result<Observation> {
        encode_observation(&self.state, self.config.kind)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn progress(&self) -> &TaskProgress {
        &self.progress
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.progress.status.is_terminal() || self.state.step_count >= self.config.horizon
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::domain("step called on a finished episode"));
        }
        let next = step_world(&self.state, action, &self.config.physics)?;
        let margin = self.config.physics.contact_margin;
        let progress = update_progress(&self.progress, &next, margin)?;
        let reward = compute_reward(&self.progress, &progress);
        let contacts = detect_contacts(&next, margin);
        self.state = next;
        self.progress = progress;
        let terminal = self.progress.status.is_terminal();
        Ok(StepOutcome {
            obs: self.observation()?,
            reward,
            done: self.is_done(),
            terminal,
            status: self.progress.status,
            contacts,
        })
    }
}
