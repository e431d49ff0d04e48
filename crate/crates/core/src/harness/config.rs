//! Training configuration and its flat `key = value` file format.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::{DdpgParams, PggdParams};
use crate::curriculum::CurriculumSchedule;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::imitation::Granularity;
use crate::task::EnvKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    Ddpg,
    Pggd,
    PggdAggrevated,
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpg" => Ok(Algorithm::Ddpg),
            "pggd" => Ok(Algorithm::Pggd),
            "pggd-aggrevated" => Ok(Algorithm::PggdAggrevated),
            _ => Err(Error::config(format!("unknown algorithm '{s}' (ddpg|pggd|pggd-aggrevated)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Pggd => "pggd",
            Algorithm::PggdAggrevated => "pggd-aggrevated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpertKind {
    Scripted,
    Trained,
}

impl FromStr for ExpertKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scripted" => Ok(ExpertKind::Scripted),
            "trained" => Ok(ExpertKind::Trained),
            _ => Err(Error::config(format!("unknown expert kind '{s}' (scripted|trained)"))),
        }
    }
}

/// Which success rate moves the curriculum forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvanceOn {
    Train,
    Test,
}

impl FromStr for AdvanceOn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(AdvanceOn::Train),
            "test" => Ok(AdvanceOn::Test),
            _ => Err(Error::config(format!("unknown advance rule '{s}' (train|test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub levels: usize,
    pub radius: (f64, f64),
    pub min_radius: (f64, f64),
    pub threshold: f64,
    pub advance_on: AdvanceOn,
}

impl CurriculumConfig {
    pub fn default_for(env: &EnvConfig) -> Self {
        let d = CurriculumSchedule::default_for(&env.table);
        CurriculumConfig {
            levels: d.levels.len(),
            radius: (d.first().radius, d.last().radius),
            min_radius: (d.first().min_radius, d.last().min_radius),
            threshold: d.threshold,
            advance_on: AdvanceOn::Test,
        }
    }

    pub fn schedule(&self) -> Result<CurriculumSchedule> {
        CurriculumSchedule::linear(self.levels, self.radius, self.min_radius, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitationConfig {
    pub beta0: f64,
    pub t0: f64,
    pub granularity: Granularity,
    pub expert: ExpertKind,
    pub expert_checkpoint: Option<PathBuf>,
    pub expert_critic_advantage: bool,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        ImitationConfig {
            beta0: 0.0,
            t0: 50.0,
            granularity: Granularity::Episode,
            expert: ExpertKind::Scripted,
            expert_checkpoint: None,
            expert_critic_advantage: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub cycles: usize,
    pub batches: usize,
    pub rollouts: usize,
    pub workers: usize,
    pub seed: u64,
    pub curriculum: CurriculumConfig,
    pub ddpg: DdpgParams,
    pub pggd: PggdParams,
    pub imitation: ImitationConfig,
    pub test_episodes: usize,
    pub finals_episodes: usize,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(kind: EnvKind, algorithm: Algorithm) -> Self {
        let env = EnvConfig::new(kind);
        TrainConfig {
            curriculum: CurriculumConfig::default_for(&env),
            env,
            algorithm,
            epochs: 200,
            cycles: 50,
            batches: 40,
            rollouts: 2,
            workers: 1,
            seed: 0,
            ddpg: DdpgParams::default(),
            pggd: PggdParams::default(),
            imitation: ImitationConfig::default(),
            test_episodes: 20,
            finals_episodes: 20,
            checkpoint_every: 0,
        }
    }

    pub fn batch_size(&self) -> usize {
        match self.algorithm {
            Algorithm::Ddpg => self.ddpg.batch_size,
            _ => self.pggd.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.cycles == 0 || self.rollouts == 0 || self.workers == 0 || self.test_episodes == 0 || self.finals_episodes == 0 {
            return Err(Error::config("cycles, rollouts, workers and evaluation episode counts must be positive"));
        }
        self.ddpg.validate()?;
        self.pggd.validate()?;
        let schedule = self.curriculum.schedule()?;
        schedule.validate_coverage(&self.env.table, self.env.arm_start)?;
        let im = &self.imitation;
        if !(0.0..=1.0).contains(&im.beta0) || !(im.t0 > 0.0) {
            return Err(Error::config("imitation needs beta0 in [0,1] and t0 > 0"));
        }
        if self.algorithm == Algorithm::PggdAggrevated {
            if self.env.kind != EnvKind::BlocksChoose {
                return Err(Error::config("pggd-aggrevated runs on blocks-choose"));
            }
            if im.expert == ExpertKind::Trained && im.expert_checkpoint.is_none() {
                return Err(Error::config("a trained expert needs imitation.expert_checkpoint"));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::config(format!("bad value '{v}' for {key}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(Error::config(format!("bad value '{v}' for {key} (on|off)"))),
            }
        }
        let v = value;
        match key {
            "env.kind" => self.env.kind = v.parse()?,
            "env.horizon" => self.env.horizon = num(key, v)?,
            "env.effector_radius" => self.env.effector_radius = num(key, v)?,
            "env.block_radius" => self.env.block_radius = num(key, v)?,
            "env.arm_x" => self.env.arm_start.x = num(key, v)?,
            "env.arm_y" => self.env.arm_start.y = num(key, v)?,
            "table.half_x" => self.env.table.half_x = num(key, v)?,
            "table.half_y" => self.env.table.half_y = num(key, v)?,
            "physics.dt" => self.env.physics.dt = num(key, v)?,
            "physics.v_max" => self.env.physics.v_max = num(key, v)?,
            "physics.block_damping" => self.env.physics.block_damping = num(key, v)?,
            "physics.contact_margin" => self.env.physics.contact_margin = num(key, v)?,
            "physics.workspace_margin" => self.env.physics.workspace_margin = num(key, v)?,
            "physics.lift_height" => self.env.physics.lift_height = num(key, v)?,
            "physics.max_substep" => self.env.physics.max_substep = num(key, v)?,
            "train.algorithm" => self.algorithm = v.parse()?,
            "train.epochs" => self.epochs = num(key, v)?,
            "train.cycles" => self.cycles = num(key, v)?,
            "train.batches" => self.batches = num(key, v)?,
            "train.rollouts" => self.rollouts = num(key, v)?,
            "train.workers" => self.workers = num(key, v)?,
            "train.seed" => self.seed = num(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "eval.test_episodes" => self.test_episodes = num(key, v)?,
            "eval.finals_episodes" => self.finals_episodes = num(key, v)?,
            "curriculum.levels" => self.curriculum.levels = num(key, v)?,
            "curriculum.radius_start" => self.curriculum.radius.0 = num(key, v)?,
            "curriculum.radius_end" => self.curriculum.radius.1 = num(key, v)?,
            "curriculum.min_radius_start" => self.curriculum.min_radius.0 = num(key, v)?,
            "curriculum.min_radius_end" => self.curriculum.min_radius.1 = num(key, v)?,
            "curriculum.h" => self.curriculum.threshold = num(key, v)?,
            "curriculum.advance_on" => self.curriculum.advance_on = v.parse()?,
            "agent.gamma" => {
                self.ddpg.gamma = num(key, v)?;
                self.pggd.gamma = self.ddpg.gamma;
            }
            "agent.tau" => self.ddpg.tau = num(key, v)?,
            "agent.noise" => self.ddpg.noise_scale = num(key, v)?,
            "agent.random_eps" => self.ddpg.random_eps = num(key, v)?,
            "agent.actor_lr" => self.ddpg.actor_lr = num(key, v)?,
            "agent.critic_lr" => self.ddpg.critic_lr = num(key, v)?,
            "agent.action_l2" => self.ddpg.action_l2 = num(key, v)?,
            "agent.lr" => self.pggd.lr = num(key, v)?,
            "agent.iw_clip" => self.pggd.iw_clip = num(key, v)?,
            "agent.hidden" => {
                self.ddpg.hidden = num(key, v)?;
                self.pggd.hidden = self.ddpg.hidden;
            }
            "agent.layers" => {
                self.ddpg.layers = num(key, v)?;
                self.pggd.layers = self.ddpg.layers;
            }
            "agent.batch" => {
                self.ddpg.batch_size = num(key, v)?;
                self.pggd.batch_size = self.ddpg.batch_size;
            }
            "agent.buffer" => {
                self.ddpg.buffer_capacity = num(key, v)?;
                self.pggd.buffer_capacity = self.ddpg.buffer_capacity;
            }
            "imitation.beta0" => self.imitation.beta0 = num(key, v)?,
            "imitation.t0" => self.imitation.t0 = num(key, v)?,
            "imitation.granularity" => self.imitation.granularity = v.parse()?,
            "imitation.expert" => self.imitation.expert = v.parse()?,
            "imitation.expert_checkpoint" => self.imitation.expert_checkpoint = Some(PathBuf::from(v)),
            "imitation.expert_critic_advantage" => self.imitation.expert_critic_advantage = flag(key, v)?,
            _ => return Err(Error::config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies every line of a config file in order. Blank lines and `#`
    /// comments are skipped. Curriculum radii are not rescaled when the table
    /// size changes; set them alongside it.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in &pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(kind: EnvKind, algorithm: Algorithm, text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::new(kind, algorithm);
        cfg.apply_text(text)?;
        Ok(cfg)
    }
}
