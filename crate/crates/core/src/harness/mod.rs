//! Training loop, evaluation protocol, run records and on-disk outputs.

pub mod checkpoint;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{rewards_to_go, DdpgAgent, PggdAgent, PggdSample, ReplayBuffer, Transition};
use crate::curriculum::{advance, CurriculumLevel, CurriculumSchedule, SpawnSpec};
use crate::env::{BlockEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::imitation::{aggrevated_update, roll_in, ControlledStep, Expert, MixedPolicy, ScriptedExpert, TrainedExpert};
use crate::policy::{ActMode, Policy};
use crate::rollout::{draw_scene, run_episode, run_episode_with, SceneSource};
use crate::task::{EnvKind, Status};
use crate::trace::Trace;

pub use checkpoint::{AgentSnapshot, Checkpoint};
pub use config::{AdvanceOn, Algorithm, CurriculumConfig, ExpertKind, ImitationConfig, TrainConfig};

pub const METRICS_HEADER: &str = "epoch,level,train_rate,test_rate,finals_rate,mean_return,critic_loss,actor_loss,beta,seconds";

/// Independent random stream `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 1;
const UPDATE_STREAM: u64 = 2;
const TRACE_STREAM: u64 = 3;
const EVAL_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Curriculum level trained on during this epoch.
    pub level: usize,
    pub train_rate: f64,
    pub test_rate: f64,
    pub finals_rate: f64,
    pub mean_return: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub supervision_loss: Option<f64>,
    pub beta: Option<f64>,
    pub episodes: usize,
    pub batches: usize,
    pub skipped_updates: usize,
    pub seconds: f64,
}

impl EpochStats {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.level,
            self.train_rate,
            self.test_rate,
            self.finals_rate,
            self.mean_return,
            opt(self.critic_loss),
            opt(self.actor_loss),
            opt(self.beta),
            self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs_run: usize,
    pub final_level: usize,
    pub best_finals_rate: f64,
    pub total_episodes: usize,
    pub total_batches: usize,
    /// Set when the run stopped on an error.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: TrainConfig,
    pub epochs: Vec<EpochStats>,
    pub summary: Option<RunSummary>,
    pub checkpoints: Vec<PathBuf>,
}

impl RunLog {
    /// The log with wall-clock timings zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunLog {
        let mut out = self.clone();
        out.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        out
    }

    fn summarize(&mut self, level: usize, aborted: Option<String>) {
        self.summary = Some(RunSummary {
            epochs_run: self.epochs.len(),
            final_level: level,
            best_finals_rate: self.epochs.iter().map(|e| e.finals_rate).fold(0.0, f64::max),
            total_episodes: self.epochs.iter().map(|e| e.episodes).sum(),
            total_batches: self.epochs.iter().map(|e| e.batches).sum(),
            aborted,
        });
    }
}

/// The agent being trained together with its replay memory.
#[derive(Debug, Clone)]
pub enum Learner {
    Ddpg { agent: DdpgAgent, memory: ReplayBuffer<Transition> },
    Pggd { agent: PggdAgent, memory: ReplayBuffer<PggdSample> },
    Mixed { mixed: Box<MixedPolicy>, memory: ReplayBuffer<ControlledStep> },
}

impl Learner {
    pub fn policy(&self) -> &dyn Policy {
        match self {
            Learner::Ddpg { agent, .. } => agent,
            Learner::Pggd { agent, .. } => agent,
            Learner::Mixed { mixed, .. } => &mixed.learner,
        }
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        match self {
            Learner::Ddpg { agent, .. } => AgentSnapshot::Ddpg(agent.clone()),
            Learner::Pggd { agent, .. } => AgentSnapshot::Pggd(agent.clone()),
            Learner::Mixed { mixed, .. } => AgentSnapshot::Pggd(mixed.learner.clone()),
        }
    }

    fn is_finite(&self) -> bool {
        let ok = |ps: &[f64]| ps.iter().all(|v| v.is_finite());
        match self {
            Learner::Ddpg { agent, .. } => ok(agent.actor.params()) && ok(agent.critic.params()),
            Learner::Pggd { agent, .. } => ok(agent.policy.params()),
            Learner::Mixed { mixed, .. } => ok(mixed.learner.policy.params()),
        }
    }
}

/// Loads a grey-blind expert from a two-block DDPG checkpoint.
pub fn load_trained_expert(path: &Path) -> Result<Expert> {
    let ck = Checkpoint::load(path)?;
    let AgentSnapshot::Ddpg(agent) = ck.agent else {
        return Err(Error::Checkpoint("expert checkpoint must hold a ddpg agent".into()));
    };
    if ck.env.kind.layout() != EnvKind::BlocksChoose.layout().without_grey() {
        return Err(Error::Checkpoint("expert was not trained on the grey-free layout".into()));
    }
    Ok(Expert::Trained(TrainedExpert::new(agent)))
}

/// Builds the learner a config asks for. `expert` overrides the configured one.
pub fn build_learner(config: &TrainConfig, expert: Option<Expert>) -> Result<Learner> {
    let mut rng = stream_rng(config.seed, INIT_STREAM);
    let dim = config.env.kind.obs_dim();
    Ok(match config.algorithm {
        Algorithm::Ddpg => Learner::Ddpg {
            agent: DdpgAgent::new(dim, config.ddpg.clone(), &mut rng)?,
            memory: ReplayBuffer::new(config.ddpg.buffer_capacity),
        },
        Algorithm::Pggd => Learner::Pggd {
            agent: PggdAgent::new(dim, config.pggd.clone(), &mut rng)?,
            memory: ReplayBuffer::new(config.pggd.buffer_capacity),
        },
        Algorithm::PggdAggrevated => {
            let im = &config.imitation;
            let expert = match expert {
                Some(e) => e,
                None => match im.expert {
                    ExpertKind::Scripted => Expert::Scripted(ScriptedExpert::from_env(&config.env)),
                    ExpertKind::Trained => load_trained_expert(
                        im.expert_checkpoint.as_deref().ok_or_else(|| Error::config("trained expert needs a checkpoint"))?,
                    )?,
                },
            };
            let learner = PggdAgent::new(dim, config.pggd.clone(), &mut rng)?;
            let mut mixed = MixedPolicy::new(learner, expert, im.beta0, im.t0, im.granularity)?;
            mixed.expert_critic_advantage = im.expert_critic_advantage;
            Learner::Mixed { mixed: Box::new(mixed), memory: ReplayBuffer::new(config.pggd.buffer_capacity) }
        }
    })
}

struct Worker {
    rng: ChaCha8Rng,
    env: Option<BlockEnv>,
}

/// What one training episode produced.
struct Collected {
    success: bool,
    total_reward: f64,
    transitions: Vec<Transition>,
    pg: Vec<PggdSample>,
    controlled: Vec<ControlledStep>,
}

fn collect_episode(learner: &Learner, cfg: &EnvConfig, spec: &SpawnSpec, level: CurriculumLevel, w: &mut Worker) -> Result<Collected> {
    let scene = draw_scene(SceneSource::Level(level), spec, &mut w.rng)?;
    let Worker { rng, env } = w;
    let env = match env {
        Some(e) => e,
        None => env.insert(BlockEnv::new(cfg.clone(), scene.clone())?),
    };
    match learner {
        Learner::Ddpg { agent, .. } => {
            let ep = run_episode(env, scene, agent, ActMode::Explore, rng)?;
            Ok(Collected {
                success: ep.success(),
                total_reward: ep.total_reward,
                transitions: ep.transitions,
                pg: Vec::new(),
                controlled: Vec::new(),
            })
        }
        Learner::Pggd { agent, .. } => {
            let mut drawn = Vec::new();
            let ep = run_episode_with(env, scene, rng, |obs, _, rng| {
                let (a, raw, lp) = agent.act(&obs.values, ActMode::Explore, rng)?;
                drawn.push((raw, lp));
                Ok(a)
            })?;
            let rewards: Vec<f64> = ep.transitions.iter().map(|t| t.reward).collect();
            let rtg = rewards_to_go(&rewards, agent.params.gamma);
            let pg = ep
                .transitions
                .iter()
                .zip(&drawn)
                .zip(rtg)
                .map(|((t, &(raw, lp)), ret)| PggdSample { obs: t.obs.clone(), action: raw, ret, behavior_logp: lp })
                .collect();
            Ok(Collected { success: ep.success(), total_reward: ep.total_reward, transitions: ep.transitions, pg, controlled: Vec::new() })
        }
        Learner::Mixed { mixed, .. } => {
            let steps = roll_in(mixed, env, scene, rng)?;
            let success = env.progress().status == Status::Success;
            let total_reward = steps.iter().map(|s| s.transition.reward).sum();
            Ok(Collected {
                success,
                total_reward,
                transitions: steps.iter().map(|s| s.transition.clone()).collect(),
                pg: Vec::new(),
                controlled: steps,
            })
        }
    }
}

/// Collects `rollouts` episodes on every worker; results come back in worker order.
fn collect(
    learner: &Learner,
    cfg: &EnvConfig,
    spec: &SpawnSpec,
    level: CurriculumLevel,
    workers: &mut [Worker],
    rollouts: usize,
) -> Result<Vec<Collected>> {
    let run = |w: &mut Worker| -> Result<Vec<Collected>> {
        (0..rollouts).map(|_| collect_episode(learner, cfg, spec, level, w)).collect()
    };
    let per_worker: Vec<Result<Vec<Collected>>> =
        if workers.len() > 1 { workers.par_iter_mut().map(run).collect() } else { workers.iter_mut().map(run).collect() };
    let mut out = Vec::new();
    for r in per_worker {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Default)]
struct LossAccumulator {
    critic: Vec<f64>,
    actor: Vec<f64>,
    supervision: Vec<f64>,
    skipped: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64)
}

fn update_once(learner: &mut Learner, config: &TrainConfig, rng: &mut ChaCha8Rng, acc: &mut LossAccumulator) -> Result<()> {
    match learner {
        Learner::Ddpg { agent, memory } => {
            let batch = memory.sample(agent.params.batch_size, rng)?;
            let s = agent.update(&batch)?;
            acc.critic.push(s.critic_loss);
            acc.actor.push(-s.actor_objective);
            acc.skipped += s.skipped as usize;
        }
        Learner::Pggd { agent, memory } => {
            let batch = memory.sample(agent.params.batch_size, rng)?;
            let g = agent.pg_gradient(&batch)?;
            if !agent.apply(&g.params)? {
                acc.skipped += 1;
            }
            acc.actor.push(g.loss);
        }
        Learner::Mixed { mixed, memory } => {
            let batch = memory.sample(mixed.learner.params.batch_size, rng)?;
            let u = aggrevated_update(mixed, &batch, &config.env.kind.layout())?;
            acc.actor.push(u.pg_loss);
            acc.supervision.push(u.supervision_loss);
            acc.skipped += (!u.applied) as usize;
        }
    }
    Ok(())
}

fn store(learner: &mut Learner, episodes: Vec<Collected>) -> Result<()> {
    let obs: Vec<Vec<f64>> = episodes.iter().flat_map(|e| e.transitions.iter().map(|t| t.obs.clone())).collect();
    match learner {
        Learner::Ddpg { agent, memory } => {
            agent.normalizer.update(&obs)?;
            episodes.into_iter().flat_map(|e| e.transitions).for_each(|t| memory.push(t));
        }
        Learner::Pggd { agent, memory } => {
            agent.normalizer.update(&obs)?;
            episodes.into_iter().flat_map(|e| e.pg).for_each(|s| memory.push(s));
        }
        Learner::Mixed { mixed, memory } => {
            mixed.learner.normalizer.update(&obs)?;
            episodes.into_iter().flat_map(|e| e.controlled).for_each(|s| memory.push(s));
        }
    }
    Ok(())
}

/// Success rate of `policy` over `n` deterministic episodes.
pub fn evaluate(cfg: &EnvConfig, policy: &dyn Policy, source: SceneSource, n: usize, rng: &mut dyn RngCore) -> Result<f64> {
    crate::rollout::success_rate(cfg, source, policy, ActMode::Deterministic, n, rng)
}

/// Success rate on challenge scenes drawn with the schedule's widest spread.
pub fn challenge_eval(cfg: &EnvConfig, schedule: &CurriculumSchedule, policy: &dyn Policy, n: usize, rng: &mut dyn RngCore) -> Result<f64> {
    evaluate(cfg, policy, SceneSource::Challenge(schedule.last()), n, rng)
}

/// Records one deterministic episode at `level` as a trace.
pub fn record_trace(cfg: &EnvConfig, policy: &dyn Policy, level: CurriculumLevel, rng: &mut dyn RngCore) -> Result<Trace> {
    let spec = SpawnSpec::from_env(cfg);
    let scene = draw_scene(SceneSource::Level(level), &spec, rng)?;
    let mut trace = Trace::new(cfg.physics, scene.clone());
    let mut env = BlockEnv::new(cfg.clone(), scene.clone())?;
    let mut obs = env.reset(scene)?;
    while !env.is_done() {
        let a = policy.act(&obs, env.state(), ActMode::Deterministic, rng)?;
        let out = env.step(&a)?;
        trace.record(a, env.state());
        obs = out.obs;
    }
    Ok(trace)
}

/// Whether training should go on after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub learner: Learner,
    pub level: CurriculumLevel,
}

pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_with(config, out_dir, None, |_| Control::Continue)
}

/// Runs the training loop. `on_epoch` sees every epoch's stats and may stop
/// the run early.
pub fn train_with(
    config: &TrainConfig,
    out_dir: Option<&Path>,
    expert: Option<Expert>,
    mut on_epoch: impl FnMut(&EpochStats) -> Control,
) -> Result<TrainOutcome> {
    config.validate()?;
    let schedule = config.curriculum.schedule()?;
    let mut learner = build_learner(config, expert)?;
    let mut log = RunLog { config: config.clone(), epochs: Vec::new(), summary: None, checkpoints: Vec::new() };
    let mut level = schedule.first();
    let mut metrics = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
            writeln!(f, "{METRICS_HEADER}")?;
            Some(f)
        }
        None => None,
    };

    let result = run_epochs(config, &schedule, &mut learner, &mut log, &mut level, out_dir, &mut metrics, &mut on_epoch);
    let aborted = result.as_ref().err().map(|e| e.to_string());
    log.summarize(level.index, aborted);
    if let Some(dir) = out_dir {
        if result.is_ok() {
            let path = dir.join("final.ckpt");
            checkpoint_of(config, &learner, log.epochs.len(), level).save(&path)?;
            log.checkpoints.push(path);
            let trace = record_trace(&config.env, learner.policy(), level, &mut stream_rng(config.seed, TRACE_STREAM))?;
            trace.write(std::io::BufWriter::new(std::fs::File::create(dir.join("trace.ndjson"))?))?;
        }
        std::fs::write(dir.join("runlog.json"), serde_json::to_vec_pretty(&log)?)?;
    }
    result?;
    Ok(TrainOutcome { log, learner, level })
}

fn checkpoint_of(config: &TrainConfig, learner: &Learner, epoch: usize, level: CurriculumLevel) -> Checkpoint {
    Checkpoint {
        env: config.env.clone(),
        curriculum: config.curriculum.clone(),
        epoch,
        level: level.index,
        agent: learner.snapshot(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    config: &TrainConfig,
    schedule: &CurriculumSchedule,
    learner: &mut Learner,
    log: &mut RunLog,
    level: &mut CurriculumLevel,
    out_dir: Option<&Path>,
    metrics: &mut Option<std::fs::File>,
    on_epoch: &mut impl FnMut(&EpochStats) -> Control,
) -> Result<()> {
    let spec = SpawnSpec::from_env(&config.env);
    let mut workers: Vec<Worker> =
        (0..config.workers).map(|id| Worker { rng: ChaCha8Rng::seed_from_u64(config.seed + id as u64), env: None }).collect();
    let mut update_rng = stream_rng(config.seed, UPDATE_STREAM);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::RunFailure(format!("cannot start worker pool: {e}")))?;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        if let Learner::Mixed { mixed, .. } = learner {
            mixed.epoch = epoch as u64;
        }
        let beta = match learner {
            Learner::Mixed { mixed, .. } => Some(mixed.beta()),
            _ => None,
        };
        let (mut episodes, mut successes, mut batches) = (0usize, 0usize, 0usize);
        let mut returns = Vec::new();
        let mut acc = LossAccumulator::default();
        for _cycle in 0..config.cycles {
            let collected = pool.install(|| collect(learner, &config.env, &spec, *level, &mut workers, config.rollouts))?;
            episodes += collected.len();
            successes += collected.iter().filter(|c| c.success).count();
            returns.extend(collected.iter().map(|c| c.total_reward));
            store(learner, collected)?;
            for _ in 0..config.batches {
                update_once(learner, config, &mut update_rng, &mut acc)?;
                batches += 1;
            }
        }
        if !learner.is_finite() {
            return Err(Error::RunFailure(format!("parameters became non-finite in epoch {epoch}")));
        }

        let mut eval_rng = stream_rng(config.seed, EVAL_STREAM_BASE + epoch as u64);
        let policy = learner.policy();
        let test_rate = evaluate(&config.env, policy, SceneSource::Level(*level), config.test_episodes, &mut eval_rng)?;
        let finals_rate = evaluate(&config.env, policy, SceneSource::Level(schedule.last()), config.finals_episodes, &mut eval_rng)?;
        let train_rate = if episodes > 0 { successes as f64 / episodes as f64 } else { 0.0 };
        let stats = EpochStats {
            epoch,
            level: level.index,
            train_rate,
            test_rate,
            finals_rate,
            mean_return: mean(&returns).unwrap_or(0.0),
            critic_loss: mean(&acc.critic),
            actor_loss: mean(&acc.actor),
            supervision_loss: mean(&acc.supervision),
            beta,
            episodes,
            batches,
            skipped_updates: acc.skipped,
            seconds: start.elapsed().as_secs_f64(),
        };
        let gate = match config.curriculum.advance_on {
            AdvanceOn::Test => test_rate,
            AdvanceOn::Train => train_rate,
        };
        *level = advance(*level, schedule, gate);

        if let Some(f) = metrics.as_mut() {
            writeln!(f, "{}", stats.csv_row())?;
            f.flush()?;
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                let path = dir.join(format!("epoch-{:04}.ckpt", epoch + 1));
                checkpoint_of(config, learner, epoch + 1, *level).save(&path)?;
                log.checkpoints.push(path);
            }
        }
        let control = on_epoch(&stats);
        log.epochs.push(stats);
        if control == Control::Stop {
            break;
        }
    }
    Ok(())
}
