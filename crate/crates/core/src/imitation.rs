//! Expert mixing: an annealed probability of handing control to a grey-blind
//! expert, and an update that blends behavior cloning with policy gradient.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::agents::{rewards_to_go, DdpgAgent, PggdAgent, PggdSample, Transition};
use crate::env::{BlockEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::neural::Matrix;
use crate::physics::{Action, Vec3, WorldState};
use crate::policy::{ActMode, Policy};
use crate::task::{decode_observation, filter_grey, Color, Observation};

/// Probability that the expert controls an episode at `epoch`.
pub fn beta(epoch: u64, beta0: f64, t0: f64) -> f64 {
    beta0 + (1.0 - beta0) * (-(epoch as f64) / t0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Controller {
    Expert,
    Learner,
}

/// How often the controller is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    Episode,
    Step,
}

impl std::str::FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "episode" => Ok(Granularity::Episode),
            "step" => Ok(Granularity::Step),
            _ => Err(Error::config(format!("unknown mixing granularity '{s}' (episode|step)"))),
        }
    }
}

/// Geometric pushing controller. It reads only the blue and green blocks and
/// the effector, so the grey block is invisible to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedExpert {
    pub effector_radius: f64,
    pub block_radius: f64,
    pub contact_margin: f64,
    /// Effector travel for a unit action component in one step.
    pub step_length: f64,
    pub table_z: f64,
    pub lift_height: f64,
}

/// Gap kept between the effector and a block while getting into position.
const STANDOFF: f64 = 0.006;
/// Largest sideways offset from the push line that still counts as lined up.
const LATERAL_TOLERANCE: f64 = 0.008;
/// Distance from the approach point at which the effector descends.
const ARRIVAL_TOLERANCE: f64 = 0.004;

fn segment_distance_xy(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = (b - a).xy();
    let ap = (p - a).xy();
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { (ap.dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (ap - ab * t).norm()
}

impl ScriptedExpert {
    pub fn from_env(cfg: &EnvConfig) -> Self {
        ScriptedExpert {
            effector_radius: cfg.effector_radius,
            block_radius: cfg.block_radius,
            contact_margin: cfg.physics.contact_margin,
            step_length: cfg.physics.step_length(),
            table_z: cfg.table.height(),
            lift_height: cfg.physics.lift_height,
        }
    }

    /// Action that moves the effector towards `target` as far as one step allows.
    fn towards(&self, from: Vec3, target: Vec3) -> Action {
        let d = (target - from) * (1.0 / self.step_length);
        let n = d.norm();
        let d = if n > 1.0 { d * (1.0 / n) } else { d };
        Action::clipped([d.x, d.y, d.z, 0.0])
    }

    pub fn act_on(&self, effector: Vec3, blue: Vec3, green: Vec3) -> Action {
        let reach = self.effector_radius + self.block_radius;
        let gap = (green - blue).xy();
        let dist = gap.norm();
        if dist <= 2.0 * self.block_radius + self.contact_margin {
            return Action::default();
        }
        let u = gap * (1.0 / dist);
        let perp = Vec3::new(-u.y, u.x, 0.0);
        let rel = (effector - blue).xy();
        let along = rel.dot(u);
        let lateral = rel.dot(perp);
        let low = effector.z - self.table_z < 0.25 * self.block_radius;
        let clear_z = self.table_z + reach + STANDOFF;

        let lined_up = along < 0.0 && along > -(reach + 2.0 * STANDOFF) && lateral.abs() <= LATERAL_TOLERANCE;
        if lined_up && low {
            // Aim one step into the block along the push line.
            let target = blue - u * (reach - self.step_length);
            return self.towards(effector, Vec3::new(target.x, target.y, self.table_z));
        }

        let approach = blue - u * (reach + STANDOFF);
        let approach = Vec3::new(approach.x, approach.y, self.table_z);
        let horizontal = (approach - effector).norm_xy();
        if horizontal <= ARRIVAL_TOLERANCE {
            return self.towards(effector, approach);
        }
        let blocked = [blue, green]
            .iter()
            .any(|&c| segment_distance_xy(c, effector, approach) < reach + 0.5 * STANDOFF);
        if blocked && effector.z < clear_z {
            // Rise before crossing over a block.
            return self.towards(effector, Vec3::new(effector.x, effector.y, clear_z));
        }
        let z = if blocked || !low { clear_z.max(effector.z).min(self.table_z + self.lift_height) } else { self.table_z };
        let z = if blocked { z } else { effector.z.min(z) };
        self.towards(effector, Vec3::new(approach.x, approach.y, z))
    }

    /// Acts on a (possibly three-block) observation with the grey segment removed.
    pub fn act(&self, obs: &Observation) -> Result<Action> {
        let view = decode_observation(&filter_grey(obs))?;
        let blue = view.block(Color::Blue).ok_or_else(|| Error::domain("observation has no blue block"))?;
        let green = view.block(Color::Green).ok_or_else(|| Error::domain("observation has no green block"))?;
        Ok(self.act_on(view.effector.pos, blue.pos, green.pos))
    }

    /// The same controller read straight off the world state.
    pub fn act_on_state(&self, state: &WorldState) -> Result<Action> {
        let blue = state.block_by_color(Color::Blue).ok_or_else(|| Error::domain("state has no blue block"))?;
        let green = state.block_by_color(Color::Green).ok_or_else(|| Error::domain("state has no green block"))?;
        Ok(self.act_on(state.effector.pos, blue.pos, green.pos))
    }
}

/// A DDPG agent trained without a grey block, acting on filtered observations.
#[derive(Debug, Clone)]
pub struct TrainedExpert {
    pub agent: DdpgAgent,
}

impl TrainedExpert {
    pub fn new(agent: DdpgAgent) -> Self {
        TrainedExpert { agent }
    }

    pub fn act(&self, obs: &Observation) -> Result<Action> {
        let view = filter_grey(obs);
        if view.len() != self.agent.obs_dim() {
            return Err(Error::config(format!(
                "expert expects {} observation values, filtered view has {}",
                self.agent.obs_dim(),
                view.len()
            )));
        }
        self.agent.mean_action(&view.values)
    }

    /// Expert-critic advantage `Q*(s, a) - Q*(s, μ*(s))` on filtered views.
    pub fn advantages(&self, obs: &[&[f64]], layout: &crate::task::Layout, actions: &[Action]) -> Result<Vec<f64>> {
        let views: Vec<Vec<f64>> =
            obs.iter().map(|o| filter_grey(&Observation { values: o.to_vec(), layout: layout.clone() }).values).collect();
        let refs: Vec<&[f64]> = views.iter().map(Vec::as_slice).collect();
        let own: Vec<Action> = refs.iter().map(|v| self.agent.mean_action(v)).collect::<Result<_>>()?;
        let q = self.agent.q_values(&refs, actions)?;
        let v = self.agent.q_values(&refs, &own)?;
        Ok(q.iter().zip(&v).map(|(q, v)| q - v).collect())
    }
}

#[derive(Debug, Clone)]
pub enum Expert {
    Scripted(ScriptedExpert),
    Trained(TrainedExpert),
}

impl Expert {
    pub fn act(&self, obs: &Observation) -> Result<Action> {
        match self {
            Expert::Scripted(e) => e.act(obs),
            Expert::Trained(e) => e.act(obs),
        }
    }
}

impl Policy for Expert {
    fn act(&self, obs: &Observation, _: &WorldState, _: ActMode, _: &mut dyn RngCore) -> Result<Action> {
        Expert::act(self, obs)
    }
}

/// One step of a mixed roll-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledStep {
    pub transition: Transition,
    pub controller: Controller,
    /// Discounted reward-to-go from this step.
    pub ret: f64,
    /// Unclipped sampled action, learner steps only.
    pub learner_raw: Option<[f64; 4]>,
    /// Behavior log-density, learner steps only.
    pub behavior_logp: Option<f64>,
    /// What the expert did or would have done here.
    pub expert_action: Action,
}

impl ControlledStep {
    /// The policy-gradient view of a learner step.
    pub fn pg_sample(&self) -> Option<PggdSample> {
        match (self.controller, self.learner_raw, self.behavior_logp) {
            (Controller::Learner, Some(action), Some(logp)) => Some(PggdSample {
                obs: self.transition.obs.clone(),
                action,
                ret: self.ret,
                behavior_logp: logp,
            }),
            _ => None,
        }
    }
}

/// A learner, an expert and the annealed mixing schedule.
#[derive(Debug, Clone)]
pub struct MixedPolicy {
    pub learner: PggdAgent,
    pub expert: Expert,
    pub beta0: f64,
    pub t0: f64,
    pub epoch: u64,
    pub granularity: Granularity,
    /// Use the trained expert's critic for advantages instead of the batch baseline.
    pub expert_critic_advantage: bool,
}

impl MixedPolicy {
    pub fn new(learner: PggdAgent, expert: Expert, beta0: f64, t0: f64, granularity: Granularity) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta0) || !(t0 > 0.0) {
            return Err(Error::config(format!("mixing needs beta0 in [0,1] and t0 > 0, got {beta0}, {t0}")));
        }
        Ok(MixedPolicy { learner, expert, beta0, t0, epoch: 0, granularity, expert_critic_advantage: false })
    }

    pub fn beta(&self) -> f64 {
        beta(self.epoch, self.beta0, self.t0)
    }
}

/// Runs one episode from `scene` under the mixed policy.
pub fn roll_in(mixed: &MixedPolicy, env: &mut BlockEnv, scene: WorldState, rng: &mut dyn RngCore) -> Result<Vec<ControlledStep>> {
    let b = mixed.beta();
    let mut obs = env.reset(scene)?;
    let mut episode_controller = if rng.gen_bool(b) { Controller::Expert } else { Controller::Learner };
    let mut steps = Vec::new();
    while !env.is_done() {
        if mixed.granularity == Granularity::Step && !steps.is_empty() {
            episode_controller = if rng.gen_bool(b) { Controller::Expert } else { Controller::Learner };
        }
        let expert_action = mixed.expert.act(&obs)?;
        let (action, learner_raw, behavior_logp) = match episode_controller {
            Controller::Expert => (expert_action, None, None),
            Controller::Learner => {
                let (a, raw, lp) = mixed.learner.act(&obs.values, ActMode::Explore, rng)?;
                (a, Some(raw), Some(lp))
            }
        };
        let out = env.step(&action)?;
        steps.push(ControlledStep {
            transition: Transition {
                obs: obs.values.clone(),
                action,
                reward: out.reward,
                next_obs: out.obs.values.clone(),
                done: out.terminal,
            },
            controller: episode_controller,
            ret: 0.0,
            learner_raw,
            behavior_logp,
            expert_action,
        });
        obs = out.obs;
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.transition.reward).collect();
    for (s, r) in steps.iter_mut().zip(rewards_to_go(&rewards, mixed.learner.params.gamma)) {
        s.ret = r;
    }
    Ok(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedUpdate {
    pub supervision_loss: f64,
    pub pg_loss: f64,
    pub learner_steps: usize,
    pub applied: bool,
}

/// One combined step: `β` times the behavior-cloning gradient of the mean
/// action towards the expert's action over all steps, plus `1 - β` times the
/// policy gradient over learner-controlled steps.
pub fn aggrevated_update(mixed: &mut MixedPolicy, batch: &[&ControlledStep], layout: &crate::task::Layout) -> Result<MixedUpdate> {
    if batch.is_empty() {
        return Err(Error::domain("empty imitation batch"));
    }
    let b = mixed.beta();
    let learner = &mixed.learner;

    let obs: Vec<&[f64]> = batch.iter().map(|s| s.transition.obs.as_slice()).collect();
    let x = learner.normalized(&obs)?;
    let cache = learner.policy.forward(&x)?;
    let n = batch.len() as f64;
    let mut grad_out = Matrix::zeros(batch.len(), 2 * Action::DIM);
    let mut supervision_loss = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let mu = &cache.output.row(i)[..Action::DIM];
        let g = grad_out.row_mut(i);
        for d in 0..Action::DIM {
            let diff = mu[d] - s.expert_action.0[d];
            supervision_loss += diff * diff / n;
            g[d] = 2.0 * diff / n;
        }
    }
    let sup = learner.policy.backward(&cache, &grad_out)?.params;

    let samples: Vec<PggdSample> = batch.iter().filter_map(|s| s.pg_sample()).collect();
    let (pg, pg_loss) = if samples.is_empty() {
        (vec![0.0; sup.len()], 0.0)
    } else {
        let refs: Vec<&PggdSample> = samples.iter().collect();
        let advantages = match (&mixed.expert, mixed.expert_critic_advantage) {
            (Expert::Trained(e), true) => {
                let o: Vec<&[f64]> = samples.iter().map(|s| s.obs.as_slice()).collect();
                let acts: Vec<Action> = samples.iter().map(|s| Action::clipped(s.action)).collect();
                Some(e.advantages(&o, layout, &acts)?)
            }
            _ => None,
        };
        let g = learner.pg_gradient_with(&refs, advantages.as_deref())?;
        (g.params, g.loss)
    };
    let combined: Vec<f64> = sup.iter().zip(&pg).map(|(s, p)| b * s + (1.0 - b) * p).collect();
    let applied = mixed.learner.apply(&combined)?;
    Ok(MixedUpdate { supervision_loss, pg_loss, learner_steps: samples.len(), applied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::PggdParams;
    use crate::curriculum::{sample_scene, CurriculumSchedule, SpawnSpec};
    use crate::task::EnvKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_closed_form() {
        assert_eq!(beta(0, 0.0, 50.0), 1.0);
        assert!((beta(50, 0.0, 50.0) - 0.36787944117144233).abs() < 1e-15);
        assert!((beta(5000, 0.2, 50.0) - 0.2).abs() < 1e-12);
    }

    fn expert() -> ScriptedExpert {
        ScriptedExpert::from_env(&EnvConfig::new(EnvKind::BlocksTouch))
    }

    #[test]
    fn expert_pushes_towards_green_from_behind() {
        let a = expert().act_on(Vec3::new(0.1 - 0.035 - 0.001, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0));
        assert!(a.0[0] > 0.0);
    }

    #[test]
    fn expert_far_behind_approaches_with_positive_x() {
        let a = expert().act_on(Vec3::new(-0.2, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0));
        assert!(a.0[0] > 0.0);
    }

    #[test]
    fn expert_is_idle_when_touching() {
        let a = expert().act_on(Vec3::new(-0.2, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.15, 0.0, 0.0));
        assert_eq!(a, Action::default());
    }

    #[test]
    fn expert_lifts_over_a_block_in_the_way() {
        // Effector on the far side of blue from the approach point.
        let a = expert().act_on(Vec3::new(0.16, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.1, 0.2, 0.0));
        assert!(a.0[2] > 0.0);
    }

    #[test]
    fn supervision_step_moves_mean_towards_expert() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = PggdParams { hidden: 16, layers: 2, lr: 1e-4, ..PggdParams::default() };
        let learner = PggdAgent::new(32, params, &mut rng).unwrap();
        let mut mixed = MixedPolicy::new(learner, Expert::Scripted(expert()), 0.0, 50.0, Granularity::Episode).unwrap();
        let obs: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = Action([0.5, -0.5, 0.2, 0.0]);
        let step = ControlledStep {
            transition: Transition { obs: obs.clone(), action: target, reward: 0.0, next_obs: obs.clone(), done: false },
            controller: Controller::Expert,
            ret: 0.0,
            learner_raw: None,
            behavior_logp: None,
            expert_action: target,
        };
        let err = |m: &MixedPolicy| {
            let (mu, _) = m.learner.distribution(&obs).unwrap();
            mu.iter().zip(target.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let before = err(&mixed);
        let layout = EnvKind::BlocksTouch.layout();
        aggrevated_update(&mut mixed, &[&step], &layout).unwrap();
        assert!(err(&mixed) < before);
    }

    #[test]
    fn full_beta_rolls_in_with_the_expert_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = EnvConfig::new(EnvKind::BlocksChoose);
        let spec = SpawnSpec::from_env(&cfg);
        let level = CurriculumSchedule::default_for(&cfg.table).first();
        let params = PggdParams { hidden: 8, layers: 1, ..PggdParams::default() };
        let learner = PggdAgent::new(cfg.kind.obs_dim(), params, &mut rng).unwrap();
        let mixed = MixedPolicy::new(learner, Expert::Scripted(ScriptedExpert::from_env(&cfg)), 0.0, 50.0, Granularity::Episode).unwrap();
        let scene = sample_scene(&level, &spec, &mut rng).unwrap();
        let mut env = BlockEnv::new(cfg, scene.clone()).unwrap();
        let steps = roll_in(&mixed, &mut env, scene, &mut rng).unwrap();
        assert!(!steps.is_empty());
        assert!(steps.iter().all(|s| s.controller == Controller::Expert && s.transition.action == s.expert_action));
    }
}
