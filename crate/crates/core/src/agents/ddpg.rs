//! Deep deterministic policy gradient with target networks.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use crate::error::{Error, Result};
use crate::neural::{Adam, Matrix, Mlp, OutputKind, RunningNormalizer};
use crate::physics::{Action, WorldState};
use crate::policy::{ActMode, Policy};
use crate::task::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgParams {
    pub gamma: f64,
    pub tau: f64,
    /// Standard deviation of the Gaussian exploration noise.
    pub noise_scale: f64,
    /// Probability of a uniformly random exploration action.
    pub random_eps: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    pub layers: usize,
    /// Weight of the mean squared action penalty in the actor loss.
    pub action_l2: f64,
    /// Bootstrapped targets are clipped to this range; rewards lie in [-1, 1].
    pub target_clip: (f64, f64),
    pub buffer_capacity: usize,
    pub batch_size: usize,
}

impl Default for DdpgParams {
    fn default() -> Self {
        DdpgParams {
            gamma: 0.98,
            tau: 0.05,
            noise_scale: 0.2,
            random_eps: 0.3,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            hidden: 256,
            layers: 3,
            action_l2: 1.0,
            target_clip: (-1.0, 1.0),
            buffer_capacity: 1_000_000,
            batch_size: 256,
        }
    }
}

impl DdpgParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.gamma)
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.noise_scale >= 0.0
            && (0.0..=1.0).contains(&self.random_eps)
            && self.actor_lr >= 0.0
            && self.critic_lr >= 0.0
            && self.hidden > 0
            && self.buffer_capacity > 0
            && self.batch_size > 0
            && self.action_l2 >= 0.0
            && self.target_clip.0 <= self.target_clip.1;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid ddpg parameters {self:?}")))
        }
    }
}

/// Outcome of one minibatch update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Batch mean of `Q(s, μ(s))` before the actor step.
    pub actor_objective: f64,
    /// A non-finite loss or gradient made the update a no-op.
    pub skipped: bool,
}

fn trunk(input: usize, hidden: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, layers));
    w.push(output);
    w
}

/// Moves every target parameter to `tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::domain("soft update between networks of different shapes"));
    }
    let src = online.params();
    target.update_params(|p| {
        for (t, o) in p.iter_mut().zip(src) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    });
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub params: DdpgParams,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub normalizer: RunningNormalizer,
    /// Minibatch updates applied so far, including skipped ones.
    pub updates: u64,
    pub skipped_updates: u64,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, params: DdpgParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let actor = Mlp::new(&trunk(obs_dim, params.hidden, params.layers, Action::DIM), OutputKind::Tanh, 0.01, rng)?;
        let critic = Mlp::new(&trunk(obs_dim + Action::DIM, params.hidden, params.layers, 1), OutputKind::Identity, 1.0, rng)?;
        Self::from_networks(params, actor, critic, RunningNormalizer::new(obs_dim))
    }

    /// Wraps existing networks; targets start as exact copies.
    pub fn from_networks(params: DdpgParams, actor: Mlp, critic: Mlp, normalizer: RunningNormalizer) -> Result<Self> {
        let obs_dim = normalizer.dim();
        if actor.input_dim() != obs_dim || actor.output_dim() != Action::DIM || actor.output_kind() != OutputKind::Tanh {
            return Err(Error::domain("actor shape does not fit the observation layout"));
        }
        if critic.input_dim() != obs_dim + Action::DIM || critic.output_dim() != 1 {
            return Err(Error::domain("critic shape does not fit the observation layout"));
        }
        Ok(DdpgAgent {
            actor_opt: Adam::for_net(&actor, params.actor_lr),
            critic_opt: Adam::for_net(&critic, params.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            normalizer,
            params,
            updates: 0,
            skipped_updates: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.normalizer.dim()
    }

    /// Deterministic actor output for a raw observation.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Action> {
        let x = self.normalizer.normalize(obs)?;
        Action::from_slice(&self.actor.predict(&x)?)
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], explore: bool, rng: &mut R) -> Result<Action> {
        let mean = self.mean_action(obs)?;
        if !explore {
            return Ok(mean);
        }
        if self.params.random_eps > 0.0 && rng.gen_bool(self.params.random_eps) {
            return Ok(Action(std::array::from_fn(|_| rng.gen_range(-1.0..=1.0))));
        }
        let mut a = mean.0;
        if self.params.noise_scale > 0.0 {
            for v in &mut a {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.params.noise_scale * z;
            }
        }
        Ok(Action::clipped(a))
    }

    /// Critic estimate for raw observations and actions.
    pub fn q_values(&self, obs: &[&[f64]], actions: &[Action]) -> Result<Vec<f64>> {
        let x = self.normalized(obs)?;
        let a = action_matrix(actions)?;
        Ok(self.critic.forward(&x.hcat(&a)?)?.output.data)
    }

    pub fn normalized(&self, obs: &[&[f64]]) -> Result<Matrix> {
        let d = self.obs_dim();
        let mut m = Matrix::zeros(obs.len(), d);
        for (i, o) in obs.iter().enumerate() {
            self.normalizer.normalize_into(o, m.row_mut(i))?;
        }
        Ok(m)
    }

    /// Bellman targets `r + γ Q'(s', μ'(s'))`, with no bootstrap past a
    /// terminal transition, clipped to the configured range.
    pub fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_obs.as_slice()).collect();
        let xn = self.normalized(&next)?;
        let an = self.target_actor.forward(&xn)?.output;
        let qn = self.target_critic.forward(&xn.hcat(&an)?)?.output;
        let (lo, hi) = self.params.target_clip;
        Ok(batch
            .iter()
            .zip(&qn.data)
            .map(|(t, q)| {
                let boot = if t.done { 0.0 } else { self.params.gamma * q };
                (t.reward + boot).clamp(lo, hi)
            })
            .collect())
    }

    /// One regression step of the critic towards `y`. Returns the loss before
    /// the step, or `None` when the step was skipped.
    pub fn critic_step(&mut self, x: &Matrix, actions: &Matrix, y: &[f64]) -> Result<Option<f64>> {
        let input = x.hcat(actions)?;
        let cache = self.critic.forward(&input)?;
        let n = y.len() as f64;
        let q = &cache.output.data;
        let loss = q.iter().zip(y).map(|(q, y)| (y - q) * (y - q)).sum::<f64>() / n;
        let grad_out = Matrix::from_vec(y.len(), 1, q.iter().zip(y).map(|(q, y)| 2.0 * (q - y) / n).collect())?;
        let grads = self.critic.backward(&cache, &grad_out)?;
        if !loss.is_finite() || !self.critic_opt.step_net(&mut self.critic, &grads.params)? {
            return Ok(None);
        }
        Ok(Some(loss))
    }

    /// One ascent step of the actor on `Q(s, μ(s))` through the (unchanged)
    /// critic, minus the action penalty. Returns the batch mean Q before the
    /// step, or `None` when the step was skipped.
    pub fn actor_step(&mut self, x: &Matrix) -> Result<Option<f64>> {
        let n = x.rows as f64;
        let actor_cache = self.actor.forward(x)?;
        let mu = &actor_cache.output;
        let critic_cache = self.critic.forward(&x.hcat(mu)?)?;
        let objective = critic_cache.output.data.iter().sum::<f64>() / n;
        let dq = Matrix::from_vec(x.rows, 1, vec![-1.0 / n; x.rows])?;
        let critic_grads = self.critic.backward(&critic_cache, &dq)?;
        let da = critic_grads.input.columns(self.obs_dim()..self.obs_dim() + Action::DIM);
        let l2 = self.params.action_l2 * 2.0 / (n * Action::DIM as f64);
        let grad_mu = Matrix::from_vec(x.rows, Action::DIM, da.data.iter().zip(&mu.data).map(|(g, a)| g + l2 * a).collect())?;
        let grads = self.actor.backward(&actor_cache, &grad_mu)?;
        if !objective.is_finite() || !self.actor_opt.step_net(&mut self.actor, &grads.params)? {
            return Ok(None);
        }
        Ok(Some(objective))
    }

    /// Critic step, actor step, then a soft update of both targets.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::domain("empty ddpg batch"));
        }
        self.updates += 1;
        let obs: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
        let x = self.normalized(&obs)?;
        let actions = action_matrix(&batch.iter().map(|t| t.action).collect::<Vec<_>>())?;
        let y = self.targets(batch)?;
        let critic_loss = self.critic_step(&x, &actions, &y)?;
        let actor_objective = self.actor_step(&x)?;
        soft_update(&mut self.target_actor, &self.actor, self.params.tau)?;
        soft_update(&mut self.target_critic, &self.critic, self.params.tau)?;
        let skipped = critic_loss.is_none() || actor_objective.is_none();
        if skipped {
            self.skipped_updates += 1;
        }
        Ok(UpdateStats {
            critic_loss: critic_loss.unwrap_or(f64::NAN),
            actor_objective: actor_objective.unwrap_or(f64::NAN),
            skipped,
        })
    }
}

pub(crate) fn action_matrix(actions: &[Action]) -> Result<Matrix> {
    Matrix::from_vec(actions.len(), Action::DIM, actions.iter().flat_map(|a| a.0).collect())
}

impl Policy for DdpgAgent {
    fn act(&self, obs: &Observation, _: &WorldState, mode: ActMode, rng: &mut dyn RngCore) -> Result<Action> {
        DdpgAgent::act(self, &obs.values, mode == ActMode::Explore, rng)
    }
}
