//! Policy gradient with a diagonal Gaussian action distribution.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::gaussian::{log_prob, log_prob_grad};
use crate::neural::{Adam, Matrix, Mlp, OutputKind, RunningNormalizer};
use crate::physics::{Action, WorldState};
use crate::policy::{ActMode, Policy};
use crate::task::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PggdParams {
    pub lr: f64,
    pub hidden: usize,
    pub layers: usize,
    /// Importance weights are clipped to `[0, iw_clip]`.
    pub iw_clip: f64,
    /// Discount for the reward-to-go.
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
}

impl Default for PggdParams {
    fn default() -> Self {
        PggdParams { lr: 1e-4, hidden: 256, layers: 3, iw_clip: 5.0, gamma: 0.98, buffer_capacity: 1_000_000, batch_size: 256 }
    }
}

impl PggdParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.hidden > 0
            && self.iw_clip > 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.buffer_capacity > 0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid pggd parameters {self:?}")))
        }
    }
}

/// One replayed decision: the raw observation, the unclipped sampled action,
/// its reward-to-go and the log-density under the policy that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PggdSample {
    pub obs: Vec<f64>,
    pub action: [f64; 4],
    pub ret: f64,
    pub behavior_logp: f64,
}

/// Discounted reward-to-go for every step of an episode.
pub fn rewards_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Policy gradient of a batch, not yet applied.
#[derive(Debug, Clone)]
pub struct PgGradient {
    /// Gradient of the surrogate loss (descent direction) in parameter layout.
    pub params: Vec<f64>,
    /// Surrogate loss `-mean(w Â log π)`.
    pub loss: f64,
    /// Samples whose importance weight was not finite.
    pub dropped: usize,
    pub used: usize,
}

#[derive(Debug, Clone)]
pub struct PggdAgent {
    pub params: PggdParams,
    pub policy: Mlp,
    pub opt: Adam,
    pub normalizer: RunningNormalizer,
    pub updates: u64,
}

impl PggdAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, params: PggdParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let mut widths = vec![obs_dim];
        widths.extend(std::iter::repeat_n(params.hidden, params.layers));
        widths.push(2 * Action::DIM);
        let policy = Mlp::new(&widths, OutputKind::Gaussian, 0.01, rng)?;
        Self::from_network(params, policy, RunningNormalizer::new(obs_dim))
    }

    pub fn from_network(params: PggdParams, policy: Mlp, normalizer: RunningNormalizer) -> Result<Self> {
        if policy.output_kind() != OutputKind::Gaussian
            || policy.output_dim() != 2 * Action::DIM
            || policy.input_dim() != normalizer.dim()
        {
            return Err(Error::domain("policy shape does not fit the observation layout"));
        }
        Ok(PggdAgent { opt: Adam::for_net(&policy, params.lr), params, policy, normalizer, updates: 0 })
    }

    pub fn obs_dim(&self) -> usize {
        self.normalizer.dim()
    }

    /// Mean and standard deviation of the action distribution.
    pub fn distribution(&self, obs: &[f64]) -> Result<([f64; 4], [f64; 4])> {
        let out = self.policy.predict(&self.normalizer.normalize(obs)?)?;
        Ok((std::array::from_fn(|i| out[i]), std::array::from_fn(|i| out[4 + i])))
    }

    /// Explore: a sample (returned unclipped, with its log-density) and the
    /// clipped action to execute. Deterministic: the clipped mean, whose
    /// log-density is reported at the mean.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: ActMode, rng: &mut R) -> Result<(Action, [f64; 4], f64)> {
        let (mean, std) = self.distribution(obs)?;
        let raw = match mode {
            ActMode::Deterministic => mean,
            ActMode::Explore => std::array::from_fn(|i| {
                let z: f64 = rng.sample(StandardNormal);
                mean[i] + std[i] * z
            }),
        };
        let logp = log_prob(&raw, &mean, &std);
        Ok((Action::try_new(raw)?, raw, logp))
    }

    pub fn normalized(&self, obs: &[&[f64]]) -> Result<Matrix> {
        let mut m = Matrix::zeros(obs.len(), self.obs_dim());
        for (i, o) in obs.iter().enumerate() {
            self.normalizer.normalize_into(o, m.row_mut(i))?;
        }
        Ok(m)
    }

    /// Importance-weighted policy gradient with a batch-mean baseline.
    pub fn pg_gradient(&self, batch: &[&PggdSample]) -> Result<PgGradient> {
        self.pg_gradient_with(batch, None)
    }

    /// As [`PggdAgent::pg_gradient`], with externally supplied advantages
    /// replacing `return - baseline` when given.
    pub fn pg_gradient_with(&self, batch: &[&PggdSample], advantages: Option<&[f64]>) -> Result<PgGradient> {
        if advantages.is_some_and(|a| a.len() != batch.len()) {
            return Err(Error::domain("one advantage per sample is required"));
        }
        let obs: Vec<&[f64]> = batch.iter().map(|s| s.obs.as_slice()).collect();
        let x = self.normalized(&obs)?;
        let cache = self.policy.forward(&x)?;
        let out = &cache.output;

        let mut logps = Vec::with_capacity(batch.len());
        let mut weights = Vec::with_capacity(batch.len());
        for (i, s) in batch.iter().enumerate() {
            let row = out.row(i);
            let lp = log_prob(&s.action, &row[..4], &row[4..]);
            let w = (lp - s.behavior_logp).exp().clamp(0.0, self.params.iw_clip);
            logps.push(lp);
            weights.push(if w.is_finite() && lp.is_finite() { Some(w) } else { None });
        }
        let used = weights.iter().flatten().count();
        let dropped = batch.len() - used;
        let mut grad_out = Matrix::zeros(batch.len(), 2 * Action::DIM);
        if used == 0 {
            return Ok(PgGradient { params: vec![0.0; self.policy.param_count()], loss: 0.0, dropped, used });
        }
        let baseline = batch.iter().zip(&weights).filter(|(_, w)| w.is_some()).map(|(s, _)| s.ret).sum::<f64>() / used as f64;
        let n = used as f64;
        let mut loss = 0.0;
        for (i, s) in batch.iter().enumerate() {
            let Some(w) = weights[i] else { continue };
            let adv = advantages.map_or(s.ret - baseline, |a| a[i]);
            let coef = w * adv / n;
            loss -= coef * logps[i];
            let row = out.row(i);
            let (dm, ds) = log_prob_grad(&s.action, &row[..4], &row[4..]);
            let g = grad_out.row_mut(i);
            for d in 0..4 {
                g[d] = -coef * dm[d];
                g[4 + d] = -coef * ds[d];
            }
        }
        let grads = self.policy.backward(&cache, &grad_out)?;
        Ok(PgGradient { params: grads.params, loss, dropped, used })
    }

    /// Applies a descent direction with one Adam step. Returns whether it was applied.
    pub fn apply(&mut self, grads: &[f64]) -> Result<bool> {
        self.updates += 1;
        self.opt.step_net(&mut self.policy, grads)
    }

    /// One policy-gradient step. Returns the surrogate loss.
    pub fn update(&mut self, batch: &[&PggdSample]) -> Result<PgGradient> {
        let g = self.pg_gradient(batch)?;
        self.apply(&g.params)?;
        Ok(g)
    }
}

impl Policy for PggdAgent {
    fn act(&self, obs: &Observation, _: &WorldState, mode: ActMode, rng: &mut dyn RngCore) -> Result<Action> {
        Ok(PggdAgent::act(self, &obs.values, mode, rng)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small(rng: &mut ChaCha8Rng) -> PggdAgent {
        let params = PggdParams { hidden: 16, layers: 2, lr: 1e-3, ..PggdParams::default() };
        PggdAgent::new(5, params, rng).unwrap()
    }

    #[test]
    fn deterministic_mode_returns_the_clipped_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = small(&mut rng);
        let obs = [0.2, 0.1, -0.3, 0.0, 0.5];
        let (mean, std) = agent.distribution(&obs).unwrap();
        let (a, raw, logp) = agent.act(&obs, ActMode::Deterministic, &mut rng).unwrap();
        assert_eq!(a, Action::clipped(mean));
        assert_eq!(raw, mean);
        let expected: f64 = std.iter().map(|s| -(s * (2.0 * PI).sqrt()).ln()).sum();
        assert!((logp - expected).abs() < 1e-12);
    }

    #[test]
    fn tiny_std_makes_samples_match_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = small(&mut rng);
        // Drive the std pre-activations very negative so softplus hits the floor.
        let n = agent.policy.param_count();
        agent.policy.update_params(|p| p[n - 4..].iter_mut().for_each(|b| *b = -60.0));
        let obs = [0.0; 5];
        let (a, _, _) = agent.act(&obs, ActMode::Explore, &mut rng).unwrap();
        let (m, _, _) = agent.act(&obs, ActMode::Deterministic, &mut rng).unwrap();
        for (x, y) in a.0.iter().zip(m.0) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn equal_returns_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = small(&mut rng);
        let samples: Vec<PggdSample> = (0..8)
            .map(|i| {
                let obs = vec![i as f64 * 0.1; 5];
                let (_, raw, lp) = agent.act(&obs, ActMode::Explore, &mut rng).unwrap();
                PggdSample { obs, action: raw, ret: 0.5, behavior_logp: lp }
            })
            .collect();
        let before = agent.policy.params().to_vec();
        let refs: Vec<&PggdSample> = samples.iter().collect();
        agent.update(&refs).unwrap();
        assert_eq!(agent.policy.params(), &before[..]);
    }

    #[test]
    fn fresh_samples_have_unit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let agent = small(&mut rng);
        for _ in 0..20 {
            let obs: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, raw, lp) = agent.act(&obs, ActMode::Explore, &mut rng).unwrap();
            let (mean, std) = agent.distribution(&obs).unwrap();
            let w = (log_prob(&raw, &mean, &std) - lp).exp();
            assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn positive_advantage_raises_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agent = small(&mut rng);
        agent.opt = Adam::for_net(&agent.policy, 1e-4);
        let obs = vec![0.3, -0.2, 0.1, 0.4, 0.0];
        let mut samples = Vec::new();
        for ret in [1.0, 0.0, 0.0, 0.0] {
            let (_, raw, lp) = agent.act(&obs, ActMode::Explore, &mut rng).unwrap();
            samples.push(PggdSample { obs: obs.clone(), action: raw, ret, behavior_logp: lp });
        }
        let logp_of = |agent: &PggdAgent, s: &PggdSample| {
            let (m, sd) = agent.distribution(&s.obs).unwrap();
            log_prob(&s.action, &m, &sd)
        };
        let before = logp_of(&agent, &samples[0]);
        let refs: Vec<&PggdSample> = samples.iter().collect();
        agent.update(&refs).unwrap();
        assert!(logp_of(&agent, &samples[0]) > before);
    }

    #[test]
    fn reward_to_go_discounts_the_future() {
        let r = rewards_to_go(&[0.0, 0.0, 1.0], 0.5);
        assert_eq!(r, vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn weights_are_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let agent = small(&mut rng);
        let obs = vec![0.0; 5];
        let (mean, _) = agent.distribution(&obs).unwrap();
        // A behaviour density far below the current one gives a huge raw ratio.
        let s = [
            PggdSample { obs: obs.clone(), action: mean, ret: 1.0, behavior_logp: -100.0 },
            PggdSample { obs, action: mean, ret: 0.0, behavior_logp: -100.0 },
        ];
        let g = agent.pg_gradient(&[&s[0], &s[1]]).unwrap();
        assert_eq!(g.used, 2);
        assert!(g.params.iter().all(|v| v.is_finite()));
    }
}
