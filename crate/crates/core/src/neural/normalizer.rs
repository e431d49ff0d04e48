use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension running mean and (population) variance of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    /// Normalized values are clipped to `±clip_range`.
    pub clip_range: f64,
    /// Raw observations are clipped to `±obs_clip` first.
    pub obs_clip: f64,
    pub eps: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        RunningNormalizer {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            clip_range: 5.0,
            obs_clip: 200.0,
            eps: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; obs.len()];
        self.normalize_into(obs, &mut out)?;
        Ok(out)
    }

    pub fn normalize_into(&self, obs: &[f64], out: &mut [f64]) -> Result<()> {
        if obs.len() != self.dim() || out.len() != self.dim() {
            return Err(Error::domain(format!("normalizer has {} dims, got {}", self.dim(), obs.len())));
        }
        for i in 0..obs.len() {
            let x = obs[i].clamp(-self.obs_clip, self.obs_clip);
            out[i] = ((x - self.mean[i]) / (self.var[i] + self.eps).sqrt()).clamp(-self.clip_range, self.clip_range);
        }
        Ok(())
    }

    /// Folds a batch into the running statistics with the pairwise merge of
    /// means and sums of squared deviations.
    pub fn update<R: AsRef<[f64]>>(&mut self, batch: &[R]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let d = self.dim();
        if batch.iter().any(|r| r.as_ref().len() != d) {
            return Err(Error::domain("batch width does not match normalizer"));
        }
        let nb = batch.len() as f64;
        let clip = |v: f64| v.clamp(-self.obs_clip, self.obs_clip);
        let mut mean_b = vec![0.0; d];
        for r in batch {
            for (m, &v) in mean_b.iter_mut().zip(r.as_ref()) {
                *m += clip(v);
            }
        }
        mean_b.iter_mut().for_each(|m| *m /= nb);
        let mut m2_b = vec![0.0; d];
        for r in batch {
            for ((s, &v), m) in m2_b.iter_mut().zip(r.as_ref()).zip(&mean_b) {
                let dv = clip(v) - m;
                *s += dv * dv;
            }
        }

        let na = self.count;
        let n = na + nb;
        for i in 0..d {
            let delta = mean_b[i] - self.mean[i];
            let m2_a = self.var[i] * na;
            let m2 = m2_a + m2_b[i] + delta * delta * na * nb / n;
            self.mean[i] += delta * nb / n;
            self.var[i] = (m2 / n).max(0.0);
        }
        self.count = n;
        Ok(())
    }
}
