//! Central finite-difference check of [`Mlp::backward`].
//!
//! The scalar under test is `sum(W ⊙ f(x))` for a fixed random weighting
//! `W`, so the analytic gradient comes from `backward(W)` while the numeric
//! one only ever calls `forward`.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::matrix::Matrix;
use super::mlp::{Mlp, OutputKind};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub widths: Vec<usize>,
    pub checked: usize,
    /// Coordinates redrawn because a rectifier changed sign inside the stencil.
    pub kinks: usize,
    pub failures: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ABS_FLOOR)
}

fn weighted_output(net: &Mlp, x: &Matrix, w: &Matrix) -> Result<(f64, Vec<bool>)> {
    let cache = net.forward(x)?;
    let s = cache.output.data.iter().zip(&w.data).map(|(a, b)| a * b).sum();
    Ok((s, Mlp::hidden_signs(&cache)))
}

/// Checks `coords` random parameter coordinates plus every input coordinate of
/// the first sample.
pub fn check_network<R: Rng + ?Sized>(name: &str, net: &Mlp, batch: usize, coords: usize, rng: &mut R) -> Result<GradCheckReport> {
    let x = Matrix::from_vec(batch, net.input_dim(), (0..batch * net.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
    let w = Matrix::from_vec(batch, net.output_dim(), (0..batch * net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let cache = net.forward(&x)?;
    let grads = net.backward(&cache, &w)?;

    let mut report = GradCheckReport {
        name: name.to_string(),
        widths: net.widths().to_vec(),
        checked: 0,
        kinks: 0,
        failures: 0,
        max_rel_error: 0.0,
    };
    let record = |analytic: f64, numeric: f64, report: &mut GradCheckReport| {
        let e = relative_error(analytic, numeric);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(e);
        if e > REL_TOLERANCE {
            report.failures += 1;
        }
    };

    let n = net.param_count();
    let mut candidates = sample(rng, n, n.min(coords * 4)).into_vec().into_iter();
    let mut done = 0;
    while done < coords.min(n) {
        let Some(i) = candidates.next() else { break };
        let mut plus = net.clone();
        plus.update_params(|p| p[i] += FD_STEP);
        let mut minus = net.clone();
        minus.update_params(|p| p[i] -= FD_STEP);
        let (fp, sp) = weighted_output(&plus, &x, &w)?;
        let (fm, sm) = weighted_output(&minus, &x, &w)?;
        if sp != sm {
            report.kinks += 1;
            continue;
        }
        record(grads.params[i], (fp - fm) / (2.0 * FD_STEP), &mut report);
        done += 1;
    }

    for j in 0..net.input_dim() {
        let mut xp = x.clone();
        xp.row_mut(0)[j] += FD_STEP;
        let mut xm = x.clone();
        xm.row_mut(0)[j] -= FD_STEP;
        let (fp, sp) = weighted_output(net, &xp, &w)?;
        let (fm, sm) = weighted_output(net, &xm, &w)?;
        if sp != sm {
            report.kinks += 1;
            continue;
        }
        record(grads.input.row(0)[j], (fp - fm) / (2.0 * FD_STEP), &mut report);
    }
    Ok(report)
}

/// Every network shape the learners build for the two environments with
/// `hidden` units per layer.
pub fn architectures(hidden: usize, layers: usize) -> Vec<(String, Vec<usize>, OutputKind)> {
    let mut out = Vec::new();
    for (env, obs) in [("touch", 32usize), ("choose", 44usize)] {
        let trunk = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend(std::iter::repeat_n(hidden, layers));
            w.push(output);
            w
        };
        out.push((format!("actor-{env}"), trunk(obs, 4), OutputKind::Tanh));
        out.push((format!("critic-{env}"), trunk(obs + 4, 1), OutputKind::Identity));
        out.push((format!("gaussian-policy-{env}"), trunk(obs, 8), OutputKind::Gaussian));
    }
    out
}

/// Runs the check on all architectures with freshly initialized weights.
pub fn check_all<R: Rng + ?Sized>(hidden: usize, layers: usize, coords: usize, rng: &mut R) -> Result<Vec<GradCheckReport>> {
    architectures(hidden, layers)
        .into_iter()
        .map(|(name, widths, kind)| {
            let net = Mlp::new(&widths, kind, 1.0, rng)?;
            check_network(&name, &net, 3, coords, rng)
        })
        .collect()
}
