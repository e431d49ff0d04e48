//! Diagonal Gaussian helpers for the policy head.

use std::f64::consts::PI;

/// Smallest standard deviation the head can emit.
pub const STD_FLOOR: f64 = 1e-6;

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log-density of `action` under `N(mean, std²)`, summed over dimensions.
pub fn log_prob(action: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(std)
        .map(|((&a, &m), &s)| {
            let u = (a - m) / s;
            -0.5 * u * u - s.ln() - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Gradient of [`log_prob`] with respect to the mean and the std.
pub fn log_prob_grad(action: &[f64], mean: &[f64], std: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_std = Vec::with_capacity(std.len());
    for ((&a, &m), &s) in action.iter().zip(mean).zip(std) {
        let diff = a - m;
        d_mean.push(diff / (s * s));
        d_std.push(diff * diff / (s * s * s) - 1.0 / s);
    }
    (d_mean, d_std)
}
