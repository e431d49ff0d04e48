use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::{sigmoid, softplus, STD_FLOOR};
use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// How the last layer's pre-activations become outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputKind {
    Identity,
    Tanh,
    /// First half of the outputs is a mean (identity), second half a
    /// standard deviation (softplus plus a small floor).
    Gaussian,
}

/// Fully connected network with rectifier hidden layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    output: OutputKind,
    params: Vec<f64>,
    version: u64,
}

/// Intermediates kept by [`Mlp::forward`] for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    pub output: Matrix,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to the network input, one row per sample.
    pub input: Matrix,
}

impl Mlp {
    /// Initializes weights and biases uniformly in `±1/sqrt(fan_in)`; the last
    /// layer is further multiplied by `final_scale`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], output: OutputKind, final_scale: f64, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::domain(format!("invalid layer widths {widths:?}")));
        }
        if output == OutputKind::Gaussian && !widths[widths.len() - 1].is_multiple_of(2) {
            return Err(Error::domain("gaussian head needs an even output width"));
        }
        let layers = widths.len() - 1;
        let mut params = Vec::with_capacity(Self::count(widths));
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if l == layers - 1 {
                bound *= final_scale;
            }
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 });
            }
        }
        Ok(Mlp { widths: widths.to_vec(), output, params, version: fresh_version() })
    }

    /// Builds a network around existing parameters.
    pub fn from_params(widths: &[usize], output: OutputKind, params: Vec<f64>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::domain(format!("invalid layer widths {widths:?}")));
        }
        if params.len() != Self::count(widths) {
            return Err(Error::domain(format!(
                "{} parameters given, widths {widths:?} need {}",
                params.len(),
                Self::count(widths)
            )));
        }
        Ok(Mlp { widths: widths.to_vec(), output, params, version: fresh_version() })
    }

    fn count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Mutates the parameters in place. Any cache taken earlier becomes stale.
    pub fn update_params<T>(&mut self, f: impl FnOnce(&mut [f64]) -> T) -> T {
        self.version = fresh_version();
        f(&mut self.params)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::domain("parameter count mismatch"));
        }
        self.update_params(|p| p.copy_from_slice(params));
        Ok(())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.widths == other.widths && self.output == other.output
    }

    /// (weight offset, bias offset) of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.widths.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.widths[l] * self.widths[l + 1])
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.offsets(l);
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        (&self.params[w..w + fi * fo], &self.params[b..b + fo])
    }

    fn apply_output(&self, z: &Matrix) -> Matrix {
        let mut y = z.clone();
        match self.output {
            OutputKind::Identity => {}
            OutputKind::Tanh => y.data.iter_mut().for_each(|v| *v = v.tanh()),
            OutputKind::Gaussian => {
                let half = y.cols / 2;
                for i in 0..y.rows {
                    for v in &mut y.row_mut(i)[half..] {
                        *v = softplus(*v) + STD_FLOOR;
                    }
                }
            }
        }
        y
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols != self.input_dim() {
            return Err(Error::domain(format!("input width {} but network expects {}", x.cols, self.input_dim())));
        }
        if !x.is_finite() {
            return Err(Error::domain("non-finite network input"));
        }
        let layers = self.widths.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut a = x.clone();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let mut z = Matrix::zeros(a.rows, fo);
            for i in 0..z.rows {
                z.row_mut(i).copy_from_slice(b);
            }
            gemm(a.rows, fi, fo, &a.data, false, w, false, 1.0, &mut z.data);
            let next = if l + 1 < layers {
                let mut h = z.clone();
                h.data.iter_mut().for_each(|v| *v = v.max(0.0));
                h
            } else {
                self.apply_output(&z)
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(ForwardCache { version: self.version, inputs, pre, output: a })
    }

    /// Forward pass on a single input vector.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.output.data)
    }

    /// Signs of every hidden pre-activation, used to detect rectifier kinks.
    pub fn hidden_signs(cache: &ForwardCache) -> Vec<bool> {
        let n = cache.pre.len();
        cache.pre[..n.saturating_sub(1)].iter().flat_map(|z| z.data.iter().map(|v| *v > 0.0)).collect()
    }

    /// Reverse-mode gradients of `sum(grad_out ⊙ output)`, summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::domain("forward cache is stale: parameters changed since it was taken"));
        }
        let out = &cache.output;
        if grad_out.rows != out.rows || grad_out.cols != out.cols {
            return Err(Error::domain("output gradient shape mismatch"));
        }
        let layers = self.widths.len() - 1;
        let rows = out.rows;

        // Through the output activation.
        let mut delta = grad_out.clone();
        match self.output {
            OutputKind::Identity => {}
            OutputKind::Tanh => {
                for (d, y) in delta.data.iter_mut().zip(&out.data) {
                    *d *= 1.0 - y * y;
                }
            }
            OutputKind::Gaussian => {
                let half = delta.cols / 2;
                let z = &cache.pre[layers - 1];
                for i in 0..rows {
                    let zr = z.row(i);
                    for (j, d) in delta.row_mut(i).iter_mut().enumerate().skip(half) {
                        *d *= sigmoid(zr[j]);
                    }
                }
            }
        }

        let mut grads = vec![0.0; self.params.len()];
        let mut input_grad = Matrix::zeros(rows, self.input_dim());
        for l in (0..layers).rev() {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let (w_off, b_off) = self.offsets(l);
            let a = &cache.inputs[l];
            // dW = aᵀ · delta
            gemm(fi, rows, fo, &a.data, true, &delta.data, false, 0.0, &mut grads[w_off..w_off + fi * fo]);
            let gb = &mut grads[b_off..b_off + fo];
            for i in 0..rows {
                for (g, d) in gb.iter_mut().zip(delta.row(i)) {
                    *g += d;
                }
            }
            // d(input) = delta · Wᵀ
            let (w, _) = self.layer(l);
            let mut da = Matrix::zeros(rows, fi);
            gemm(rows, fo, fi, &delta.data, false, w, true, 0.0, &mut da.data);
            if l == 0 {
                input_grad = da;
            } else {
                let z = &cache.pre[l - 1];
                for (d, zv) in da.data.iter_mut().zip(&z.data) {
                    if *zv <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = da;
            }
        }
        Ok(Gradients { params: grads, input: input_grad })
    }
}
