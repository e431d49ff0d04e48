//! Trainable numerical core: dense networks with exact backpropagation,
//! Adam, running observation normalization and the Gaussian policy head.

pub mod adam;
pub mod gaussian;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod normalizer;

pub use adam::Adam;
pub use matrix::Matrix;
pub use mlp::{ForwardCache, Gradients, Mlp, OutputKind};
pub use normalizer::RunningNormalizer;
