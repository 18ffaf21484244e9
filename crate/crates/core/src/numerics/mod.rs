//! Minimal dense numerics: matrices, a reverse-mode tape, MLPs, Adam,
//! diagonal Gaussians and seeded randomness.

mod adam;
mod gaussian;
mod mlp;
mod rng;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gaussian::{
    kl_diag_gaussians, kl_rows_on_tape, reparameterize_on_tape, split_gaussian_head,
    variance_from_raw, DiagonalGaussian, VAR_FLOOR,
};
pub use mlp::{Activation, Layer, MlpParams, MlpVars};
pub use rng::{derive_seed, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor2;

pub(crate) use tape::{sigmoid, softplus};
