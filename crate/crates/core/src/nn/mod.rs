//! Dense ReLU networks: evaluation, reverse-mode gradients and spectral norms.

pub mod adam;
pub mod mlp;
pub mod spectral;
pub mod tape;

pub use adam::Adam;
pub use mlp::{Activation, Layer, Mlp};
pub use spectral::{
    lipschitz_upper_bound_l2, power_iterate, spectral_norm, SpectralProduct, SpectralTracker,
    TRAIN_POWER_ITERS, VERIFY_POWER_ITERS,
};
pub use tape::{value_and_input_grad, GradientTape, MlpGrad};
