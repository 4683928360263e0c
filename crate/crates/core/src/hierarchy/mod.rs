//! Latent-variable models: the lossless hierarchy, the lossy hyperprior and
//! the small layer set both are built from.

pub mod hyperprior;
pub mod layers;
pub mod model;
pub mod tensor;

pub use hyperprior::{toy_hyperprior, HyperpriorModel};
pub use layers::{forward, LayerSpec};
pub use model::{toy_model, HierarchicalModel, LayerCosts, Latents, Params};
pub use tensor::TensorMap;
