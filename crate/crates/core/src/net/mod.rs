//! 1-Lipschitz networks: layers, forward evaluation, reverse-mode
//! gradients, weight normalization and model files.

mod activations;
mod conv;
mod layer;
mod model;
mod serialize;

pub use activations::{const_prelu, fullsort, groupsort, pnorm_pool};
pub use conv::conv2d_forward;
pub use layer::{Layer, LayerSpec, Shape};
pub use model::{GradientReport, LayerGrad, Model, NormalizationMode, NormalizationSettings, Trace};
pub use serialize::{load_model, model_from_json, model_to_json, save_model, MODEL_SCHEMA_VERSION};
