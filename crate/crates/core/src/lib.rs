//! Lipschitz-constrained classifiers trained with the hinge-regularized
//! Kantorovich-Rubinstein loss.

pub mod constraints;
pub mod data;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod loss;
pub mod lp;
pub mod net;
pub mod plot;
pub mod rng;
pub mod robust;
pub mod scalar;
pub mod train;
pub mod transport;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;

pub use data::Dataset;
pub use loss::LossConfig;
pub use net::{LayerSpec, NormalizationMode, Shape};
pub use train::{train, TrainConfig};

/// Double-precision matrix.
pub type Matrix = linalg::Matrix<f64>;
/// Double-precision network.
pub type Model = net::Model<f64>;
