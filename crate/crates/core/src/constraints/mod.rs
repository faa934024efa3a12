//! Weight constraints that make layers 1-Lipschitz: spectral normalization,
//! Björck orthonormalization, and the Λ correction factors for convolutions
//! and pooling.

mod bjorck;
mod conv_factor;
mod projection;
mod spectral;

pub use bjorck::{bjorck_orthonormalize, BjorckConfig};
pub use conv_factor::{
    conv_lipschitz_factor, conv_lipschitz_factor_strided, padded_zero_counts,
    pooling_lipschitz_constant, ConvGeometry, ZeroCounts, MAX_POOLING_LIPSCHITZ,
};
pub use projection::{Projection, ProjectionTape};
pub use spectral::{
    power_iteration, power_iteration_from, spectral_normalize, PowerIterConfig, SpectralEstimate,
};


