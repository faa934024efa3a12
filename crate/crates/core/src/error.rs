use thiserror::Error;

use crate::lp::LpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate weight: spectral norm is zero")]
    DegenerateWeight,

    #[error("pre-scale required: largest singular value {sigma} exceeds 1")]
    PreScaleRequired { sigma: f64 },

    #[error("kernel size must be odd, got {0}")]
    EvenKernel(usize),

    #[error("invalid convolution geometry: {0}")]
    InvalidGeometry(String),

    #[error("KR term undefined: batch must contain both classes")]
    KrUndefined,

    #[error("classes absent from batch: {0:?}")]
    MissingClasses(Vec<usize>),

    #[error("invalid label {label} for {context}")]
    InvalidLabel { label: i64, context: &'static str },

    #[error("empty pooling window")]
    EmptyWindow,

    #[error("point {0} carries no transported mass")]
    ZeroMassRow(usize),

    #[error("zero-length displacement")]
    ZeroDisplacement,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Lp(#[from] LpError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
