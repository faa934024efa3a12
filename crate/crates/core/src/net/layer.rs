use serde::{Deserialize, Serialize};

use crate::constraints::ConvGeometry;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Feature map shape; flat vectors are `(1, 1, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Self {
        Self { h: 1, w: 1, c: n }
    }

    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Architecture description used to build a [`crate::net::Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { channels: usize, kernel: usize, stride: usize },
    #[serde(rename = "groupsort")]
    GroupSort { group: usize },
    #[serde(rename = "fullsort")]
    FullSort,
    ConstPrelu { alpha: f64 },
    PnormPool { pool: usize, stride: usize, p: f64, mean_factor: bool },
    #[serde(rename = "maxpool")]
    MaxPool { pool: usize, stride: usize },
    #[serde(rename = "avgpool")]
    AvgPool { pool: usize, stride: usize },
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    /// `y = W x + b`, `W` of shape `(units, inputs)`.
    Dense { weight: Matrix<T>, bias: Vec<T> },
    Conv2d {
        geometry: ConvGeometry,
        kernel: Matrix<T>,
        bias: Vec<T>,
    },
    /// Sorts groups of channels at every pixel.
    GroupSort { group: usize },
    /// Sorts the whole vector.
    FullSort,
    ConstPrelu { alpha: T },
    /// Per channel `Lᴾ` norm over `pool × pool` windows.
    PnormPool {
        pool: usize,
        stride: usize,
        p: T,
        mean_factor: bool,
    },
    MaxPool { pool: usize, stride: usize },
    /// Window mean rescaled by the inverse of its Lipschitz constant
    /// `⌈pool/stride⌉ / pool`.
    AvgPool { pool: usize, stride: usize },
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::GroupSort { .. } => "groupsort",
            Layer::FullSort => "fullsort",
            Layer::ConstPrelu { .. } => "const_prelu",
            Layer::PnormPool { .. } => "pnorm_pool",
            Layer::MaxPool { .. } => "maxpool",
            Layer::AvgPool { .. } => "avgpool",
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }

    /// Output shape for the given input shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Dense { weight, bias } => {
                if weight.cols() != input.len() || bias.len() != weight.rows() {
                    return Err(Error::DimensionMismatch(format!(
                        "dense {:?} with {} biases on input {input:?}",
                        weight.shape(),
                        bias.len()
                    )));
                }
                Ok(Shape::flat(weight.rows()))
            }
            Layer::Conv2d { geometry: g, kernel, bias } => {
                g.validate()?;
                if (g.in_h, g.in_w, g.in_channels) != (input.h, input.w, input.c)
                    || kernel.shape() != (g.out_channels, g.kernel * g.kernel * g.in_channels)
                    || bias.len() != g.out_channels
                {
                    return Err(Error::DimensionMismatch(format!("conv {g:?} on input {input:?}")));
                }
                Ok(Shape::new(g.out_h, g.out_w, g.out_channels))
            }
            Layer::GroupSort { group } => {
                if *group < 2 {
                    return Err(Error::InvalidConfig(format!("group size must be >= 2, got {group}")));
                }
                Ok(input)
            }
            Layer::FullSort => Ok(input),
            Layer::ConstPrelu { alpha } => {
                if !(alpha.abs() <= T::one()) {
                    return Err(Error::InvalidConfig(format!("|alpha| must be <= 1, got {alpha}")));
                }
                Ok(input)
            }
            Layer::PnormPool { pool, stride, p, .. } => {
                if !(*p >= T::one()) {
                    return Err(Error::InvalidConfig(format!("pooling exponent must be >= 1, got {p}")));
                }
                pooled_shape(input, *pool, *stride, true)
            }
            Layer::MaxPool { pool, stride } => pooled_shape(input, *pool, *stride, true),
            Layer::AvgPool { pool, stride } => pooled_shape(input, *pool, *stride, false),
        }
    }
}

fn pooled_shape(input: Shape, pool: usize, stride: usize, disjoint: bool) -> Result<Shape> {
    if pool == 0 || stride == 0 {
        return Err(Error::InvalidGeometry("pool size and stride must be >= 1".into()));
    }
    if disjoint && stride < pool {
        return Err(Error::InvalidGeometry(format!(
            "overlapping windows (pool {pool}, stride {stride}) are not 1-Lipschitz"
        )));
    }
    if pool > input.h || pool > input.w {
        return Err(Error::EmptyWindow);
    }
    Ok(Shape::new(
        (input.h - pool) / stride + 1,
        (input.w - pool) / stride + 1,
        input.c,
    ))
}

/// Flat input indices of the window feeding output `(oy, ox, ch)`.
pub(crate) fn window(input: Shape, pool: usize, stride: usize, oy: usize, ox: usize, ch: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(pool * pool);
    for dy in 0..pool {
        for dx in 0..pool {
            let (iy, ix) = (oy * stride + dy, ox * stride + dx);
            idx.push((iy * input.w + ix) * input.c + ch);
        }
    }
    idx
}
