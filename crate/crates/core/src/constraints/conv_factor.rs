//! Lipschitz correction factors for zero-padded convolutions and pooling.
//!
//! A convolution is the product `Ȳ = W̄ · X̄` where `W̄` is the `(L, c·k²)`
//! kernel matrix and `X̄` duplicates every input pixel up to `k²` times
//! (`⌈k/s⌉²` with stride). `‖W̄‖` alone therefore underestimates the layer's
//! Lipschitz constant; Λ is the average duplication factor of the non-padded
//! inputs. It is an estimate, not a strict bound: kernels concentrated on
//! their centre can exceed it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max pooling over non-overlapping windows is 1-Lipschitz.
pub const MAX_POOLING_LIPSCHITZ: f64 = 1.0;

/// Shape of a same-padded convolution. `kernel = 2·half + 1`; with stride
/// `s`, `in_w = s·out_w + rw` for some `0 ≤ rw < s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub in_w: usize,
    pub in_h: usize,
    pub out_w: usize,
    pub out_h: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    /// Geometry with outputs at input positions `0, s, 2s, …`, giving
    /// `out = ⌊in / s⌋`.
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidGeometry("stride must be >= 1".into()));
        }
        let g = Self {
            kernel,
            stride,
            in_w,
            in_h,
            out_w: in_w / stride,
            out_h: in_h / stride,
            in_channels,
            out_channels,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn half(&self) -> usize {
        self.kernel / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::EvenKernel(self.kernel));
        }
        if self.stride == 0 {
            return Err(Error::InvalidGeometry("stride must be >= 1".into()));
        }
        if self.in_w == 0 || self.in_h == 0 || self.out_w == 0 || self.out_h == 0 {
            return Err(Error::InvalidGeometry(format!("empty feature map in {self:?}")));
        }
        for (inp, out, axis) in [(self.in_w, self.out_w, "w"), (self.in_h, self.out_h, "h")] {
            let used = self.stride * out;
            if used > inp || inp - used >= self.stride {
                return Err(Error::InvalidGeometry(format!(
                    "{axis}: {inp} != {}·{out} + r with 0 <= r < {}",
                    self.stride, self.stride
                )));
            }
        }
        Ok(())
    }
}

/// Zero-padded entries of the duplication matrix along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroCounts {
    /// Zeros in the leading columns, `(ᾱ+1)(ᾱs + 2β̄)/2` with `k̄ = ᾱs + β̄`.
    pub left: usize,
    /// Zeros in the trailing columns, `(α_w+1)(k̄ − γ_w + s·α_w/2)`.
    pub right: usize,
}

/// Counts padded zeros for a line of `width` inputs, kernel `k`, stride `s`,
/// with outputs centred on positions `0, s, 2s, …`.
pub fn padded_zero_counts(kernel: usize, stride: usize, width: usize) -> Result<ZeroCounts> {
    if kernel % 2 == 0 {
        return Err(Error::EvenKernel(kernel));
    }
    if stride == 0 || width == 0 {
        return Err(Error::InvalidGeometry("stride and width must be >= 1".into()));
    }
    let half = (kernel / 2) as i64;
    let s = stride as i64;
    let w = width as i64;

    let alpha = half / s;
    let beta = half % s;
    let left = (alpha + 1) * (alpha * s + 2 * beta) / 2;

    // γ_w: distance from the last input to the first output centre whose
    // half-kernel reaches it; negative when no centre does.
    let first = div_ceil(w - 1 - half, s).max(0);
    let gamma = w - 1 - s * first;
    let right = if gamma < 0 {
        0
    } else {
        let alpha_w = gamma / s;
        (alpha_w + 1) * (2 * (half - gamma) + s * alpha_w) / 2
    };
    Ok(ZeroCounts {
        left: left as usize,
        right: right as usize,
    })
}

fn div_ceil(a: i64, b: i64) -> i64 {
    let q = a.div_euclid(b);
    if a.rem_euclid(b) == 0 {
        q
    } else {
        q + 1
    }
}

/// Λ for a stride-1 same convolution:
/// `√((k·w − k̄(k̄+1))(k·h − k̄(k̄+1)) / (h·w))`.
pub fn conv_lipschitz_factor(g: &ConvGeometry) -> Result<f64> {
    if g.kernel % 2 == 0 {
        return Err(Error::EvenKernel(g.kernel));
    }
    if g.stride != 1 {
        return Err(Error::InvalidGeometry(format!(
            "stride-1 factor requested for stride {}",
            g.stride
        )));
    }
    if g.kernel > g.in_w.min(g.in_h) {
        return Err(Error::InvalidGeometry(format!(
            "kernel {} larger than {}x{} input",
            g.kernel, g.in_h, g.in_w
        )));
    }
    let k = g.kernel as f64;
    let half = g.half() as f64;
    let (w, h) = (g.in_w as f64, g.in_h as f64);
    let pad = half * (half + 1.0);
    Ok(((k * w - pad) * (k * h - pad) / (h * w)).sqrt())
}

/// Λ for a strided same convolution:
/// `√((k·wo − zl − zr_w)(k·ho − zl − zr_h) / (h·w))`.
pub fn conv_lipschitz_factor_strided(g: &ConvGeometry) -> Result<f64> {
    g.validate()?;
    let zw = padded_zero_counts(g.kernel, g.stride, g.in_w)?;
    let zh = padded_zero_counts(g.kernel, g.stride, g.in_h)?;
    let k = g.kernel as i64;
    let used_w = k * g.out_w as i64 - zw.left as i64 - zw.right as i64;
    let used_h = k * g.out_h as i64 - zh.left as i64 - zh.right as i64;
    if used_w <= 0 || used_h <= 0 {
        return Err(Error::InvalidGeometry(format!(
            "no non-padded inputs for {g:?}"
        )));
    }
    Ok(((used_w * used_h) as f64 / (g.in_h * g.in_w) as f64).sqrt())
}

/// Lipschitz constant `⌈po/s⌉ / po` of average pooling with window `po`
/// and stride `s`.
pub fn pooling_lipschitz_constant(pool: usize, stride: usize) -> Result<f64> {
    if pool == 0 || stride == 0 {
        return Err(Error::InvalidGeometry("pool size and stride must be >= 1".into()));
    }
    Ok(pool.div_ceil(stride) as f64 / pool as f64)
}
