//! Zero-padded convolution on `(h, w, c)` feature maps stored pixel-major
//! with channels contiguous.
//!
//! The kernel is the `(c_out, k·k·c_in)` matrix `W̄`, column
//! `(dy·k + dx)·c_in + ci`. Output pixel `(oy, ox)` is centred on input
//! pixel `(oy·s, ox·s)`.

use crate::constraints::ConvGeometry;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

fn check<T: Scalar>(kernel: &Matrix<T>, bias: &[T], input_len: usize, g: &ConvGeometry) -> Result<()> {
    g.validate()?;
    let cols = g.kernel * g.kernel * g.in_channels;
    if kernel.shape() != (g.out_channels, cols) {
        return Err(Error::DimensionMismatch(format!(
            "kernel {:?} for geometry needing ({}, {cols})",
            kernel.shape(),
            g.out_channels
        )));
    }
    if bias.len() != g.out_channels {
        return Err(Error::DimensionMismatch(format!(
            "{} biases for {} channels",
            bias.len(),
            g.out_channels
        )));
    }
    if input_len != g.in_h * g.in_w * g.in_channels {
        return Err(Error::DimensionMismatch(format!(
            "input of length {input_len} for a {}x{}x{} map",
            g.in_h, g.in_w, g.in_channels
        )));
    }
    Ok(())
}

/// Calls `f(out_pixel, kernel_col_base, in_pixel)` for every kernel tap
/// that lands inside the input.
fn for_each_tap(g: &ConvGeometry, mut f: impl FnMut(usize, usize, usize)) {
    let half = g.half() as isize;
    let k = g.kernel;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let op = oy * g.out_w + ox;
            for dy in 0..k {
                let iy = (oy * g.stride) as isize + dy as isize - half;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for dx in 0..k {
                    let ix = (ox * g.stride) as isize + dx as isize - half;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let ip = iy as usize * g.in_w + ix as usize;
                    f(op, (dy * k + dx) * g.in_channels, ip);
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    kernel: &Matrix<T>,
    bias: &[T],
    input: &[T],
    g: &ConvGeometry,
) -> Result<Vec<T>> {
    check(kernel, bias, input.len(), g)?;
    let (ci, co) = (g.in_channels, g.out_channels);
    let mut out = vec![T::zero(); g.out_h * g.out_w * co];
    for op in 0..g.out_h * g.out_w {
        out[op * co..(op + 1) * co].copy_from_slice(bias);
    }
    for_each_tap(g, |op, col, ip| {
        let x = &input[ip * ci..(ip + 1) * ci];
        for o in 0..co {
            let w = &kernel.row(o)[col..col + ci];
            let mut acc = T::zero();
            for (a, b) in w.iter().zip(x) {
                acc = acc + *a * *b;
            }
            out[op * co + o] = out[op * co + o] + acc;
        }
    });
    Ok(out)
}

/// Gradients of `conv2d_forward` given the upstream gradient `grad_out`:
/// `(input, kernel, bias)`. The kernel gradient is skipped when
/// `want_params` is false.
pub(crate) fn conv2d_backward<T: Scalar>(
    kernel: &Matrix<T>,
    input: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    want_params: bool,
) -> (Vec<T>, Option<(Matrix<T>, Vec<T>)>) {
    let (ci, co) = (g.in_channels, g.out_channels);
    let mut gin = vec![T::zero(); input.len()];
    let mut gk = Matrix::zeros(kernel.rows(), kernel.cols());
    for_each_tap(g, |op, col, ip| {
        for o in 0..co {
            let go = grad_out[op * co + o];
            if go == T::zero() {
                continue;
            }
            let w = &kernel.row(o)[col..col + ci];
            for (gi, wv) in gin[ip * ci..(ip + 1) * ci].iter_mut().zip(w) {
                *gi = *gi + go * *wv;
            }
            if want_params {
                let x = &input[ip * ci..(ip + 1) * ci];
                for (gw, xv) in gk.row_mut(o)[col..col + ci].iter_mut().zip(x) {
                    *gw = *gw + go * *xv;
                }
            }
        }
    });
    if !want_params {
        return (gin, None);
    }
    let mut gb = vec![T::zero(); co];
    for op in 0..g.out_h * g.out_w {
        for (b, v) in gb.iter_mut().zip(&grad_out[op * co..(op + 1) * co]) {
            *b = *b + *v;
        }
    }
    (gin, Some((gk, gb)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_kernel_scales() {
        let g = ConvGeometry::same(1, 1, 1, 1, 2, 3).unwrap();
        let k = Matrix::from_rows(&[&[2.5]]);
        let x = [1.0, -2.0, 3.0, 0.5, 0.0, 4.0];
        let y = conv2d_forward(&k, &[0.0], &x, &g).unwrap();
        assert_eq!(y, x.iter().map(|v| 2.5 * v).collect::<Vec<_>>());
    }

    #[test]
    fn averaging_kernel_on_constant_image() {
        let g = ConvGeometry::same(1, 1, 3, 1, 5, 5).unwrap();
        let k = Matrix::new(1, 9, vec![1.0f64 / 9.0; 9]).unwrap();
        let y = conv2d_forward(&k, &[0.0], &[2.0; 25], &g).unwrap();
        for r in 1..4 {
            for c in 1..4 {
                assert!((y[r * 5 + c] - 2.0).abs() < 1e-14);
            }
        }
        // corners see four of nine taps
        assert!((y[0] - 8.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn geometry_mismatch() {
        let g = ConvGeometry::same(2, 1, 3, 1, 4, 4).unwrap();
        let k = Matrix::zeros(1, 18);
        assert!(conv2d_forward(&k, &[0.0], &[0.0; 16], &g).is_err());
        assert!(conv2d_forward(&Matrix::zeros(1, 9), &[0.0], &[0.0; 32], &g).is_err());
    }
}
