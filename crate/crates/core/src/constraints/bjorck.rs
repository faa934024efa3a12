use serde::{Deserialize, Serialize};

use super::spectral::{spectral_norm_estimate, PowerIterConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Björck iteration settings: `order` terms of the binomial series of
/// `(WᵀW)^{-1/2}` per step, at most `iters` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BjorckConfig {
    pub order: usize,
    pub iters: usize,
}

impl Default for BjorckConfig {
    fn default() -> Self {
        Self { order: 1, iters: 15 }
    }
}

/// Largest accepted input singular value; the iteration itself tolerates up
/// to √3 for order 1, callers are expected to pre-scale to 1.
const PRESCALE_SLACK: f64 = 1e-6;

/// Iterates `W ← W (I + Σᵢ cᵢ Qⁱ)`, `Q = I − WᵀW`, `cᵢ = (−1)ⁱ·binom(−1/2, i)`,
/// driving `W` to the nearest matrix with orthonormal columns (rows, for
/// wide matrices).
///
/// The input must already have spectral norm at most 1. Stops early once
/// `Q` is at rounding level.
pub fn bjorck_orthonormalize<T: Scalar>(w: &Matrix<T>, cfg: &BjorckConfig) -> Result<Matrix<T>> {
    validate(cfg)?;
    let sigma = spectral_norm_estimate(
        w,
        &PowerIterConfig {
            max_iters: 500,
            tol: 1e-10,
        },
    );
    if sigma.as_f64() > 1.0 + PRESCALE_SLACK {
        return Err(Error::PreScaleRequired {
            sigma: sigma.as_f64(),
        });
    }
    Ok(bjorck_unchecked(w, cfg, None))
}

pub(crate) fn validate(cfg: &BjorckConfig) -> Result<()> {
    if cfg.order == 0 {
        return Err(Error::InvalidConfig("Björck order must be >= 1".into()));
    }
    Ok(())
}

/// Series coefficients `(−1)ⁱ·binom(−1/2, i) = binom(2i, i) / 4ⁱ`, i = 1..=order.
fn series_coefficients<T: Scalar>(order: usize) -> Vec<T> {
    let mut c = Vec::with_capacity(order);
    let mut prev = 1.0f64;
    for i in 1..=order {
        prev *= (2 * i - 1) as f64 / (2 * i) as f64;
        c.push(T::of(prev));
    }
    c
}

/// Runs the iteration without the pre-scale check. When `record` is given
/// it receives the tall-oriented iterate at the start of every applied step.
pub(crate) fn bjorck_unchecked<T: Scalar>(
    w: &Matrix<T>,
    cfg: &BjorckConfig,
    mut record: Option<&mut Vec<Matrix<T>>>,
) -> Matrix<T> {
    let wide = w.rows() < w.cols();
    let mut cur = if wide { w.transpose() } else { w.clone() };
    let n = cur.cols();
    let coeffs = series_coefficients::<T>(cfg.order);
    let stop = T::epsilon() * T::of(4.0 * n.max(1) as f64);
    for _ in 0..cfg.iters {
        let q = identity_minus_gram(&cur);
        if q.max_abs() <= stop {
            break;
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.push(cur.clone());
        }
        let p = series(&q, &coeffs);
        cur = cur.matmul_unchecked(&p);
    }
    if wide {
        cur.transpose()
    } else {
        cur
    }
}

fn identity_minus_gram<T: Scalar>(w: &Matrix<T>) -> Matrix<T> {
    let mut q = w.gram().scale(-T::one());
    for i in 0..q.rows() {
        q[(i, i)] = q[(i, i)] + T::one();
    }
    q
}

/// `I + Σᵢ cᵢ Qⁱ`
fn series<T: Scalar>(q: &Matrix<T>, coeffs: &[T]) -> Matrix<T> {
    let n = q.rows();
    let mut p = Matrix::identity(n);
    let mut power = Matrix::identity(n);
    for &c in coeffs {
        power = power.matmul_unchecked(q);
        p = p.add(&power.scale(c)).expect("square");
    }
    p
}

/// Vector-Jacobian product of the recorded iteration: maps the gradient with
/// respect to the (tall-oriented) output onto the (tall-oriented) input.
pub(crate) fn bjorck_backward<T: Scalar>(
    iterates: &[Matrix<T>],
    order: usize,
    grad_out: &Matrix<T>,
) -> Matrix<T> {
    let coeffs = series_coefficients::<T>(order);
    let mut g = grad_out.clone();
    for w in iterates.iter().rev() {
        let n = w.cols();
        let q = identity_minus_gram(w);
        let mut powers = vec![Matrix::identity(n)];
        for _ in 0..order {
            let next = powers.last().unwrap().matmul_unchecked(&q);
            powers.push(next);
        }
        let p = series(&q, &coeffs);
        let g_p = w.t_matmul(&g).expect("shapes");
        let mut g_q = Matrix::zeros(n, n);
        for (i, &c) in coeffs.iter().enumerate() {
            let deg = i + 1;
            for a in 0..deg {
                let term = powers[a]
                    .matmul_unchecked(&g_p)
                    .matmul_unchecked(&powers[deg - 1 - a]);
                g_q = g_q.add(&term.scale(c)).expect("square");
            }
        }
        let sym = g_q.add(&g_q.transpose()).expect("square");
        let mut prev = g.matmul_unchecked(&p);
        prev = prev
            .sub(&w.matmul_unchecked(&sym))
            .expect("same shape");
        g = prev;
    }
    g
}
