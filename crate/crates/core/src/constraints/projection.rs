//! Weight projections with a recorded tape so that training can either
//! project after each step or differentiate through the projection.

use serde::{Deserialize, Serialize};

use super::bjorck::{bjorck_backward, bjorck_unchecked, validate, BjorckConfig};
use super::spectral::{power_iteration_from, PowerIterConfig};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Matrix};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// `W / σ(W)`
    Spectral,
    /// Björck iteration applied to `W / σ(W)`.
    Bjorck(BjorckConfig),
    /// Every row rescaled to unit norm (one 1-Lipschitz function per output).
    RowUnit,
}

#[derive(Debug, Clone)]
pub struct ProjectionTape<T> {
    divisor: T,
    kind: TapeKind<T>,
}

#[derive(Debug, Clone)]
enum TapeKind<T> {
    RowUnit {
        raw: Matrix<T>,
        norms: Vec<T>,
    },
    Spectral {
        raw: Matrix<T>,
        sigma: T,
        u: Vec<T>,
        v: Vec<T>,
    },
    Bjorck {
        raw: Matrix<T>,
        sigma: T,
        u: Vec<T>,
        v: Vec<T>,
        order: usize,
        wide: bool,
        iterates: Vec<Matrix<T>>,
    },
}

impl Projection {
    /// Returns `project(raw) / divisor` and the tape needed to pull
    /// gradients back onto `raw`. `warm` holds the right singular vector
    /// between calls.
    pub fn apply<T: Scalar>(
        &self,
        raw: &Matrix<T>,
        divisor: T,
        power: &PowerIterConfig,
        warm: &mut Option<Vec<T>>,
        rng: &mut Rng,
    ) -> Result<(Matrix<T>, ProjectionTape<T>)> {
        if !(divisor > T::zero()) {
            return Err(Error::InvalidConfig("projection divisor must be > 0".into()));
        }
        match *self {
            Projection::RowUnit => {
                let norms: Vec<T> = (0..raw.rows()).map(|i| l2_norm(raw.row(i))).collect();
                if norms.iter().any(|&n| n <= T::zero()) {
                    return Err(Error::DegenerateWeight);
                }
                let mut out = raw.clone();
                for (i, &n) in norms.iter().enumerate() {
                    for x in out.row_mut(i) {
                        *x = *x / (n * divisor);
                    }
                }
                let tape = ProjectionTape {
                    divisor,
                    kind: TapeKind::RowUnit {
                        raw: raw.clone(),
                        norms,
                    },
                };
                Ok((out, tape))
            }
            Projection::Spectral => {
                let (sigma, u, v) = estimate(raw, power, warm, rng)?;
                let out = raw.scale(T::one() / (sigma * divisor));
                let tape = ProjectionTape {
                    divisor,
                    kind: TapeKind::Spectral {
                        raw: raw.clone(),
                        sigma,
                        u,
                        v,
                    },
                };
                Ok((out, tape))
            }
            Projection::Bjorck(cfg) => {
                validate(&cfg)?;
                let (sigma, u, v) = estimate(raw, power, warm, rng)?;
                let scaled = raw.scale(T::one() / sigma);
                let mut iterates = Vec::new();
                let ortho = bjorck_unchecked(&scaled, &cfg, Some(&mut iterates));
                let out = ortho.scale(T::one() / divisor);
                let tape = ProjectionTape {
                    divisor,
                    kind: TapeKind::Bjorck {
                        raw: raw.clone(),
                        sigma,
                        u,
                        v,
                        order: cfg.order,
                        wide: raw.rows() < raw.cols(),
                        iterates,
                    },
                };
                Ok((out, tape))
            }
        }
    }
}

fn estimate<T: Scalar>(
    raw: &Matrix<T>,
    power: &PowerIterConfig,
    warm: &mut Option<Vec<T>>,
    rng: &mut Rng,
) -> Result<(T, Vec<T>, Vec<T>)> {
    let start = match warm.as_ref() {
        Some(v) if v.len() == raw.cols() => v.clone(),
        _ => rng.unit_vector(raw.cols()),
    };
    let est = power_iteration_from(raw, &start, power)?;
    if !(est.sigma > T::zero()) {
        return Err(Error::DegenerateWeight);
    }
    *warm = Some(est.right_vec.clone());
    Ok((est.sigma, est.left_vec, est.right_vec))
}

/// Gradient of `W / σ(W)` with `σ = uᵀ W v` and the singular vectors held
/// fixed: `G/σ − ⟨G, W⟩/σ² · u vᵀ`.
fn spectral_backward<T: Scalar>(raw: &Matrix<T>, sigma: T, u: &[T], v: &[T], g: &Matrix<T>) -> Matrix<T> {
    let inner = dot(g.as_slice(), raw.as_slice());
    let coef = inner / (sigma * sigma);
    Matrix::from_fn(raw.rows(), raw.cols(), |i, j| g[(i, j)] / sigma - coef * u[i] * v[j])
}

impl<T: Scalar> ProjectionTape<T> {
    /// Pulls the gradient with respect to the projected weight back onto the
    /// raw weight.
    pub fn backward(&self, grad: &Matrix<T>) -> Matrix<T> {
        let g = grad.scale(T::one() / self.divisor);
        match &self.kind {
            TapeKind::RowUnit { raw, norms } => {
                let mut out = g.clone();
                for (i, &n) in norms.iter().enumerate() {
                    let r = raw.row(i);
                    let gi = g.row(i);
                    let proj = dot(gi, r) / (n * n);
                    for ((o, &gv), &rv) in out.row_mut(i).iter_mut().zip(gi).zip(r) {
                        *o = (gv - proj * rv) / n;
                    }
                }
                out
            }
            TapeKind::Spectral { raw, sigma, u, v } => spectral_backward(raw, *sigma, u, v, &g),
            TapeKind::Bjorck {
                raw,
                sigma,
                u,
                v,
                order,
                wide,
                iterates,
            } => {
                let tall = if *wide { g.transpose() } else { g };
                let back = bjorck_backward(iterates, *order, &tall);
                let g_scaled = if *wide { back.transpose() } else { back };
                spectral_backward(raw, *sigma, u, v, &g_scaled)
            }
        }
    }
}
