use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Matrix};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterConfig {
    pub max_iters: usize,
    /// Relative residual `‖W v − σ u‖ / σ` at which iteration stops.
    pub tol: f64,
}

impl Default for PowerIterConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// Dominant singular triplet estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate<T> {
    pub sigma: T,
    pub left_vec: Vec<T>,
    pub right_vec: Vec<T>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Power iteration on `WᵀW` from a random unit start vector.
pub fn power_iteration<T: Scalar>(
    w: &Matrix<T>,
    cfg: &PowerIterConfig,
    rng: &mut Rng,
) -> Result<SpectralEstimate<T>> {
    let start = rng.unit_vector::<T>(w.cols().max(1));
    power_iteration_from(w, &start, cfg)
}

/// Power iteration from a caller supplied start vector (used for warm
/// starts across training steps).
///
/// Stops once the left residual `‖W v − σ u‖` drops below `tol · σ`; since
/// `Wᵀ u = σ v` holds exactly after each half step, this bounds the distance
/// from `σ` to a singular value of `W`.
pub fn power_iteration_from<T: Scalar>(
    w: &Matrix<T>,
    start: &[T],
    cfg: &PowerIterConfig,
) -> Result<SpectralEstimate<T>> {
    if cfg.max_iters == 0 || !(cfg.tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "power iteration needs max_iters >= 1 and tol > 0, got {cfg:?}"
        )));
    }
    if start.len() != w.cols() {
        return Err(Error::DimensionMismatch(format!(
            "start vector of length {} for {} columns",
            start.len(),
            w.cols()
        )));
    }
    let (m, n) = w.shape();
    if w.max_abs() == T::zero() {
        return Ok(zero_estimate(m, n));
    }

    let mut v = start.to_vec();
    if !unit(&mut v) {
        v = basis(n, 0);
    }
    let mut z = w.matvec(&v)?;
    if l2_norm(&z) == T::zero() {
        // start vector in the null space: restart from the heaviest column
        let j = (0..n)
            .max_by(|&a, &b| {
                let ca: T = (0..m).map(|i| w[(i, a)] * w[(i, a)]).sum();
                let cb: T = (0..m).map(|i| w[(i, b)] * w[(i, b)]).sum();
                ca.partial_cmp(&cb).unwrap()
            })
            .unwrap_or(0);
        v = basis(n, j);
        z = w.matvec(&v)?;
    }

    let tol = T::of(cfg.tol);
    let mut u = z.clone();
    let mut sigma = T::zero();
    let mut converged = false;
    let mut iterations_used = 0;
    for it in 1..=cfg.max_iters {
        iterations_used = it;
        u.clone_from(&z);
        if !unit(&mut u) {
            break;
        }
        v = w.t_matvec(&u)?;
        sigma = l2_norm(&v);
        if !unit(&mut v) {
            break;
        }
        z = w.matvec(&v)?;
        let residual = l2_norm(
            &z.iter()
                .zip(&u)
                .map(|(&zi, &ui)| zi - sigma * ui)
                .collect::<Vec<_>>(),
        );
        if residual <= tol * sigma {
            converged = true;
            break;
        }
    }
    // ‖W v‖ ≥ uᵀ W v = σ; keep the tighter of the two lower bounds.
    let sz = l2_norm(&z);
    if sz > sigma {
        sigma = sz;
        u.clone_from(&z);
        unit(&mut u);
    }
    Ok(SpectralEstimate {
        sigma,
        left_vec: u,
        right_vec: v,
        iterations_used,
        converged,
    })
}

/// Divides `w` by the estimated spectral norm.
pub fn spectral_normalize<T: Scalar>(w: &Matrix<T>, est: &SpectralEstimate<T>) -> Result<Matrix<T>> {
    if !(est.sigma > T::zero()) {
        return Err(Error::DegenerateWeight);
    }
    Ok(w.scale(T::one() / est.sigma))
}

fn zero_estimate<T: Scalar>(m: usize, n: usize) -> SpectralEstimate<T> {
    SpectralEstimate {
        sigma: T::zero(),
        left_vec: basis(m.max(1), 0),
        right_vec: basis(n.max(1), 0),
        iterations_used: 0,
        converged: true,
    }
}

fn basis<T: Scalar>(n: usize, j: usize) -> Vec<T> {
    let mut e = vec![T::zero(); n];
    if n > 0 {
        e[j] = T::one();
    }
    e
}

fn unit<T: Scalar>(v: &mut [T]) -> bool {
    crate::linalg::normalize_in_place(v) > T::zero()
}

/// Deterministic estimate used where no generator is at hand.
pub(crate) fn spectral_norm_estimate<T: Scalar>(w: &Matrix<T>, cfg: &PowerIterConfig) -> T {
    let n = w.cols();
    let start: Vec<T> = (0..n).map(|j| T::of(1.0 + 0.37 * j as f64)).collect();
    power_iteration_from(w, &start, cfg)
        .map(|e| e.sigma)
        .unwrap_or_else(|_| T::zero())
}
