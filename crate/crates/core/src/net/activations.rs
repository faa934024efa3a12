//! Gradient-norm-preserving activations and pooling windows.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stable ascending order of `v`: `out[i] = v[perm[i]]`.
pub(crate) fn sort_permutation<T: Scalar>(v: &[T]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..v.len()).collect();
    perm.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    perm
}

/// Sorts each consecutive group of `group` entries ascending. A trailing
/// group shorter than `group` is left as is. Returns the output and the
/// permutation `out[i] = v[perm[i]]`.
pub(crate) fn groupsort_with_perm<T: Scalar>(v: &[T], group: usize) -> (Vec<T>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..v.len()).collect();
    let full = v.len() / group * group;
    for start in (0..full).step_by(group) {
        let local = sort_permutation(&v[start..start + group]);
        for (i, p) in local.into_iter().enumerate() {
            perm[start + i] = start + p;
        }
    }
    (perm.iter().map(|&p| v[p]).collect(), perm)
}

/// GroupSort: each group of `group` consecutive entries sorted ascending;
/// `group = 2` is MaxMin.
pub fn groupsort<T: Scalar>(v: &[T], group: usize) -> Result<Vec<T>> {
    if group < 2 {
        return Err(Error::InvalidConfig(format!("group size must be >= 2, got {group}")));
    }
    Ok(groupsort_with_perm(v, group).0)
}

pub fn fullsort<T: Scalar>(v: &[T]) -> Vec<T> {
    sort_permutation(v).into_iter().map(|p| v[p]).collect()
}

/// `v` where `v ≥ 0`, `α·v` elsewhere, with `α` clamped to `[−1, 1]`.
pub fn const_prelu<T: Scalar>(v: &[T], alpha: T) -> Vec<T> {
    let a = clamp_alpha(alpha);
    v.iter().map(|&x| if x >= T::zero() { x } else { a * x }).collect()
}

pub(crate) fn clamp_alpha<T: Scalar>(alpha: T) -> T {
    alpha.max(-T::one()).min(T::one())
}

/// `(Σ|vᵢ|ᴾ)^{1/P}`, or `((1/k)·Σ|vᵢ|ᴾ)^{1/P}` with the mean factor.
pub fn pnorm_pool<T: Scalar>(v: &[T], p: T, include_mean_factor: bool) -> Result<T> {
    if v.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if !(p >= T::one()) {
        return Err(Error::InvalidConfig(format!("pooling exponent must be >= 1, got {p}")));
    }
    Ok(pnorm_value(v, p, include_mean_factor))
}

pub(crate) fn pnorm_value<T: Scalar>(v: &[T], p: T, mean: bool) -> T {
    // scale by the largest entry so that |v|ᴾ cannot overflow
    let big = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if big == T::zero() {
        return T::zero();
    }
    let s: T = v.iter().map(|x| (x.abs() / big).powf(p)).sum();
    let s = if mean { s / T::of(v.len() as f64) } else { s };
    big * s.powf(T::one() / p)
}

/// Gradient of [`pnorm_value`] with respect to each entry, scaled by `g`.
pub(crate) fn pnorm_backward<T: Scalar>(v: &[T], p: T, mean: bool, g: T, out: &mut [T]) {
    let norm = pnorm_value(v, p, mean);
    if norm == T::zero() {
        return;
    }
    // ∂/∂vᵢ = sign(vᵢ)·(|vᵢ|/norm)^{P−1}·c, c = 1/k with the mean factor
    let c = if mean { T::one() / T::of(v.len() as f64) } else { T::one() };
    for (o, &x) in out.iter_mut().zip(v) {
        if x != T::zero() {
            let r = (x.abs() / norm).powf(p - T::one());
            *o = *o + g * c * r * x.signum();
        }
    }
}
