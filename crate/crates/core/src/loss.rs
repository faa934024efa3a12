//! Hinge-regularized Kantorovich-Rubinstein losses on raw scores.
//!
//! Binary labels are `+1` / `−1`; multi-class labels are indices `0..q`.
//! All losses return their value split into the KR and hinge parts together
//! with a subgradient with respect to the scores. At a hinge kink the
//! subgradient of the hinge is taken to be zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Hinge weight λ ≥ 0.
    pub lambda: f64,
    /// Hinge margin m > 0.
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            margin: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!("margin must be finite and > 0, got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    /// `kr + λ·hinge`
    pub total: T,
    pub kr: T,
    pub hinge: T,
    /// Subgradient with respect to the scores, row-major `(batch, q)` for
    /// the multi-class loss.
    pub grad: Vec<T>,
}

struct Split {
    pos: usize,
    neg: usize,
}

fn split(scores_len: usize, labels: &[i64]) -> Result<Split> {
    if scores_len != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{scores_len} scores for {} labels",
            labels.len()
        )));
    }
    let mut s = Split { pos: 0, neg: 0 };
    for &y in labels {
        match y {
            1 => s.pos += 1,
            -1 => s.neg += 1,
            other => {
                return Err(Error::InvalidLabel {
                    label: other,
                    context: "binary loss (expected +1 or -1)",
                })
            }
        }
    }
    Ok(s)
}

fn sign<T: Scalar>(y: i64) -> T {
    if y > 0 {
        T::one()
    } else {
        -T::one()
    }
}

/// `mean_{y=−1} f − mean_{y=+1} f`
pub fn kr_term<T: Scalar>(scores: &[T], labels: &[i64]) -> Result<T> {
    Ok(kr_with_grad(scores, labels)?.0)
}

fn kr_with_grad<T: Scalar>(scores: &[T], labels: &[i64]) -> Result<(T, Vec<T>)> {
    let s = split(scores.len(), labels)?;
    if s.pos == 0 || s.neg == 0 {
        return Err(Error::KrUndefined);
    }
    let (wp, wn) = (T::one() / T::of(s.pos as f64), T::one() / T::of(s.neg as f64));
    let mut value = T::zero();
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(&f, &y)| {
            let w = if y > 0 { -wp } else { wn };
            value = value + w * f;
            w
        })
        .collect();
    Ok((value, grad))
}

/// Class-balanced hinge: the average over the classes present of
/// `mean max(0, m − y·f)`. Equals the plain batch mean on balanced batches.
pub fn hinge_term<T: Scalar>(scores: &[T], labels: &[i64], margin: T) -> Result<T> {
    Ok(hinge_with_grad(scores, labels, margin)?.0)
}

fn hinge_with_grad<T: Scalar>(scores: &[T], labels: &[i64], margin: T) -> Result<(T, Vec<T>)> {
    let s = split(scores.len(), labels)?;
    let present = (s.pos > 0) as usize + (s.neg > 0) as usize;
    if present == 0 {
        return Ok((T::zero(), vec![]));
    }
    let weight = |y: i64| {
        let n = if y > 0 { s.pos } else { s.neg };
        T::one() / T::of((n * present) as f64)
    };
    let mut value = T::zero();
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(&f, &y)| {
            let w = weight(y);
            let slack = margin - sign::<T>(y) * f;
            if slack > T::zero() {
                value = value + w * slack;
                -w * sign::<T>(y)
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((value, grad))
}

/// `kr_term + λ·hinge_term` and its subgradient.
pub fn hkr_loss<T: Scalar>(scores: &[T], labels: &[i64], cfg: &LossConfig) -> Result<LossValue<T>> {
    cfg.validate()?;
    let (kr, g_kr) = kr_with_grad(scores, labels)?;
    let (hinge, g_h) = hinge_with_grad(scores, labels, T::of(cfg.margin))?;
    let lambda = T::of(cfg.lambda);
    let grad = g_kr.iter().zip(&g_h).map(|(a, b)| *a + lambda * *b).collect();
    Ok(LossValue {
        total: kr + lambda * hinge,
        kr,
        hinge,
        grad,
    })
}

/// Sum over classes `k` of one-vs-all terms
/// `mean_{y≠k} f_k − mean_{y=k} f_k + λ·mean (m − s_k·f_k)₊` with
/// `s_k = +1` on class `k` and `−1` elsewhere. `scores` is `(batch, q)`.
pub fn hkr_multiclass_loss<T: Scalar>(scores: &Matrix<T>, labels: &[usize], cfg: &LossConfig) -> Result<LossValue<T>> {
    cfg.validate()?;
    let (n, q) = scores.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} score rows for {} labels", labels.len())));
    }
    if q < 2 {
        return Err(Error::InvalidConfig("multi-class loss needs q >= 2".into()));
    }
    let mut counts = vec![0usize; q];
    for &y in labels {
        if y >= q {
            return Err(Error::InvalidLabel {
                label: y as i64,
                context: "multi-class loss (label >= class count)",
            });
        }
        counts[y] += 1;
    }
    let missing: Vec<usize> = (0..q).filter(|&k| counts[k] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses(missing));
    }
    let margin = T::of(cfg.margin);
    let lambda = T::of(cfg.lambda);
    let inv_batch = T::one() / T::of(n as f64);
    let mut kr = T::zero();
    let mut hinge = T::zero();
    let mut grad = vec![T::zero(); n * q];
    for k in 0..q {
        let w_in = T::one() / T::of(counts[k] as f64);
        let w_out = T::one() / T::of((n - counts[k]) as f64);
        for (i, &y) in labels.iter().enumerate() {
            let f = scores[(i, k)];
            let (s, w) = if y == k { (T::one(), -w_in) } else { (-T::one(), w_out) };
            kr = kr + w * f;
            let mut g = w;
            let slack = margin - s * f;
            if slack > T::zero() {
                hinge = hinge + inv_batch * slack;
                g = g - lambda * inv_batch * s;
            }
            grad[i * q + k] = g;
        }
    }
    Ok(LossValue {
        total: kr + lambda * hinge,
        kr,
        hinge,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kr_cases() {
        assert_eq!(kr_term(&[0.0, 0.0], &[1, -1]).unwrap(), 0.0);
        assert_eq!(kr_term(&[2.0, -2.0], &[1, -1]).unwrap(), -4.0);
        assert_eq!(kr_term(&[2.5, -1.5], &[1, -1]).unwrap(), -4.0);
        assert!(matches!(kr_term(&[1.0, 2.0], &[1, 1]), Err(Error::KrUndefined)));
    }

    #[test]
    fn hinge_cases() {
        assert_eq!(hinge_term(&[1.5, -2.0], &[1, -1], 1.0).unwrap(), 0.0);
        assert_eq!(hinge_term(&[0.0, 0.0], &[1, -1], 1.0).unwrap(), 1.0);
        assert_eq!(hinge_term(&[0.5], &[1], 1.0).unwrap(), 0.5);
    }

    #[test]
    fn hkr_cases() {
        let zero = LossConfig { lambda: 0.0, margin: 1.0 };
        let v = hkr_loss(&[0.3, -0.1, 0.2], &[1, -1, -1], &zero).unwrap();
        assert_eq!(v.total, kr_term(&[0.3, -0.1, 0.2], &[1, -1, -1]).unwrap());
        let one = LossConfig { lambda: 1.0, margin: 1.0 };
        assert_eq!(hkr_loss(&[2.0, -2.0], &[1, -1], &one).unwrap().total, -4.0);
        let two = LossConfig { lambda: 2.0, margin: 1.0 };
        assert_eq!(hkr_loss(&[0.0, 0.0], &[1, -1], &two).unwrap().total, 2.0);
    }

    #[test]
    fn kink_subgradient_is_zero() {
        let cfg = LossConfig { lambda: 3.0, margin: 1.0 };
        let v = hkr_loss(&[1.0, -1.0], &[1, -1], &cfg).unwrap();
        assert_eq!(v.grad, vec![-1.0, 1.0]);
    }

    #[test]
    fn bad_labels_and_config() {
        let cfg = LossConfig::default();
        assert!(matches!(hkr_loss(&[1.0, 2.0], &[1, 0], &cfg), Err(Error::InvalidLabel { label: 0, .. })));
        let neg = LossConfig { lambda: -1.0, margin: 1.0 };
        assert!(hkr_loss(&[1.0, 2.0], &[1, -1], &neg).is_err());
        let m0 = LossConfig { lambda: 1.0, margin: 0.0 };
        assert!(m0.validate().is_err());
    }

    #[test]
    fn multiclass_missing_class_listed() {
        let s = Matrix::<f64>::zeros(3, 4);
        match hkr_multiclass_loss(&s, &[0, 2, 2], &LossConfig::default()) {
            Err(Error::MissingClasses(m)) => assert_eq!(m, vec![1, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multiclass_zero_scores() {
        let s = Matrix::<f64>::zeros(3, 3);
        let v = hkr_multiclass_loss(&s, &[0, 1, 2], &LossConfig { lambda: 0.0, margin: 1.0 }).unwrap();
        assert_eq!(v.total, 0.0);
    }
}
