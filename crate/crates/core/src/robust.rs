//! Certified L2 radii, gradient attacks, and the comparison of attack and
//! transport displacements with the gradient direction.
//!
//! Binary models (`q = 1`) predict `+1` when `f(x) ≥ 0` and `−1` otherwise.
//! Multi-class models predict the argmax (lowest index on ties). An attack
//! succeeds when the prediction at `x + δ` differs from the prediction at
//! `x`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, l2_norm, normalize_in_place};
use crate::net::Model;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub index: usize,
    pub label: i64,
    pub prediction: i64,
    /// `|f(x)|` (binary) or `M_f(x)/2` (multi-class); zero when misclassified.
    pub certified_radius: f64,
    /// `y·f(x)` (binary) or `f_y(x) − max_{i≠y} f_i(x)`.
    pub score_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult<T> {
    pub perturbation: Vec<T>,
    pub l2_size: f64,
    pub success: bool,
    /// Forward/backward evaluations used.
    pub queries: usize,
    /// A zero gradient forced a random step direction.
    pub random_direction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub steps: usize,
    /// Step length; `2.5·eps/steps` when absent.
    pub step_size: Option<f64>,
    /// Number of starts; the first is at `x`, the rest uniformly in the ball.
    pub restarts: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: None,
            restarts: 3,
        }
    }
}

impl PgdConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig("PGD needs steps >= 1 and restarts >= 1".into()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig(format!("PGD step size must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted label from raw scores.
pub fn prediction_of<T: Scalar>(scores: &[T]) -> i64 {
    if scores.len() == 1 {
        if scores[0] >= T::zero() {
            1
        } else {
            -1
        }
    } else {
        argmax(scores) as i64
    }
}

pub fn predict<T: Scalar>(model: &Model<T>, x: &[T]) -> Result<i64> {
    Ok(prediction_of(&model.forward(x)?))
}

/// `(f_y − max_{i≠y} f_i, runner-up index)`
fn margin_multi<T: Scalar>(scores: &[T], y: usize) -> (T, usize) {
    let mut runner = if y == 0 { 1 } else { 0 };
    for i in 0..scores.len() {
        if i != y && scores[i] > scores[runner] {
            runner = i;
        }
    }
    (scores[y] - scores[runner], runner)
}

fn check_label(q: usize, label: i64) -> Result<()> {
    let ok = if q == 1 { label == 1 || label == -1 } else { label >= 0 && (label as usize) < q };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidLabel {
            label,
            context: "certificate (expected ±1 for one output, a class index otherwise)",
        })
    }
}

pub fn certify<T: Scalar>(model: &Model<T>, index: usize, x: &[T], label: i64) -> Result<Certificate> {
    let scores = model.forward(x)?;
    let q = scores.len();
    check_label(q, label)?;
    let prediction = prediction_of(&scores);
    let (margin, radius) = if q == 1 {
        let f = scores[0].as_f64();
        let m = label as f64 * f;
        (m, if prediction == label { f.abs() } else { 0.0 })
    } else {
        let (m, _) = margin_multi(&scores, label as usize);
        let m = m.as_f64();
        (m, m.max(0.0) / 2.0)
    };
    Ok(Certificate {
        index,
        label,
        prediction,
        certified_radius: radius,
        score_margin: margin,
    })
}

pub fn certify_batch<T: Scalar>(model: &Model<T>, points: &[Vec<T>], labels: &[i64]) -> Result<Vec<Certificate>> {
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch("points and labels".into()));
    }
    points
        .par_iter()
        .zip(labels.par_iter())
        .enumerate()
        .map(|(i, (x, &y))| certify(model, i, x, y))
        .collect()
}

/// Attack objective: positive while the clean prediction holds.
struct Objective<'a, T> {
    model: &'a Model<T>,
    clean: i64,
}

impl<T: Scalar> Objective<'_, T> {
    /// `(value, gradient)`; binary `±f`, multi-class `f_t − f_runner-up`
    /// with the runner-up chosen at the current point.
    fn eval(&self, x: &[T]) -> Result<(T, Vec<T>, i64)> {
        let trace = self.model.forward_trace(x)?;
        let scores = trace.output().to_vec();
        let q = scores.len();
        let mut up = vec![T::zero(); q];
        let value = if q == 1 {
            let s = T::of(self.clean as f64);
            up[0] = s;
            s * scores[0]
        } else {
            let t = self.clean as usize;
            let (m, r) = margin_multi(&scores, t);
            up[t] = T::one();
            up[r] = -T::one();
            m
        };
        let g = self.model.backward_input(&trace, &up)?;
        Ok((value, g, prediction_of(&scores)))
    }
}

/// Unit descent direction `−∇g/‖∇g‖`, or a random unit vector when the
/// gradient vanishes.
fn descent<T: Scalar>(grad: &[T], rng: &mut Rng) -> (Vec<T>, bool) {
    let mut d: Vec<T> = grad.iter().map(|&g| -g).collect();
    if normalize_in_place(&mut d) > T::zero() {
        (d, false)
    } else {
        (rng.unit_vector(grad.len()), true)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("attack radius must be > 0, got {eps}")));
    }
    Ok(())
}

/// Single normalized gradient step of length `eps`.
pub fn fgm_attack<T: Scalar>(model: &Model<T>, x: &[T], eps: f64, rng: &mut Rng) -> Result<AttackResult<T>> {
    check_eps(eps)?;
    let clean = predict(model, x)?;
    let obj = Objective { model, clean };
    let (_, g, _) = obj.eval(x)?;
    let (dir, random) = descent(&g, rng);
    let delta: Vec<T> = dir.iter().map(|&d| d * T::of(eps)).collect();
    let adv: Vec<T> = x.iter().zip(&delta).map(|(a, b)| *a + *b).collect();
    let success = predict(model, &adv)? != clean;
    Ok(AttackResult {
        l2_size: l2_norm(&delta).as_f64(),
        perturbation: delta,
        success,
        queries: 3,
        random_direction: random,
    })
}

fn project_ball<T: Scalar>(delta: &mut [T], eps: T) {
    let n = l2_norm(delta);
    if n > eps {
        let s = eps / n;
        for d in delta.iter_mut() {
            *d = *d * s;
        }
    }
}

/// Projected normalized-gradient descent on the attack objective inside the
/// L2 ball of radius `eps`. Reports the smallest flipping perturbation seen
/// over all iterates and restarts, or, without a flip, the final iterate of
/// the restart that got closest to the boundary.
pub fn pgd_attack<T: Scalar>(
    model: &Model<T>,
    x: &[T],
    eps: f64,
    cfg: &PgdConfig,
    rng: &mut Rng,
) -> Result<AttackResult<T>> {
    check_eps(eps)?;
    cfg.validate()?;
    let clean = predict(model, x)?;
    let obj = Objective { model, clean };
    let step = T::of(cfg.step_size.unwrap_or(2.5 * eps / cfg.steps as f64));
    let eps_t = T::of(eps);
    let d = x.len();
    let mut queries = 1;
    let mut random_direction = false;
    let mut best_flip: Option<Vec<T>> = None;
    let mut best_miss: Option<(T, Vec<T>)> = None;

    for restart in 0..cfg.restarts {
        let mut delta = if restart == 0 {
            vec![T::zero(); d]
        } else {
            let r = eps * rng.uniform().powf(1.0 / d as f64);
            rng.unit_vector::<T>(d).into_iter().map(|u| u * T::of(r)).collect()
        };
        let mut last_value = T::infinity();
        for _ in 0..cfg.steps {
            let point: Vec<T> = x.iter().zip(&delta).map(|(a, b)| *a + *b).collect();
            let (value, g, _) = obj.eval(&point)?;
            queries += 1;
            last_value = value;
            let (dir, random) = descent(&g, rng);
            random_direction |= random;
            for (dv, u) in delta.iter_mut().zip(&dir) {
                *dv = *dv + step * *u;
            }
            project_ball(&mut delta, eps_t);
            let moved: Vec<T> = x.iter().zip(&delta).map(|(a, b)| *a + *b).collect();
            let scores = model.forward(&moved)?;
            queries += 1;
            if prediction_of(&scores) != clean {
                let size = l2_norm(&delta);
                if best_flip.as_ref().is_none_or(|b| size < l2_norm(b)) {
                    best_flip = Some(delta.clone());
                }
            }
        }
        if best_miss.as_ref().is_none_or(|(v, _)| last_value < *v) {
            best_miss = Some((last_value, delta));
        }
    }

    let (perturbation, success) = match best_flip {
        Some(p) => (p, true),
        None => (best_miss.map(|(_, p)| p).unwrap_or_else(|| vec![T::zero(); d]), false),
    };
    Ok(AttackResult {
        l2_size: l2_norm(&perturbation).as_f64(),
        perturbation,
        success,
        queries,
        random_direction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinAdversarial<T> {
    /// Smallest flipping perturbation size found; the cap when `capped`.
    pub size: f64,
    /// `x + δ` for the smallest flip found.
    pub point: Option<Vec<T>>,
    /// No flip was found within the search cap.
    pub capped: bool,
}

/// Bisection on the attack radius with PGD as the inner search. `cap` bounds
/// the search (four times the data diameter by convention).
pub fn min_adv_perturbation<T: Scalar>(
    model: &Model<T>,
    x: &[T],
    tol: f64,
    cap: f64,
    cfg: &PgdConfig,
    rng: &mut Rng,
) -> Result<MinAdversarial<T>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be > 0, got {tol}")));
    }
    check_eps(cap)?;
    let first = pgd_attack(model, x, cap, cfg, rng)?;
    if !first.success {
        return Ok(MinAdversarial {
            size: cap,
            point: None,
            capped: true,
        });
    }
    let mut best = first.perturbation;
    let mut hi = first.l2_size;
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let r = pgd_attack(model, x, mid, cfg, rng)?;
        if r.success {
            hi = r.l2_size.min(mid);
            best = r.perturbation;
        } else {
            lo = mid;
        }
    }
    Ok(MinAdversarial {
        size: hi,
        point: Some(x.iter().zip(&best).map(|(a, b)| *a + *b).collect()),
        capped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Cosine of `adv − x` with `−sign(f(x))·∇f(x)`; `None` for a zero
    /// displacement.
    pub cos_adv: Option<f64>,
    pub cos_transport: Option<f64>,
    /// Least-squares `c` in `adv ≈ x − c·f(x)·∇f(x)`.
    pub c_adv: Option<f64>,
    /// Least-squares `c'` in `tr(x) ≈ x − c'·f(x)·∇f(x)`.
    pub c_transport: Option<f64>,
}

/// Compares the attack and transport displacements of `x` with the
/// gradient direction of a binary model.
pub fn direction_alignment<T: Scalar>(
    model: &Model<T>,
    x: &[T],
    plan_image: &[T],
    adv_point: &[T],
) -> Result<Alignment> {
    if model.output_dim() != 1 {
        return Err(Error::InvalidConfig("direction alignment needs a binary model".into()));
    }
    if plan_image.len() != x.len() || adv_point.len() != x.len() {
        return Err(Error::DimensionMismatch("alignment points".into()));
    }
    let (scores, grad) = model.input_gradient(x, 0)?;
    let f = scores[0].as_f64();
    let g: Vec<f64> = grad.iter().map(|v| v.as_f64()).collect();
    // −f·∇f; its cosine with a displacement equals that of −sign(f)·∇f
    let reference: Vec<f64> = g.iter().map(|v| -f * v).collect();
    let ref_sq = dot(&reference, &reference);
    if !(ref_sq > 0.0) {
        return Err(Error::ZeroDisplacement);
    }
    let measure = |p: &[T]| -> (Option<f64>, Option<f64>) {
        let disp: Vec<f64> = p.iter().zip(x).map(|(a, b)| a.as_f64() - b.as_f64()).collect();
        match cosine(&disp, &reference) {
            Some(c) => (Some(c), Some(dot(&disp, &reference) / ref_sq)),
            None => (None, None),
        }
    };
    let (cos_adv, c_adv) = measure(adv_point);
    let (cos_transport, c_transport) = measure(plan_image);
    Ok(Alignment {
        cos_adv,
        cos_transport,
        c_adv,
        c_transport,
    })
}

/// One row of the certification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationRow {
    pub index: usize,
    pub label: i64,
    pub prediction: i64,
    pub radius: f64,
    pub min_adv_found: f64,
    /// `min_adv_found / radius`; NaN when the radius is zero.
    pub ratio: f64,
}

/// Certificates plus the smallest adversarial perturbation found for each
/// point. Points are processed in parallel, each with its own generator
/// forked from `rng`.
pub fn certification_report<T: Scalar>(
    model: &Model<T>,
    points: &[Vec<T>],
    labels: &[i64],
    tol: f64,
    cap: f64,
    cfg: &PgdConfig,
    rng: &Rng,
) -> Result<Vec<CertificationRow>> {
    let certs = certify_batch(model, points, labels)?;
    certs
        .into_par_iter()
        .map(|c| {
            let mut local = rng.fork(c.index as u64);
            let adv = min_adv_perturbation(model, &points[c.index], tol, cap, cfg, &mut local)?;
            let ratio = if c.certified_radius > 0.0 { adv.size / c.certified_radius } else { f64::NAN };
            Ok(CertificationRow {
                index: c.index,
                label: c.label,
                prediction: c.prediction,
                radius: c.certified_radius,
                min_adv_found: adv.size,
                ratio,
            })
        })
        .collect()
}

/// Fraction of points that are correctly classified and survive a PGD
/// attack of radius `eps`, for each radius.
pub fn attack_sweep<T: Scalar>(
    model: &Model<T>,
    points: &[Vec<T>],
    labels: &[i64],
    eps_list: &[f64],
    cfg: &PgdConfig,
    rng: &Rng,
) -> Result<Vec<(f64, f64)>> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::DimensionMismatch("points and labels".into()));
    }
    eps_list
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            let base = rng.fork(e as u64);
            let robust: Vec<bool> = points
                .par_iter()
                .zip(labels.par_iter())
                .enumerate()
                .map(|(i, (x, &y))| -> Result<bool> {
                    if predict(model, x)? != y {
                        return Ok(false);
                    }
                    let mut local = base.fork(i as u64);
                    Ok(!pgd_attack(model, x, eps, cfg, &mut local)?.success)
                })
                .collect::<Result<_>>()?;
            let acc = robust.iter().filter(|&&r| r).count() as f64 / points.len() as f64;
            Ok((eps, acc))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::{Layer, NormalizationMode, NormalizationSettings, Shape};

    fn linear(w: &[f64], b: f64) -> Model<f64> {
        Model::new(
            Shape::flat(w.len()),
            vec![Layer::Dense {
                weight: Matrix::new(1, w.len(), w.to_vec()).unwrap(),
                bias: vec![b],
            }],
            NormalizationMode::Spectral,
            NormalizationSettings::default(),
        )
        .unwrap()
    }

    fn multi(rows: &[&[f64]]) -> Model<f64> {
        let weight = Matrix::from_rows(rows);
        let bias = vec![0.0; weight.rows()];
        Model::new(
            Shape::flat(weight.cols()),
            vec![Layer::Dense { weight, bias }],
            NormalizationMode::Spectral,
            NormalizationSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn binary_certificate() {
        let m = linear(&[1.0, 0.0], 0.0);
        let c = certify(&m, 0, &[0.5, 3.0], 1).unwrap();
        assert_eq!(c.certified_radius, 0.5);
        assert_eq!(c.prediction, 1);
        let wrong = certify(&m, 0, &[0.5, 3.0], -1).unwrap();
        assert_eq!(wrong.certified_radius, 0.0);
    }

    #[test]
    fn multiclass_certificate() {
        let m = multi(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let c = certify(&m, 0, &[1.0, 0.2, -1.0], 0).unwrap();
        assert!((c.score_margin - 0.8).abs() < 1e-15);
        assert!((c.certified_radius - 0.4).abs() < 1e-15);
        let miss = certify(&m, 0, &[1.0, 0.2, -1.0], 2).unwrap();
        assert_eq!(miss.certified_radius, 0.0);
        assert!(certify(&m, 0, &[1.0, 0.2, -1.0], 3).is_err());
    }

    #[test]
    fn fgm_on_linear_model() {
        let s = 0.6f64;
        let w = [s, (1.0 - s * s).sqrt()];
        let m = linear(&w, 0.0);
        let x = [1.0, 0.5];
        let f = dot(&w, &x);
        let mut rng = Rng::new(0);
        let below = fgm_attack(&m, &x, 0.99 * f, &mut rng).unwrap();
        assert!(!below.success);
        for (d, wv) in below.perturbation.iter().zip(&w) {
            assert!((d + 0.99 * f * wv).abs() < 1e-12);
        }
        assert!(fgm_attack(&m, &x, 1.01 * f, &mut rng).unwrap().success);
    }

    #[test]
    fn fgm_zero_gradient_flags_random_step() {
        let m = linear(&[0.0, 0.0], 1.0);
        let r = fgm_attack(&m, &[0.0, 0.0], 0.5, &mut Rng::new(3)).unwrap();
        assert!(r.random_direction);
        assert!((r.l2_size - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_step_pgd_is_fgm() {
        let m = linear(&[0.8, -0.6], 0.1);
        let x = [0.3, 0.2];
        let cfg = PgdConfig {
            steps: 1,
            step_size: Some(0.25),
            restarts: 1,
        };
        let p = pgd_attack(&m, &x, 0.25, &cfg, &mut Rng::new(1)).unwrap();
        let f = fgm_attack(&m, &x, 0.25, &mut Rng::new(1)).unwrap();
        for (a, b) in p.perturbation.iter().zip(&f.perturbation) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(p.success, f.success);
    }

    #[test]
    fn min_adv_on_linear_model() {
        let m = linear(&[0.6, 0.8], -0.2);
        let x = [1.0, 1.0];
        let f = m.forward(&x).unwrap()[0];
        let r = min_adv_perturbation(&m, &x, 1e-4, 10.0, &PgdConfig::default(), &mut Rng::new(2)).unwrap();
        assert!(!r.capped);
        assert!((r.size - f).abs() < 1e-4 + 1e-9, "{} vs {}", r.size, f);
    }

    #[test]
    fn min_adv_capped() {
        let m = linear(&[0.6, 0.8], 100.0);
        let r = min_adv_perturbation(&m, &[0.0, 0.0], 1e-3, 1.0, &PgdConfig::default(), &mut Rng::new(2)).unwrap();
        assert!(r.capped);
        assert_eq!(r.size, 1.0);
    }

    #[test]
    fn alignment_cases() {
        let w = [0.6, 0.8];
        let m = linear(&w, 0.0);
        let x = [1.0, 2.0];
        let f = dot(&w, &x);
        let adv: Vec<f64> = x.iter().zip(&w).map(|(a, g)| a - f * g).collect();
        let a = direction_alignment(&m, &x, &x, &adv).unwrap();
        assert!((a.cos_adv.unwrap() - 1.0).abs() < 1e-12);
        assert!((a.c_adv.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(a.cos_transport, None);
    }
}
