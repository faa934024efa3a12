//! Minibatch Adam on the hKR loss with the Lipschitz constraint enforced at
//! every step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{hkr_loss, hkr_multiclass_loss, LossConfig, LossValue};
use crate::net::{LayerGrad, Model};
use crate::rng::Rng;
use crate::robust::prediction_of;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate at the last step as a fraction of `learning_rate`,
    /// reached along a cosine schedule. `1.0` keeps the rate constant.
    pub final_lr_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            final_lr_fraction: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 2 and epochs >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("learning rate must be > 0 and betas in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::InvalidConfig("final_lr_fraction must be in [0, 1]".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("Adam eps must be > 0".into()));
        }
        Ok(())
    }
}

/// How the weight constraint enters training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Update the weights, then normalize them.
    #[default]
    Project,
    /// Keep unconstrained weights, normalize them in the forward pass and
    /// backpropagate through the normalization.
    Differentiate,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub constraint_mode: ConstraintMode,
}

/// Loss terms on the full training set at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub kr: f64,
    pub hinge: f64,
    pub accuracy: f64,
    /// Mean of the minibatch losses seen during the epoch.
    pub batch_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Called after every epoch with the record and the normalized model.
pub type Observer<'a, T> = dyn FnMut(&EpochRecord, &Model<T>) -> Result<()> + 'a;

/// Loss on a set of points; binary when the model has one output.
pub fn evaluate_loss<T: Scalar>(
    model: &Model<T>,
    points: &[Vec<T>],
    labels: &[i64],
    loss: &LossConfig,
) -> Result<LossValue<T>> {
    let scores: Vec<Vec<T>> = points.par_iter().map(|x| model.forward(x)).collect::<Result<_>>()?;
    loss_on_scores(&scores, labels, loss)
}

fn loss_on_scores<T: Scalar>(scores: &[Vec<T>], labels: &[i64], loss: &LossConfig) -> Result<LossValue<T>> {
    let q = scores.first().map_or(1, Vec::len);
    if q == 1 {
        let flat: Vec<T> = scores.iter().map(|s| s[0]).collect();
        hkr_loss(&flat, labels, loss)
    } else {
        let m = Matrix::new(scores.len(), q, scores.iter().flatten().copied().collect())?;
        let classes = labels
            .iter()
            .map(|&y| {
                usize::try_from(y).map_err(|_| Error::InvalidLabel {
                    label: y,
                    context: "multi-class training (expected a class index)",
                })
            })
            .collect::<Result<Vec<_>>>()?;
        hkr_multiclass_loss(&m, &classes, loss)
    }
}

pub fn accuracy<T: Scalar>(model: &Model<T>, points: &[Vec<T>], labels: &[i64]) -> Result<f64> {
    let hits: Vec<bool> = points
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &y)| Ok(prediction_of(&model.forward(x)?) == y))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / labels.len().max(1) as f64)
}

/// Stratified minibatches: every class is shuffled and dealt round-robin
/// into the same number of batches, so each batch keeps the class
/// proportions of the whole set and every point is used once per epoch.
fn stratified_batches(labels: &[i64], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let groups: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            rng.shuffle(&mut idx);
            idx
        })
        .collect();
    let smallest = groups.iter().map(Vec::len).min().unwrap_or(1).max(1);
    let count = labels.len().div_ceil(batch_size).clamp(1, smallest);
    let mut batches = vec![Vec::new(); count];
    for g in &groups {
        for (k, &i) in g.iter().enumerate() {
            batches[k % count].push(i);
        }
    }
    batches
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(model: &mut Model<T>) -> Self {
        let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model<T>, grads: &[LayerGrad<T>], cfg: &OptimizerConfig, progress: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let f = cfg.final_lr_fraction;
        let lr = T::of(cfg.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())));
        let eps = T::of(cfg.eps);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let flat: Vec<&[T]> = grads.iter().flat_map(|g| g.slices()).collect();
        for (k, p) in model.params_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let g = flat[k][i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Summed parameter gradients of the batch loss.
fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    points: &[Vec<T>],
    labels: &[i64],
    batch: &[usize],
    loss: &LossConfig,
) -> Result<(T, Vec<LayerGrad<T>>)> {
    let traces: Vec<_> = batch
        .par_iter()
        .map(|&i| model.forward_trace(&points[i]))
        .collect::<Result<_>>()?;
    let scores: Vec<Vec<T>> = traces.iter().map(|t| t.output().to_vec()).collect();
    let ys: Vec<i64> = batch.iter().map(|&i| labels[i]).collect();
    let value = loss_on_scores(&scores, &ys, loss)?;
    let q = model.output_dim();
    let per_point: Vec<Vec<LayerGrad<T>>> = traces
        .par_iter()
        .enumerate()
        .map(|(b, t)| Ok(model.backward(t, &value.grad[b * q..(b + 1) * q])?.param_grads))
        .collect::<Result<_>>()?;
    let mut iter = per_point.into_iter();
    let mut total = iter.next().expect("non-empty batch");
    for g in iter {
        for (acc, layer) in total.iter_mut().zip(&g) {
            acc.add_scaled(layer, T::one());
        }
    }
    Ok((value.total, total))
}

/// Trains `model` in place. The model is normalized on return in both
/// constraint modes.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut observer: Option<&mut Observer<'_, T>>,
) -> Result<History> {
    cfg.loss.validate()?;
    cfg.optimizer.validate()?;
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} for model input {}",
            data.dim(),
            model.input_dim()
        )));
    }
    let points: Vec<Vec<T>> = data
        .points
        .iter()
        .map(|p| p.iter().map(|&v| T::of(v)).collect())
        .collect();
    let labels = &data.labels;

    model.normalize_weights(rng)?;
    // In differentiate mode `raw` holds the unconstrained weights and
    // `model` their normalized image.
    let mut raw = model.clone();
    let mut adam = Adam::new(&mut raw);
    let mut history = History::default();

    for epoch in 0..cfg.optimizer.epochs {
        let batches = stratified_batches(labels, cfg.optimizer.batch_size, rng);
        let mut batch_losses = T::zero();
        for (b, batch) in batches.iter().enumerate() {
            let progress = (epoch as f64 + b as f64 / batches.len() as f64) / cfg.optimizer.epochs as f64;
            match cfg.constraint_mode {
                ConstraintMode::Project => {
                    let (value, grads) = batch_gradients(model, &points, labels, batch, &cfg.loss)?;
                    batch_losses = batch_losses + value;
                    adam.step(model, &grads, &cfg.optimizer, progress);
                    model.normalize_weights(rng)?;
                }
                ConstraintMode::Differentiate => {
                    let mut eff = raw.clone();
                    let tapes = eff.project(rng, true)?;
                    raw.set_warm_vectors(eff.warm_vectors().to_vec());
                    let (value, mut grads) = batch_gradients(&eff, &points, labels, batch, &cfg.loss)?;
                    batch_losses = batch_losses + value;
                    Model::pull_back(&tapes, &mut grads);
                    adam.step(&mut raw, &grads, &cfg.optimizer, progress);
                }
            }
        }
        if cfg.constraint_mode == ConstraintMode::Differentiate {
            *model = raw.clone();
            model.normalize_weights(rng)?;
            raw.set_warm_vectors(model.warm_vectors().to_vec());
        }

        let full = evaluate_loss(model, &points, labels, &cfg.loss)?;
        let record = EpochRecord {
            epoch,
            loss: full.total.as_f64(),
            kr: full.kr.as_f64(),
            hinge: full.hinge.as_f64(),
            accuracy: accuracy(model, &points, labels)?,
            batch_loss: batch_losses.as_f64() / batches.len() as f64,
        };
        if !record.loss.is_finite() || !record.batch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: if record.loss.is_finite() { record.batch_loss } else { record.loss },
            });
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(&record, model)?;
        }
        history.epochs.push(record);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_balanced_and_cover_everything() {
        let labels: Vec<i64> = (0..100).map(|i| if i < 50 { 1 } else { -1 }).collect();
        let b = stratified_batches(&labels, 16, &mut Rng::new(1));
        assert_eq!(b.len(), 7);
        let mut seen: Vec<usize> = b.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        for batch in &b {
            let pos = batch.iter().filter(|&&i| labels[i] == 1).count();
            let neg = batch.len() - pos;
            assert!(pos.abs_diff(neg) <= 1 && pos > 0);
        }
    }

    #[test]
    fn bad_optimizer_config() {
        let mut c = OptimizerConfig::default();
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = OptimizerConfig::default();
        c.beta2 = 1.0;
        assert!(c.validate().is_err());
    }
}
