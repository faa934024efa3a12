//! Synthetic datasets and CSV input/output.
//!
//! CSV files have a header `x1,...,xd,label` and one point per row. Binary
//! labels are `+1` / `−1`, multi-class labels are `0..q`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::distance;
use crate::rng::Rng;
use crate::transport::DiscreteInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<i64>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points and {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(first) = points.first() {
            let d = first.len();
            if d == 0 || points.iter().any(|p| p.len() != d) {
                return Err(Error::DimensionMismatch("points of unequal or zero dimension".into()));
            }
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Distinct labels in increasing order.
    pub fn classes(&self) -> Vec<i64> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Indices of the points carrying `label`.
    pub fn indices_of(&self, label: i64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Whether labels are exactly `{−1, +1}`.
    pub fn is_binary(&self) -> bool {
        self.classes() == vec![-1, 1]
    }

    /// Per-coordinate `(min, max)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in &self.points {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(distance(&self.points[i], &self.points[j]));
            }
        }
        best
    }

    /// Smallest distance between points of different classes.
    pub fn min_interclass_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.labels[i] != self.labels[j] {
                    best = best.min(distance(&self.points[i], &self.points[j]));
                }
            }
        }
        best
    }

    /// Transport instance on `n` random points of each binary class.
    pub fn transport_instance(&self, n: usize, rng: &mut Rng) -> Result<(DiscreteInstance, Vec<usize>, Vec<usize>)> {
        let mut pos = self.indices_of(1);
        let mut neg = self.indices_of(-1);
        if pos.len() < n || neg.len() < n {
            return Err(Error::InvalidConfig(format!(
                "need {n} points per class, have {} and {}",
                pos.len(),
                neg.len()
            )));
        }
        rng.shuffle(&mut pos);
        rng.shuffle(&mut neg);
        pos.truncate(n);
        neg.truncate(n);
        let inst = DiscreteInstance::new(
            pos.iter().map(|&i| self.points[i].clone()).collect(),
            neg.iter().map(|&i| self.points[i].clone()).collect(),
        )?;
        Ok((inst, pos, neg))
    }
}

/// Generator parameters, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoMoons {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    SeparatedClusters {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_gap")]
        gap: f64,
    },
    Csv {
        path: String,
    },
}

fn default_n() -> usize {
    500
}

fn default_noise() -> f64 {
    0.05
}

fn default_gap() -> f64 {
    2.5
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons {
            n: default_n(),
            noise: default_noise(),
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::TwoMoons { n, noise } => two_moons(*n, *noise, seed),
            DatasetSpec::SeparatedClusters { n, gap } => separated_clusters(*n, *gap, seed),
            DatasetSpec::Csv { path } => read_csv(path),
        }
    }
}

/// Two interleaved half circles of radius 1: `(cos t, sin t)` labelled `+1`
/// and `(1 − cos t, 1/2 − sin t)` labelled `−1`, `t` evenly spaced on
/// `[0, π]`, plus isotropic Gaussian noise of standard deviation `noise`.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidConfig(format!("two moons needs an even n > 0, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = Rng::new(seed);
    let half = n / 2;
    let t = |i: usize| {
        if half == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (half - 1) as f64
        }
    };
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..half {
        points.push(vec![t(i).cos(), t(i).sin()]);
        labels.push(1);
    }
    for i in 0..half {
        points.push(vec![1.0 - t(i).cos(), 0.5 - t(i).sin()]);
        labels.push(-1);
    }
    if noise > 0.0 {
        for p in &mut points {
            for v in p.iter_mut() {
                *v += noise * rng.normal();
            }
        }
    }
    Dataset::new(points, labels)
}

/// Two clouds uniform in unit squares placed side by side along the first
/// axis with a gap of `gap` between them, so every inter-class distance
/// exceeds `gap`. `n/2` points per class, `+1` on the left.
pub fn separated_clusters(n: usize, gap: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidConfig(format!("clusters need an even n > 0, got {n}")));
    }
    if !(gap > 0.0) {
        return Err(Error::InvalidConfig(format!("gap must be > 0, got {gap}")));
    }
    let mut rng = Rng::new(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (offset, label) = if i < n / 2 { (0.0, 1) } else { (1.0 + gap, -1) };
        // uniform draws lie in [0, 1), so the gap is strict
        points.push(vec![offset + rng.uniform(), rng.uniform()]);
        labels.push(label);
    }
    Dataset::new(points, labels)
}

/// `per_class` Gaussian points around each of `classes` centres evenly
/// spaced on a circle of radius `radius`; labels `0..classes`.
pub fn gaussian_blobs(per_class: usize, classes: usize, radius: f64, spread: f64, seed: u64) -> Result<Dataset> {
    if per_class == 0 || classes < 2 {
        return Err(Error::InvalidConfig("blobs need >= 2 classes and >= 1 point each".into()));
    }
    let mut rng = Rng::new(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for k in 0..classes {
        let a = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
        for _ in 0..per_class {
            points.push(vec![radius * a.cos() + spread * rng.normal(), radius * a.sin() + spread * rng.normal()]);
            labels.push(k as i64);
        }
    }
    Dataset::new(points, labels)
}

pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=data.dim()).map(|k| format!("x{k}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (p, y) in data.points.iter().zip(&data.labels) {
        let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        row.push(y.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let d = header.len().saturating_sub(1);
    if d == 0 || header.get(d) != Some("label") {
        return Err(Error::Schema("dataset header must be x1,...,xd,label".into()));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Schema(format!("row {}: bad {what}", line + 1));
        let p = (0..d)
            .map(|k| rec[k].trim().parse::<f64>().map_err(|_| bad("coordinate")))
            .collect::<Result<Vec<_>>>()?;
        let y: f64 = rec[d].trim().parse().map_err(|_| bad("label"))?;
        if y.fract() != 0.0 {
            return Err(bad("label"));
        }
        points.push(p);
        labels.push(y as i64);
    }
    Dataset::new(points, labels)
}
