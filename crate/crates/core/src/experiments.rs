//! Experiment configuration and the end-to-end runs behind the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::net::{save_model, LayerSpec, Model, NormalizationMode, NormalizationSettings, Shape};
use crate::plot::{class_histograms, evaluate_grid, level_map_svg};
use crate::rng::Rng;
use crate::robust::{direction_alignment, min_adv_perturbation, CertificationRow, PgdConfig};
use crate::train::{train, ConstraintMode, History, Observer, OptimizerConfig, TrainConfig};
use crate::transport::{duality_report, solve_hkr_primal_for_loss, transport_image, DiscreteInstance, DualityReport};

/// Network architecture. Either an explicit layer list, or an MLP of
/// `hidden` dense layers each followed by `activation`. The output layer is
/// added automatically in the MLP form: one unit for `±1` labels, one per
/// class otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: LayerSpec,
    pub mode: NormalizationMode,
    pub layers: Option<Vec<LayerSpec>>,
    /// Input layout for explicit layer lists with convolutions.
    pub input_shape: Option<Shape>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            activation: LayerSpec::GroupSort { group: 2 },
            mode: NormalizationMode::Bjorck,
            layers: None,
            input_shape: None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub normalization: NormalizationSettings,
    #[serde(default)]
    pub constraint_mode: ConstraintMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            normalization: NormalizationSettings::default(),
            constraint_mode: ConstraintMode::default(),
            output_dir: default_output_dir(),
        }
    }

    /// Settings of the two-moons level-map demo. The margin is below half
    /// the gap between the moons, and the hinge weight of 20 corresponds to
    /// 10 when the hinge is summed over the two classes instead of averaged.
    pub fn two_moons_demo(seed: u64) -> Self {
        let mut cfg = Self::new(seed);
        cfg.loss = LossConfig {
            lambda: 20.0,
            margin: 0.3,
        };
        cfg.optimizer.final_lr_fraction = 0.01;
        cfg.constraint_mode = ConstraintMode::Differentiate;
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.normalization.power.max_iters == 0 || self.normalization.bjorck.iters == 0 {
            return Err(Error::InvalidConfig("normalization iteration counts must be positive".into()));
        }
        if self.model.layers.is_none() && self.model.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        match self.dataset {
            DatasetSpec::TwoMoons { n, .. } | DatasetSpec::SeparatedClusters { n, .. } if n == 0 => {
                Err(Error::InvalidConfig("dataset size must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            optimizer: self.optimizer,
            constraint_mode: self.constraint_mode,
        }
    }

    /// Generator for model initialization and training; the dataset uses
    /// `seed` directly.
    pub fn training_rng(&self) -> Rng {
        Rng::new(self.seed).fork(1)
    }
}

/// Output count implied by the labels: 1 for `±1`, else one per class.
pub fn output_count(data: &Dataset) -> Result<usize> {
    if data.is_binary() {
        return Ok(1);
    }
    let classes = data.classes();
    if classes.iter().enumerate().any(|(k, &c)| c != k as i64) || classes.len() < 2 {
        return Err(Error::InvalidConfig(
            "labels must be ±1 or the class indices 0..q with every class present".into(),
        ));
    }
    Ok(classes.len())
}

pub fn build_model(spec: &ModelSpec, settings: NormalizationSettings, data: &Dataset, rng: &mut Rng) -> Result<Model<f64>> {
    let outputs = output_count(data)?;
    match &spec.layers {
        Some(layers) => {
            let shape = spec.input_shape.unwrap_or(Shape::flat(data.dim()));
            if shape.len() != data.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "input shape {shape:?} for {}-d data",
                    data.dim()
                )));
            }
            let model = Model::build(shape, layers, spec.mode, settings, rng)?;
            if model.output_dim() != outputs {
                return Err(Error::DimensionMismatch(format!(
                    "model has {} outputs, data needs {outputs}",
                    model.output_dim()
                )));
            }
            Ok(model)
        }
        None => Model::mlp(data.dim(), &spec.hidden, &spec.activation, outputs, spec.mode, settings, rng),
    }
}

#[derive(Debug, Clone)]
pub struct TrainedExperiment {
    pub data: Dataset,
    pub model: Model<f64>,
    pub history: History,
}

pub fn run_training(cfg: &ExperimentConfig, observer: Option<&mut Observer<'_, f64>>) -> Result<TrainedExperiment> {
    cfg.validate()?;
    let data = cfg.dataset.generate(cfg.seed)?;
    let mut rng = cfg.training_rng();
    let mut model = build_model(&cfg.model, cfg.normalization, &data, &mut rng)?;
    let history = train(&mut model, &data, &cfg.train_config(), &mut rng, observer)?;
    Ok(TrainedExperiment { data, model, history })
}

pub fn binary_scores(model: &Model<f64>, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    if model.output_dim() != 1 {
        return Err(Error::InvalidConfig("expected a single-output model".into()));
    }
    points.par_iter().map(|x| Ok(model.forward(x)?[0])).collect()
}

/// How far apart the class-conditional score distributions are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub min_positive: f64,
    pub max_negative: f64,
    /// Fraction of points inside the other class's score range: positives
    /// at or below the largest negative score plus negatives at or above the
    /// smallest positive score. Zero exactly when the ranges are disjoint.
    pub overlap_fraction: f64,
}

impl Separation {
    pub fn separated(&self) -> bool {
        self.min_positive > self.max_negative
    }
}

pub fn score_separation(scores: &[f64], labels: &[i64]) -> Result<Separation> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == -1).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() || pos.len() + neg.len() != scores.len() {
        return Err(Error::InvalidConfig("separation needs ±1 labels with both classes".into()));
    }
    let min_positive = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let max_negative = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inside = pos.iter().filter(|&&s| s <= max_negative).count() + neg.iter().filter(|&&s| s >= min_positive).count();
    Ok(Separation {
        min_positive,
        max_negative,
        overlap_fraction: inside as f64 / scores.len() as f64,
    })
}

/// Mean of `‖∇ₓ f(x)‖` over the points, for a single-output model.
pub fn mean_gradient_norm(model: &Model<f64>, points: &[Vec<f64>]) -> Result<f64> {
    let norms: Vec<f64> = points
        .par_iter()
        .map(|x| Ok(crate::linalg::l2_norm(&model.input_gradient(x, 0)?.1)))
        .collect::<Result<_>>()?;
    Ok(norms.iter().sum::<f64>() / norms.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub separation: Separation,
    pub accuracy: f64,
    pub mean_gradient_norm: f64,
    pub final_loss: Option<f64>,
    pub grid_rows: usize,
    pub files: Vec<String>,
}

/// Writes the level-map demo for a trained binary 2-d model into `dir`:
/// `scores.csv`, `grid.csv` (200×200), `level_map.svg`, `histograms.csv`,
/// `model.json`, `history.json` and `summary.json`.
pub fn write_demo(dir: &Path, trained: &TrainedExperiment) -> Result<DemoSummary> {
    let TrainedExperiment { data, model, history } = trained;
    if data.dim() != 2 {
        return Err(Error::InvalidConfig("the level-map demo needs 2-d data".into()));
    }
    fs::create_dir_all(dir)?;
    let scores = binary_scores(model, &data.points)?;

    let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
    w.write_record(["x1", "x2", "label", "score"])?;
    for ((p, y), s) in data.points.iter().zip(&data.labels).zip(&scores) {
        w.write_record([p[0].to_string(), p[1].to_string(), y.to_string(), s.to_string()])?;
    }
    w.flush()?;

    let (lo, hi) = data.bounding_box();
    let pad = |k: usize| 0.1 * (hi[k] - lo[k]).max(1e-6);
    let grid = evaluate_grid(
        model,
        0,
        [lo[0] - pad(0), lo[1] - pad(1)],
        [hi[0] + pad(0), hi[1] + pad(1)],
        200,
    )?;
    grid.write_csv(dir.join("grid.csv"))?;
    fs::write(dir.join("level_map.svg"), level_map_svg(&grid, &data.points, &data.labels))?;
    class_histograms(&scores, &data.labels, 40)?.write_csv(dir.join("histograms.csv"))?;
    save_model(model, dir.join("model.json"))?;
    fs::write(dir.join("history.json"), serde_json::to_string_pretty(history)? + "\n")?;

    let correct = scores
        .iter()
        .zip(&data.labels)
        .filter(|(s, &y)| (**s >= 0.0) == (y == 1))
        .count();
    let summary = DemoSummary {
        separation: score_separation(&scores, &data.labels)?,
        accuracy: correct as f64 / scores.len() as f64,
        mean_gradient_norm: mean_gradient_norm(model, &data.points)?,
        final_loss: history.last().map(|r| r.loss),
        grid_rows: grid.values.len(),
        files: [
            "scores.csv",
            "grid.csv",
            "level_map.svg",
            "histograms.csv",
            "model.json",
            "history.json",
            "summary.json",
        ]
        .map(String::from)
        .to_vec(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualitySuiteConfig {
    pub seeds: Vec<u64>,
    pub sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub dim: usize,
    /// Offset of the positive cloud along the first axis.
    pub shift: f64,
    pub classical_tolerance: f64,
    pub hkr_tolerance: f64,
}

impl Default for DualitySuiteConfig {
    fn default() -> Self {
        Self {
            seeds: (0..17).collect(),
            sizes: (1..=6).collect(),
            lambdas: vec![0.0, 0.5, 1.0, 4.0],
            dim: 2,
            shift: 1.0,
            classical_tolerance: 1e-8,
            hkr_tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityRow {
    pub seed: u64,
    pub n: usize,
    pub lambda: f64,
    pub report: Option<DualityReport>,
    pub error: Option<String>,
    pub pass: bool,
}

/// Spread of the raw primal − dual gaps over the instances sharing `(n, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSummary {
    pub n: usize,
    pub lambda: f64,
    pub mean_raw_gap: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualitySuiteReport {
    pub config: DualitySuiteConfig,
    pub instances: usize,
    pub max_classical_gap: f64,
    pub max_normalized_gap: f64,
    pub offsets: Vec<OffsetSummary>,
    pub failures: usize,
    pub pass: bool,
    pub rows: Vec<DualityRow>,
}

/// Solves every `(seed, n, λ)` instance; the points depend on `(seed, n)`
/// only, so each point set is checked at every λ.
pub fn run_duality_suite(cfg: &DualitySuiteConfig) -> Result<DualitySuiteReport> {
    if cfg.seeds.is_empty() || cfg.sizes.is_empty() || cfg.lambdas.is_empty() || cfg.dim == 0 {
        return Err(Error::InvalidConfig("duality suite needs seeds, sizes, lambdas and dim >= 1".into()));
    }
    let jobs: Vec<(u64, usize, f64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.sizes.iter().flat_map(move |&n| cfg.lambdas.iter().map(move |&l| (s, n, l))))
        .collect();
    let rows: Vec<DualityRow> = jobs
        .par_iter()
        .map(|&(seed, n, lambda)| {
            let result = DiscreteInstance::random(n, cfg.dim, cfg.shift, &mut Rng::new(seed).fork(n as u64))
                .and_then(|inst| duality_report(&inst, lambda));
            match result {
                Ok(r) => DualityRow {
                    seed,
                    n,
                    lambda,
                    pass: r.classical_gap <= cfg.classical_tolerance && r.normalized_gap <= cfg.hkr_tolerance,
                    report: Some(r),
                    error: None,
                },
                Err(e) => DualityRow {
                    seed,
                    n,
                    lambda,
                    report: None,
                    error: Some(e.to_string()),
                    pass: false,
                },
            }
        })
        .collect();

    let mut offsets = Vec::new();
    for &n in &cfg.sizes {
        for &lambda in &cfg.lambdas {
            let gaps: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n && r.lambda == lambda)
                .filter_map(|r| r.report.as_ref().map(|x| x.raw_gap))
                .collect();
            if gaps.is_empty() {
                continue;
            }
            let lo = gaps.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            offsets.push(OffsetSummary {
                n,
                lambda,
                mean_raw_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
                spread: hi - lo,
            });
        }
    }
    let max_of = |f: fn(&DualityReport) -> f64| rows.iter().filter_map(|r| r.report.as_ref().map(f)).fold(0.0, f64::max);
    let failures = rows.iter().filter(|r| !r.pass).count();
    let offsets_constant = offsets.iter().all(|o| o.spread <= cfg.hkr_tolerance);
    Ok(DualitySuiteReport {
        config: cfg.clone(),
        instances: rows.len(),
        max_classical_gap: max_of(|r| r.classical_gap),
        max_normalized_gap: max_of(|r| r.normalized_gap),
        offsets,
        failures,
        pass: failures == 0 && offsets_constant,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPoint {
    pub label: i64,
    pub cos_adv: f64,
    pub cos_transport: f64,
    pub c_adv: f64,
    pub c_transport: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStudy {
    pub points_per_class: usize,
    pub mean_cos_adv: f64,
    pub mean_cos_transport: f64,
    pub mean_c_adv: f64,
    pub mean_c_transport: f64,
    /// Points left out because a displacement or the gradient vanished, or
    /// no flip was found.
    pub skipped: usize,
    pub plan_mass: f64,
    pub points: Vec<AlignmentPoint>,
}

/// Compares, on `per_class` random points of each class, the smallest
/// adversarial displacement found and the barycentric transport displacement
/// of the plan dual to training with `loss`, against the gradient direction.
pub fn alignment_study(
    model: &Model<f64>,
    data: &Dataset,
    per_class: usize,
    loss: &LossConfig,
    pgd: &PgdConfig,
    rng: &mut Rng,
) -> Result<AlignmentStudy> {
    let (inst, _, _) = data.transport_instance(per_class, rng)?;
    let plan = solve_hkr_primal_for_loss(&inst, loss)?;
    let points: Vec<Vec<f64>> = inst.positives().iter().chain(inst.negatives()).cloned().collect();
    let labels = inst.labels();
    let cap = 4.0 * data.diameter();
    let base = rng.fork(0);
    let rows: Vec<Option<AlignmentPoint>> = points
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let mut local = base.fork(k as u64);
            let adv = min_adv_perturbation(model, x, 1e-3, cap, pgd, &mut local)?;
            let Some(adv_point) = adv.point else { return Ok(None) };
            let image = match transport_image(&inst, &plan, k) {
                Ok(img) => img,
                Err(Error::ZeroMassRow(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let a = direction_alignment(model, x, &image, &adv_point)?;
            Ok(match (a.cos_adv, a.cos_transport, a.c_adv, a.c_transport) {
                (Some(cos_adv), Some(cos_transport), Some(c_adv), Some(c_transport)) => Some(AlignmentPoint {
                    label: labels[k] as i64,
                    cos_adv,
                    cos_transport,
                    c_adv,
                    c_transport,
                }),
                _ => None,
            })
        })
        .collect::<Result<_>>()?;
    let kept: Vec<AlignmentPoint> = rows.iter().flatten().cloned().collect();
    if kept.is_empty() {
        return Err(Error::ZeroDisplacement);
    }
    let mean = |f: fn(&AlignmentPoint) -> f64| kept.iter().map(f).sum::<f64>() / kept.len() as f64;
    Ok(AlignmentStudy {
        points_per_class: per_class,
        mean_cos_adv: mean(|p| p.cos_adv),
        mean_cos_transport: mean(|p| p.cos_transport),
        mean_c_adv: mean(|p| p.c_adv),
        mean_c_transport: mean(|p| p.c_transport),
        skipped: rows.len() - kept.len(),
        plan_mass: plan.total_mass(),
        points: kept,
    })
}

/// CSV `index,label,prediction,radius,min_adv_found,ratio`.
pub fn write_certification_csv(rows: &[CertificationRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "label", "prediction", "radius", "min_adv_found", "ratio"])?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.label.to_string(),
            r.prediction.to_string(),
            r.radius.to_string(),
            r.min_adv_found.to_string(),
            r.ratio.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `eps,accuracy_under_attack`.
pub fn write_sweep_csv(sweep: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eps", "accuracy_under_attack"])?;
    for (eps, acc) in sweep {
        w.write_record([eps.to_string(), acc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
