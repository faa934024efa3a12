use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use hkr::data::Dataset;
use hkr::experiments::{
    alignment_study, run_duality_suite, run_training, write_certification_csv, write_demo, write_sweep_csv,
    DualitySuiteConfig, ExperimentConfig,
};
use hkr::net::{load_model, save_model, Model};
use hkr::robust::{attack_sweep, certification_report, PgdConfig};
use hkr::train::EpochRecord;
use hkr::transport::{solve_hkr_primal_for_loss, solve_ot_primal};
use hkr::Rng;

/// Lipschitz classifiers trained with the hinge-regularized
/// Kantorovich-Rubinstein loss.
#[derive(Parser)]
#[command(name = "hkr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.json, history.json and config.json.
    Train(ExperimentArgs),
    /// Certified radii and smallest adversarial perturbations found.
    Certify {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        attack: AttackArgs,
        /// Bisection tolerance of the minimal-perturbation search.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Only the first N points.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Accuracy under PGD attacks for a list of radii.
    Attack {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.3])]
        eps: Vec<f64>,
    },
    /// Transport plans on a class-balanced subsample, with the attack and
    /// transport direction comparison when a model is given.
    Transport {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        attack: AttackArgs,
        /// Points per class.
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
    /// Train on two moons and write the level map, histograms and scores.
    DemoTwoMoons(ExperimentArgs),
    /// Primal/dual agreement of the classical and hinge-regularized LPs on
    /// random instances. Exits with status 1 when any gap exceeds tolerance.
    DualitySuite {
        /// Number of seeds, each giving one instance per size.
        #[arg(long, default_value_t = 17)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5, 6])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0, 4.0])]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "duality_report.json")]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetName {
    TwoMoons,
    SeparatedClusters,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Activation {
    Groupsort2,
    Fullsort,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bjorck,
    Spectral,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintMode {
    Project,
    Differentiate,
}

/// Flags mirroring the experiment config. Keys present in `--config`
/// override the flags.
#[derive(Args, Clone)]
struct ExperimentArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetName>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    gap: Option<f64>,
    /// CSV dataset, implies `--dataset csv`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    activation: Option<Activation>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    final_lr_fraction: Option<f64>,
    #[arg(long)]
    power_iters: Option<usize>,
    #[arg(long)]
    bjorck_iters: Option<usize>,
    #[arg(long, value_enum)]
    constraint_mode: Option<ConstraintMode>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Trained model to evaluate instead of training one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Print every epoch.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Clone)]
struct AttackArgs {
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long)]
    step_size: Option<f64>,
}

impl AttackArgs {
    fn pgd(&self) -> PgdConfig {
        PgdConfig {
            steps: self.steps,
            step_size: self.step_size,
            restarts: self.restarts,
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

impl ExperimentArgs {
    fn flag_patch(&self) -> Value {
        let mut root = Map::new();
        let mut put = |path: &[&str], v: Value| {
            let mut patch = v;
            for key in path.iter().rev() {
                patch = json!({ *key: patch });
            }
            merge_into(&mut root, patch);
        };
        if let Some(s) = self.seed {
            put(&["seed"], json!(s));
        }
        if let Some(d) = self.dataset {
            let name = match d {
                DatasetName::TwoMoons => "two_moons",
                DatasetName::SeparatedClusters => "separated_clusters",
                DatasetName::Csv => "csv",
            };
            put(&["dataset", "name"], json!(name));
        }
        if let Some(p) = &self.data {
            put(&["dataset"], json!({"name": "csv", "path": p}));
        }
        if let Some(v) = self.n {
            put(&["dataset", "n"], json!(v));
        }
        if let Some(v) = self.noise {
            put(&["dataset", "noise"], json!(v));
        }
        if let Some(v) = self.gap {
            put(&["dataset", "gap"], json!(v));
        }
        if let Some(v) = &self.hidden {
            put(&["model", "hidden"], json!(v));
        }
        if let Some(a) = self.activation {
            let spec = match a {
                Activation::Groupsort2 => json!({"kind": "groupsort", "group": 2}),
                Activation::Fullsort => json!({"kind": "fullsort"}),
            };
            put(&["model", "activation"], spec);
        }
        if let Some(m) = self.mode {
            let name = match m {
                Mode::Bjorck => "bjorck",
                Mode::Spectral => "spectral",
            };
            put(&["model", "mode"], json!(name));
        }
        if let Some(v) = self.lambda {
            put(&["loss", "lambda"], json!(v));
        }
        if let Some(v) = self.margin {
            put(&["loss", "margin"], json!(v));
        }
        if let Some(v) = self.learning_rate {
            put(&["optimizer", "learning_rate"], json!(v));
        }
        if let Some(v) = self.batch_size {
            put(&["optimizer", "batch_size"], json!(v));
        }
        if let Some(v) = self.epochs {
            put(&["optimizer", "epochs"], json!(v));
        }
        if let Some(v) = self.final_lr_fraction {
            put(&["optimizer", "final_lr_fraction"], json!(v));
        }
        if let Some(v) = self.power_iters {
            put(&["normalization", "power", "max_iters"], json!(v));
        }
        if let Some(v) = self.bjorck_iters {
            put(&["normalization", "bjorck", "iters"], json!(v));
        }
        if let Some(c) = self.constraint_mode {
            let name = match c {
                ConstraintMode::Project => "project",
                ConstraintMode::Differentiate => "differentiate",
            };
            put(&["constraint_mode"], json!(name));
        }
        if let Some(p) = &self.output_dir {
            put(&["output_dir"], json!(p));
        }
        Value::Object(root)
    }

    /// `preset`, then the flags, then the config file.
    fn resolve(&self, preset: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut value = serde_json::to_value(&preset)?;
        if self.seed.is_none() {
            value.as_object_mut().expect("config is an object").remove("seed");
        }
        merge(&mut value, self.flag_patch());
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if !file.is_object() {
                bail!("{} must hold a JSON object", path.display());
            }
            merge(&mut value, file);
        }
        if value.get("seed").is_none() {
            bail!("a seed is required: pass --seed or set \"seed\" in the config file");
        }
        let cfg = ExperimentConfig::from_json(&value.to_string())?;
        Ok(cfg)
    }
}

fn merge_into(root: &mut Map<String, Value>, patch: Value) {
    let mut v = Value::Object(std::mem::take(root));
    merge(&mut v, patch);
    if let Value::Object(m) = v {
        *root = m;
    }
}

fn progress(verbose: bool, total: usize) -> impl FnMut(&EpochRecord, &Model<f64>) -> hkr::Result<()> {
    let every = (total / 10).max(1);
    move |r, _| {
        if verbose || (r.epoch + 1) % every == 0 || r.epoch + 1 == total {
            eprintln!(
                "epoch {:>4}  loss {:>10.6}  kr {:>10.6}  hinge {:>9.6}  acc {:.4}",
                r.epoch + 1,
                r.loss,
                r.kr,
                r.hinge,
                r.accuracy
            );
        }
        Ok(())
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// The model from `--model`, or one trained from the config.
fn model_and_data(exp: &ExperimentArgs, cfg: &ExperimentConfig) -> Result<(Model<f64>, Dataset)> {
    match &exp.model {
        Some(path) => {
            let model = load_model(path).with_context(|| format!("loading {}", path.display()))?;
            Ok((model, cfg.dataset.generate(cfg.seed)?))
        }
        None => {
            let mut obs = progress(exp.verbose, cfg.optimizer.epochs);
            let t = run_training(cfg, Some(&mut obs))?;
            Ok((t.model, t.data))
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(exp) => {
            let cfg = exp.resolve(ExperimentConfig::new(0))?;
            fs::create_dir_all(&cfg.output_dir)?;
            let mut obs = progress(exp.verbose, cfg.optimizer.epochs);
            let t = run_training(&cfg, Some(&mut obs))?;
            save_model(&t.model, cfg.output_dir.join("model.json"))?;
            write_json(&cfg.output_dir.join("history.json"), &t.history)?;
            fs::write(cfg.output_dir.join("config.json"), cfg.to_json())?;
            println!("wrote {}", cfg.output_dir.join("model.json").display());
            Ok(true)
        }
        Command::Certify { exp, attack, tol, limit } => {
            let cfg = exp.resolve(ExperimentConfig::new(0))?;
            let (model, data) = model_and_data(&exp, &cfg)?;
            let k = limit.unwrap_or(data.len()).min(data.len());
            let rows = certification_report(
                &model,
                &data.points[..k],
                &data.labels[..k],
                tol,
                4.0 * data.diameter(),
                &attack.pgd(),
                &Rng::new(cfg.seed).fork(2),
            )?;
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("certification.csv");
            write_certification_csv(&rows, &path)?;
            let unsound = rows.iter().filter(|r| r.min_adv_found < r.radius - tol).count();
            println!("wrote {} ({} points, {} below their certificate)", path.display(), rows.len(), unsound);
            Ok(unsound == 0)
        }
        Command::Attack { exp, attack, eps } => {
            let cfg = exp.resolve(ExperimentConfig::new(0))?;
            let (model, data) = model_and_data(&exp, &cfg)?;
            let sweep = attack_sweep(&model, &data.points, &data.labels, &eps, &attack.pgd(), &Rng::new(cfg.seed).fork(3))?;
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("attack_sweep.csv");
            write_sweep_csv(&sweep, &path)?;
            for (e, a) in &sweep {
                println!("eps {e:<8} accuracy under attack {a:.4}");
            }
            Ok(true)
        }
        Command::Transport { exp, attack, points } => {
            let cfg = exp.resolve(ExperimentConfig::new(0))?;
            let data = cfg.dataset.generate(cfg.seed)?;
            let mut rng = Rng::new(cfg.seed).fork(4);
            let (inst, _, _) = data.transport_instance(points, &mut rng.clone())?;
            let classical = solve_ot_primal(&inst)?;
            let plan = solve_hkr_primal_for_loss(&inst, &cfg.loss)?;
            let mut report = json!({
                "points_per_class": points,
                "loss": cfg.loss,
                "classical_cost": classical.objective_value,
                "hkr_plan_mass": plan.total_mass(),
                "hkr_transport_cost": plan.transport_cost(&inst),
            });
            if let Some(path) = &exp.model {
                let model = load_model(path).with_context(|| format!("loading {}", path.display()))?;
                let study = alignment_study(&model, &data, points, &cfg.loss, &attack.pgd(), &mut rng)?;
                println!(
                    "mean cosine with -sign(f) grad f: adversarial {:.4}, transport {:.4}; mean c {:.4} vs c' {:.4}",
                    study.mean_cos_adv, study.mean_cos_transport, study.mean_c_adv, study.mean_c_transport
                );
                report["alignment"] = serde_json::to_value(study)?;
            }
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("transport.json");
            write_json(&path, &report)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::DemoTwoMoons(exp) => {
            let cfg = exp.resolve(ExperimentConfig::two_moons_demo(0))?;
            let mut obs = progress(exp.verbose, cfg.optimizer.epochs);
            let trained = run_training(&cfg, Some(&mut obs))?;
            let summary = write_demo(&cfg.output_dir, &trained)?;
            fs::write(cfg.output_dir.join("config.json"), cfg.to_json())?;
            let s = summary.separation;
            println!(
                "min f over class +1 {:.4}, max f over class -1 {:.4}, overlap {:.3}, accuracy {:.4}, mean |grad f| {:.4}",
                s.min_positive, s.max_negative, s.overlap_fraction, summary.accuracy, summary.mean_gradient_norm
            );
            println!("wrote {}", cfg.output_dir.display());
            Ok(true)
        }
        Command::DualitySuite {
            seeds,
            sizes,
            lambdas,
            dim,
            output,
        } => {
            let cfg = DualitySuiteConfig {
                seeds: (0..seeds).collect(),
                sizes,
                lambdas,
                dim,
                ..Default::default()
            };
            let report = run_duality_suite(&cfg)?;
            write_json(&output, &report)?;
            println!(
                "{} instances, max classical gap {:.3e}, max hinge-regularized gap {:.3e}, {} failures",
                report.instances, report.max_classical_gap, report.max_normalized_gap, report.failures
            );
            for row in report.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("seed {} n {} lambda {}: {}", row.seed, row.n, row.lambda, row.error.as_deref().unwrap_or(""));
            }
            Ok(report.pass)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
