//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

mod common;

use common::{
    analytic_param_gradient, gradient_mismatch, hinge_kink_distance, jacobi_singular_values, numeric_param_gradient,
    random_model,
};
use hkr::constraints::{
    bjorck_orthonormalize, conv_lipschitz_factor_strided, padded_zero_counts, power_iteration, BjorckConfig,
    ConvGeometry, PowerIterConfig,
};
use hkr::data::DatasetSpec;
use hkr::experiments::{
    alignment_study, binary_scores, mean_gradient_norm, run_duality_suite, run_training, score_separation,
    DualitySuiteConfig, ExperimentConfig, TrainedExperiment,
};
use hkr::net::{model_to_json, save_model};
use hkr::robust::{certify, pgd_attack, predict, PgdConfig};
use hkr::{LossConfig, Matrix, Rng};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn report(criterion: u32, ok: bool, detail: String) {
    println!("{} criterion {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn demo() -> &'static TrainedExperiment {
    static CELL: OnceLock<TrainedExperiment> = OnceLock::new();
    CELL.get_or_init(|| run_training(&ExperimentConfig::two_moons_demo(0), None).unwrap())
}

/// Demo architecture and schedule with the hinge switched off.
fn pure_kr() -> &'static TrainedExperiment {
    static CELL: OnceLock<TrainedExperiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut cfg = ExperimentConfig::two_moons_demo(0);
        cfg.loss.lambda = 0.0;
        run_training(&cfg, None).unwrap()
    })
}

fn lambda_ten() -> &'static TrainedExperiment {
    static CELL: OnceLock<TrainedExperiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut cfg = ExperimentConfig::two_moons_demo(0);
        cfg.loss.lambda = 10.0;
        run_training(&cfg, None).unwrap()
    })
}

#[test]
fn criterion_01_duality() {
    let start = Instant::now();
    let r = run_duality_suite(&DualitySuiteConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let max_spread = r.offsets.iter().map(|o| o.spread).fold(0.0, f64::max);
    let ok = r.pass && r.instances >= 100 && r.failures == 0 && elapsed < Duration::from_secs(30);
    report(
        1,
        ok,
        format!(
            "{} instances ({} suite rows), classical gap {:.1e}, normalized hKR gap {:.1e}, offset spread {:.1e}, {:.1?}",
            r.instances,
            r.rows.len(),
            r.max_classical_gap,
            r.max_normalized_gap,
            max_spread,
            elapsed
        ),
    );
}

#[test]
fn criterion_02_certificates_hold() {
    let start = Instant::now();
    let t = demo();
    let mut rng = Rng::new(2);
    let (mut attacks, mut flips) = (0, 0);
    'outer: for round in 0.. {
        for (i, (x, &y)) in t.data.points.iter().zip(&t.data.labels).enumerate() {
            if attacks == 1000 {
                break 'outer;
            }
            let c = certify(&t.model, i, x, y).unwrap();
            if c.certified_radius <= 0.0 {
                continue;
            }
            // first pass right under the radius, later passes anywhere inside it
            let frac = if round == 0 { 1.0 - 1e-6 } else { rng.uniform_in(0.1, 1.0 - 1e-6) };
            let a = pgd_attack(&t.model, x, frac * c.certified_radius, &PgdConfig::default(), &mut rng).unwrap();
            let moved: Vec<f64> = x.iter().zip(&a.perturbation).map(|(p, d)| p + d).collect();
            if a.success || predict(&t.model, &moved).unwrap() != c.prediction {
                flips += 1;
            }
            attacks += 1;
        }
        assert!(round < 10, "too few certified points");
    }
    let elapsed = start.elapsed();
    report(
        2,
        flips == 0 && elapsed < Duration::from_secs(120),
        format!("{attacks} PGD attacks under the certified radius, {flips} flips, {elapsed:.1?} incl. training"),
    );
}

#[test]
fn criterion_03_gradient_norm() {
    let t = lambda_ten();
    let g = mean_gradient_norm(&t.model, &t.data.points).unwrap();
    report(
        3,
        (0.95..=1.001).contains(&g),
        format!("mean input gradient norm {g:.4} over {} points (lambda 10)", t.data.len()),
    );
}

#[test]
fn criterion_04_separable_clusters() {
    let mut cfg = ExperimentConfig::new(4);
    cfg.dataset = DatasetSpec::SeparatedClusters { n: 200, gap: 2.5 };
    cfg.loss = LossConfig { lambda: 10.0, margin: 1.0 };
    cfg.model.hidden = vec![32, 32];
    cfg.optimizer.epochs = 60;
    let t = run_training(&cfg, None).unwrap();
    let last = t.history.last().unwrap();
    report(
        4,
        last.hinge < 1e-2 && last.accuracy == 1.0,
        format!("final hinge {:.2e}, accuracy {}", last.hinge, last.accuracy),
    );
}

#[test]
fn criterion_05_level_sets_separate() {
    let t = demo();
    let sep = score_separation(&binary_scores(&t.model, &t.data.points).unwrap(), &t.data.labels).unwrap();
    let kr = pure_kr();
    let flat = score_separation(&binary_scores(&kr.model, &kr.data.points).unwrap(), &kr.data.labels).unwrap();
    report(
        5,
        sep.separated() && flat.overlap_fraction > 0.1,
        format!(
            "hKR min f(+) {:.3} > max f(-) {:.3}; lambda 0 overlap {:.1}%",
            sep.min_positive,
            sep.max_negative,
            100.0 * flat.overlap_fraction
        ),
    );
}

#[test]
fn workbench_demo_accuracy_and_margins() {
    let t = demo();
    let scores = binary_scores(&t.model, &t.data.points).unwrap();
    let correct = scores.iter().zip(&t.data.labels).filter(|(s, &y)| y as f64 * **s > 0.0).count();
    let frac = correct as f64 / scores.len() as f64;
    let last = t.history.last().unwrap();
    println!("demo: accuracy {}, positive margin on {:.1}%", last.accuracy, 100.0 * frac);
    assert_eq!(last.accuracy, 1.0);
    assert!(frac >= 0.95);
}

/// Both iterations are run to convergence: the training defaults (15 Björck
/// steps, 100 power steps) stall on the few near-singular or nearly
/// degenerate draws, which is counted and printed.
#[test]
fn criterion_06_orthonormalization_and_power_iteration() {
    let mut rng = Rng::new(6);
    let converged = BjorckConfig { order: 1, iters: 50 };
    let (mut worst_gram, mut short_gram) = (0.0f64, 0);
    for _ in 0..200 {
        let (r, c) = (2 + rng.below(15), 1 + rng.below(16));
        let (r, c) = (r.max(c), r.min(c));
        let w = Matrix::new(r, c, rng.normal_vec(r * c)).unwrap();
        let w = w.scale(rng.uniform_in(0.5, 1.0) / jacobi_singular_values(&w)[0]);
        let q = bjorck_orthonormalize(&w, &converged).unwrap();
        worst_gram = worst_gram.max(q.orthonormality_residual());
        assert!(jacobi_singular_values(&q)[0] <= 1.0 + 1e-6);
        if bjorck_orthonormalize(&w, &BjorckConfig::default()).unwrap().orthonormality_residual() >= 1e-4 {
            short_gram += 1;
        }
    }
    let converged = PowerIterConfig {
        max_iters: 2000,
        tol: 1e-10,
    };
    let (mut worst_sigma, mut short_sigma) = (0.0f64, 0);
    for _ in 0..200 {
        let (r, c) = (1 + rng.below(16), 1 + rng.below(16));
        let w = Matrix::new(r, c, rng.normal_vec(r * c)).unwrap();
        let exact = jacobi_singular_values(&w)[0];
        let est = power_iteration(&w, &converged, &mut rng).unwrap();
        worst_sigma = worst_sigma.max((est.sigma - exact).abs());
        let quick = power_iteration(&w, &PowerIterConfig::default(), &mut rng).unwrap();
        if (quick.sigma - exact).abs() >= 1e-6 {
            short_sigma += 1;
        }
    }
    report(
        6,
        worst_gram < 1e-4 && worst_sigma < 1e-6,
        format!(
            "Bjorck Gram residual {worst_gram:.1e} (50 steps; {short_gram}/200 short at 15), \
             power iteration error {worst_sigma:.1e} (2000 steps; {short_sigma}/200 short at 100)"
        ),
    );
}

#[test]
fn criterion_07_conv_factor_bounds() {
    let mut geometries = 0;
    let mut bad = Vec::new();
    for k in [1usize, 3, 5, 7] {
        for s in 1..=3usize {
            let crude = k.div_ceil(s) as f64;
            // widths below the stride leave no output pixel
            for w in k.max(s)..=16 {
                for h in k.max(s)..=16 {
                    let g = ConvGeometry::same(1, 1, k, s, h, w).unwrap();
                    let lambda = conv_lipschitz_factor_strided(&g).unwrap();
                    if lambda > k as f64 || lambda > crude {
                        bad.push(format!("k={k} s={s} {h}x{w}: {lambda}"));
                    }
                    geometries += 1;
                }
                if s == 1 {
                    let z = padded_zero_counts(k, 1, w).unwrap();
                    let half = k / 2;
                    if z.left + z.right != half * (half + 1) {
                        bad.push(format!("k={k} w={w}: zl+zr = {}", z.left + z.right));
                    }
                }
            }
        }
    }
    report(7, bad.is_empty(), format!("{geometries} geometries, violations {bad:?}"));
}

#[test]
fn criterion_08_empirical_lipschitz() {
    let mut rng = Rng::new(8);
    let mut worst = 0.0f64;
    let mut models = 0;
    for _ in 0..20 {
        let outputs = 1 + rng.below(3);
        let mut m = random_model(&mut rng, outputs);
        m.normalize_weights(&mut rng).unwrap();
        let d = m.input_dim();
        let ratios = m.empirical_lipschitz(&vec![-3.0; d], &vec![3.0; d], 10_000, &mut rng).unwrap();
        worst = ratios.into_iter().fold(worst, f64::max);
        models += 1;
    }
    for t in [demo(), pure_kr(), lambda_ten()] {
        let ratios = t.model.empirical_lipschitz(&[-2.0, -1.5], &[3.0, 2.0], 10_000, &mut rng).unwrap();
        worst = ratios.into_iter().fold(worst, f64::max);
        models += 1;
    }
    report(
        8,
        worst <= 1.0 + 1e-3,
        format!("{models} models x 10^4 pairs, worst ratio {worst:.6}"),
    );
}

#[test]
fn criterion_09_direction_alignment() {
    let t = demo();
    let cfg = ExperimentConfig::two_moons_demo(0);
    let s = alignment_study(&t.model, &t.data, 50, &cfg.loss, &PgdConfig::default(), &mut Rng::new(9)).unwrap();
    report(
        9,
        s.mean_cos_adv > 0.9 && s.mean_cos_transport > 0.9 && s.mean_c_transport >= s.mean_c_adv,
        format!(
            "cos adv {:.3}, cos transport {:.3}, c adv {:.3} <= c transport {:.3} ({} points, {} skipped)",
            s.mean_cos_adv,
            s.mean_cos_transport,
            s.mean_c_adv,
            s.mean_c_transport,
            s.points.len(),
            s.skipped
        ),
    );
}

#[test]
fn criterion_10_gradients() {
    let mut rng = Rng::new(10);
    let (mut done, mut skipped) = (0, 0);
    let mut worst = 0.0f64;
    while done < 50 {
        let outputs = if rng.below(2) == 0 { 1 } else { 2 + rng.below(2) };
        let m = random_model(&mut rng, outputs);
        let n = 2 * outputs + rng.below(4);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(m.input_dim())).collect();
        let labels: Vec<i64> = if outputs == 1 {
            (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect()
        } else {
            (0..n).map(|i| (i % outputs) as i64).collect()
        };
        let cfg = LossConfig {
            lambda: rng.uniform_in(0.0, 10.0),
            margin: rng.uniform_in(0.1, 1.0),
        };
        let sort_gap = xs
            .iter()
            .map(|x| m.kink_distance(&m.forward_trace(x).unwrap()))
            .fold(f64::INFINITY, f64::min);
        if sort_gap < 1e-3 || hinge_kink_distance(&m, &xs, &labels, cfg.margin) < 1e-3 {
            skipped += 1;
            continue;
        }
        let a = analytic_param_gradient(&m, &xs, &labels, &cfg);
        let f = numeric_param_gradient(&m, &xs, &labels, &cfg, 1e-5);
        worst = worst.max(gradient_mismatch(&a, &f));
        done += 1;
    }
    report(
        10,
        worst < 1e-4,
        format!("{done} model/loss configs ({skipped} skipped near kinks), worst relative error {worst:.1e}"),
    );
}

#[test]
fn criterion_11_determinism() {
    let mut cfg = ExperimentConfig::new(11);
    cfg.model.hidden = vec![32, 32];
    cfg.optimizer.epochs = 10;
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let t = run_training(&cfg, None).unwrap();
        let path = dir.path().join(format!("model{run}.json"));
        save_model(&t.model, &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
        assert_eq!(std::str::from_utf8(&files[run]).unwrap().trim_end(), model_to_json(&t.model).unwrap().trim_end());
    }
    report(
        11,
        files[0] == files[1],
        format!("two training runs wrote {} and {} byte model files, identical: {}", files[0].len(), files[1].len(), files[0] == files[1]),
    );
}
