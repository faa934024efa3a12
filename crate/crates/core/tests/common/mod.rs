//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use hkr::constraints::ConvGeometry;
use hkr::Matrix;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Textbook triple loop.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a.row(i)[t] * b.row(t)[j];
            }
        }
    }
    out
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Euclidean norm with a double-double accumulator: squares are split with
/// FMA and summed error-free, after an exact power-of-two rescaling.
pub fn precise_norm(v: &[f64]) -> f64 {
    let big = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if big == 0.0 {
        return 0.0;
    }
    let scale = 2f64.powi(big.log2().floor() as i32);
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for &x in v {
        let y = x / scale;
        let p = y * y;
        let perr = y.mul_add(y, -p);
        let (s, e) = two_sum(hi, p);
        hi = s;
        lo += e + perr;
    }
    (hi + lo).sqrt() * scale
}

/// Singular values by one-sided Jacobi rotations, in decreasing order.
pub fn jacobi_singular_values(a: &Matrix) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    // work on columns of the taller orientation
    let (rows, cols, get): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if m >= n {
        (m, n, Box::new(|i, j| a.row(i)[j]))
    } else {
        (n, m, Box::new(|i, j| a.row(j)[i]))
    };
    let mut c: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| get(i, j)).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = c[p].iter().map(|x| x * x).sum();
                let beta: f64 = c[q].iter().map(|x| x * x).sum();
                let gamma: f64 = c[p].iter().zip(&c[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..rows {
                    let (x, y) = (c[p][i], c[q][i]);
                    c[p][i] = cs * x - sn * y;
                    c[q][i] = sn * x + cs * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = c.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Dense matrix of a same-padded convolution acting on a pixel-major,
/// channel-contiguous map, built by explicitly padding the input.
pub fn conv_duplication_matrix(kernel: &Matrix, g: &ConvGeometry) -> Vec<Vec<f64>> {
    let half = g.kernel / 2;
    let (ph, pw) = (g.in_h + 2 * half, g.in_w + 2 * half);
    let (ci, co) = (g.in_channels, g.out_channels);
    let mut out = vec![vec![0.0; g.in_h * g.in_w * ci]; g.out_h * g.out_w * co];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            // top-left corner of the window in padded coordinates
            let (ty, tx) = (oy * g.stride, ox * g.stride);
            for dy in 0..g.kernel {
                for dx in 0..g.kernel {
                    let (py, px) = (ty + dy, tx + dx);
                    assert!(py < ph && px < pw);
                    if py < half || px < half || py >= half + g.in_h || px >= half + g.in_w {
                        continue;
                    }
                    let pixel = (py - half) * g.in_w + (px - half);
                    for o in 0..co {
                        for c in 0..ci {
                            let w = kernel.row(o)[(dy * g.kernel + dx) * ci + c];
                            out[(oy * g.out_w + ox) * co + o][pixel * ci + c] += w;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Padded taps along one axis, counted tap by tap over output centres
/// `0, s, 2s, …` below `width`.
pub fn enumerate_padded(kernel: usize, stride: usize, width: usize) -> (usize, usize) {
    let half = (kernel / 2) as i64;
    let (mut left, mut right) = (0, 0);
    let mut c = 0i64;
    while c < width as i64 {
        for d in -half..=half {
            let p = c + d;
            if p < 0 {
                left += 1;
            } else if p >= width as i64 {
                right += 1;
            }
        }
        c += stride as i64;
    }
    (left, right)
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Minimum of `c·x` over a bounded polytope by enumerating every basic
/// point: each choice of `n` linearly independent tight constraints.
/// `None` when no feasible vertex exists.
pub fn vertex_enumeration(
    costs: &[f64],
    equalities: &[(Vec<f64>, f64)],
    inequalities: &[(Vec<f64>, f64)],
    bounds: &[(f64, f64)],
) -> Option<f64> {
    let n = costs.len();
    let mut ineq: Vec<(Vec<f64>, f64)> = inequalities.to_vec();
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        if lo.is_finite() {
            e[j] = -1.0;
            ineq.push((e.clone(), -lo));
        }
        if hi.is_finite() {
            e[j] = 1.0;
            ineq.push((e, hi));
        }
    }
    let need = n.checked_sub(equalities.len())?;
    let feasible = |x: &[f64]| {
        let dot = |r: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        equalities.iter().all(|(r, b)| (dot(r) - b).abs() < 1e-9) && ineq.iter().all(|(r, b)| dot(r) <= b + 1e-9)
    };
    let mut best: Option<f64> = None;
    let m = ineq.len();
    let mut pick = Vec::new();
    fn subsets(start: usize, m: usize, need: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if pick.len() == need {
            f(pick);
            return;
        }
        for i in start..m {
            pick.push(i);
            subsets(i + 1, m, need, pick, f);
            pick.pop();
        }
    }
    subsets(0, m, need, &mut pick, &mut |idx: &[usize]| {
        let rows: Vec<Vec<f64>> = equalities.iter().map(|e| e.0.clone()).chain(idx.iter().map(|&i| ineq[i].0.clone())).collect();
        let rhs: Vec<f64> = equalities.iter().map(|e| e.1).chain(idx.iter().map(|&i| ineq[i].1)).collect();
        if let Some(x) = solve_square(rows, rhs) {
            if feasible(&x) {
                let v: f64 = costs.iter().zip(&x).map(|(a, b)| a * b).sum();
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
    });
    best
}

/// Central differences of a scalar function.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

use hkr::loss::{hkr_loss, hkr_multiclass_loss};
use hkr::net::{Layer, LayerGrad, NormalizationSettings};
use hkr::{LayerSpec, LossConfig, Model, NormalizationMode, Rng, Shape};

/// A small random architecture: either an MLP with one of the sorting or
/// PReLU activations, or a conv / pool / dense stack on a tiny image.
pub fn random_architecture(rng: &mut Rng, outputs: usize) -> (Shape, Vec<LayerSpec>) {
    let act = match rng.below(3) {
        0 => LayerSpec::GroupSort { group: 2 },
        1 => LayerSpec::FullSort,
        _ => LayerSpec::ConstPrelu {
            alpha: rng.uniform_in(-0.9, 0.9),
        },
    };
    if rng.below(3) < 2 {
        let d = 2 + rng.below(4);
        let mut specs = Vec::new();
        for _ in 0..1 + rng.below(3) {
            specs.push(LayerSpec::Dense { units: 2 + 2 * rng.below(4) });
            specs.push(act.clone());
        }
        specs.push(LayerSpec::Dense { units: outputs });
        (Shape::flat(d), specs)
    } else {
        let side = 4 + rng.below(3);
        let stride = 1 + rng.below(2);
        let pool = match rng.below(3) {
            0 => LayerSpec::PnormPool {
                pool: 2,
                stride: 2,
                p: 2.0,
                mean_factor: rng.below(2) == 0,
            },
            1 => LayerSpec::MaxPool { pool: 2, stride: 2 },
            _ => LayerSpec::AvgPool { pool: 2, stride: 1 },
        };
        let specs = vec![
            LayerSpec::Conv2d {
                channels: 2 + 2 * rng.below(2),
                kernel: [1, 3][rng.below(2)],
                stride,
            },
            act,
            pool,
            LayerSpec::Dense { units: outputs },
        ];
        (Shape::new(side, side, 1 + rng.below(2)), specs)
    }
}

pub fn random_mode(rng: &mut Rng) -> NormalizationMode {
    if rng.below(2) == 0 {
        NormalizationMode::Bjorck
    } else {
        NormalizationMode::Spectral
    }
}

/// Builds a normalized random model and then perturbs every parameter,
/// biases included, so that gradients see non-trivial values.
pub fn random_model(rng: &mut Rng, outputs: usize) -> Model {
    let (shape, specs) = random_architecture(rng, outputs);
    let mode = random_mode(rng);
    let mut m = Model::build(shape, &specs, mode, NormalizationSettings::default(), rng).unwrap();
    for buf in m.params_mut() {
        for v in buf.iter_mut() {
            *v += 0.1 * rng.normal();
        }
    }
    m
}

/// Batch loss of a model: binary hKR for one output, one-vs-all otherwise.
pub fn batch_loss(model: &Model, xs: &[Vec<f64>], labels: &[i64], cfg: &LossConfig) -> (f64, Vec<Vec<f64>>) {
    let scores: Vec<Vec<f64>> = xs.iter().map(|x| model.forward(x).unwrap()).collect();
    let q = model.output_dim();
    if q == 1 {
        let flat: Vec<f64> = scores.iter().map(|s| s[0]).collect();
        let v = hkr_loss(&flat, labels, cfg).unwrap();
        (v.total, v.grad.iter().map(|g| vec![*g]).collect())
    } else {
        let m = Matrix::new(xs.len(), q, scores.concat()).unwrap();
        let cls: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
        let v = hkr_multiclass_loss(&m, &cls, cfg).unwrap();
        (v.total, v.grad.chunks(q).map(<[f64]>::to_vec).collect())
    }
}

/// Distance of the batch from the hinge kinks `y·f = m` of every output.
pub fn hinge_kink_distance(model: &Model, xs: &[Vec<f64>], labels: &[i64], margin: f64) -> f64 {
    let q = model.output_dim();
    let mut best = f64::INFINITY;
    for (x, &y) in xs.iter().zip(labels) {
        let s = model.forward(x).unwrap();
        for (k, v) in s.iter().enumerate() {
            let sign = if q == 1 { y as f64 } else if k as i64 == y { 1.0 } else { -1.0 };
            best = best.min((margin - sign * v).abs());
        }
    }
    best
}

/// Analytic parameter gradient of [`batch_loss`], flattened in
/// `params_mut` order.
pub fn analytic_param_gradient(model: &Model, xs: &[Vec<f64>], labels: &[i64], cfg: &LossConfig) -> Vec<f64> {
    let (_, up) = batch_loss(model, xs, labels, cfg);
    let mut total: Option<Vec<LayerGrad<f64>>> = None;
    for (x, u) in xs.iter().zip(&up) {
        let tr = model.forward_trace(x).unwrap();
        let g = model.backward(&tr, u).unwrap().param_grads;
        match &mut total {
            None => total = Some(g),
            Some(t) => t.iter_mut().zip(&g).for_each(|(a, b)| a.add_scaled(b, 1.0)),
        }
    }
    total.unwrap().iter().flat_map(|g| g.slices().concat()).collect()
}

/// Central differences of [`batch_loss`] over every parameter.
pub fn numeric_param_gradient(model: &Model, xs: &[Vec<f64>], labels: &[i64], cfg: &LossConfig, h: f64) -> Vec<f64> {
    let mut probe = model.clone();
    let sizes: Vec<usize> = probe.params_mut().iter().map(|b| b.len()).collect();
    let mut out = Vec::new();
    for (b, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.params_mut()[b][i];
            probe.params_mut()[b][i] = orig + h;
            let up = batch_loss(&probe, xs, labels, cfg).0;
            probe.params_mut()[b][i] = orig - h;
            let down = batch_loss(&probe, xs, labels, cfg).0;
            probe.params_mut()[b][i] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Largest entry-wise error relative to the larger of the two entries and
/// the gradient's scale.
pub fn gradient_mismatch(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(scale).max(1e-12))
        .fold(0.0, f64::max)
}

pub fn is_dense(layer: &Layer<f64>) -> bool {
    matches!(layer, Layer::Dense { .. })
}
