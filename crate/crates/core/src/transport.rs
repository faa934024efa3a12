//! Discrete optimal transport between two balanced point clouds, classical
//! and hinge-regularized, as pairs of linear programs.
//!
//! Points `x_1..x_n` carry label `+1`, points `x_{n+1}..x_{2n}` label `−1`,
//! and `C_ij = ‖x_i − x_{n+j}‖`.
//!
//! Classical pair:
//! * primal `min ΣΠC` with row and column sums `1/n`,
//! * dual `max (1/n)·Σ_k F_k u_k` with `F_i − F_{n+j} ≤ C_ij`.
//!
//! Hinge-regularized pair, `λ ≥ 0`:
//! * dual `max (1/n)·Σ_k [F_k u_k − λ(1 − F_k u_k)₊]` under the same
//!   constraints,
//! * primal `min ΣΠC + 2(1 − ΣΠ)` with row and column sums in
//!   `[1/n, (1+λ)/n]`.
//!
//! The mass term of that primal is the exact LP dual of the hinge program:
//! the multiplier `s_k ∈ [0, λ/n]` of each hinge row enters the objective as
//! `−Σ s_k` and the marginal of point `k` as `1/n + s_k`, which sums to
//! `−(2ΣΠ − 2)`. With it the two optimal values coincide and the duality
//! offset is zero. The variant `min ΣΠC − 2(1 − ΣΠ)` is kept as
//! [`MassTerm::Penalty`]; its gap to the dual depends on the instance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{distance, Matrix};
use crate::loss::LossConfig;
use crate::lp::{LinearProgram, Relation, Row};
use crate::rng::Rng;

/// Largest supported class size; the LPs are dense.
pub const MAX_POINTS_PER_CLASS: usize = 50;

/// Offset `primal − dual` of the hinge-regularized pair at the optimum.
pub fn hkr_duality_offset(_n: usize, _lambda: f64) -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    positives: Vec<Vec<f64>>,
    negatives: Vec<Vec<f64>>,
    cost: Matrix<f64>,
}

impl DiscreteInstance {
    pub fn new(positives: Vec<Vec<f64>>, negatives: Vec<Vec<f64>>) -> Result<Self> {
        let n = positives.len();
        if n == 0 || negatives.len() != n {
            return Err(Error::InvalidConfig(format!(
                "balanced instance required, got {} vs {}",
                n,
                negatives.len()
            )));
        }
        if n > MAX_POINTS_PER_CLASS {
            return Err(Error::InvalidConfig(format!(
                "{n} points per class exceeds the cap of {MAX_POINTS_PER_CLASS}"
            )));
        }
        let d = positives[0].len();
        if positives.iter().chain(&negatives).any(|p| p.len() != d) {
            return Err(Error::DimensionMismatch("points of unequal dimension".into()));
        }
        if positives.iter().chain(&negatives).flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("instance points"));
        }
        let cost = Matrix::from_fn(n, n, |i, j| distance(&positives[i], &negatives[j]));
        Ok(Self {
            positives,
            negatives,
            cost,
        })
    }

    /// `n` standard Gaussian points per class in `dim` dimensions, the
    /// positive cloud shifted by `shift` along the first axis.
    pub fn random(n: usize, dim: usize, shift: f64, rng: &mut Rng) -> Result<Self> {
        let mut draw = |offset: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let mut p: Vec<f64> = rng.normal_vec(dim);
                    p[0] += offset;
                    p
                })
                .collect()
        };
        let pos = draw(shift);
        let neg = draw(0.0);
        Self::new(pos, neg)
    }

    pub fn n(&self) -> usize {
        self.positives.len()
    }

    pub fn cost(&self) -> &Matrix<f64> {
        &self.cost
    }

    pub fn positives(&self) -> &[Vec<f64>] {
        &self.positives
    }

    pub fn negatives(&self) -> &[Vec<f64>] {
        &self.negatives
    }

    /// `u`: `+1` for the first `n` entries, `−1` for the rest.
    pub fn labels(&self) -> Vec<f64> {
        let n = self.n();
        (0..2 * n).map(|k| if k < n { 1.0 } else { -1.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub pi: Matrix<f64>,
    pub objective_value: f64,
    /// Complementary-slackness residual reported by the LP.
    pub residual: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.pi.rows()).map(|i| self.pi.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.pi.cols()];
        for i in 0..self.pi.rows() {
            for (acc, v) in s.iter_mut().zip(self.pi.row(i)) {
                *acc += v;
            }
        }
        s
    }

    pub fn total_mass(&self) -> f64 {
        self.pi.as_slice().iter().sum()
    }

    /// `ΣΠC`
    pub fn transport_cost(&self, inst: &DiscreteInstance) -> f64 {
        self.pi
            .as_slice()
            .iter()
            .zip(inst.cost().as_slice())
            .map(|(p, c)| p * c)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualPotential {
    /// Values at `x_1..x_{2n}`.
    pub f: Vec<f64>,
    pub objective_value: f64,
    pub residual: f64,
}

impl DualPotential {
    /// `max(0, max_ij F_i − F_{n+j} − C_ij)`
    pub fn lipschitz_violation(&self, inst: &DiscreteInstance) -> f64 {
        let n = inst.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max(self.f[i] - self.f[n + j] - inst.cost()[(i, j)]);
            }
        }
        worst
    }

    /// `(1 − F_k u_k)₊` per point.
    pub fn hinge_terms(&self, inst: &DiscreteInstance) -> Vec<f64> {
        self.f
            .iter()
            .zip(inst.labels())
            .map(|(f, u)| (1.0 - f * u).max(0.0))
            .collect()
    }
}

/// Mass term of the hinge-regularized primal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassTerm {
    /// `+2(1 − ΣΠ)`: the LP dual of the hinge program.
    #[default]
    Reward,
    /// `−2(1 − ΣΠ)`
    Penalty,
}

pub fn solve_ot_primal(inst: &DiscreteInstance) -> Result<TransportPlan> {
    solve_plan(inst, 0.0, None)
}

pub fn solve_hkr_primal(inst: &DiscreteInstance, lambda: f64) -> Result<TransportPlan> {
    solve_hkr_primal_with(inst, lambda, MassTerm::Reward)
}

/// Plan of the transport problem dual to training with `loss`.
///
/// A margin `m` is absorbed by measuring costs in units of `m`, and the
/// class-balanced hinge weighs each class mean by `λ/2`, so the LP is solved
/// on the points scaled by `1/m` with parameter `λ/2`.
pub fn solve_hkr_primal_for_loss(inst: &DiscreteInstance, loss: &LossConfig) -> Result<TransportPlan> {
    loss.validate()?;
    let scale = |pts: &[Vec<f64>]| -> Vec<Vec<f64>> {
        pts.iter().map(|p| p.iter().map(|v| v / loss.margin).collect()).collect()
    };
    let scaled = DiscreteInstance::new(scale(&inst.positives), scale(&inst.negatives))?;
    solve_hkr_primal(&scaled, loss.lambda / 2.0)
}

pub fn solve_hkr_primal_with(inst: &DiscreteInstance, lambda: f64, mass: MassTerm) -> Result<TransportPlan> {
    check_lambda(lambda)?;
    solve_plan(inst, lambda, Some(mass))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Variables: `Π_ij` at `i·n + j`, then one marginal variable per row and
/// per column, boxed to `[1/n, (1+λ)/n]` (a point when `λ = 0`).
fn solve_plan(inst: &DiscreteInstance, lambda: f64, mass: Option<MassTerm>) -> Result<TransportPlan> {
    let n = inst.n();
    let nn = n * n;
    let shift = match mass {
        None => 0.0,
        Some(MassTerm::Reward) => -2.0,
        Some(MassTerm::Penalty) => 2.0,
    };
    let mut costs: Vec<f64> = inst.cost().as_slice().iter().map(|c| c + shift).collect();
    costs.resize(nn + 2 * n, 0.0);
    let mut lp = LinearProgram::minimize(costs);
    let lo = 1.0 / n as f64;
    let hi = (1.0 + lambda) / n as f64;
    for k in 0..2 * n {
        lp.bounds(nn + k, lo, hi);
    }
    for i in 0..n {
        let mut row: Row = (0..n).map(|j| (i * n + j, 1.0)).collect();
        row.push((nn + i, -1.0));
        lp.constraint(row, Relation::Eq, 0.0);
    }
    for j in 0..n {
        let mut row: Row = (0..n).map(|i| (i * n + j, 1.0)).collect();
        row.push((nn + n + j, -1.0));
        lp.constraint(row, Relation::Eq, 0.0);
    }
    let sol = lp.solve()?;
    let pi = Matrix::new(n, n, sol.x[..nn].iter().map(|v| v.max(0.0)).collect())?;
    let constant = -shift;
    Ok(TransportPlan {
        pi,
        objective_value: sol.objective + constant,
        residual: sol.complementary_slackness,
    })
}

pub fn solve_ot_dual(inst: &DiscreteInstance) -> Result<DualPotential> {
    let mut pot = solve_potential(inst, None)?;
    let mean = pot.f.iter().sum::<f64>() / pot.f.len() as f64;
    for v in &mut pot.f {
        *v -= mean;
    }
    Ok(pot)
}

pub fn solve_hkr_dual(inst: &DiscreteInstance, lambda: f64) -> Result<DualPotential> {
    check_lambda(lambda)?;
    solve_potential(inst, Some(lambda))
}

/// Variables: `F_k` (free) at `k`, then hinge slacks `t_k ≥ 0` at `2n + k`.
fn solve_potential(inst: &DiscreteInstance, lambda: Option<f64>) -> Result<DualPotential> {
    let n = inst.n();
    let u = inst.labels();
    let inv_n = 1.0 / n as f64;
    let mut costs: Vec<f64> = u.iter().map(|uk| -uk * inv_n).collect();
    if let Some(l) = lambda {
        costs.extend(std::iter::repeat_n(l * inv_n, 2 * n));
    }
    let mut lp = LinearProgram::minimize(costs);
    for k in 0..2 * n {
        lp.free(k);
    }
    for i in 0..n {
        for j in 0..n {
            lp.constraint(vec![(i, 1.0), (n + j, -1.0)], Relation::Le, inst.cost()[(i, j)]);
        }
    }
    if lambda.is_some() {
        // t_k ≥ 1 − F_k u_k
        for k in 0..2 * n {
            lp.constraint(vec![(k, u[k]), (2 * n + k, 1.0)], Relation::Ge, 1.0);
        }
    }
    let sol = lp.solve()?;
    Ok(DualPotential {
        f: sol.x[..2 * n].to_vec(),
        objective_value: -sol.objective,
        residual: sol.complementary_slackness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub n: usize,
    pub lambda: f64,
    pub classical_primal: f64,
    pub classical_dual: f64,
    /// `|classical_primal − classical_dual|`
    pub classical_gap: f64,
    pub primal: f64,
    pub dual: f64,
    /// `primal − dual` of the hinge-regularized pair.
    pub raw_gap: f64,
    /// `|raw_gap − hkr_duality_offset(n, λ)|`
    pub normalized_gap: f64,
}

/// Classical and hinge-regularized primal and dual values of one instance.
pub fn duality_report(inst: &DiscreteInstance, lambda: f64) -> Result<DualityReport> {
    let classical_primal = solve_ot_primal(inst)?.objective_value;
    let classical_dual = solve_ot_dual(inst)?.objective_value;
    let primal = solve_hkr_primal(inst, lambda)?.objective_value;
    let dual = solve_hkr_dual(inst, lambda)?.objective_value;
    let raw_gap = primal - dual;
    Ok(DualityReport {
        n: inst.n(),
        lambda,
        classical_primal,
        classical_dual,
        classical_gap: (classical_primal - classical_dual).abs(),
        primal,
        dual,
        raw_gap,
        normalized_gap: (raw_gap - hkr_duality_offset(inst.n(), lambda)).abs(),
    })
}

/// Barycentric image of point `k` under the plan, with points indexed as in
/// [`DiscreteInstance::labels`]: a positive point `k < n` maps to
/// `Σ_j Π_kj z_j / Σ_j Π_kj`, a negative point `n + j` to
/// `Σ_i Π_ij x_i / Σ_i Π_ij`.
pub fn transport_image(inst: &DiscreteInstance, plan: &TransportPlan, k: usize) -> Result<Vec<f64>> {
    let n = inst.n();
    if k >= 2 * n || plan.pi.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("point {k} of a {n}+{n}-point plan")));
    }
    let (weights, targets): (Vec<f64>, &[Vec<f64>]) = if k < n {
        (plan.pi.row(k).to_vec(), &inst.negatives)
    } else {
        ((0..n).map(|i| plan.pi[(i, k - n)]).collect(), &inst.positives)
    };
    let mass: f64 = weights.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMassRow(k));
    }
    let mut out = vec![0.0; targets[0].len()];
    for (p, z) in weights.iter().zip(targets) {
        for (o, zv) in out.iter_mut().zip(z) {
            *o += p * zv;
        }
    }
    Ok(out.into_iter().map(|v| v / mass).collect())
}

/// Largest cost decrease from swapping the targets of two support pairs,
/// `max(0, C_ij + C_kl − C_il − C_kj)` over `Π_ij, Π_kl > tol`.
pub fn cyclical_monotonicity_violation(inst: &DiscreteInstance, plan: &TransportPlan, tol: f64) -> f64 {
    let n = inst.n();
    let c = inst.cost();
    let support: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| plan.pi[(i, j)] > tol)
        .collect();
    let mut worst = 0.0f64;
    for &(i, j) in &support {
        for &(k, l) in &support {
            worst = worst.max(c[(i, j)] + c[(k, l)] - c[(i, l)] - c[(k, j)]);
        }
    }
    worst
}
