//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Built for the small transport programs of this crate (a few hundred
//! variables at most): the tableau is dense, every pivot is exact Gaussian
//! elimination, and the final basis is re-solved against the original
//! constraint matrix so that the reported primal and dual values carry no
//! accumulated pivoting error.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
    #[error("malformed linear program: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// Sparse row: `(variable, coefficient)` pairs.
pub type Row = Vec<(usize, f64)>;

/// `minimize costsᵀx` subject to rows and per-variable bounds
/// (default `[0, ∞)`).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    costs: Vec<f64>,
    rows: Vec<(Row, Relation, f64)>,
    bounds: Vec<(f64, f64)>,
    max_pivots: usize,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Sensitivity of the optimum to each constraint's right-hand side.
    pub row_duals: Vec<f64>,
    /// `max_j |x_j · d_j|` over standard-form columns, `d` the reduced costs.
    pub complementary_slackness: f64,
    /// `max(0, −min_j d_j)`; zero at a dual-feasible basis.
    pub dual_infeasibility: f64,
    /// Largest violation of the original rows and bounds.
    pub primal_infeasibility: f64,
    pub pivots: usize,
}

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-10;
const FEAS_EPS: f64 = 1e-9;

impl LinearProgram {
    pub fn minimize(costs: Vec<f64>) -> Self {
        let n = costs.len();
        Self {
            costs,
            rows: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
            max_pivots: 100_000,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.costs.len()
    }

    /// Adds a constraint and returns its row index.
    pub fn constraint(&mut self, row: Row, rel: Relation, rhs: f64) -> usize {
        self.rows.push((row, rel, rhs));
        self.rows.len() - 1
    }

    pub fn bounds(&mut self, var: usize, lo: f64, hi: f64) -> &mut Self {
        self.bounds[var] = (lo, hi);
        self
    }

    pub fn free(&mut self, var: usize) -> &mut Self {
        self.bounds(var, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn max_pivots(&mut self, cap: usize) -> &mut Self {
        self.max_pivots = cap;
        self
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let std = StandardForm::build(self)?;
        let (basis, pivots, kept) = std.simplex(self.max_pivots)?;
        Ok(std.extract(self, &basis, &kept, pivots))
    }
}

/// Convenience wrapper: equalities and `≤` inequalities as dense rows.
pub fn lp_solve(
    costs: &[f64],
    equalities: &[(Vec<f64>, f64)],
    inequalities: &[(Vec<f64>, f64)],
    bounds: &[(f64, f64)],
) -> Result<LpSolution, LpError> {
    let mut lp = LinearProgram::minimize(costs.to_vec());
    if bounds.len() != costs.len() {
        return Err(LpError::Invalid(format!(
            "{} bounds for {} variables",
            bounds.len(),
            costs.len()
        )));
    }
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        lp.bounds(j, lo, hi);
    }
    let sparse = |dense: &[f64]| -> Row {
        dense
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(j, &a)| (j, a))
            .collect()
    };
    for (row, rhs) in equalities {
        lp.constraint(sparse(row), Relation::Eq, *rhs);
    }
    for (row, rhs) in inequalities {
        lp.constraint(sparse(row), Relation::Le, *rhs);
    }
    lp.solve()
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = lo + y
    Shift { col: usize, lo: f64 },
    /// x = hi − y
    Mirror { col: usize, hi: f64 },
    /// x = y⁺ − y⁻
    Split { pos: usize, neg: usize },
}

struct StandardForm {
    /// m × n dense, row-major
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    m: usize,
    n: usize,
    /// per standard row: column that can start basic (slack with +1)
    start_basic: Vec<Option<usize>>,
    /// per user row: ±1 if the row was negated to make b ≥ 0
    row_sign: Vec<f64>,
    var_map: Vec<VarMap>,
    cost_offset: f64,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Result<Self, LpError> {
        let nv = lp.costs.len();
        for (row, _, rhs) in &lp.rows {
            if row.iter().any(|&(j, a)| j >= nv || !a.is_finite()) || !rhs.is_finite() {
                return Err(LpError::Invalid("row references unknown variable or non-finite value".into()));
            }
        }
        if lp.costs.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Invalid("non-finite cost".into()));
        }

        let mut n = 0;
        let mut var_map = Vec::with_capacity(nv);
        let mut bound_rows: Vec<(usize, f64)> = Vec::new();
        for &(lo, hi) in &lp.bounds {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(LpError::Invalid(format!("bad bounds [{lo}, {hi}]")));
            }
            let map = if lo.is_finite() {
                if hi.is_finite() {
                    bound_rows.push((n, hi - lo));
                }
                VarMap::Shift { col: n, lo }
            } else if hi.is_finite() {
                VarMap::Mirror { col: n, hi }
            } else {
                n += 1;
                VarMap::Split { pos: n - 1, neg: n }
            };
            n += 1;
            var_map.push(map);
        }
        let n_struct = n;

        let mut c = vec![0.0; n_struct];
        let mut cost_offset = 0.0;
        for (j, &cost) in lp.costs.iter().enumerate() {
            match var_map[j] {
                VarMap::Shift { col, lo } => {
                    c[col] += cost;
                    cost_offset += cost * lo;
                }
                VarMap::Mirror { col, hi } => {
                    c[col] -= cost;
                    cost_offset += cost * hi;
                }
                VarMap::Split { pos, neg } => {
                    c[pos] += cost;
                    c[neg] -= cost;
                }
            }
        }

        // rows over structural columns
        let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
        for (row, rel, rhs) in &lp.rows {
            let mut dense = vec![0.0; n_struct];
            let mut b = *rhs;
            for &(j, a) in row {
                match var_map[j] {
                    VarMap::Shift { col, lo } => {
                        dense[col] += a;
                        b -= a * lo;
                    }
                    VarMap::Mirror { col, hi } => {
                        dense[col] -= a;
                        b -= a * hi;
                    }
                    VarMap::Split { pos, neg } => {
                        dense[pos] += a;
                        dense[neg] -= a;
                    }
                }
            }
            rows.push((dense, *rel, b));
        }
        for &(col, width) in &bound_rows {
            let mut dense = vec![0.0; n_struct];
            dense[col] = 1.0;
            rows.push((dense, Relation::Le, width));
        }

        let m = rows.len();
        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_total = n_struct + n_slack;
        let mut a = vec![0.0; m * n_total];
        let mut b = vec![0.0; m];
        let mut start_basic = vec![None; m];
        let mut row_sign = vec![1.0; m];
        let mut slack = n_struct;
        for (i, (dense, rel, rhs)) in rows.into_iter().enumerate() {
            a[i * n_total..i * n_total + n_struct].copy_from_slice(&dense);
            b[i] = rhs;
            let slack_col = match rel {
                Relation::Le => {
                    a[i * n_total + slack] = 1.0;
                    slack += 1;
                    Some(slack - 1)
                }
                Relation::Ge => {
                    a[i * n_total + slack] = -1.0;
                    slack += 1;
                    Some(slack - 1)
                }
                Relation::Eq => None,
            };
            if b[i] < 0.0 {
                for v in &mut a[i * n_total..(i + 1) * n_total] {
                    *v = -*v;
                }
                b[i] = -b[i];
                row_sign[i] = -1.0;
            }
            if let Some(sc) = slack_col {
                if a[i * n_total + sc] > 0.0 {
                    start_basic[i] = Some(sc);
                }
            }
        }
        c.resize(n_total, 0.0);
        row_sign.truncate(lp.rows.len());

        Ok(Self {
            a,
            b,
            c,
            m,
            n: n_total,
            start_basic,
            row_sign,
            var_map,
            cost_offset,
        })
    }

    /// Returns the optimal basis (column per kept row), pivot count and the
    /// indices of the rows kept after dropping redundant ones.
    fn simplex(&self, max_pivots: usize) -> Result<(Vec<usize>, usize, Vec<usize>), LpError> {
        let (m, n) = (self.m, self.n);
        // Artificial columns n.. for rows without a usable slack.
        let mut art_of_row = vec![None; m];
        let mut n_art = 0;
        for i in 0..m {
            if self.start_basic[i].is_none() {
                art_of_row[i] = Some(n + n_art);
                n_art += 1;
            }
        }
        let width = n + n_art + 1;
        let rhs = width - 1;
        let mut t = Tableau {
            data: vec![0.0; m * width],
            width,
            basis: vec![0; m],
            rows: (0..m).collect(),
        };
        for i in 0..m {
            t.data[i * width..i * width + n].copy_from_slice(&self.a[i * n..(i + 1) * n]);
            t.data[i * width + rhs] = self.b[i];
            if let Some(ac) = art_of_row[i] {
                t.data[i * width + ac] = 1.0;
                t.basis[i] = ac;
            } else {
                t.basis[i] = self.start_basic[i].unwrap();
            }
        }

        let mut pivots = 0;
        if n_art > 0 {
            let mut phase1 = vec![0.0; n + n_art];
            for c in phase1.iter_mut().skip(n) {
                *c = 1.0;
            }
            t.optimize(&phase1, n + n_art, &mut pivots, max_pivots)?;
            let infeas: f64 = (0..t.basis.len())
                .filter(|&r| t.basis[r] >= n)
                .map(|r| t.data[r * width + rhs])
                .sum();
            let scale = 1.0 + self.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if infeas > FEAS_EPS * scale {
                return Err(LpError::Infeasible);
            }
            // drive artificials out of the basis or drop redundant rows
            let mut r = 0;
            while r < t.basis.len() {
                if t.basis[r] >= n {
                    let row = &t.data[r * width..r * width + n];
                    let col = (0..n).find(|&j| row[j].abs() > 1e-9);
                    match col {
                        Some(j) => {
                            t.pivot(r, j);
                            pivots += 1;
                        }
                        None => {
                            t.remove_row(r);
                            continue;
                        }
                    }
                }
                r += 1;
            }
        }
        t.optimize(&self.c, n, &mut pivots, max_pivots)?;
        Ok((t.basis.clone(), pivots, t.rows.clone()))
    }

    fn extract(&self, lp: &LinearProgram, basis: &[usize], kept: &[usize], pivots: usize) -> LpSolution {
        let n = self.n;
        let k = basis.len();
        // B x_B = b and Bᵀ y = c_B on the kept rows of the original matrix
        let b_mat: Vec<f64> = kept
            .iter()
            .flat_map(|&i| basis.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.a[i * n + j])
            .collect();
        let b_rhs: Vec<f64> = kept.iter().map(|&i| self.b[i]).collect();
        let mut x_std = vec![0.0; n];
        if let Some(xb) = solve_dense(&b_mat, &b_rhs, k, false) {
            for (idx, &j) in basis.iter().enumerate() {
                x_std[j] = xb[idx].max(0.0);
            }
        }
        let c_b: Vec<f64> = basis.iter().map(|&j| self.c[j]).collect();
        let y_kept = solve_dense(&b_mat, &c_b, k, true).unwrap_or_else(|| vec![0.0; k]);
        let mut y = vec![0.0; self.m];
        for (idx, &i) in kept.iter().enumerate() {
            y[i] = y_kept[idx];
        }

        let mut cs = 0.0f64;
        let mut dual_inf = 0.0f64;
        for j in 0..n {
            let mut d = self.c[j];
            for i in 0..self.m {
                d -= self.a[i * n + j] * y[i];
            }
            cs = cs.max((x_std[j] * d).abs());
            dual_inf = dual_inf.max(-d);
        }

        let x: Vec<f64> = self
            .var_map
            .iter()
            .map(|map| match *map {
                VarMap::Shift { col, lo } => lo + x_std[col],
                VarMap::Mirror { col, hi } => hi - x_std[col],
                VarMap::Split { pos, neg } => x_std[pos] - x_std[neg],
            })
            .collect();
        let objective = lp.costs.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
        debug_assert!({
            let std_obj: f64 = self.c.iter().zip(&x_std).map(|(c, v)| c * v).sum();
            (std_obj + self.cost_offset - objective).abs() <= 1e-6 * (1.0 + objective.abs())
        });

        let mut primal_inf = 0.0f64;
        for (row, rel, rhs) in &lp.rows {
            let lhs: f64 = row.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match rel {
                Relation::Le => (lhs - rhs).max(0.0),
                Relation::Ge => (rhs - lhs).max(0.0),
                Relation::Eq => (lhs - rhs).abs(),
            };
            primal_inf = primal_inf.max(viol);
        }
        for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
            primal_inf = primal_inf.max((lo - x[j]).max(0.0)).max((x[j] - hi).max(0.0));
        }

        let row_duals = self
            .row_sign
            .iter()
            .enumerate()
            .map(|(i, &s)| s * y[i])
            .collect();
        LpSolution {
            x,
            objective,
            row_duals,
            complementary_slackness: cs,
            dual_infeasibility: dual_inf,
            primal_infeasibility: primal_inf,
            pivots,
        }
    }
}

struct Tableau {
    data: Vec<f64>,
    width: usize,
    basis: Vec<usize>,
    /// original row index of each tableau row
    rows: Vec<usize>,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.data[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let w = self.width;
        let p = self.data[r * w + col];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..self.basis.len() {
            if i == r {
                continue;
            }
            let f = self.data[i * w + col];
            if f != 0.0 {
                for (v, &pv) in self.data[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.data[i * w + col] = 0.0;
            }
        }
        self.basis[r] = col;
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width;
        self.data.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows.remove(r);
    }

    /// Minimizes `costs` over the first `active` columns with Bland's rule.
    fn optimize(
        &mut self,
        costs: &[f64],
        active: usize,
        pivots: &mut usize,
        max_pivots: usize,
    ) -> Result<(), LpError> {
        let w = self.width;
        loop {
            let m = self.basis.len();
            // reduced costs d_j = c_j − Σ_r c_{B_r} T_rj
            let entering = (0..active).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let mut d = costs[j];
                for r in 0..m {
                    let cb = costs.get(self.basis[r]).copied().unwrap_or(0.0);
                    d -= cb * self.data[r * w + j];
                }
                d < -COST_EPS
            });
            let Some(col) = entering else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.data[r * w + col];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(r) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-12
                                || (ratio <= bratio + 1e-12 && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = best else {
                return Err(LpError::Unbounded);
            };
            if *pivots >= max_pivots {
                return Err(LpError::IterationLimit(max_pivots));
            }
            self.pivot(row, col);
            *pivots += 1;
        }
    }
}

/// Solves `M z = r` (or `Mᵀ z = r`) for a k×k row-major `M` by Gaussian
/// elimination with partial pivoting.
fn solve_dense(mat: &[f64], rhs: &[f64], k: usize, transpose: bool) -> Option<Vec<f64>> {
    let mut a: Vec<f64> = if transpose {
        (0..k * k).map(|idx| mat[(idx % k) * k + idx / k]).collect()
    } else {
        mat.to_vec()
    };
    let mut b = rhs.to_vec();
    for col in 0..k {
        let piv = (col..k).max_by(|&x, &y| a[x * k + col].abs().partial_cmp(&a[y * k + col].abs()).unwrap())?;
        if a[piv * k + col].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for j in 0..k {
                a.swap(piv * k + j, col * k + j);
            }
            b.swap(piv, col);
        }
        let p = a[col * k + col];
        for r in col + 1..k {
            let f = a[r * k + col] / p;
            if f != 0.0 {
                for j in col..k {
                    a[r * k + j] -= f * a[col * k + j];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut z = vec![0.0; k];
    for r in (0..k).rev() {
        let mut s = b[r];
        for j in r + 1..k {
            s -= a[r * k + j] * z[j];
        }
        z[r] = s / a[r * k + r];
    }
    Some(z)
}
