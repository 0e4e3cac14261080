//! Dense-inverse bounded-variable revised simplex.
//!
//! Problems are stated as `maximize cᵀx` subject to sparse rows
//! `aᵢᵀx {≤, ≥, =} bᵢ` and box bounds `l ≤ x ≤ u` (either bound may be
//! infinite). Every row receives a bounded slack so the working form is
//! `Ax + s = b`. Phase I drives artificial variables out of an all-artificial
//! starting basis; phase II optimizes the real objective. Pricing is Dantzig's
//! rule with a switch to Bland's rule after a run of degenerate pivots, so
//! the pivot sequence is fully deterministic.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coefficients: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    /// Coefficients of the maximized objective.
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Program over `n` variables with bounds `[0, ∞)` and no rows.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            rows: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coefficients: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        self.rows.push(LpRow {
            coefficients,
            kind,
            rhs,
        });
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Invalid(format!(
                "{n} objective coefficients but {} lower / {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Invalid("non-finite objective coefficient".into()));
        }
        for (j, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::Invalid(format!("bad bounds [{l}, {u}] on variable {j}")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::Invalid(format!("non-finite right-hand side in row {i}")));
            }
            for &(j, v) in &row.coefficients {
                if j >= n || !v.is_finite() {
                    return Err(LpError::Invalid(format!("bad coefficient ({j}, {v}) in row {i}")));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let lhs: f64 = row.coefficients.iter().map(|&(j, a)| a * x[j]).sum();
            let r = lhs - row.rhs;
            worst = worst.max(match row.kind {
                RowKind::Le => r,
                RowKind::Ge => -r,
                RowKind::Eq => r.abs(),
            });
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; meaningful only when `status` is `Optimal`.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers for the maximization problem.
    pub duals: Vec<f64>,
    /// Weak-duality upper bound on the maximum, from the final multipliers.
    pub dual_bound: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("invalid linear program: {0}")]
    Invalid(String),
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("basis matrix became singular")]
    SingularBasis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_switch: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            max_iterations: 50_000,
            refactor_every: 64,
            degenerate_switch: 30,
        }
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp_with(lp, &LpOptions::default())
}

pub fn solve_lp_with(lp: &LinearProgram, options: &LpOptions) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let (row_scale, col_scale) = equilibrate(lp);
    let scaled = apply_scaling(lp, &row_scale, &col_scale);
    let mut sol = solve_scaled(&scaled, options)?;
    for (v, c) in sol.x.iter_mut().zip(&col_scale) {
        *v *= c;
    }
    for (y, r) in sol.duals.iter_mut().zip(&row_scale) {
        *y *= r;
    }
    if sol.status == LpStatus::Optimal {
        sol.objective = lp.objective_value(&sol.x);
    }
    Ok(sol)
}

/// Power-of-two row and column factors from a few geometric-mean sweeps, so
/// that nonzeros of the working matrix cluster around 1. Legitimately small
/// coefficients then stay distinguishable from round-off in pivot tests.
fn equilibrate(lp: &LinearProgram) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (lp.rows.len(), lp.num_vars());
    let mut r = vec![1.0; m];
    let mut c = vec![1.0; n];
    let pow2 = |v: f64| {
        if v.is_finite() && v > 0.0 {
            v.log2().round().exp2()
        } else {
            1.0
        }
    };
    for _ in 0..4 {
        for (i, row) in lp.rows.iter().enumerate() {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for &(j, a) in &row.coefficients {
                let v = (a * c[j]).abs();
                if v > 0.0 {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if hi > 0.0 {
                r[i] = pow2(1.0 / (lo * hi).sqrt());
            }
        }
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![0.0f64; n];
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.coefficients {
                let v = (a * r[i]).abs();
                if v > 0.0 {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
        }
        for j in 0..n {
            if hi[j] > 0.0 {
                c[j] = pow2(1.0 / (lo[j] * hi[j]).sqrt());
            }
        }
    }
    (r, c)
}

/// Program in the variables `x' = x / c` with rows multiplied by `r`.
fn apply_scaling(lp: &LinearProgram, r: &[f64], c: &[f64]) -> LinearProgram {
    LinearProgram {
        objective: lp.objective.iter().zip(c).map(|(o, s)| o * s).collect(),
        rows: lp
            .rows
            .iter()
            .zip(r)
            .map(|(row, &ri)| LpRow {
                coefficients: row.coefficients.iter().map(|&(j, a)| (j, a * ri * c[j])).collect(),
                kind: row.kind,
                rhs: row.rhs * ri,
            })
            .collect(),
        lower: lp.lower.iter().zip(c).map(|(l, s)| l / s).collect(),
        upper: lp.upper.iter().zip(c).map(|(u, s)| u / s).collect(),
    }
}

fn solve_scaled(lp: &LinearProgram, options: &LpOptions) -> Result<LpSolution, LpError> {
    let mut s = Simplex::build(lp, options);
    let mut iterations = 0;

    // Phase I: minimize the sum of artificials.
    let phase1_cost: Vec<f64> = (0..s.total)
        .map(|j| if j >= s.first_artificial { 1.0 } else { 0.0 })
        .collect();
    match s.run(&phase1_cost, &mut iterations)? {
        Outcome::Optimal => {}
        Outcome::Unbounded => return Err(LpError::SingularBasis),
    }
    let infeasibility: f64 = (s.first_artificial..s.total).map(|j| s.x[j]).sum();
    let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    if infeasibility > options.feasibility_tol * scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: s.x[..s.n].to_vec(),
            objective: f64::NAN,
            duals: vec![0.0; s.m],
            dual_bound: f64::NAN,
            iterations,
        });
    }
    for j in s.first_artificial..s.total {
        s.lower[j] = 0.0;
        s.upper[j] = 0.0;
        if !s.is_basic[j] {
            s.x[j] = 0.0;
        }
    }

    // Phase II on the negated objective.
    let mut cost = vec![0.0; s.total];
    for (j, &c) in lp.objective.iter().enumerate() {
        cost[j] = -c;
    }
    let outcome = s.run(&cost, &mut iterations)?;
    let x = s.x[..s.n].to_vec();
    if outcome == Outcome::Unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective: f64::INFINITY,
            x,
            duals: vec![0.0; s.m],
            dual_bound: f64::INFINITY,
            iterations,
        });
    }
    let y = s.duals(&cost);
    // Weak duality for min: yᵀb + Σ_j d_j·(bound selected by the sign of d_j).
    let mut bound = y.dot(&s.b);
    for j in 0..s.total {
        let d = cost[j] - s.column_dot(j, &y);
        if d == 0.0 {
            continue;
        }
        let v = if d > 0.0 { s.lower[j] } else { s.upper[j] };
        // Round-off reduced costs on basic or free columns would turn an
        // infinite bound into an infinite gap; they are charged at the
        // current value instead.
        bound += if v.is_finite() || d.abs() > options.optimality_tol {
            d * v
        } else {
            d * s.x[j]
        };
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_value(&x),
        x,
        duals: y.iter().map(|v| -v).collect(),
        dual_bound: -bound,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Optimal,
    Unbounded,
}

struct Simplex {
    n: usize,
    m: usize,
    total: usize,
    first_artificial: usize,
    /// Sparse structural columns.
    columns: Vec<Vec<(usize, f64)>>,
    /// Sign of each row's artificial column.
    artificial_sign: Vec<f64>,
    b: DVector<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: DMatrix<f64>,
    options: LpOptions,
}

impl Simplex {
    fn build(lp: &LinearProgram, options: &LpOptions) -> Self {
        let n = lp.num_vars();
        let m = lp.rows.len();
        let total = n + 2 * m;
        let first_artificial = n + m;
        let mut columns = vec![Vec::new(); n];
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, v) in &row.coefficients {
                if v != 0.0 {
                    columns[j].push((i, v));
                }
            }
        }
        // Merge duplicate (row, column) entries.
        for col in &mut columns {
            col.sort_by_key(|&(i, _)| i);
            col.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
        }
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        for row in &lp.rows {
            let (l, u) = match row.kind {
                RowKind::Le => (0.0, f64::INFINITY),
                RowKind::Ge => (f64::NEG_INFINITY, 0.0),
                RowKind::Eq => (0.0, 0.0),
            };
            lower.push(l);
            upper.push(u);
        }
        lower.extend(std::iter::repeat_n(0.0, m));
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));

        let mut x = vec![0.0; total];
        for j in 0..n {
            x[j] = nonbasic_rest(lower[j], upper[j]);
        }
        let b = DVector::from_iterator(m, lp.rows.iter().map(|r| r.rhs));
        let mut residual = b.clone();
        for (j, col) in columns.iter().enumerate() {
            for &(i, v) in col {
                residual[i] -= v * x[j];
            }
        }
        let mut basis = Vec::with_capacity(m);
        let mut is_basic = vec![false; total];
        let mut artificial_sign = vec![1.0; m];
        for i in 0..m {
            let slack = n + i;
            let r = residual[i];
            if r >= lower[slack] && r <= upper[slack] {
                x[slack] = r;
                basis.push(slack);
                is_basic[slack] = true;
            } else {
                let at = if r < lower[slack] { lower[slack] } else { upper[slack] };
                x[slack] = at;
                let art = first_artificial + i;
                artificial_sign[i] = if r - at >= 0.0 { 1.0 } else { -1.0 };
                x[art] = (r - at).abs();
                basis.push(art);
                is_basic[art] = true;
            }
        }
        let mut s = Self {
            n,
            m,
            total,
            first_artificial,
            columns,
            artificial_sign,
            b,
            lower,
            upper,
            x,
            basis,
            is_basic,
            binv: DMatrix::identity(m, m),
            options: *options,
        };
        // Artificials of rows whose slack is basic must stay at zero.
        for i in 0..m {
            let art = first_artificial + i;
            if !s.is_basic[art] {
                s.upper[art] = 0.0;
            }
        }
        s.refactor().expect("initial basis is diagonal");
        s
    }

    fn column(&self, j: usize) -> DVector<f64> {
        let mut c = DVector::zeros(self.m);
        self.add_column(j, 1.0, &mut c);
        c
    }

    fn add_column(&self, j: usize, scale: f64, out: &mut DVector<f64>) {
        if j < self.n {
            for &(i, v) in &self.columns[j] {
                out[i] += scale * v;
            }
        } else if j < self.first_artificial {
            out[j - self.n] += scale;
        } else {
            let i = j - self.first_artificial;
            out[i] += scale * self.artificial_sign[i];
        }
    }

    fn column_dot(&self, j: usize, y: &DVector<f64>) -> f64 {
        if j < self.n {
            self.columns[j].iter().map(|&(i, v)| v * y[i]).sum()
        } else if j < self.first_artificial {
            y[j - self.n]
        } else {
            let i = j - self.first_artificial;
            self.artificial_sign[i] * y[i]
        }
    }

    /// Rebuild `B⁻¹` from scratch and recompute basic values.
    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        if m == 0 {
            return Ok(());
        }
        let mut bmat = DMatrix::zeros(m, m);
        for (pos, &j) in self.basis.iter().enumerate() {
            let col = self.column(j);
            bmat.set_column(pos, &col);
        }
        self.binv = bmat.lu().try_inverse().ok_or(LpError::SingularBasis)?;
        let mut rhs = self.b.clone();
        for j in 0..self.total {
            if !self.is_basic[j] && self.x[j] != 0.0 {
                self.add_column(j, -self.x[j], &mut rhs);
            }
        }
        let xb = &self.binv * rhs;
        for (pos, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[pos];
        }
        Ok(())
    }

    fn duals(&self, cost: &[f64]) -> DVector<f64> {
        let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| cost[j]));
        self.binv.tr_mul(&cb)
    }

    fn run(&mut self, cost: &[f64], iterations: &mut usize) -> Result<Outcome, LpError> {
        let opts = self.options;
        let mut degenerate_run = 0usize;
        let mut since_refactor = 0usize;
        // Entering candidates whose every blocking pivot was below the
        // relative floor; skipped until the next basis change.
        let mut rejected: Vec<usize> = Vec::new();
        loop {
            if *iterations >= opts.max_iterations {
                return Err(LpError::IterationLimit(opts.max_iterations));
            }
            let y = self.duals(cost);
            let bland = degenerate_run >= opts.degenerate_switch;

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            let mut best_score = 0.0;
            for j in 0..self.total {
                if self.is_basic[j] || self.lower[j] == self.upper[j] || rejected.contains(&j) {
                    continue;
                }
                let d = cost[j] - self.column_dot(j, &y);
                let at_lower = self.x[j] <= self.lower[j];
                let at_upper = self.x[j] >= self.upper[j];
                let dir = if d < -opts.optimality_tol && !at_upper {
                    1.0
                } else if d > opts.optimality_tol && !at_lower {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if d.abs() > best_score {
                    best_score = d.abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                // Confirm optimality on a fresh factorization.
                if since_refactor > 0 {
                    self.refactor()?;
                    since_refactor = 0;
                    continue;
                }
                return Ok(Outcome::Optimal);
            };

            // Harris ratio test along x_q += dir·t, x_B −= dir·t·w: bounds are
            // relaxed by the feasibility tolerance to find the step, then the
            // largest pivot among the rows blocking within it leaves.
            let w = &self.binv * self.column(q);
            let w_scale = w.amax().max(1.0);
            let pivot_floor = opts.pivot_tol * w_scale;
            let limit_at = |pos: usize, j: usize, relax: f64| -> f64 {
                let rate = dir * w[pos];
                if rate > 0.0 {
                    (self.x[j] - self.lower[j] + relax) / rate
                } else {
                    (self.upper[j] - self.x[j] + relax) / -rate
                }
            };
            let mut relaxed = self.upper[q] - self.lower[q];
            for (pos, &j) in self.basis.iter().enumerate() {
                if w[pos].abs() > pivot_floor {
                    relaxed = relaxed.min(limit_at(pos, j, opts.feasibility_tol));
                }
            }
            let mut step = self.upper[q] - self.lower[q];
            let mut leaving: Option<(usize, f64)> = None;
            if relaxed < step {
                let mut best_pivot = 0.0;
                for (pos, &j) in self.basis.iter().enumerate() {
                    if w[pos].abs() <= pivot_floor {
                        continue;
                    }
                    let limit = limit_at(pos, j, 0.0).max(0.0);
                    if limit > relaxed {
                        continue;
                    }
                    let better = if bland {
                        leaving.is_none_or(|(lp, _)| j < self.basis[lp])
                    } else {
                        w[pos].abs() > best_pivot
                    };
                    if better {
                        best_pivot = w[pos].abs();
                        step = limit;
                        leaving = Some((pos, dir * w[pos]));
                    }
                }
            }
            if step.is_infinite() {
                // A blocking row with a pivot between the absolute and the
                // relative floor means the basis is ill-conditioned, not that
                // the program is unbounded.
                let blocked = self
                    .basis
                    .iter()
                    .enumerate()
                    .any(|(pos, &j)| w[pos].abs() > opts.pivot_tol && limit_at(pos, j, 0.0).is_finite());
                if !blocked {
                    return Ok(Outcome::Unbounded);
                }
                if since_refactor > 0 {
                    self.refactor()?;
                    since_refactor = 0;
                } else {
                    rejected.push(q);
                }
                continue;
            }
            rejected.clear();
            *iterations += 1;
            degenerate_run = if step <= opts.feasibility_tol {
                degenerate_run + 1
            } else {
                0
            };

            for (pos, &j) in self.basis.iter().enumerate() {
                self.x[j] -= dir * step * w[pos];
            }
            self.x[q] += dir * step;

            match leaving {
                None => {
                    // Bound flip of the entering variable.
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, rate)) => {
                    let out = self.basis[r];
                    self.x[out] = if rate > 0.0 { self.lower[out] } else { self.upper[out] };
                    self.is_basic[out] = false;
                    self.is_basic[q] = true;
                    self.basis[r] = q;
                    let pivot = w[r];
                    if pivot.abs() <= opts.pivot_tol {
                        return Err(LpError::SingularBasis);
                    }
                    let row_r = self.binv.row(r).into_owned() / pivot;
                    for i in 0..self.m {
                        if i != r && w[i] != 0.0 {
                            let f = w[i];
                            for c in 0..self.m {
                                self.binv[(i, c)] -= f * row_r[c];
                            }
                        }
                    }
                    self.binv.set_row(r, &row_r);
                    since_refactor += 1;
                    if since_refactor >= opts.refactor_every {
                        self.refactor()?;
                        since_refactor = 0;
                    }
                }
            }
        }
    }
}

fn nonbasic_rest(lower: f64, upper: f64) -> f64 {
    if lower.is_finite() {
        lower
    } else if upper.is_finite() {
        upper
    } else {
        0.0
    }
}
