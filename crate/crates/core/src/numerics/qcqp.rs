//! Log-barrier interior-point solver for convex QCQPs with a linear
//! objective.
//!
//! ```text
//! minimize    cᵀx
//! subject to  xᵀPᵢx + qᵢᵀx + rᵢ ≤ 0,   Pᵢ ⪰ 0
//!             E x = e
//! ```
//!
//! Each centering step minimizes `t·cᵀx − Σ log(−fᵢ(x))` over the affine set
//! with damped Newton steps; `t` grows by a constant factor until the
//! duality-gap bound `m/t` is small.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::banded::BandMatrix;

/// `f(x) = xᵀPx + qᵀx + r`, with `P` given by its upper triangle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadraticConstraint {
    /// Entries `(i, j, v)` with `i ≤ j` meaning `P_ij = P_ji = v`.
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub constant: f64,
}

impl QuadraticConstraint {
    pub fn linear(linear: Vec<(usize, f64)>, constant: f64) -> Self {
        Self {
            quadratic: Vec::new(),
            linear,
            constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, a) in &self.linear {
            v += a * x[i];
        }
        for &(i, j, p) in &self.quadratic {
            v += if i == j { p * x[i] * x[i] } else { 2.0 * p * x[i] * x[j] };
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub coefficients: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexQcqp {
    /// Minimized objective `cᵀx`.
    pub objective: Vec<f64>,
    pub constraints: Vec<QuadraticConstraint>,
    pub equalities: Vec<LinearEquality>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcqpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("quadratic term of constraint {0} is not positive semidefinite")]
    NotConvex(usize),
    #[error("no strictly feasible point found (phase-I value {0:.3e})")]
    Infeasible(f64),
    #[error("iteration limit reached")]
    MaxIterations(Box<QcqpSolution>),
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `‖c + Σ uᵢ∇fᵢ + Eᵀw‖∞ / max(1, ‖c‖∞)`.
    pub stationarity: f64,
    /// Largest constraint violation (inequalities and equalities).
    pub primal: f64,
    /// `max uᵢ·|fᵢ|`, scaled like the stationarity residual.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Inequality multipliers `uᵢ = 1/(t·(−fᵢ))`.
    pub multipliers: Vec<f64>,
    pub kkt: KktResiduals,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcqpOptions {
    pub t_initial: f64,
    pub t_factor: f64,
    /// Stop when `m/t ≤ gap_tol · max(1, |cᵀx|)`.
    pub gap_tol: f64,
    /// Newton decrement threshold `λ²/2`.
    pub newton_tol: f64,
    pub max_newton_per_center: usize,
    pub max_outer: usize,
    /// Use the banded Newton solve when the constraint pattern allows it.
    pub exploit_structure: bool,
}

impl Default for QcqpOptions {
    fn default() -> Self {
        Self {
            t_initial: 1.0,
            t_factor: 10.0,
            gap_tol: 1e-9,
            newton_tol: 1e-11,
            max_newton_per_center: 80,
            max_outer: 40,
            exploit_structure: true,
        }
    }
}

/// Constraint compiled onto its support: `f(x) = x_Sᵀ P_S x_S + q_Sᵀ x_S + r`.
#[derive(Debug, Clone)]
struct Compiled {
    support: Vec<usize>,
    /// Upper-triangle entries `(a, b, v)`, `a ≤ b`, of `P_S` in local indices.
    quad: Vec<(usize, usize, f64)>,
    q: DVector<f64>,
    r: f64,
}

impl Compiled {
    fn new(c: &QuadraticConstraint) -> Self {
        let mut support: Vec<usize> = c
            .linear
            .iter()
            .map(|&(i, _)| i)
            .chain(c.quadratic.iter().flat_map(|&(i, j, _)| [i, j]))
            .collect();
        support.sort_unstable();
        support.dedup();
        let pos = |i: usize| support.binary_search(&i).expect("index in support");
        let mut quad: Vec<(usize, usize, f64)> = Vec::with_capacity(c.quadratic.len());
        for &(i, j, v) in &c.quadratic {
            let (a, b) = (pos(i), pos(j));
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            match quad.iter_mut().find(|e| e.0 == a && e.1 == b) {
                Some(e) => e.2 += v,
                None => quad.push((a, b, v)),
            }
        }
        let mut q = DVector::zeros(support.len());
        for &(i, v) in &c.linear {
            q[pos(i)] += v;
        }
        Self {
            support,
            quad,
            q,
            r: c.constant,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.r;
        for (a, &i) in self.support.iter().enumerate() {
            v += self.q[a] * x[i];
        }
        for &(a, b, p) in &self.quad {
            let (xa, xb) = (x[self.support[a]], x[self.support[b]]);
            v += if a == b { p * xa * xa } else { 2.0 * p * xa * xb };
        }
        v
    }

    /// Local gradient `2 P x + q`.
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = self.q.clone();
        for &(a, b, p) in &self.quad {
            let (xa, xb) = (x[self.support[a]], x[self.support[b]]);
            g[a] += 2.0 * p * xb;
            if a != b {
                g[b] += 2.0 * p * xa;
            }
        }
        g
    }

    fn is_psd(&self) -> bool {
        if self.quad.is_empty() {
            return true;
        }
        let scale = self.quad.iter().fold(0.0f64, |a, e| a.max(e.2.abs())).max(1e-300);
        if self.quad.iter().all(|e| e.0 == e.1) {
            return self.quad.iter().all(|e| e.2 >= -1e-12 * scale);
        }
        // Only the variables touched by the quadratic part matter.
        let mut touched: Vec<usize> = self.quad.iter().flat_map(|e| [e.0, e.1]).collect();
        touched.sort_unstable();
        touched.dedup();
        let at = |a: usize| touched.binary_search(&a).expect("touched index");
        let mut p = DMatrix::<f64>::zeros(touched.len(), touched.len());
        for &(a, b, v) in &self.quad {
            p[(at(a), at(b))] += v;
            if a != b {
                p[(at(b), at(a))] += v;
            }
        }
        p.symmetric_eigenvalues().iter().all(|&e| e >= -1e-10 * scale)
    }

    /// Appends variable `idx` with linear coefficient `coef`.
    fn with_extra_linear(&self, idx: usize, coef: f64) -> Self {
        debug_assert!(self.support.last().is_none_or(|&l| l < idx));
        let mut c = self.clone();
        c.support.push(idx);
        c.q = c.q.clone().resize_vertically(c.support.len(), 0.0);
        let last = c.support.len() - 1;
        c.q[last] = coef;
        c
    }
}

/// Constraints with more variables than this are coupled through the dense
/// outer system rather than assembled into the Hessian.
const WIDE_SUPPORT: usize = 16;
/// Variables shared by more narrow constraints than this go to the outer
/// system.
const DENSE_DEGREE: usize = 16;
/// Below this many variables the dense Newton solve is cheap enough.
const STRUCTURED_MIN_VARS: usize = 48;
const MAX_OUTER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Coupling {
    /// Rank-one Hessian term assembled directly.
    Direct,
    /// Auxiliary unknown `ω = ∇fᵀd / f²` in the banded inner system.
    Inner(usize),
    /// Auxiliary unknown in the dense outer system.
    Outer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Inner(usize),
    Outer(usize),
}

/// Partition of the Newton system into a banded quasi-definite inner part
/// and a small dense outer part.
///
/// Splitting off the rank-one terms of constraints through auxiliary
/// unknowns, rather than adding `∇f∇fᵀ/f²` to the Hessian, keeps the system
/// accurate as `f → 0`: the Hessian route subtracts terms of order `1/f²`
/// when eliminating variables that only enter through constraints.
#[derive(Debug, Clone)]
struct Layout {
    var: Vec<Slot>,
    coupling: Vec<Coupling>,
    /// Outer index of the first equality multiplier.
    eq_offset: usize,
    inner_len: usize,
    outer_len: usize,
    bandwidth: usize,
}

impl Layout {
    fn build(n: usize, cons: &[Compiled], equalities: usize) -> Option<Self> {
        if n < STRUCTURED_MIN_VARS {
            return None;
        }
        let wide: Vec<bool> = cons.iter().map(|c| c.support.len() > WIDE_SUPPORT).collect();
        let mut degree = vec![0usize; n];
        for (c, &w) in cons.iter().zip(&wide) {
            if !w {
                for &i in &c.support {
                    degree[i] += 1;
                }
            }
        }
        // Variables outside every narrow constraint would have no pivot of
        // their own in the inner system.
        let dense: Vec<bool> = degree.iter().map(|&d| d > DENSE_DEGREE || d == 0).collect();

        // Inner ordering: variables by index, each auxiliary unknown right
        // after the last sparse variable it touches.
        let mut keys: Vec<(usize, u8, usize)> = (0..n).filter(|&i| !dense[i]).map(|i| (i, 0, i)).collect();
        let mut kinds = vec![Coupling::Direct; cons.len()];
        let mut outer_aux = Vec::new();
        for (ci, c) in cons.iter().enumerate() {
            if wide[ci] {
                outer_aux.push(ci);
            } else if c.support.iter().any(|&i| dense[i]) {
                let anchor = c.support.iter().rev().find(|&&i| !dense[i]).copied().unwrap_or(0);
                keys.push((anchor, 1, ci));
            }
        }
        keys.sort_unstable();
        let mut var = vec![Slot::Outer(0); n];
        for (pos, &(_, kind, id)) in keys.iter().enumerate() {
            if kind == 0 {
                var[id] = Slot::Inner(pos);
            } else {
                kinds[id] = Coupling::Inner(pos);
            }
        }
        let mut outer_len = 0;
        for i in 0..n {
            if dense[i] {
                var[i] = Slot::Outer(outer_len);
                outer_len += 1;
            }
        }
        for ci in outer_aux {
            kinds[ci] = Coupling::Outer(outer_len);
            outer_len += 1;
        }
        let eq_offset = outer_len;
        outer_len += equalities;
        if outer_len > MAX_OUTER {
            return None;
        }

        let inner = |i: usize| match var[i] {
            Slot::Inner(p) => Some(p),
            Slot::Outer(_) => None,
        };
        let mut bandwidth = 0;
        for (c, kind) in cons.iter().zip(&kinds) {
            let mut span: Vec<usize> = c.support.iter().filter_map(|&i| inner(i)).collect();
            match kind {
                Coupling::Direct => {}
                Coupling::Inner(p) => span.push(*p),
                Coupling::Outer(_) => {
                    span.clear();
                    for &(a, b, _) in &c.quad {
                        if let (Some(x), Some(y)) = (inner(c.support[a]), inner(c.support[b])) {
                            bandwidth = bandwidth.max(x.abs_diff(y));
                        }
                    }
                }
            }
            if let (Some(lo), Some(hi)) = (span.iter().min(), span.iter().max()) {
                bandwidth = bandwidth.max(hi - lo);
            }
        }
        let inner_len = keys.len();
        if bandwidth > (inner_len / 8).max(16) {
            return None;
        }
        Some(Self {
            var,
            coupling: kinds,
            eq_offset,
            inner_len,
            outer_len,
            bandwidth,
        })
    }
}

/// Largest problem for which the multiplier fit (a dense SVD) is attempted.
const FIT_MAX_VARS: usize = 200;

struct Problem<'a> {
    n: usize,
    c: &'a [f64],
    cons: Vec<Compiled>,
    eq: Option<(DMatrix<f64>, DVector<f64>)>,
    layout: Option<Layout>,
}

impl<'a> Problem<'a> {
    fn new(
        n: usize,
        c: &'a [f64],
        cons: Vec<Compiled>,
        eq: Option<(DMatrix<f64>, DVector<f64>)>,
        structured: bool,
    ) -> Self {
        let equalities = eq.as_ref().map_or(0, |(e, _)| e.nrows());
        let layout = if structured {
            Layout::build(n, &cons, equalities)
        } else {
            None
        };
        Self { n, c, cons, eq, layout }
    }
}

pub fn solve_qcqp(qcqp: &ConvexQcqp, initial: &[f64]) -> Result<QcqpSolution, QcqpError> {
    solve_qcqp_with(qcqp, initial, &QcqpOptions::default())
}

pub fn solve_qcqp_with(qcqp: &ConvexQcqp, initial: &[f64], options: &QcqpOptions) -> Result<QcqpSolution, QcqpError> {
    let n = qcqp.objective.len();
    if initial.len() != n {
        return Err(QcqpError::Invalid(format!(
            "initial point has {} entries, problem has {n} variables",
            initial.len()
        )));
    }
    if qcqp.objective.iter().chain(initial).any(|v| !v.is_finite()) {
        return Err(QcqpError::Invalid("non-finite objective or initial point".into()));
    }
    for (k, c) in qcqp.constraints.iter().enumerate() {
        let bad_index =
            c.linear.iter().any(|&(i, _)| i >= n) || c.quadratic.iter().any(|&(i, j, _)| i >= n || j >= n || i > j);
        if bad_index {
            return Err(QcqpError::Invalid(format!("constraint {k} has an invalid index")));
        }
    }
    let cons: Vec<Compiled> = qcqp.constraints.iter().map(Compiled::new).collect();
    if let Some(k) = cons.iter().position(|c| !c.is_psd()) {
        return Err(QcqpError::NotConvex(k));
    }
    let eq = if qcqp.equalities.is_empty() {
        None
    } else {
        let p = qcqp.equalities.len();
        let mut e = DMatrix::zeros(p, n);
        for (r, row) in qcqp.equalities.iter().enumerate() {
            for &(i, v) in &row.coefficients {
                if i >= n {
                    return Err(QcqpError::Invalid(format!("equality {r} has an invalid index")));
                }
                e[(r, i)] += v;
            }
        }
        let rhs = DVector::from_iterator(p, qcqp.equalities.iter().map(|r| r.rhs));
        Some((e, rhs))
    };
    let problem = Problem::new(n, &qcqp.objective, cons, eq, options.exploit_structure);

    let mut x = DVector::from_column_slice(initial);
    problem.project_onto_equalities(&mut x)?;
    let start_value = problem.objective(&x);
    let start_feasible = problem.max_constraint(&x) < 0.0;
    if !start_feasible {
        x = problem.phase_one(&x, options)?;
    }
    let start_point = if start_feasible { Some(x.clone()) } else { None };

    let (sol, converged) = problem.barrier(x, options);
    let sol = match start_point {
        // Never hand back something worse than a strictly feasible start.
        Some(x0) if start_value < sol.objective => problem.finish(&x0, options.t_initial, sol.newton_steps),
        _ => sol,
    };
    if converged {
        Ok(sol)
    } else {
        Err(QcqpError::MaxIterations(Box::new(sol)))
    }
}

impl Problem<'_> {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        self.c.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
    }

    fn max_constraint(&self, x: &DVector<f64>) -> f64 {
        self.cons
            .iter()
            .map(|c| c.value(x.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn project_onto_equalities(&self, x: &mut DVector<f64>) -> Result<(), QcqpError> {
        if let Some((e, rhs)) = &self.eq {
            let r = e * &*x - rhs;
            if r.amax() > 0.0 {
                let gram = e * e.transpose();
                let w = gram
                    .cholesky()
                    .ok_or(QcqpError::Invalid("equality rows are linearly dependent".into()))?
                    .solve(&r);
                *x -= e.transpose() * w;
            }
        }
        Ok(())
    }

    /// Find `x` with every `fᵢ(x) < 0` by minimizing `s` subject to
    /// `fᵢ(x) ≤ s`, stopping as soon as `s` turns negative.
    fn phase_one(&self, x0: &DVector<f64>, options: &QcqpOptions) -> Result<DVector<f64>, QcqpError> {
        let n = self.n;
        let worst = self.max_constraint(x0);
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        let mut cons: Vec<Compiled> = self.cons.iter().map(|k| k.with_extra_linear(n, -1.0)).collect();
        // Keep s bounded below so the auxiliary problem has a minimizer.
        let floor = -(1.0 + worst.abs());
        cons.push(Compiled::new(&QuadraticConstraint::linear(vec![(n, -1.0)], floor)));
        let eq = self
            .eq
            .as_ref()
            .map(|(e, rhs)| (e.clone().resize_horizontally(n + 1, 0.0), rhs.clone()));
        let aux = Problem::new(n + 1, &c, cons, eq, self.layout.is_some());
        let mut z = x0.clone().resize_vertically(n + 1, 0.0);
        z[n] = worst.max(0.0) + 1.0;
        let mut t = options.t_initial;
        let m = aux.cons.len() as f64;
        for _ in 0..options.max_outer {
            let steps = aux.center(&mut z, t, options, true);
            if steps.is_none() {
                return Err(QcqpError::Numerical("phase-I Newton system is singular"));
            }
            if z[n] < 0.0 {
                let x = z.rows(0, n).into_owned();
                if self.max_constraint(&x) < 0.0 {
                    return Ok(x);
                }
            }
            if m / t < 1e-12 {
                break;
            }
            t *= options.t_factor;
        }
        Err(QcqpError::Infeasible(z[n]))
    }

    /// Barrier path from a strictly feasible `x`. Returns the final iterate
    /// and whether the gap tolerance was met.
    fn barrier(&self, mut x: DVector<f64>, options: &QcqpOptions) -> (QcqpSolution, bool) {
        let m = self.cons.len() as f64;
        let mut t = options.t_initial;
        let mut total_steps = 0;
        let mut converged = false;
        for _ in 0..options.max_outer {
            match self.center(&mut x, t, options, false) {
                Some(steps) => total_steps += steps,
                None => break,
            }
            let scale = self.objective(&x).abs().max(1.0);
            if m == 0.0 || m / t <= options.gap_tol * scale {
                converged = true;
                break;
            }
            t *= options.t_factor;
        }
        if converged {
            // A few extra Newton steps at the final `t` tighten the
            // multiplier estimates, and with them the stationarity residual.
            let polish = QcqpOptions {
                newton_tol: options.newton_tol * 1e-8,
                max_newton_per_center: 8,
                ..*options
            };
            if let Some(steps) = self.center(&mut x, t, &polish, false) {
                total_steps += steps;
            }
        }
        (self.finish(&x, t, total_steps), converged)
    }

    /// `c + Σ uᵢ∇fᵢ`, with the equality multipliers fitted by least squares.
    fn stationarity_residual(&self, xs: &[f64], multipliers: &[f64]) -> DVector<f64> {
        let mut grad = DVector::from_column_slice(self.c);
        for (c, &u) in self.cons.iter().zip(multipliers) {
            let g = c.gradient(xs);
            for (a, &i) in c.support.iter().enumerate() {
                grad[i] += u * g[a];
            }
        }
        if let Some((e, _)) = &self.eq {
            let et = e.transpose();
            if let Some(chol) = (e * &et).cholesky() {
                let w = chol.solve(&(e * &grad));
                grad -= &et * w;
            }
        }
        grad
    }

    /// Multipliers fitted by least squares on the near-active rows. At large
    /// `t` the active values `fᵢ ≈ −1/(t uᵢ)` lose most of their digits, so
    /// the central-path estimate `1/(t·(−fᵢ))` carries a rounding floor that
    /// the fit avoids. `None` if the fit is not nonnegative.
    fn fitted_multipliers(&self, xs: &[f64], values: &[f64], t: f64) -> Option<Vec<f64>> {
        let threshold = t.sqrt().recip();
        let active: Vec<usize> = (0..values.len()).filter(|&i| -values[i] <= threshold).collect();
        let equalities = self.eq.as_ref().map_or(0, |(e, _)| e.nrows());
        let cols = active.len() + equalities;
        if cols == 0 || cols > self.n || self.n > FIT_MAX_VARS {
            return None;
        }
        let mut a = DMatrix::<f64>::zeros(self.n, cols);
        for (col, &i) in active.iter().enumerate() {
            let c = &self.cons[i];
            let g = c.gradient(xs);
            for (k, &j) in c.support.iter().enumerate() {
                a[(j, col)] = g[k];
            }
        }
        if let Some((e, _)) = &self.eq {
            for r in 0..equalities {
                for j in 0..self.n {
                    a[(j, active.len() + r)] = e[(r, j)];
                }
            }
        }
        let rhs = -DVector::from_column_slice(self.c);
        let sol = a.svd(true, true).solve(&rhs, 1e-14).ok()?;
        if active.iter().enumerate().any(|(col, _)| sol[col] < 0.0) {
            return None;
        }
        let mut u = vec![0.0; values.len()];
        for (col, &i) in active.iter().enumerate() {
            u[i] = sol[col];
        }
        Some(u)
    }

    fn finish(&self, x: &DVector<f64>, t: f64, newton_steps: usize) -> QcqpSolution {
        let xs = x.as_slice();
        let values: Vec<f64> = self.cons.iter().map(|c| c.value(xs)).collect();
        let mut multipliers: Vec<f64> = values.iter().map(|&f| 1.0 / (t * (-f).max(1e-300))).collect();
        let mut grad = self.stationarity_residual(xs, &multipliers);
        if let Some(fitted) = self.fitted_multipliers(xs, &values, t) {
            let refit = self.stationarity_residual(xs, &fitted);
            if refit.amax() < grad.amax() {
                multipliers = fitted;
                grad = refit;
            }
        }
        let mut primal = values.iter().fold(0.0f64, |a, &f| a.max(f));
        if let Some((e, rhs)) = &self.eq {
            primal = primal.max((e * x - rhs).amax());
        }
        let scale = self.c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let complementarity = multipliers
            .iter()
            .zip(&values)
            .fold(0.0f64, |a, (u, f)| a.max(u * f.abs()));
        QcqpSolution {
            objective: self.objective(x),
            x: xs.to_vec(),
            multipliers,
            kkt: KktResiduals {
                stationarity: grad.amax() / scale,
                primal,
                complementarity: complementarity / scale,
            },
            newton_steps,
        }
    }

    /// Damped Newton on `t·cᵀx − Σ log(−fᵢ)`. Returns the number of steps,
    /// or `None` if the Newton system could not be solved. In phase-I mode
    /// the loop exits as soon as the last coordinate is negative.
    fn center(&self, x: &mut DVector<f64>, t: f64, options: &QcqpOptions, phase_one: bool) -> Option<usize> {
        let n = self.n;
        let mut steps = 0;
        let mut phi = self.barrier_value(x, t)?;
        while steps < options.max_newton_per_center {
            if phase_one && x[n - 1] < 0.0 {
                break;
            }
            let xs = x.as_slice();
            let values: Vec<f64> = self.cons.iter().map(|c| c.value(xs)).collect();
            let grads: Vec<DVector<f64>> = self.cons.iter().map(|c| c.gradient(xs)).collect();
            let mut grad = DVector::from_column_slice(self.c) * t;
            for ((c, &f), g) in self.cons.iter().zip(&values).zip(&grads) {
                for (a, &i) in c.support.iter().enumerate() {
                    grad[i] += g[a] / -f;
                }
            }
            let dx = match &self.layout {
                Some(layout) => self.structured_direction(layout, &values, &grads, &grad)?,
                None => self.dense_direction(&values, &grads, &grad)?,
            };
            let decrement = -grad.dot(&dx);
            if !decrement.is_finite() {
                return None;
            }
            // A negative decrement is rounding noise at the center.
            if decrement / 2.0 <= options.newton_tol {
                break;
            }
            // Backtracking: stay strictly feasible, then Armijo. Close to the
            // center the Armijo decrease drops below the rounding error of
            // the barrier value, so full steps are taken there.
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &*x + &dx * step;
                if let Some(v) = self.barrier_value(&trial, t) {
                    if v <= phi - 0.25 * step * decrement || (step == 1.0 && decrement < 1e-6) {
                        *x = trial;
                        phi = v;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            steps += 1;
            if !accepted {
                break;
            }
        }
        Some(steps)
    }

    fn dense_direction(&self, values: &[f64], grads: &[DVector<f64>], grad: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.n;
        let mut hess = DMatrix::<f64>::zeros(n, n);
        for ((c, &f), g) in self.cons.iter().zip(values).zip(grads) {
            let inv = 1.0 / -f;
            let s = &c.support;
            for (a, &i) in s.iter().enumerate() {
                let ga = inv * inv * g[a];
                for (b, &j) in s.iter().enumerate() {
                    hess[(i, j)] += ga * g[b];
                }
            }
            for &(a, b, p) in &c.quad {
                let (i, j) = (s[a], s[b]);
                hess[(i, j)] += 2.0 * inv * p;
                if i != j {
                    hess[(j, i)] += 2.0 * inv * p;
                }
            }
        }
        self.newton_direction(&hess, grad)
    }

    /// Newton direction through the banded inner / dense outer split of
    /// [`Layout`].
    fn structured_direction(
        &self,
        layout: &Layout,
        values: &[f64],
        grads: &[DVector<f64>],
        grad: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let (ni, no) = (layout.inner_len, layout.outer_len);
        let mut band = BandMatrix::zeros(ni, layout.bandwidth);
        let mut coupling = DMatrix::<f64>::zeros(ni, no);
        let mut outer = DMatrix::<f64>::zeros(no, no);
        // Adds `v` to the symmetric entry for variables (or unknowns) at
        // slots `p`, `q`, once per unordered pair.
        let mut add = |p: Slot, q: Slot, v: f64| match (p, q) {
            (Slot::Inner(i), Slot::Inner(j)) => band.add(i, j, v),
            (Slot::Inner(i), Slot::Outer(j)) | (Slot::Outer(j), Slot::Inner(i)) => coupling[(i, j)] += v,
            (Slot::Outer(i), Slot::Outer(j)) => {
                outer[(i, j)] += v;
                if i != j {
                    outer[(j, i)] += v;
                }
            }
        };
        for (ci, c) in self.cons.iter().enumerate() {
            let (f, g) = (values[ci], &grads[ci]);
            let inv = 1.0 / -f;
            let s = &c.support;
            for &(a, b, p) in &c.quad {
                add(layout.var[s[a]], layout.var[s[b]], 2.0 * inv * p);
            }
            match layout.coupling[ci] {
                Coupling::Direct => {
                    for a in 0..s.len() {
                        for b in 0..=a {
                            add(layout.var[s[a]], layout.var[s[b]], inv * inv * g[a] * g[b]);
                        }
                    }
                }
                Coupling::Inner(p) => {
                    add(Slot::Inner(p), Slot::Inner(p), -f * f);
                    for a in 0..s.len() {
                        add(Slot::Inner(p), layout.var[s[a]], g[a]);
                    }
                }
                Coupling::Outer(o) => {
                    add(Slot::Outer(o), Slot::Outer(o), -f * f);
                    for a in 0..s.len() {
                        add(Slot::Outer(o), layout.var[s[a]], g[a]);
                    }
                }
            }
        }
        if let Some((e, _)) = &self.eq {
            for r in 0..e.nrows() {
                for i in 0..self.n {
                    let v = e[(r, i)];
                    if v != 0.0 {
                        add(Slot::Outer(layout.eq_offset + r), layout.var[i], v);
                    }
                }
            }
        }

        let mut rhs_inner = vec![0.0; ni];
        let mut rhs_outer = DVector::<f64>::zeros(no);
        for i in 0..self.n {
            match layout.var[i] {
                Slot::Inner(p) => rhs_inner[p] = -grad[i],
                Slot::Outer(p) => rhs_outer[p] = -grad[i],
            }
        }
        let ldl = band.clone().ldl()?;
        let mut solved = coupling.clone();
        for j in 0..no {
            ldl.solve_in_place(solved.column_mut(j).as_mut_slice());
        }
        let schur = (&outer - coupling.transpose() * &solved).full_piv_lu();
        let solve = |ri: &[f64], ro: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>)> {
            let mut u = ri.to_vec();
            ldl.solve_in_place(&mut u);
            let u = DVector::from_vec(u);
            let y = schur.solve(&(ro - coupling.transpose() * &u))?;
            Some((u - &solved * &y, y))
        };
        let (mut u, mut y) = solve(&rhs_inner, &rhs_outer)?;
        // Iterative refinement against the unfactored system; the
        // auxiliary diagonals `−f²` shrink with the barrier parameter.
        for _ in 0..2 {
            let ku = band.mul(u.as_slice());
            let cy = &coupling * &y;
            let ri: Vec<f64> = (0..ni).map(|i| rhs_inner[i] - ku[i] - cy[i]).collect();
            let ro = &rhs_outer - coupling.transpose() * &u - &outer * &y;
            let (du, dy) = solve(&ri, &ro)?;
            u += du;
            y += dy;
        }
        let dx = DVector::from_fn(self.n, |i, _| match layout.var[i] {
            Slot::Inner(p) => u[p],
            Slot::Outer(p) => y[p],
        });
        dx.iter().all(|v| v.is_finite()).then_some(dx)
    }

    fn barrier_value(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let mut v = t * self.objective(x);
        for c in &self.cons {
            let f = c.value(x.as_slice());
            if !(f < 0.0) {
                return None;
            }
            v -= (-f).ln();
        }
        Some(v)
    }

    /// Solve `[H Eᵀ; E 0][dx; w] = [−g; 0]`, regularizing `H` if needed.
    fn newton_direction(&self, hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.n;
        let diag_scale = hess.diagonal().amax().max(1e-300);
        let mut shift = 0.0;
        let chol = loop {
            let mut h = hess.clone();
            if shift > 0.0 {
                for i in 0..n {
                    h[(i, i)] += shift;
                }
            }
            if let Some(c) = h.cholesky() {
                break c;
            }
            shift = if shift == 0.0 {
                1e-12 * diag_scale
            } else {
                shift * 100.0
            };
            if shift > diag_scale {
                return None;
            }
        };
        let hg = chol.solve(grad);
        match &self.eq {
            None => Some(-hg),
            Some((e, _)) => {
                let he = chol.solve(&e.transpose());
                let schur = e * &he;
                let w = schur.cholesky()?.solve(&(-(e * &hg)));
                Some(-(hg + he * w))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_bound() {
        // minimize −t s.t. t ≤ 3
        let qcqp = ConvexQcqp {
            objective: vec![-1.0],
            constraints: vec![QuadraticConstraint::linear(vec![(0, 1.0)], -3.0)],
            equalities: vec![],
        };
        let sol = solve_qcqp(&qcqp, &[0.0]).unwrap();
        assert_relative_eq!(sol.x[0], 3.0, epsilon = 1e-7);
        assert!(sol.kkt.max() <= 1e-6);
    }

    #[test]
    fn quadratic_peak() {
        // maximize η s.t. η ≤ 1 − ‖x − c‖², variables (η, x0, x1).
        let c = [0.3, -0.7];
        let qcqp = ConvexQcqp {
            objective: vec![-1.0, 0.0, 0.0],
            constraints: vec![QuadraticConstraint {
                quadratic: vec![(1, 1, 1.0), (2, 2, 1.0)],
                linear: vec![(0, 1.0), (1, -2.0 * c[0]), (2, -2.0 * c[1])],
                constant: c[0] * c[0] + c[1] * c[1] - 1.0,
            }],
            equalities: vec![],
        };
        let sol = solve_qcqp(&qcqp, &[-5.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.x[1], c[0], epsilon = 1e-4);
        assert_relative_eq!(sol.x[2], c[1], epsilon = 1e-4);
    }

    #[test]
    fn infeasible_start_goes_through_phase_one() {
        // minimize x s.t. x² ≤ 1 (i.e. −1 ≤ x ≤ 1), start at 5.
        let qcqp = ConvexQcqp {
            objective: vec![1.0],
            constraints: vec![QuadraticConstraint {
                quadratic: vec![(0, 0, 1.0)],
                linear: vec![],
                constant: -1.0,
            }],
            equalities: vec![],
        };
        let sol = solve_qcqp(&qcqp, &[5.0]).unwrap();
        assert_relative_eq!(sol.x[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn empty_feasible_set() {
        let qcqp = ConvexQcqp {
            objective: vec![1.0],
            constraints: vec![
                QuadraticConstraint::linear(vec![(0, 1.0)], 1.0),
                QuadraticConstraint::linear(vec![(0, -1.0)], 1.0),
            ],
            equalities: vec![],
        };
        assert!(matches!(solve_qcqp(&qcqp, &[0.0]), Err(QcqpError::Infeasible(_))));
    }

    #[test]
    fn equality_constraint() {
        // minimize x0 + x1 s.t. x0² + x1² ≤ 2, x0 = x1 → (−1, −1).
        let qcqp = ConvexQcqp {
            objective: vec![1.0, 1.0],
            constraints: vec![QuadraticConstraint {
                quadratic: vec![(0, 0, 1.0), (1, 1, 1.0)],
                linear: vec![],
                constant: -2.0,
            }],
            equalities: vec![LinearEquality {
                coefficients: vec![(0, 1.0), (1, -1.0)],
                rhs: 0.0,
            }],
        };
        let sol = solve_qcqp(&qcqp, &[0.5, 0.1]).unwrap();
        assert_relative_eq!(sol.x[0], -1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], -1.0, epsilon = 1e-6);
        assert!(sol.kkt.max() <= 1e-6, "{:?}", sol.kkt);
    }

    #[test]
    fn nonconvex_rejected() {
        let qcqp = ConvexQcqp {
            objective: vec![1.0, 0.0],
            constraints: vec![QuadraticConstraint {
                quadratic: vec![(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0)],
                linear: vec![],
                constant: -1.0,
            }],
            equalities: vec![],
        };
        assert_eq!(solve_qcqp(&qcqp, &[0.0, 0.0]), Err(QcqpError::NotConvex(0)));
    }

    /// Chain-structured problem large enough for the banded path: maximize
    /// η subject to one constraint over all points, per-point constraints
    /// involving η, step-length limits and a closed chain.
    fn chain(points: usize, theta: f64) -> ConvexQcqp {
        let n = 1 + 2 * points;
        let target = |i: usize| {
            let a = i as f64 * 0.7;
            [a.cos(), a.sin()]
        };
        let mut constraints = Vec::new();
        // η ≤ (1/M) Σ (2 − ‖x_i − c_i‖²)
        let m = points as f64;
        let mut wide = QuadraticConstraint {
            linear: vec![(0, 1.0)],
            constant: -2.0,
            ..Default::default()
        };
        for i in 0..points {
            let c = target(i);
            for d in 0..2 {
                let v = 1 + 2 * i + d;
                wide.quadratic.push((v, v, 1.0 / m));
                wide.linear.push((v, -2.0 * c[d] / m));
                wide.constant += c[d] * c[d] / m;
            }
        }
        constraints.push(wide);
        for i in 0..points {
            // θ η ≤ 3 − ‖x_i‖²
            let (x, y) = (1 + 2 * i, 2 + 2 * i);
            constraints.push(QuadraticConstraint {
                quadratic: vec![(x, x, 1.0), (y, y, 1.0)],
                linear: vec![(0, theta)],
                constant: -3.0,
            });
            if i + 1 < points {
                // ‖x_{i+1} − x_i‖² ≤ 0.5²
                let (x2, y2) = (x + 2, y + 2);
                constraints.push(QuadraticConstraint {
                    quadratic: vec![
                        (x, x, 1.0),
                        (x2, x2, 1.0),
                        (x, x2, -1.0),
                        (y, y, 1.0),
                        (y2, y2, 1.0),
                        (y, y2, -1.0),
                    ],
                    linear: vec![],
                    constant: -0.25,
                });
            }
        }
        let last = 1 + 2 * (points - 1);
        let equalities = (0..2)
            .map(|d| LinearEquality {
                coefficients: vec![(1 + d, 1.0), (last + d, -1.0)],
                rhs: 0.0,
            })
            .collect();
        let mut objective = vec![0.0; n];
        objective[0] = -1.0;
        ConvexQcqp {
            objective,
            constraints,
            equalities,
        }
    }

    #[test]
    fn structured_and_dense_newton_agree() {
        for theta in [0.0, 0.6] {
            let qcqp = chain(40, theta);
            let n = qcqp.objective.len();
            let layout = Layout::build(
                n,
                &qcqp.constraints.iter().map(Compiled::new).collect::<Vec<_>>(),
                qcqp.equalities.len(),
            );
            assert!(layout.is_some());
            let start = vec![-10.0; 1]
                .into_iter()
                .chain(std::iter::repeat_n(0.0, n - 1))
                .collect::<Vec<_>>();
            let banded = solve_qcqp(&qcqp, &start).unwrap();
            let opts = QcqpOptions {
                exploit_structure: false,
                ..Default::default()
            };
            let dense = solve_qcqp_with(&qcqp, &start, &opts).unwrap();
            assert_relative_eq!(banded.objective, dense.objective, max_relative = 1e-8);
            assert!(banded.kkt.max() < 1e-5, "{:?}", banded.kkt);
        }
    }
}
