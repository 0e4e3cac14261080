#![allow(clippy::needless_range_loop)]

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use uav_ofdma::numerics::banded::BandMatrix;
use uav_ofdma::numerics::lp::{solve_lp, LinearProgram, LpStatus, RowKind};
use uav_ofdma::numerics::qcqp::{solve_qcqp, ConvexQcqp, QcqpOptions, QuadraticConstraint};
use uav_ofdma::trajectory::solve_trajectory_step_with;
use uav_ofdma::{Allocation, Scenario};

// ---------------------------------------------------------------------------
// Reference LP solver: textbook two-phase tableau simplex with Bland's rule.
// Works on `min cᵀx, Ax = b, x ≥ 0, b ≥ 0`.
// ---------------------------------------------------------------------------

enum TableauResult {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

fn tableau_pivot(t: &mut [Vec<f64>], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[row].clone();
    for (i, r) in t.iter_mut().enumerate() {
        if i != row {
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
}

/// Minimizes the objective in the last row of `t` over the columns `< limit`.
/// Returns false if unbounded.
fn tableau_run(t: &mut [Vec<f64>], basis: &mut [usize], limit: usize) -> bool {
    let m = basis.len();
    let rhs = t[0].len() - 1;
    loop {
        let Some(col) = (0..limit).find(|&j| t[m][j] < -1e-10) else {
            return true;
        };
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][col] > 1e-10 {
                let ratio = t[i][rhs] / t[i][col];
                let better = match best {
                    None => true,
                    Some((bi, br)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && basis[i] < basis[bi]),
                };
                if better {
                    best = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = best else {
            return false;
        };
        tableau_pivot(t, row, col);
        basis[row] = col;
    }
}

fn tableau_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> TableauResult {
    let (m, n) = (a.len(), c.len());
    // Columns: n structural, m artificial, rhs.
    let mut t = vec![vec![0.0; n + m + 1]; m + 1];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][n + m] = sign * b[i];
    }
    // Phase I objective: sum of artificials, priced out.
    for i in 0..m {
        for j in 0..=n + m {
            if j < n || j == n + m {
                t[m][j] -= t[i][j];
            }
        }
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    tableau_run(&mut t, &mut basis, n + m);
    if -t[m][n + m] > 1e-8 {
        return TableauResult::Infeasible;
    }
    // Drive remaining artificials out where possible.
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                tableau_pivot(&mut t, i, j);
                basis[i] = j;
            }
        }
    }
    // Phase II objective.
    for j in 0..=n + m {
        t[m][j] = if j < n { c[j] } else { 0.0 };
    }
    for i in 0..m {
        let bj = basis[i];
        if bj < n {
            let f = t[m][bj];
            if f != 0.0 {
                let r = t[i].clone();
                for (v, rv) in t[m].iter_mut().zip(&r) {
                    *v -= f * rv;
                }
            }
        }
    }
    // Artificials stay at zero: exclude them from pricing.
    if !tableau_run(&mut t, &mut basis, n) {
        return TableauResult::Unbounded;
    }
    TableauResult::Optimal(-t[m][n + m])
}

/// Maximum of a general-form LP through the tableau reference.
fn reference_max(lp: &LinearProgram) -> TableauResult {
    let n = lp.objective.len();
    // x = l + x', x' ≥ 0; finite upper bounds become rows x' ≤ u − l.
    let shift: Vec<f64> = lp.lower.clone();
    let mut rows: Vec<(Vec<f64>, RowKind, f64)> = Vec::new();
    for row in &lp.rows {
        let mut dense = vec![0.0; n];
        let mut rhs = row.rhs;
        for &(j, v) in &row.coefficients {
            dense[j] += v;
            rhs -= v * shift[j];
        }
        rows.push((dense, row.kind, rhs));
    }
    for j in 0..n {
        if lp.upper[j].is_finite() {
            let mut dense = vec![0.0; n];
            dense[j] = 1.0;
            rows.push((dense, RowKind::Le, lp.upper[j] - shift[j]));
        }
    }
    let slacks = rows.iter().filter(|r| r.1 != RowKind::Eq).count();
    let width = n + slacks;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut s = n;
    for (dense, kind, rhs) in rows {
        let mut full = dense;
        full.resize(width, 0.0);
        match kind {
            RowKind::Le => {
                full[s] = 1.0;
                s += 1;
            }
            RowKind::Ge => {
                full[s] = -1.0;
                s += 1;
            }
            RowKind::Eq => {}
        }
        a.push(full);
        b.push(rhs);
    }
    let mut c: Vec<f64> = lp.objective.iter().map(|v| -v).collect();
    c.resize(width, 0.0);
    let offset: f64 = lp.objective.iter().zip(&shift).map(|(c, l)| c * l).sum();
    match tableau_min(&a, &b, &c) {
        TableauResult::Optimal(v) => TableauResult::Optimal(-v + offset),
        other => other,
    }
}

fn random_lp(rng: &mut ChaCha8Rng, m: usize, n: usize, general: bool) -> LinearProgram {
    let objective: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
    let mut lp = LinearProgram::new(objective);
    for _ in 0..m {
        let mut coefficients = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                coefficients.push((j, rng.random_range(-0.5..1.0)));
            }
        }
        let (kind, rhs) = if general {
            match rng.random_range(0..4) {
                0 => (RowKind::Ge, rng.random_range(-5.0..0.5)),
                1 => (RowKind::Eq, rng.random_range(0.0..2.0)),
                _ => (RowKind::Le, rng.random_range(1.0..10.0)),
            }
        } else {
            (RowKind::Le, rng.random_range(1.0..10.0))
        };
        lp.add_row(coefficients, kind, rhs);
    }
    // Keeps the problem bounded.
    lp.add_row((0..n).map(|j| (j, 1.0)).collect(), RowKind::Le, 50.0);
    if general {
        for j in 0..n {
            if rng.random_bool(0.3) {
                let lo = rng.random_range(-2.0..0.0);
                lp.set_bounds(j, lo, lo + rng.random_range(0.5..4.0));
            }
        }
    }
    lp
}

fn check_against_reference(lp: &LinearProgram) -> Option<f64> {
    let sol = solve_lp(lp).unwrap();
    match reference_max(lp) {
        TableauResult::Optimal(v) => {
            assert_eq!(sol.status, LpStatus::Optimal);
            assert!(
                lp.max_violation(&sol.x) <= 1e-8,
                "violation {}",
                lp.max_violation(&sol.x)
            );
            let scale = 1.0 + v.abs();
            assert!(
                (sol.objective - v).abs() <= 1e-7 * scale,
                "simplex {} reference {v}",
                sol.objective
            );
            assert!(sol.dual_bound >= sol.objective - 1e-9 * scale);
            assert!(
                sol.dual_bound - sol.objective <= 1e-7 * scale,
                "bound {} objective {}",
                sol.dual_bound,
                sol.objective
            );
            Some(v)
        }
        TableauResult::Infeasible => {
            assert_eq!(sol.status, LpStatus::Infeasible);
            None
        }
        TableauResult::Unbounded => {
            assert_eq!(sol.status, LpStatus::Unbounded);
            None
        }
    }
}

#[test]
fn random_lps_match_the_tableau_reference() {
    let mut r = common::rng(101);
    for _ in 0..40 {
        let lp = random_lp(&mut r, 20, 40, false);
        assert!(check_against_reference(&lp).is_some());
    }
}

#[test]
fn general_form_lps_match_the_tableau_reference() {
    let mut r = common::rng(202);
    let mut optimal = 0;
    for _ in 0..60 {
        let lp = random_lp(&mut r, 20, 40, true);
        optimal += usize::from(check_against_reference(&lp).is_some());
    }
    assert!(optimal >= 10, "only {optimal} feasible instances");
}

#[test]
fn lp_is_deterministic() {
    let mut r = common::rng(303);
    let lp = random_lp(&mut r, 20, 40, true);
    let a = solve_lp(&lp).unwrap();
    let b = solve_lp(&lp).unwrap();
    assert_eq!(a, b);
}

#[test]
fn badly_scaled_lp_matches_the_reference() {
    // Same LP with rows and columns rescaled over twelve decades.
    let mut r = common::rng(404);
    for _ in 0..10 {
        let original = random_lp(&mut r, 12, 20, false);
        let TableauResult::Optimal(v) = reference_max(&original) else {
            panic!("reference failed");
        };
        // x_j = col_j·x'_j leaves the objective value unchanged.
        let mut lp = original.clone();
        let col: Vec<f64> = (0..20).map(|_| 10f64.powf(r.random_range(-6.0..6.0))).collect();
        for row in &mut lp.rows {
            let s = 10f64.powf(r.random_range(-6.0..6.0));
            for (j, v) in &mut row.coefficients {
                *v *= s * col[*j];
            }
            row.rhs *= s;
        }
        for (c, s) in lp.objective.iter_mut().zip(&col) {
            *c *= s;
        }
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(
            (sol.objective - v).abs() <= 1e-6 * (1.0 + v.abs()),
            "{} vs {v}",
            sol.objective
        );
    }
}

// ---------------------------------------------------------------------------
// Reference QCQP solver: augmented Lagrangian with an accelerated projected
// gradient inner loop. The ball `‖x‖ ≤ radius` is handled by projection,
// the remaining quadratic rows by the penalty.
// ---------------------------------------------------------------------------

struct Quadratic {
    q: DMatrix<f64>,
    a: DVector<f64>,
    b: f64,
}

impl Quadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + self.a.dot(x) + self.b
    }
    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        2.0 * (&self.q * x) + &self.a
    }
}

fn project_ball(x: &mut DVector<f64>, radius: f64) {
    let n = x.norm();
    if n > radius {
        *x *= radius / n;
    }
}

fn reference_qcqp(c: &DVector<f64>, rows: &[Quadratic], radius: f64) -> f64 {
    let n = c.len();
    let mut x = DVector::zeros(n);
    let mut lambda = vec![0.0; rows.len()];
    let rho = 50.0;
    let merit_grad = |x: &DVector<f64>, lambda: &[f64]| -> (f64, DVector<f64>) {
        let mut v = c.dot(x);
        let mut g = c.clone();
        for (row, &l) in rows.iter().zip(lambda) {
            let s = (l + rho * row.value(x)).max(0.0);
            v += (s * s - l * l) / (2.0 * rho);
            if s > 0.0 {
                g += s * row.grad(x);
            }
        }
        (v, g)
    };
    for _ in 0..200 {
        // FISTA with backtracking on the augmented Lagrangian.
        let mut y = x.clone();
        let mut t_mom: f64 = 1.0;
        let mut step: f64 = 1.0;
        for _ in 0..20_000 {
            let (fy, gy) = merit_grad(&y, &lambda);
            let mut next;
            loop {
                next = &y - step * &gy;
                project_ball(&mut next, radius);
                let d = &next - &y;
                let (fn_, _) = merit_grad(&next, &lambda);
                if fn_ <= fy + gy.dot(&d) + d.norm_squared() / (2.0 * step) + 1e-15 {
                    break;
                }
                step *= 0.5;
            }
            let moved = (&next - &y).norm() / step;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_mom * t_mom).sqrt());
            let mut y_next = &next + ((t_mom - 1.0) / t_next) * (&next - &x);
            project_ball(&mut y_next, radius);
            // Restart when the momentum points uphill.
            if gy.dot(&(&next - &x)) > 0.0 {
                t_mom = 1.0;
                y_next = next.clone();
            } else {
                t_mom = t_next;
            }
            x = next;
            y = y_next;
            step *= 1.2;
            if moved <= 1e-10 {
                break;
            }
        }
        let mut worst: f64 = 0.0;
        for (row, l) in rows.iter().zip(lambda.iter_mut()) {
            let g = row.value(&x);
            *l = (*l + rho * g).max(0.0);
            worst = worst.max(g.max(-*l / rho).abs());
        }
        if worst <= 1e-10 {
            break;
        }
    }
    c.dot(&x)
}

fn random_qcqp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (ConvexQcqp, DVector<f64>, Vec<Quadratic>, f64) {
    let radius = 3.0;
    let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut rows = Vec::new();
    for _ in 0..m {
        let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = (&f * f.transpose()) / n as f64 + DMatrix::identity(n, n) * 0.1;
        let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        rows.push(Quadratic { q, a, b: -1.0 });
    }
    let mut constraints: Vec<QuadraticConstraint> = rows
        .iter()
        .map(|row| {
            let mut quadratic = Vec::new();
            for i in 0..n {
                for j in i..n {
                    quadratic.push((i, j, row.q[(i, j)]));
                }
            }
            QuadraticConstraint {
                quadratic,
                linear: (0..n).map(|i| (i, row.a[i])).collect(),
                constant: row.b,
            }
        })
        .collect();
    constraints.push(QuadraticConstraint {
        quadratic: (0..n).map(|i| (i, i, 1.0)).collect(),
        linear: Vec::new(),
        constant: -radius * radius,
    });
    let qcqp = ConvexQcqp {
        objective: c.iter().copied().collect(),
        constraints,
        equalities: Vec::new(),
    };
    (qcqp, c, rows, radius)
}

#[test]
fn random_qcqps_match_the_penalty_reference() {
    let mut r = common::rng(505);
    for &n in &[3usize, 8, 16, 30] {
        for _ in 0..3 {
            let (qcqp, c, rows, radius) = random_qcqp(&mut r, n, 4);
            let sol = solve_qcqp(&qcqp, &vec![0.0; n]).unwrap();
            let reference = reference_qcqp(&c, &rows, radius);
            let scale = 1.0f64.max(reference.abs());
            assert!(
                (sol.objective - reference).abs() <= 1e-5 * scale,
                "n = {n}: barrier {} reference {reference}",
                sol.objective
            );
            assert!(sol.kkt.max() <= 1e-6, "{:?}", sol.kkt);
            for row in &qcqp.constraints {
                assert!(row.eval(&sol.x) <= 1e-6);
            }
            // Never worse than the feasible start.
            assert!(sol.objective <= 0.0 + 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------
// Banded factorization against a dense solve.
// ---------------------------------------------------------------------------

fn random_band(rng: &mut ChaCha8Rng, m: usize, b: usize, decades: f64) -> BandMatrix {
    let scale: Vec<f64> = (0..m)
        .map(|_| 10f64.powf(rng.random_range(-decades..=decades)))
        .collect();
    let mut a = BandMatrix::zeros(m, b);
    let mut row_sum = vec![0.0; m];
    for i in 0..m {
        for j in i.saturating_sub(b)..i {
            let v: f64 = rng.random_range(-1.0..1.0);
            a.add(i, j, v * scale[i] * scale[j]);
            row_sum[i] += v.abs();
            row_sum[j] += v.abs();
        }
    }
    // Strict diagonal dominance with mixed signs: quasi-definite-like and
    // factorizable without pivoting.
    for i in 0..m {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        a.add(i, i, sign * (row_sum[i] + 0.5) * scale[i] * scale[i]);
    }
    a
}

fn dense(a: &BandMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.size(), a.size(), |i, j| a.get(i, j))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn banded_solve_matches_dense(seed in 0u64..10_000, m in 1usize..60, b in 0usize..8, decades in 0.0f64..4.0) {
        let mut r = common::rng(seed);
        let b = b.min(m.saturating_sub(1));
        let a = random_band(&mut r, m, b, decades);
        let full = dense(&a);
        let rhs: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        let reference = full.clone().lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        let mut x = rhs.clone();
        a.clone().ldl().expect("factorizable").solve_in_place(&mut x);
        let err = (DVector::from_column_slice(&x) - &reference).norm() / reference.norm().max(1e-300);
        prop_assert!(err <= 1e-9, "relative error {err}");
        // Band product agrees with the dense product.
        let y = a.mul(&x);
        let yd = &full * DVector::from_column_slice(&x);
        for i in 0..m {
            prop_assert!((y[i] - yd[i]).abs() <= 1e-12 * (1.0 + yd[i].abs()));
        }
    }
}

#[test]
fn structured_and_dense_trajectory_steps_agree() {
    // Large enough (2N + 1 ≥ 48 variables) for the structured Newton path.
    let mut r = common::rng(606);
    for &(users, slots, mrr) in &[(2usize, 30usize, 0.0), (3, 40, 0.3), (4, 26, 0.6)] {
        let inst = common::random_instance(&mut r, users, slots);
        let mrrs = vec![mrr; users];
        let s: Scenario = inst.scenario.with_mrrs(&mrrs).unwrap();
        let start = common::circle([0.0, 0.0], 150.0, slots);
        let allocation = Allocation::uniform(users, slots, s.p_max());
        let structured = QcqpOptions::default();
        let dense = QcqpOptions {
            exploit_structure: false,
            ..structured
        };
        let a = solve_trajectory_step_with(&s, &allocation, &mrrs, &start, &structured).unwrap();
        let b = solve_trajectory_step_with(&s, &allocation, &mrrs, &start, &dense).unwrap();
        let scale = a.eta_lb.abs().max(1e-9);
        assert!(
            (a.eta_lb - b.eta_lb).abs() <= 1e-6 * scale,
            "{} vs {}",
            a.eta_lb,
            b.eta_lb
        );
        assert!(a.eta_lb >= a.anchor_eta_lb);
        let gap = a
            .trajectory
            .waypoints
            .iter()
            .zip(&b.trajectory.waypoints)
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        assert!(gap <= 1e-2, "waypoints differ by {gap} m");
    }
}
