//! Ellipsoid localizer with central and deep cuts, plus a constrained
//! minimization driver built on it.
//!
//! The ellipsoid is `E = { x : (x − c)ᵀ A⁻¹ (x − c) ≤ 1 }` with `A` symmetric
//! positive definite.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipsoidError {
    #[error("ellipsoid dimensions are inconsistent: {0}")]
    Dimension(String),
    #[error("shape matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("numerical breakdown: {0}")]
    Breakdown(&'static str),
    #[error("cut removes the whole ellipsoid")]
    EmptyIntersection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self, EllipsoidError> {
        let m = center.len();
        if m == 0 || shape.nrows() != m || shape.ncols() != m {
            return Err(EllipsoidError::Dimension(format!(
                "center has {} entries, shape is {}x{}",
                m,
                shape.nrows(),
                shape.ncols()
            )));
        }
        let e = Self { center, shape };
        e.check_positive_definite()?;
        Ok(e)
    }

    /// Ball of the given radius.
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self, EllipsoidError> {
        let m = center.len();
        Self::new(center, DMatrix::identity(m, m) * (radius * radius))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn check_positive_definite(&self) -> Result<(), EllipsoidError> {
        if self.shape.iter().any(|v| !v.is_finite()) {
            return Err(EllipsoidError::Breakdown("non-finite shape entry"));
        }
        match self.shape.clone().cholesky() {
            Some(_) => Ok(()),
            None => Err(EllipsoidError::NotPositiveDefinite),
        }
    }

    /// `ln det A`; volume is proportional to `exp(½ ln det A)`.
    pub fn log_det(&self) -> Result<f64, EllipsoidError> {
        let chol = self
            .shape
            .clone()
            .cholesky()
            .ok_or(EllipsoidError::NotPositiveDefinite)?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `√(gᵀ A g)`: half-width of the ellipsoid along `g`, in units of `g`.
    pub fn support_width(&self, g: &DVector<f64>) -> f64 {
        (g.dot(&(&self.shape * g))).max(0.0).sqrt()
    }

    /// Widest extent along any coordinate axis, `2 max_i √A_ii`.
    pub fn box_diameter(&self) -> f64 {
        2.0 * self.shape.diagonal().iter().fold(0.0f64, |acc, &v| acc.max(v)).sqrt()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let d = x - &self.center;
        match self.shape.clone().cholesky() {
            Some(chol) => d.dot(&chol.solve(&d)) <= 1.0 + 1e-12,
            None => false,
        }
    }

    /// Keep `{x : gᵀ(x − c) + depth ≤ 0}` and replace `self` by the
    /// minimum-volume ellipsoid containing the kept part. `depth = 0` is a
    /// central cut; negative depths are treated as central.
    pub fn cut(&mut self, g: &DVector<f64>, depth: f64) -> Result<(), EllipsoidError> {
        let m = self.dim();
        if g.len() != m {
            return Err(EllipsoidError::Dimension(format!(
                "cut has {} entries, ellipsoid dimension is {m}",
                g.len()
            )));
        }
        let ag = &self.shape * g;
        let gag = g.dot(&ag);
        if !(gag.is_finite() && gag > 0.0) {
            return Err(EllipsoidError::Breakdown("cut direction has zero width"));
        }
        let width = gag.sqrt();
        let alpha = (depth / width).max(0.0);
        if alpha >= 1.0 {
            return Err(EllipsoidError::EmptyIntersection);
        }
        let b = ag / width;
        let mf = m as f64;
        let tau = (1.0 + mf * alpha) / (mf + 1.0);
        self.center.axpy(-tau, &b, 1.0);
        if m == 1 {
            self.shape *= 0.25 * (1.0 - alpha).powi(2);
            return Ok(());
        }
        let sigma = 2.0 * (1.0 + mf * alpha) / ((mf + 1.0) * (1.0 + alpha));
        let delta = mf * mf * (1.0 - alpha * alpha) / (mf * mf - 1.0);
        self.shape.ger(-sigma, &b, &b, 1.0);
        self.shape *= delta;
        // Restore exact symmetry lost to rounding.
        for i in 0..m {
            for j in 0..i {
                let v = 0.5 * (self.shape[(i, j)] + self.shape[(j, i)]);
                self.shape[(i, j)] = v;
                self.shape[(j, i)] = v;
            }
            if !(self.shape[(i, i)] > 0.0) {
                return Err(EllipsoidError::NotPositiveDefinite);
            }
        }
        Ok(())
    }
}

/// One central-cut update, returning the new ellipsoid.
pub fn ellipsoid_step(ellipsoid: &Ellipsoid, cut: &DVector<f64>) -> Result<Ellipsoid, EllipsoidError> {
    if cut.iter().all(|&v| v == 0.0) {
        return Err(EllipsoidError::Breakdown("zero cut vector"));
    }
    let mut next = ellipsoid.clone();
    next.cut(cut, 0.0)?;
    Ok(next)
}

/// Answer of the oracle at a query point.
#[derive(Debug, Clone)]
pub enum Query {
    /// The point is feasible; `value` is the objective and `subgradient` a
    /// subgradient there.
    Objective { value: f64, subgradient: DVector<f64> },
    /// The point violates a constraint `h(x) ≤ 0`: `cut` is a subgradient of
    /// `h` at `x` and `violation = h(x) > 0`.
    Infeasible { cut: DVector<f64>, violation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidOptions {
    pub max_steps: usize,
    /// Stop when [`Ellipsoid::box_diameter`] drops below this.
    pub diameter_tol: f64,
    /// Stop when `best − lower_bound ≤ gap_tol · max(|best|, 1e-12)`.
    pub gap_tol: f64,
    /// Stop when the best value has improved by less than
    /// `plateau_tol · max(|best|, 1e-12)` over this many objective steps.
    pub plateau_window: usize,
    pub plateau_tol: f64,
    /// Full positive-definiteness check every this many steps.
    pub pd_check_every: usize,
}

impl EllipsoidOptions {
    /// Step budget sufficient to shrink a radius-`radius` ball in dimension
    /// `m` until every axis is below `diameter_tol`, from the per-step
    /// volume decrease `exp(−1/(2(m+1)))`.
    pub fn for_problem(m: usize, radius: f64, diameter_tol: f64) -> Self {
        let mf = m as f64;
        let shrink = (2.0 * radius * mf.sqrt() / diameter_tol).max(std::f64::consts::E).ln();
        let steps = (2.0 * (mf + 1.0) * mf * shrink).ceil() as usize + 100;
        Self {
            max_steps: steps,
            diameter_tol,
            gap_tol: 1e-9,
            plateau_window: (20 * (m + 1) * (m + 1)).max(50),
            plateau_tol: 1e-12,
            pd_check_every: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EllipsoidTermination {
    Diameter,
    Gap,
    Plateau,
    MaxSteps,
    /// The shape matrix degenerated numerically; the best point so far is
    /// still valid.
    Breakdown,
}

#[derive(Debug, Clone)]
pub struct EllipsoidRun {
    /// Best feasible query point; `None` if no feasible center was seen.
    pub best_point: Option<DVector<f64>>,
    pub best_value: f64,
    /// Lower bound on the optimal value, from `f(c) − √(gᵀAg)` at feasible
    /// centers.
    pub lower_bound: f64,
    pub steps: usize,
    pub objective_steps: usize,
    pub termination: EllipsoidTermination,
    pub ellipsoid: Ellipsoid,
}

/// Minimize a convex function over a convex set by the ellipsoid method.
///
/// Feasibility cuts are deep cuts at depth `violation`; objective cuts are
/// deep cuts at depth `value − best`, which never removes a point better
/// than the incumbent.
pub fn minimize(
    initial: Ellipsoid,
    options: &EllipsoidOptions,
    mut oracle: impl FnMut(&DVector<f64>) -> Query,
) -> EllipsoidRun {
    let mut e = initial;
    let mut best_point = None;
    let mut best_value = f64::INFINITY;
    let mut lower_bound = f64::NEG_INFINITY;
    let mut objective_steps = 0usize;
    let mut last_improvement_step = 0usize;
    let mut value_at_window_start = f64::INFINITY;
    let mut termination = EllipsoidTermination::MaxSteps;
    let mut steps = 0usize;

    while steps < options.max_steps {
        let x = e.center().clone();
        let (cut, depth) = match oracle(&x) {
            Query::Infeasible { cut, violation } => (cut, violation.max(0.0)),
            Query::Objective { value, subgradient } => {
                objective_steps += 1;
                lower_bound = lower_bound.max(value - e.support_width(&subgradient));
                if value < best_value {
                    best_value = value;
                    best_point = Some(x.clone());
                }
                let best = best_value;
                let scale = best.abs().max(1e-12);
                if best - lower_bound <= options.gap_tol * scale {
                    termination = EllipsoidTermination::Gap;
                    break;
                }
                if objective_steps - last_improvement_step >= options.plateau_window {
                    if value_at_window_start - best <= options.plateau_tol * scale {
                        termination = EllipsoidTermination::Plateau;
                        break;
                    }
                    value_at_window_start = best;
                    last_improvement_step = objective_steps;
                }
                if subgradient.iter().all(|&v| v == 0.0) {
                    // Zero subgradient: the center is optimal.
                    lower_bound = value;
                    termination = EllipsoidTermination::Gap;
                    break;
                }
                (subgradient, (value - best_value).max(0.0))
            }
        };
        steps += 1;
        match e.cut(&cut, depth) {
            Ok(()) => {}
            Err(EllipsoidError::EmptyIntersection) => {
                // Nothing left that beats the incumbent (or satisfies the
                // violated constraint): the localizer is exhausted.
                termination = EllipsoidTermination::Gap;
                break;
            }
            Err(_) => {
                termination = EllipsoidTermination::Breakdown;
                break;
            }
        }
        if options.pd_check_every > 0
            && steps.is_multiple_of(options.pd_check_every)
            && e.check_positive_definite().is_err()
        {
            termination = EllipsoidTermination::Breakdown;
            break;
        }
        if e.box_diameter() < options.diameter_tol {
            termination = EllipsoidTermination::Diameter;
            break;
        }
    }

    EllipsoidRun {
        best_point,
        best_value,
        lower_bound,
        steps,
        objective_steps,
        termination,
        ellipsoid: e,
    }
}
