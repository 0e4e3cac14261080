//! Primal recovery from a dual point and optimality diagnostics.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::dual::{slot_utility, waterfill_power_density, DualState, POWER_DENSITY_CAP};
use crate::matrix::UserSlotMatrix;
use crate::numerics::lp::{solve_lp, LinearProgram, LpError, LpStatus, RowKind};
use crate::scenario::{achievable_eta, average_throughputs, instantaneous_rate};

/// Allocation recovered from fixed water-filling densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    /// Optimal value of the recovery LP.
    pub lp_eta: f64,
    pub bandwidth: UserSlotMatrix,
    /// Watts.
    pub power: UserSlotMatrix,
    pub lp_iterations: usize,
}

/// Densities `p̃_kn` (watts per unit bandwidth) for a dual point.
pub fn waterfill_densities(gains: &UserSlotMatrix, dual: &DualState, p_max: f64) -> UserSlotMatrix {
    let n_slots = gains.slots();
    UserSlotMatrix::from_fn(gains.users(), n_slots, |k, n| {
        waterfill_power_density(
            dual.lambda[k],
            dual.mu.get(k, n),
            dual.beta[n],
            gains.get(k, n),
            n_slots,
        )
        .min(POWER_DENSITY_CAP * p_max)
    })
}

/// With the densities fixed, the allocation problem is linear in
/// `(η, α)`:
///
/// ```text
/// maximize η
/// s.t. (1/N) Σ_n α_kn r̃_kn ≥ η,   α_kn r̃_kn ≥ θ_k η,
///      Σ_k α_kn ≤ 1,   Σ_k α_kn p̃_kn ≤ P_max,   0 ≤ α ≤ 1
/// ```
///
/// with `r̃ = log2(1 + p̃ g)`. Pairs with `p̃ = 0` carry no rate and are
/// left out of the program.
///
/// Every pair also gets a second column at the flat density `P_max`. Where
/// the multipliers of a slot vanish (slots whose rate constraints are all
/// slack at the optimum) the water-filling densities are undetermined and
/// may be unable to meet the rate floors; the flat column keeps the program
/// meaningful there. A pair's columns are merged afterwards by adding
/// bandwidth and power, which by concavity of the rate never delivers less
/// than the program promised.
pub fn recover_allocation(
    gains: &UserSlotMatrix,
    mrrs: &[f64],
    p_max: f64,
    density: &UserSlotMatrix,
) -> Result<Recovered, LpError> {
    let (k_users, n_slots) = (gains.users(), gains.slots());
    let nf = n_slots as f64;
    // (user, slot, density, spectral efficiency)
    let mut columns: Vec<(usize, usize, f64, f64)> = Vec::new();
    for k in 0..k_users {
        for n in 0..n_slots {
            let g = gains.get(k, n);
            let d = density.get(k, n);
            if d > 0.0 {
                columns.push((k, n, d, (d * g).ln_1p() / LN_2));
            }
            if (d - p_max).abs() > 1e-12 * p_max {
                columns.push((k, n, p_max, (p_max * g).ln_1p() / LN_2));
            }
        }
    }
    let eta = columns.len();
    let mut objective = vec![0.0; eta + 1];
    objective[eta] = 1.0;
    let mut lp = LinearProgram::new(objective);
    for j in 0..eta {
        lp.set_bounds(j, 0.0, 1.0);
    }

    for k in 0..k_users {
        let mut row: Vec<(usize, f64)> = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.0 == k)
            .map(|(j, c)| (j, c.3 / nf))
            .collect();
        row.push((eta, -1.0));
        lp.add_row(row, RowKind::Ge, 0.0);
    }
    for k in 0..k_users {
        if mrrs[k] <= 0.0 {
            continue;
        }
        for n in 0..n_slots {
            let mut row = vec![(eta, -mrrs[k])];
            row.extend(
                columns
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.0 == k && c.1 == n)
                    .map(|(j, c)| (j, c.3)),
            );
            lp.add_row(row, RowKind::Ge, 0.0);
        }
    }
    for n in 0..n_slots {
        let in_slot: Vec<(usize, f64)> = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.1 == n)
            .map(|(j, c)| (j, c.2))
            .collect();
        if !in_slot.is_empty() {
            lp.add_row(in_slot.iter().map(|&(j, _)| (j, 1.0)).collect(), RowKind::Le, 1.0);
            lp.add_row(in_slot.iter().map(|&(j, d)| (j, d / p_max)).collect(), RowKind::Le, 1.0);
        }
    }

    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        // η = 0, α = 0 is always feasible and η is bounded by the rates, so
        // this only happens on numerical failure.
        return Err(LpError::SingularBasis);
    }
    let mut bandwidth = UserSlotMatrix::zeros(k_users, n_slots);
    let mut power = UserSlotMatrix::zeros(k_users, n_slots);
    for (j, &(k, n, d, _)) in columns.iter().enumerate() {
        let a = sol.x[j].clamp(0.0, 1.0);
        if a > 0.0 {
            bandwidth.set(k, n, bandwidth.get(k, n) + a);
            power.set(k, n, power.get(k, n) + a * d);
        }
    }
    // Remove rounding excess so slot sums never exceed their budgets.
    for n in 0..n_slots {
        let a_sum = bandwidth.column_sum(n);
        let p_sum = power.column_sum(n);
        let scale = (1.0 / a_sum.max(1.0)).min(p_max / p_sum.max(p_max));
        if scale < 1.0 {
            for k in 0..k_users {
                bandwidth.set(k, n, bandwidth.get(k, n) * scale);
                power.set(k, n, power.get(k, n) * scale);
            }
        }
    }
    Ok(Recovered {
        lp_eta: sol.objective,
        bandwidth,
        power,
        lp_iterations: sol.iterations,
    })
}

/// Per-slot multipliers `β_n`, `ν_n` re-estimated from the primal
/// allocation with `λ`, `μ` held fixed, as the `α`-weighted mean of the
/// marginal utilities of the served pairs. Both budgets bind on every slot
/// that serves anyone (the marginal rate in bandwidth and in power is
/// positive), so a slack budget shows up as a complementarity residual.
/// Slots serving nobody keep their values. The result is nonnegative and
/// hence dual feasible, so its dual value is still an upper bound.
pub fn refit_slot_multipliers(
    gains: &UserSlotMatrix,
    bandwidth: &UserSlotMatrix,
    power: &UserSlotMatrix,
    dual: &DualState,
) -> DualState {
    let (k_users, n_slots) = (gains.users(), gains.slots());
    let nf = n_slots as f64;
    let mut out = dual.clone();
    for n in 0..n_slots {
        let (mut nu_num, mut beta_num, mut weight) = (0.0, 0.0, 0.0);
        for k in 0..k_users {
            let (a, p, g) = (bandwidth.get(k, n), power.get(k, n), gains.get(k, n));
            if a <= 0.0 || p <= 0.0 {
                continue;
            }
            let w = (dual.lambda[k] + nf * dual.mu.get(k, n)) / nf;
            let s = p * g / a;
            nu_num += a * w * (s.ln_1p() / LN_2 - s / (LN_2 * (1.0 + s)));
            beta_num += a * w * g / (LN_2 * (1.0 + s));
            weight += a;
        }
        if weight > 0.0 {
            out.nu[n] = (nu_num / weight).max(0.0);
            out.beta[n] = (beta_num / weight).max(0.0);
        }
    }
    out
}

/// Optimality diagnostics of a primal-dual pair. Residuals other than the
/// `minus_form` entry are relative: rate-valued quantities are divided by
/// `η`, per-slot Lagrangian terms by `η/N`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktReport {
    /// `|Σλ + ΣΣθμ − 1|`.
    pub boundedness: f64,
    /// `|Σλ − ΣΣθμ − 1|`, reported for reference only.
    pub minus_form: f64,
    /// `(dual bound − η)/η`.
    pub duality_gap: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub power_stationarity: f64,
    pub bandwidth_stationarity: f64,
}

impl KktReport {
    /// Largest of the residuals that define a KKT point (excluding the
    /// duality gap and the reference-only entry).
    pub fn max(&self) -> f64 {
        self.boundedness
            .max(self.primal)
            .max(self.complementarity)
            .max(self.power_stationarity)
            .max(self.bandwidth_stationarity)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kkt_report(
    gains: &UserSlotMatrix,
    mrrs: &[f64],
    p_max: f64,
    bandwidth: &UserSlotMatrix,
    power: &UserSlotMatrix,
    eta: f64,
    dual: &DualState,
    dual_bound: f64,
) -> KktReport {
    let (k_users, n_slots) = (gains.users(), gains.slots());
    let nf = n_slots as f64;
    let scale = eta.abs().max(1e-12);
    let slot_scale = scale / nf;
    let rates = UserSlotMatrix::from_fn(k_users, n_slots, |k, n| {
        instantaneous_rate(bandwidth.get(k, n), power.get(k, n), gains.get(k, n))
    });
    let averages = average_throughputs(&rates);

    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for k in 0..k_users {
        let slack = averages[k] - eta;
        primal = primal.max(-slack / scale);
        comp = comp.max(dual.lambda[k] * slack.abs() / scale);
        for n in 0..n_slots {
            let slack = rates.get(k, n) - mrrs[k] * eta;
            primal = primal.max(-slack / scale);
            comp = comp.max(dual.mu.get(k, n) * slack.abs() / slot_scale);
        }
    }
    for n in 0..n_slots {
        let band = 1.0 - bandwidth.column_sum(n);
        let pow = p_max - power.column_sum(n);
        primal = primal.max(-band).max(-pow / p_max);
        comp = comp.max(dual.nu[n] * band.abs() / slot_scale);
        comp = comp.max(dual.beta[n] * pow.abs() / slot_scale);
    }

    let mut power_stat: f64 = 0.0;
    let mut band_stat: f64 = 0.0;
    for k in 0..k_users {
        for n in 0..n_slots {
            let (a, p, g) = (bandwidth.get(k, n), power.get(k, n), gains.get(k, n));
            let (lam, mu, beta, nu) = (dual.lambda[k], dual.mu.get(k, n), dual.beta[n], dual.nu[n]);
            let w = (lam + nf * mu) / nf;
            if a > 0.0 {
                // Natural residual `min(x, −∂L)` for a variable with a lower
                // bound: interior-point iterates keep tiny positive shares on
                // pairs the optimum does not serve.
                let s = p * g / a;
                let dp = (w * g / (LN_2 * (1.0 + s)) - beta) * p_max / slot_scale;
                let r = if dp < 0.0 { (-dp).min(p / p_max) } else { dp };
                power_stat = power_stat.max(r);
                let da = (w * (s.ln_1p() / LN_2 - s / (LN_2 * (1.0 + s))) - nu) / slot_scale;
                let r = if da < 0.0 {
                    (-da).min(a)
                } else if a < 1.0 {
                    da
                } else {
                    0.0
                };
                band_stat = band_stat.max(r);
            } else {
                let d = waterfill_power_density(lam, mu, beta, g, n_slots).min(POWER_DENSITY_CAP * p_max);
                let u = slot_utility(lam, mu, beta, nu, g, d, n_slots);
                band_stat = band_stat.max(u.max(0.0) / slot_scale);
            }
        }
    }

    KktReport {
        boundedness: dual.boundedness_residual(mrrs),
        minus_form: dual.minus_form_residual(mrrs),
        duality_gap: (dual_bound - eta) / scale,
        primal: primal.max(0.0),
        complementarity: comp,
        power_stationarity: power_stat,
        bandwidth_stationarity: band_stat,
    }
}

/// `η` actually delivered by an allocation.
pub fn delivered_eta(gains: &UserSlotMatrix, mrrs: &[f64], bandwidth: &UserSlotMatrix, power: &UserSlotMatrix) -> f64 {
    let rates = UserSlotMatrix::from_fn(gains.users(), gains.slots(), |k, n| {
        instantaneous_rate(bandwidth.get(k, n), power.get(k, n), gains.get(k, n))
    });
    achievable_eta(&rates, mrrs)
}
