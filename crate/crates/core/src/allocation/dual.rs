//! Partial Lagrangian of the allocation problem and its per-user-slot
//! decomposition.
//!
//! With multipliers `λ_k` (average throughput), `μ_kn` (minimum-rate ratio),
//! `β_n` (slot power, per watt) and `ν_n` (slot bandwidth), the Lagrangian is
//!
//! ```text
//! L = η(1 − Σλ_k − ΣΣ θ_k μ_kn) + Σ λ_k R_k + ΣΣ μ_kn r_kn
//!     + Σ β_n (P_max − Σ_k p_kn) + Σ ν_n (1 − Σ_k α_kn)
//! ```
//!
//! It is bounded in `η` only when `Σλ_k + ΣΣ θ_k μ_kn = 1`; on that set the
//! dual function splits into `K·N` independent one-user-one-slot problems.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::matrix::UserSlotMatrix;

/// Upper bound on a water-filling power density, in units of `P_max`.
pub const POWER_DENSITY_CAP: f64 = 1e3;
/// Floor applied to `β_n` inside the water-filling formula.
pub const BETA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub mu: UserSlotMatrix,
    /// Per watt.
    pub beta: Vec<f64>,
    pub nu: Vec<f64>,
}

impl DualState {
    pub fn zeros(users: usize, slots: usize) -> Self {
        Self {
            lambda: vec![0.0; users],
            mu: UserSlotMatrix::zeros(users, slots),
            beta: vec![0.0; slots],
            nu: vec![0.0; slots],
        }
    }

    pub fn users(&self) -> usize {
        self.lambda.len()
    }

    pub fn slots(&self) -> usize {
        self.beta.len()
    }

    /// `Σλ_k + ΣΣ θ_k μ_kn`, the coefficient that must equal one for the
    /// Lagrangian to be bounded in `η`.
    pub fn eta_weight(&self, mrrs: &[f64]) -> f64 {
        let mut s: f64 = self.lambda.iter().sum();
        for (k, &theta) in mrrs.iter().enumerate() {
            s += theta * self.mu.row(k).iter().sum::<f64>();
        }
        s
    }

    /// `|Σλ_k + ΣΣ θ_k μ_kn − 1|`.
    pub fn boundedness_residual(&self, mrrs: &[f64]) -> f64 {
        (self.eta_weight(mrrs) - 1.0).abs()
    }

    /// `|Σλ_k − ΣΣ θ_k μ_kn − 1|`: the same condition written with the
    /// opposite sign on the `μ` term. It coincides with
    /// [`Self::boundedness_residual`] only when every `θ_k μ_kn` vanishes.
    pub fn minus_form_residual(&self, mrrs: &[f64]) -> f64 {
        let mut s: f64 = self.lambda.iter().sum();
        for (k, &theta) in mrrs.iter().enumerate() {
            s -= theta * self.mu.row(k).iter().sum::<f64>();
        }
        (s - 1.0).abs()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.lambda
            .iter()
            .chain(self.mu.as_slice())
            .chain(&self.beta)
            .chain(&self.nu)
            .all(|&v| v >= 0.0)
    }

    /// Every multiplier divided by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.lambda.iter_mut().for_each(|v| *v /= s);
        out.mu = UserSlotMatrix::from_fn(self.users(), self.slots(), |k, n| self.mu.get(k, n) / s);
        out.beta.iter_mut().for_each(|v| *v /= s);
        out.nu.iter_mut().for_each(|v| *v /= s);
        out
    }
}

/// Optimal power spectral density of user `k` in slot `n` for given
/// multipliers: `[(λ_k + N μ_kn)/(N β_n ln 2) − 1/g_kn]⁺`.
///
/// `β_n` is floored at [`BETA_FLOOR`]; the result is not capped here.
pub fn waterfill_power_density(lambda: f64, mu: f64, beta: f64, gain: f64, slots: usize) -> f64 {
    let n = slots as f64;
    let level = (lambda + n * mu) / (n * beta.max(BETA_FLOOR) * LN_2);
    (level - 1.0 / gain).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Zero,
    One,
    Tie,
}

impl Indicator {
    /// Bandwidth fraction taken by the dual maximizer; ties resolve to 0.
    pub fn fraction(self) -> f64 {
        match self {
            Indicator::One => 1.0,
            Indicator::Zero | Indicator::Tie => 0.0,
        }
    }
}

/// Net utility of giving the whole slot to the user at density `density`:
/// `((λ_k + N μ_kn)/N) log2(1 + p̃ g) − β_n p̃ − ν_n`.
pub fn slot_utility(lambda: f64, mu: f64, beta: f64, nu: f64, gain: f64, density: f64, slots: usize) -> f64 {
    let n = slots as f64;
    (lambda + n * mu) / n * (density * gain).ln_1p() / LN_2 - beta * density - nu
}

pub fn bandwidth_indicator(
    lambda: f64,
    mu: f64,
    beta: f64,
    nu: f64,
    gain: f64,
    density: f64,
    slots: usize,
) -> Indicator {
    let u = slot_utility(lambda, mu, beta, nu, gain, density, slots);
    if u > 0.0 {
        Indicator::One
    } else if u < 0.0 {
        Indicator::Zero
    } else {
        Indicator::Tie
    }
}

/// Dual function value and the per-user-slot maximizers.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEvaluation {
    /// Value with the `η` term dropped (`η⋆ = 0`).
    pub value: f64,
    /// `false` when `Σλ + ΣΣθμ ≠ 1` beyond the tolerance used by the caller:
    /// the true dual function is `+∞` there.
    pub bounded: bool,
    pub bandwidth: UserSlotMatrix,
    /// Maximizing powers in watts (`p̃ α`).
    pub power: UserSlotMatrix,
    /// Water-filling densities `p̃` (watts per unit bandwidth fraction),
    /// capped at `POWER_DENSITY_CAP · P_max`.
    pub density: UserSlotMatrix,
    /// Rates `α log2(1 + p̃ g)` of the maximizers.
    pub rates: UserSlotMatrix,
}

/// Evaluate the dual function for gain-to-noise ratios `gains` (`K × N`).
pub fn dual_function(
    gains: &UserSlotMatrix,
    mrrs: &[f64],
    p_max: f64,
    dual: &DualState,
    boundedness_tol: f64,
) -> DualEvaluation {
    let k_users = gains.users();
    let n_slots = gains.slots();
    let mut bandwidth = UserSlotMatrix::zeros(k_users, n_slots);
    let mut power = UserSlotMatrix::zeros(k_users, n_slots);
    let mut density = UserSlotMatrix::zeros(k_users, n_slots);
    let mut rates = UserSlotMatrix::zeros(k_users, n_slots);
    let mut value: f64 = dual.beta.iter().sum::<f64>() * p_max + dual.nu.iter().sum::<f64>();
    let cap = POWER_DENSITY_CAP * p_max;
    for k in 0..k_users {
        for n in 0..n_slots {
            let (l, m, b, v, g) = (
                dual.lambda[k],
                dual.mu.get(k, n),
                dual.beta[n],
                dual.nu[n],
                gains.get(k, n),
            );
            let d = waterfill_power_density(l, m, b, g, n_slots).min(cap);
            density.set(k, n, d);
            let u = slot_utility(l, m, b, v, g, d, n_slots);
            if u > 0.0 {
                value += u;
                bandwidth.set(k, n, 1.0);
                power.set(k, n, d);
                rates.set(k, n, (d * g).ln_1p() / LN_2);
            }
        }
    }
    DualEvaluation {
        value,
        bounded: dual.boundedness_residual(mrrs) <= boundedness_tol,
        bandwidth,
        power,
        density,
        rates,
    }
}

/// Subgradient of the dual function with respect to each multiplier block.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSubgradient {
    pub lambda: Vec<f64>,
    pub mu: UserSlotMatrix,
    pub beta: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Cut returned alongside the objective subgradient when the query point is
/// outside the dual feasible set.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityCut {
    /// `Σλ + ΣΣθμ > 1 + tol`: cut direction `(1, θ_k)` on `(λ, μ)`.
    AboveBoundedness { violation: f64 },
    /// `Σλ + ΣΣθμ < 1 − tol`: cut direction `−(1, θ_k)` on `(λ, μ)`.
    BelowBoundedness { violation: f64 },
    /// A multiplier is negative; identified by its block and position.
    Negative { block: DualBlock, index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualBlock {
    Lambda,
    Mu,
    Beta,
    Nu,
}

pub fn subgradients(
    mrrs: &[f64],
    p_max: f64,
    dual: &DualState,
    eval: &DualEvaluation,
    boundedness_tol: f64,
) -> (DualSubgradient, Option<FeasibilityCut>) {
    let k_users = eval.rates.users();
    let n_slots = eval.rates.slots();
    let lambda = (0..k_users)
        .map(|k| eval.rates.row(k).iter().sum::<f64>() / n_slots as f64)
        .collect();
    let beta = (0..n_slots).map(|n| p_max - eval.power.column_sum(n)).collect();
    let nu = (0..n_slots).map(|n| 1.0 - eval.bandwidth.column_sum(n)).collect();
    let sub = DualSubgradient {
        lambda,
        mu: eval.rates.clone(),
        beta,
        nu,
    };

    let blocks = [
        (DualBlock::Lambda, dual.lambda.as_slice()),
        (DualBlock::Mu, dual.mu.as_slice()),
        (DualBlock::Beta, dual.beta.as_slice()),
        (DualBlock::Nu, dual.nu.as_slice()),
    ];
    let mut cut = None;
    let mut worst = 0.0;
    for (block, values) in blocks {
        for (index, &value) in values.iter().enumerate() {
            if value < worst {
                worst = value;
                cut = Some(FeasibilityCut::Negative { block, index, value });
            }
        }
    }
    if cut.is_none() {
        let excess = dual.eta_weight(mrrs) - 1.0;
        if excess > boundedness_tol {
            cut = Some(FeasibilityCut::AboveBoundedness { violation: excess });
        } else if excess < -boundedness_tol {
            cut = Some(FeasibilityCut::BelowBoundedness { violation: -excess });
        }
    }
    (sub, cut)
}
