mod common;

use proptest::prelude::*;
use rand::Rng;
use uav_ofdma::allocation::solve_allocation;
use uav_ofdma::matrix::UserSlotMatrix;
use uav_ofdma::oracle::{finite_difference_check, oracle_trajectory};
use uav_ofdma::scenario::{dist2, instantaneous_rate};
use uav_ofdma::trajectory::{sca_coefficients, sca_loop, served_eta, solve_trajectory_step, surrogate_rate};
use uav_ofdma::{Allocation, Scenario, Trajectory, UserSpec};

/// Rate recomputed from the raw physical parameters.
fn direct_rate(s: &Scenario, q: [f64; 2], k: usize, alpha: f64, power: f64) -> f64 {
    let uav = s.uav();
    let rho0 = 10f64.powf(uav.ref_gain_db / 10.0);
    let n0 = 10f64.powf((uav.noise_psd_dbm_hz - 30.0) / 10.0);
    let w = s.users()[k].position;
    let d2 = uav.altitude.powi(2) + (q[0] - w[0]).powi(2) + (q[1] - w[1]).powi(2);
    let snr = power * rho0 / (d2 * alpha * uav.bandwidth * n0);
    alpha * (1.0 + snr).log2()
}

/// Tangent slope of `α log2(1 + γ/u)` in `u = H² + d²`, from the
/// derivative `−α γ log2(e) / (u (u + γ))`.
fn direct_slope(s: &Scenario, anchor: [f64; 2], k: usize, alpha: f64, power: f64) -> f64 {
    let uav = s.uav();
    let rho0 = 10f64.powf(uav.ref_gain_db / 10.0);
    let n0 = 10f64.powf((uav.noise_psd_dbm_hz - 30.0) / 10.0);
    let gamma = power * rho0 / (alpha * uav.bandwidth * n0);
    let u = uav.altitude.powi(2) + dist2(anchor, s.users()[k].position);
    alpha * gamma * std::f64::consts::LOG2_E / (u * (u + gamma))
}

fn one_slot(s: &Scenario, anchor: [f64; 2], alpha: f64, power: f64) -> (Allocation, Trajectory) {
    let allocation = Allocation {
        bandwidth: UserSlotMatrix::filled(s.num_users(), 1, alpha),
        power: UserSlotMatrix::filled(s.num_users(), 1, power),
    };
    (allocation, Trajectory::new(vec![anchor]))
}

fn single_user(slots: usize, position: [f64; 2], mrr: f64) -> Scenario {
    Scenario::new(vec![UserSpec { position, mrr }], common::reference_uav(slots)).unwrap()
}

#[test]
fn surrogate_bounds_rate_on_random_pairs() {
    let mut rng = common::rng(11);
    let s = Scenario::new(common::square_users(0.0), common::reference_uav(2)).unwrap();
    let mut worst_gap: f64 = 0.0;
    let mut worst_anchor: f64 = 0.0;
    for _ in 0..10_000 {
        let anchor = [rng.random_range(-1500.0..1500.0), rng.random_range(-1500.0..1500.0)];
        let q = [rng.random_range(-1500.0..1500.0), rng.random_range(-1500.0..1500.0)];
        let alpha = rng.random_range(1e-3..1.0);
        let power = rng.random_range(0.0..0.1);
        let (allocation, anchor_t) = one_slot(&s, anchor, alpha, power);
        let c = sca_coefficients(&s, &allocation, &anchor_t).unwrap();
        let k = rng.random_range(0..4);
        let at_q = surrogate_rate(&c, &allocation, &Trajectory::new(vec![q]), k, 0);
        let at_anchor = surrogate_rate(&c, &allocation, &anchor_t, k, 0);
        worst_gap = worst_gap.max(at_q - direct_rate(&s, q, k, alpha, power));
        worst_anchor = worst_anchor.max((at_anchor - direct_rate(&s, anchor, k, alpha, power)).abs());
    }
    assert!(worst_gap <= 1e-9, "surrogate exceeds the rate by {worst_gap:e}");
    assert!(worst_anchor <= 1e-12, "anchor mismatch {worst_anchor:e}");
}

#[test]
fn surrogate_is_tangent_at_the_anchor() {
    let mut rng = common::rng(12);
    let s = Scenario::new(common::square_users(0.0), common::reference_uav(2)).unwrap();
    for _ in 0..200 {
        let anchor = [rng.random_range(-900.0..900.0), rng.random_range(-900.0..900.0)];
        let alpha = rng.random_range(0.05..1.0);
        let power = rng.random_range(1e-3..0.1);
        let k = rng.random_range(0..4);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = [angle.cos(), angle.sin()];
        let (allocation, anchor_t) = one_slot(&s, anchor, alpha, power);
        let c = sca_coefficients(&s, &allocation, &anchor_t).unwrap();
        // Directional derivative of the surrogate at the anchor:
        // −α A · 2 (q_r − w)·dir.
        let w = s.users()[k].position;
        let analytic = -c.a.get(k, 0) * alpha * 2.0 * ((anchor[0] - w[0]) * dir[0] + (anchor[1] - w[1]) * dir[1]);
        if analytic.abs() < 1e-9 {
            continue;
        }
        let true_rate = |x: &[f64]| direct_rate(&s, [x[0], x[1]], k, alpha, power);
        let dev = finite_difference_check(true_rate, &anchor, &dir, analytic);
        assert!(dev <= 1e-5, "tangency deviation {dev:e} at {anchor:?}");
    }
}

#[test]
fn coefficients_match_direct_derivation() {
    let mut rng = common::rng(13);
    let s = Scenario::new(common::square_users(0.0), common::reference_uav(2)).unwrap();
    for _ in 0..100 {
        let anchor = [rng.random_range(-800.0..800.0), rng.random_range(-800.0..800.0)];
        let alpha = rng.random_range(0.01..1.0);
        let power = rng.random_range(1e-3..0.1);
        let (allocation, anchor_t) = one_slot(&s, anchor, alpha, power);
        let c = sca_coefficients(&s, &allocation, &anchor_t).unwrap();
        for k in 0..4 {
            let slope = direct_slope(&s, anchor, k, alpha, power);
            assert!((alpha * c.a.get(k, 0) - slope).abs() <= 1e-12 * slope.max(1e-300) + 1e-24);
            // Moving out radially by Δ lowers the surrogate by α A (d² − d_r²).
            let w = s.users()[k].position;
            let (dx, dy) = (anchor[0] - w[0], anchor[1] - w[1]);
            let r = (dx * dx + dy * dy).sqrt().max(1.0);
            let q = [anchor[0] + 50.0 * dx / r, anchor[1] + 50.0 * dy / r];
            let drop = surrogate_rate(&c, &allocation, &anchor_t, k, 0)
                - surrogate_rate(&c, &allocation, &Trajectory::new(vec![q]), k, 0);
            let expect = slope * (dist2(q, w) - dist2(anchor, w));
            assert!(
                (drop - expect).abs() <= 1e-10 * expect.abs().max(1e-6),
                "{drop} vs {expect}"
            );
        }
    }
}

#[test]
fn no_power_limit_has_zero_coefficients() {
    let s = single_user(2, [0.0, 0.0], 0.0);
    let (allocation, anchor) = one_slot(&s, [30.0, 40.0], 0.5, 0.0);
    let c = sca_coefficients(&s, &allocation, &anchor).unwrap();
    assert_eq!((c.a.get(0, 0), c.b.get(0, 0)), (0.0, 0.0));
}

fn square_case(theta: f64, slots: usize) -> (Scenario, Allocation, Trajectory) {
    let s = Scenario::new(common::square_users(theta), common::reference_uav(slots)).unwrap();
    let anchor = common::circle([0.0, 0.0], 250.0, slots);
    let allocation = solve_allocation(&s, &anchor, &s.mrrs()).unwrap().allocation;
    (s, allocation, anchor)
}

fn assert_flyable(s: &Scenario, t: &Trajectory) {
    let s_max = s.max_hop();
    for w in t.waypoints.windows(2) {
        assert!(
            dist2(w[0], w[1]) <= s_max * s_max + 1e-9,
            "hop {} > {s_max}",
            dist2(w[0], w[1]).sqrt()
        );
    }
    assert_eq!(t.waypoints.first(), t.waypoints.last());
}

#[test]
fn step_never_regresses_and_respects_motion_limits() {
    for theta in [0.0, 0.3, 0.7] {
        let (s, allocation, anchor) = square_case(theta, 40);
        let step = solve_trajectory_step(&s, &allocation, &s.mrrs(), &anchor).unwrap();
        assert!(step.eta_lb >= step.anchor_eta_lb - 1e-8);
        assert_flyable(&s, &step.trajectory);
        let truth = served_eta(&s, &step.trajectory, &allocation, &s.mrrs());
        assert!(truth >= step.eta_lb - 1e-12, "true {truth} below bound {}", step.eta_lb);
    }
}

#[test]
fn single_user_hover_is_a_fixed_point() {
    let s = single_user(8, [120.0, -40.0], 0.6);
    let allocation = Allocation::uniform(1, 8, s.p_max());
    let anchor = Trajectory::hover([120.0, -40.0], 8);
    let res = sca_loop(&s, &allocation, &s.mrrs(), &anchor).unwrap();
    assert_eq!(res.iterations, 1);
    let expected = instantaneous_rate(1.0, s.p_max(), s.gain_over_noise_at([120.0, -40.0], 0));
    assert!((res.eta - expected).abs() < 1e-9);
    for q in &res.trajectory.waypoints {
        assert!(dist2(*q, [120.0, -40.0]).sqrt() < 1e-3);
    }
}

#[test]
fn full_ratio_with_equal_split_collapses_to_the_centroid() {
    // Every slot's binding user is the farthest one, so each waypoint moves
    // to the point minimizing the largest distance: the centroid.
    let s = Scenario::new(common::square_users(1.0), common::reference_uav(40)).unwrap();
    let anchor = common::circle([0.0, 0.0], 250.0, 40);
    let allocation = Allocation::uniform(4, 40, s.p_max());
    let res = sca_loop(&s, &allocation, &s.mrrs(), &anchor).unwrap();
    assert!(
        res.trajectory.spread() <= 0.01 * anchor.spread(),
        "{} vs {}",
        res.trajectory.spread(),
        anchor.spread()
    );
}

#[test]
fn full_ratio_with_tight_allocation_stalls() {
    // With every rate pinned at η no waypoint can approach all users at
    // once: the anchor is stationary for the surrogate problem.
    let (s, allocation, anchor) = square_case(1.0, 40);
    let step = solve_trajectory_step(&s, &allocation, &s.mrrs(), &anchor).unwrap();
    assert!((step.eta_lb - step.anchor_eta_lb).abs() <= 1e-6 * step.anchor_eta_lb);
}

#[test]
fn sca_loop_is_monotone_and_bounded_by_the_truth() {
    for theta in [0.0, 0.5] {
        let (s, allocation, anchor) = square_case(theta, 60);
        let res = sca_loop(&s, &allocation, &s.mrrs(), &anchor).unwrap();
        for w in res.eta_lb_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "history {:?}", res.eta_lb_history);
        }
        assert!(res.eta >= *res.eta_lb_history.last().unwrap() - 1e-12);
        assert!(res.iterations <= 30);
        assert_flyable(&s, &res.trajectory);
    }
}

#[test]
fn single_user_two_slots_matches_grid_oracle() {
    let s = single_user(2, [100.0, 100.0], 0.5);
    let allocation = Allocation::uniform(1, 2, s.p_max());
    let anchor = Trajectory::hover([60.0, 80.0], 2);
    let res = sca_loop(&s, &allocation, &s.mrrs(), &anchor).unwrap();
    let oracle = oracle_trajectory(&s, &allocation, &s.mrrs(), 10.0).unwrap();
    assert!((oracle.value - res.eta).abs() < 1e-6, "{} vs {}", oracle.value, res.eta);
    for q in &res.trajectory.waypoints {
        assert!(dist2(*q, [100.0, 100.0]).sqrt() < 1e-2);
    }
}

#[test]
fn grid_oracle_dominates_sca_on_small_instances() {
    // Two users 300 m apart; every waypoint on the grid is reachable in one
    // hop, so the grid optimum approaches the global one as the step shrinks.
    let users = vec![
        UserSpec {
            position: [0.0, 0.0],
            mrr: 0.4,
        },
        UserSpec {
            position: [300.0, 0.0],
            mrr: 0.4,
        },
    ];
    let mut uav = common::reference_uav(3);
    uav.period = 30.0;
    let s = Scenario::new(users, uav).unwrap();
    let anchor = Trajectory::new(vec![[150.0, 0.0], [150.0, 0.0], [150.0, 0.0]]);
    let allocation = solve_allocation(&s, &anchor, &s.mrrs()).unwrap().allocation;
    let res = sca_loop(&s, &allocation, &s.mrrs(), &anchor).unwrap();
    let fine = oracle_trajectory(&s, &allocation, &s.mrrs(), 5.0).unwrap();
    let coarse = oracle_trajectory(&s, &allocation, &s.mrrs(), 10.0).unwrap();
    assert!(fine.value >= coarse.value - 1e-12);
    // Lipschitz slack of the rates over half a grid diagonal.
    let slack = 2.5 * std::f64::consts::SQRT_2 * lipschitz(&s, &allocation);
    assert!(
        fine.value >= res.eta - 1e-6 - slack,
        "oracle {} vs SCA {}",
        fine.value,
        res.eta
    );
}

/// Upper bound on `|∂r/∂q|` over all pairs: `2 d α γ log2(e)/(u (u + γ))`
/// is at most `γ α log2(e) · max_d 2d/(H² + d²)²`, attained at
/// `d = H/√3`.
fn lipschitz(s: &Scenario, allocation: &Allocation) -> f64 {
    let h = s.altitude();
    let peak = 2.0 * (h / 3f64.sqrt()) / (4.0 * h * h / 3.0).powi(2);
    let mut worst: f64 = 0.0;
    for k in 0..allocation.users() {
        for n in 0..allocation.slots() {
            let p = allocation.power.get(k, n);
            worst = worst.max(p * s.gamma0() * std::f64::consts::LOG2_E * peak);
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn surrogate_never_exceeds_rate(
        ax in -2000.0..2000.0f64, ay in -2000.0..2000.0f64,
        qx in -2000.0..2000.0f64, qy in -2000.0..2000.0f64,
        alpha in 1e-4..1.0f64, power in 0.0..0.1f64,
    ) {
        let s = single_user(2, [0.0, 0.0], 0.0);
        let (allocation, anchor) = one_slot(&s, [ax, ay], alpha, power);
        let c = sca_coefficients(&s, &allocation, &anchor).unwrap();
        let bound = surrogate_rate(&c, &allocation, &Trajectory::new(vec![[qx, qy]]), 0, 0);
        prop_assert!(bound <= direct_rate(&s, [qx, qy], 0, alpha, power) + 1e-9);
    }
}
