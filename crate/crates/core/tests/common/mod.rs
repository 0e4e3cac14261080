#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uav_ofdma::{Scenario, Trajectory, UavParams, UserSpec};

pub fn reference_uav(slots: usize) -> UavParams {
    UavParams {
        altitude: 500.0,
        v_max: 50.0,
        p_max: 0.1,
        period: 270.0,
        slots,
        bandwidth: 10e6,
        noise_psd_dbm_hz: -169.0,
        ref_gain_db: -50.0,
    }
}

pub fn square_users(mrr: f64) -> Vec<UserSpec> {
    [[400.0, 400.0], [-400.0, 400.0], [-400.0, -400.0], [400.0, -400.0]]
        .into_iter()
        .map(|position| UserSpec { position, mrr })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random fixed-trajectory allocation instance: users and waypoints are
/// uniform in a 1200 m square (the path closes on itself but ignores the
/// speed limit), ratios uniform in [0, 1].
pub struct Instance {
    pub scenario: Scenario,
    pub trajectory: Trajectory,
    pub mrrs: Vec<f64>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, users: usize, slots: usize) -> Instance {
    let users: Vec<UserSpec> = (0..users)
        .map(|_| UserSpec {
            position: [rng.random_range(-600.0..600.0), rng.random_range(-600.0..600.0)],
            mrr: rng.random_range(0.0..1.0),
        })
        .collect();
    let mrrs = users.iter().map(|u| u.mrr).collect();
    let scenario = Scenario::new(users, reference_uav(slots)).unwrap();
    let mut waypoints: Vec<[f64; 2]> = (0..slots.max(2) - 1)
        .map(|_| [rng.random_range(-600.0..600.0), rng.random_range(-600.0..600.0)])
        .collect();
    waypoints.push(waypoints[0]);
    waypoints.truncate(slots);
    let trajectory = Trajectory::new(waypoints);
    Instance {
        scenario,
        trajectory,
        mrrs,
    }
}

/// Closed circle of `slots` waypoints (first and last coincide).
pub fn circle(center: [f64; 2], radius: f64, slots: usize) -> Trajectory {
    let step = 2.0 * std::f64::consts::PI / (slots - 1) as f64;
    Trajectory::new(
        (0..slots)
            .map(|n| {
                let phi = step * n as f64;
                [center[0] + radius * phi.cos(), center[1] + radius * phi.sin()]
            })
            .collect(),
    )
}
