use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::predictor::Sample;
use crate::scenario::{Horizon, Scenario};

/// Perturbations of observed points: interpolation drop-out, swaps with the
/// successor and isotropic Gaussian noise (standard deviation `sigma` per axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub p_drop: f64,
    pub p_swap: f64,
    pub sigma: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { p_drop: 0.1, p_swap: 0.05, sigma: 0.2 }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self { p_drop: 0.0, p_swap: 0.0, sigma: 0.0 }
    }

    pub fn is_noop(&self) -> bool {
        self.p_drop == 0.0 && self.p_swap == 0.0 && self.sigma == 0.0
    }
}

/// Drop and swap leave the first and last point in place; noise touches
/// every point.
pub fn augment_track(track: &mut [Point], policy: &AugmentPolicy, rng: &mut ChaCha8Rng) {
    let n = track.len();
    if policy.is_noop() || n == 0 {
        return;
    }
    for i in 1..n.saturating_sub(1) {
        if rng.random::<f64>() < policy.p_drop {
            track[i] = [0.5 * (track[i - 1][0] + track[i + 1][0]), 0.5 * (track[i - 1][1] + track[i + 1][1])];
        }
    }
    for i in 1..n.saturating_sub(2) {
        if rng.random::<f64>() < policy.p_swap {
            track.swap(i, i + 1);
        }
    }
    if policy.sigma > 0.0 {
        let noise = Normal::new(0.0, policy.sigma).expect("positive sigma");
        for p in track.iter_mut() {
            p[0] += noise.sample(rng);
            p[1] += noise.sample(rng);
        }
    }
}

/// Perturbs the observed frames of every agent; future frames are untouched.
pub fn augment(scenario: &Scenario, horizon: &Horizon, policy: &AugmentPolicy, seed: u64) -> Scenario {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scenario.clone();
    for a in &mut out.agents {
        let obs = horizon.obs_len.min(a.positions.len());
        augment_track(&mut a.positions[..obs], policy, &mut rng);
    }
    out
}

/// Training-time variant on already rotated model inputs.
pub fn augment_sample(sample: &Sample, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Sample {
    let mut out = sample.clone();
    for track in &mut out.agents {
        augment_track(track, policy, rng);
    }
    out
}
