//! Kinematic state of the target from its noisy observed track.
//!
//! The observed positions are optionally replaced by a per-axis quadratic
//! least-squares fit, differenced into velocities and accelerations, reduced to
//! scalar speed / signed acceleration per frame and summarized with an
//! exponential forgetting factor that favours the most recent frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};

/// Lower bound on the travelled distance used to truncate centerlines, meters.
pub const MIN_TRAVEL: f64 = 25.0;

/// Default forgetting factor.
pub const DEFAULT_LAMBDA: f64 = 0.9;

/// Per-axis quadratic `c0 + c1 t + c2 t^2` fitted to a track.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly2Fit {
    pub coeffs_x: [f64; 3],
    pub coeffs_y: [f64; 3],
    pub residual_rms: f64,
}

impl Poly2Fit {
    pub fn eval(&self, t: f64) -> Point {
        let p = |c: &[f64; 3]| c[0] + t * (c[1] + t * c[2]);
        [p(&self.coeffs_x), p(&self.coeffs_y)]
    }
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve3(mut a: [[f64; 3]; 3], mut b: [[f64; 2]; 3]) -> Option<[[f64; 2]; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            for k in 0..2 {
                b[row][k] -= f * b[col][k];
            }
        }
    }
    let mut x = [[0.0; 2]; 3];
    for row in (0..3).rev() {
        for k in 0..2 {
            let tail: f64 = (row + 1..3).map(|j| a[row][j] * x[j][k]).sum();
            x[row][k] = (b[row][k] - tail) / a[row][row];
        }
    }
    Some(x)
}

/// Least-squares quadratic per axis over `timestamps` (seconds).
pub fn fit_poly2(track: &[Point], timestamps: &[f64]) -> Result<Poly2Fit> {
    if track.len() != timestamps.len() {
        return Err(Error::ShapeMismatch(format!("{} positions vs {} timestamps", track.len(), timestamps.len())));
    }
    if track.len() < 3 || timestamps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DegenerateDesign);
    }
    // Work in a centred, scaled time basis for conditioning, then map back.
    let n = timestamps.len() as f64;
    let mean = timestamps.iter().sum::<f64>() / n;
    let span = timestamps.iter().map(|t| (t - mean).abs()).fold(0.0, f64::max);
    let mut gram = [[0.0; 3]; 3];
    let mut rhs = [[0.0; 2]; 3];
    for (p, t) in track.iter().zip(timestamps) {
        let u = (t - mean) / span;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                gram[i][j] += basis[i] * basis[j];
            }
            rhs[i][0] += basis[i] * p[0];
            rhs[i][1] += basis[i] * p[1];
        }
    }
    let c = solve3(gram, rhs).ok_or(Error::DegenerateDesign)?;
    let unscale = |k: usize| {
        let (c0, c1, c2) = (c[0][k], c[1][k] / span, c[2][k] / (span * span));
        [c0 - c1 * mean + c2 * mean * mean, c1 - 2.0 * c2 * mean, c2]
    };
    let mut fit = Poly2Fit { coeffs_x: unscale(0), coeffs_y: unscale(1), residual_rms: 0.0 };
    let sq: f64 = track
        .iter()
        .zip(timestamps)
        .map(|(p, &t)| {
            let q = fit.eval(t);
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
        })
        .sum();
    fit.residual_rms = (sq / n).sqrt();
    Ok(fit)
}

/// Backward differences: `V_i = (X_i - X_{i-1}) / dt`, `A_i = (V_i - V_{i-1}) / dt`.
pub fn finite_difference_rates(filtered: &[Point], dt: f64) -> Result<(Vec<Point>, Vec<Point>)> {
    if filtered.len() < 3 {
        return Err(Error::TooShort { got: filtered.len(), need: 3 });
    }
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("time step {dt} must be positive")));
    }
    let rate = |w: &[Point]| [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt];
    let velocities: Vec<Point> = filtered.windows(2).map(rate).collect();
    let accels = velocities.windows(2).map(rate).collect();
    Ok((velocities, accels))
}

/// How the forgetting-factor weights are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Weighted average: weights divided by their sum.
    #[default]
    Normalized,
    /// Plain weighted sum.
    RawSum,
}

/// `sum_t lambda^(T-t) psi_t / sum_t lambda^(T-t)`.
pub fn smooth_forgetting(values: &[f64], lambda: f64) -> Result<f64> {
    smooth_forgetting_with(values, lambda, Smoothing::Normalized)
}

pub fn smooth_forgetting_with(values: &[f64], lambda: f64, mode: Smoothing) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    let mut weight = 1.0;
    let mut total = 0.0;
    let mut norm = 0.0;
    for v in values.iter().rev() {
        total += weight * v;
        norm += weight;
        weight *= lambda;
    }
    Ok(match mode {
        Smoothing::Normalized => total / norm,
        Smoothing::RawSum => total,
    })
}

/// Smoothed kinematics of the target at its last observed frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    /// m/s, non-negative.
    pub speed: f64,
    /// m/s^2, positive when speeding up.
    pub accel: f64,
    pub lambda: f64,
}

impl KinematicState {
    pub fn stopped() -> Self {
        Self { speed: 0.0, accel: 0.0, lambda: DEFAULT_LAMBDA }
    }

    /// Constant-velocity view of the same state.
    pub fn without_accel(self) -> Self {
        Self { accel: 0.0, ..self }
    }
}

/// `v t + a t^2 / 2`, floored at [`MIN_TRAVEL`].
pub fn ctra_distance(state: &KinematicState, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeHorizon(t));
    }
    Ok((state.speed * t + 0.5 * state.accel * t * t).max(MIN_TRAVEL))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub lambda: f64,
    /// Replace the raw track by its quadratic fit before differencing.
    pub filter: bool,
    pub smoothing: Smoothing,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, filter: true, smoothing: Smoothing::Normalized }
    }
}

pub fn estimate_state(track: &[Point], dt: f64, lambda: f64) -> Result<KinematicState> {
    estimate_state_with(track, dt, &EstimateOptions { lambda, ..Default::default() })
}

pub fn estimate_state_with(track: &[Point], dt: f64, opts: &EstimateOptions) -> Result<KinematicState> {
    if track.len() < 4 {
        return Err(Error::TooShort { got: track.len(), need: 4 });
    }
    let positions: Vec<Point> = if opts.filter {
        let times: Vec<f64> = (0..track.len()).map(|i| i as f64 * dt).collect();
        let fit = fit_poly2(track, &times)?;
        times.iter().map(|&t| fit.eval(t)).collect()
    } else {
        track.to_vec()
    };
    let (vel, acc) = finite_difference_rates(&positions, dt)?;
    let speeds: Vec<f64> = vel.iter().map(|&v| geometry::norm(v)).collect();
    let accels: Vec<f64> = acc
        .iter()
        .zip(vel.windows(2))
        .map(|(&a, w)| {
            let dir = geometry::add(w[0], w[1]);
            let len = geometry::norm(dir);
            if len > 1e-9 {
                geometry::dot(a, dir) / len
            } else {
                0.0
            }
        })
        .collect();
    let speed = smooth_forgetting_with(&speeds, opts.lambda, opts.smoothing)?.max(0.0);
    let accel = smooth_forgetting_with(&accels, opts.lambda, opts.smoothing)?;
    Ok(KinematicState { speed, accel, lambda: opts.lambda })
}

/// Preprocessing variants compared when building priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMethod {
    /// Constant velocity from raw differences.
    CtrvRaw,
    /// Constant velocity from the least-squares filtered track.
    CtrvLs,
    /// Constant acceleration from raw differences.
    CtraRaw,
    /// Constant acceleration from the least-squares filtered track.
    #[default]
    CtraLs,
}

impl PreprocessMethod {
    pub const ALL: [PreprocessMethod; 4] = [Self::CtrvRaw, Self::CtrvLs, Self::CtraRaw, Self::CtraLs];

    pub fn estimate(self, track: &[Point], dt: f64, lambda: f64) -> Result<KinematicState> {
        let filter = matches!(self, Self::CtrvLs | Self::CtraLs);
        let state = estimate_state_with(track, dt, &EstimateOptions { lambda, filter, ..Default::default() })?;
        Ok(match self {
            Self::CtrvRaw | Self::CtrvLs => state.without_accel(),
            Self::CtraRaw | Self::CtraLs => state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const DT: f64 = 0.1;

    fn times(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * DT).collect()
    }

    /// Straight-line solve of the raw-basis normal equations with an
    /// explicit adjugate inverse.
    #[allow(clippy::needless_range_loop)]
    fn normal_equation_oracle(values: &[f64], t: &[f64]) -> [f64; 3] {
        let mut g = [[0.0; 3]; 3];
        let mut r = [0.0; 3];
        for (v, &ti) in values.iter().zip(t) {
            let b = [1.0, ti, ti * ti];
            for i in 0..3 {
                r[i] += b[i] * v;
                for j in 0..3 {
                    g[i][j] += b[i] * b[j];
                }
            }
        }
        let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
            + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
        let mut inv = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                inv[i][j] = (g[r0][c0] * g[r1][c1] - g[r0][c1] * g[r1][c0]) / det;
            }
        }
        [0, 1, 2].map(|i| (0..3).map(|j| inv[i][j] * r[j]).sum())
    }

    #[test]
    fn exact_quadratic_is_recovered() {
        let t = times(10);
        let track: Vec<Point> = t.iter().map(|&s| [4.0 - s, 1.0 + 2.0 * s + 3.0 * s * s]).collect();
        let fit = fit_poly2(&track, &t).unwrap();
        for (a, b) in fit.coeffs_y.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in fit.coeffs_x.iter().zip([4.0, -1.0, 0.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn two_points_are_degenerate() {
        let err = fit_poly2(&[[0.0, 0.0], [1.0, 1.0]], &[0.0, 0.1]).unwrap_err();
        assert!(matches!(err, Error::DegenerateDesign));
    }

    #[test]
    fn noisy_fit_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = times(20);
        let track: Vec<Point> = t.iter().map(|&s| [rng.random_range(-1.0..1.0) + 3.0 * s, 5.0 * s * s - s + rng.random::<f64>()]).collect();
        let fit = fit_poly2(&track, &t).unwrap();
        let xs: Vec<f64> = track.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = track.iter().map(|p| p[1]).collect();
        let ox = normal_equation_oracle(&xs, &t);
        let oy = normal_equation_oracle(&ys, &t);
        for k in 0..3 {
            assert!((fit.coeffs_x[k] - ox[k]).abs() < 1e-8 * (1.0 + ox[k].abs()));
            assert!((fit.coeffs_y[k] - oy[k]).abs() < 1e-8 * (1.0 + oy[k].abs()));
        }
        // residual is orthogonal to the design basis
        for axis in 0..2 {
            for power in 0..3 {
                let dotp: f64 = track.iter().zip(&t).map(|(p, &s)| (p[axis] - fit.eval(s)[axis]) * s.powi(power)).sum();
                let scale: f64 = track.iter().zip(&t).map(|(p, &s)| (p[axis] * s.powi(power)).abs()).sum();
                assert!(dotp.abs() < 1e-8 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn fit_reduces_error_against_generating_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let t = times(20);
        for _ in 0..50 {
            let truth: Vec<Point> = t.iter().map(|&s| [0.2 * s * s, 8.0 * s + 0.5 * s * s]).collect();
            let raw: Vec<Point> = truth.iter().map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]).collect();
            let fit = fit_poly2(&raw, &t).unwrap();
            let rms = |pts: &[Point]| (pts.iter().zip(&truth).map(|(a, b)| geometry::dist(*a, *b).powi(2)).sum::<f64>() / 20.0).sqrt();
            let fitted: Vec<Point> = t.iter().map(|&s| fit.eval(s)).collect();
            assert!(rms(&fitted) <= rms(&raw));
        }
    }

    #[test]
    fn linear_motion_rates() {
        let track: Vec<Point> = times(20).iter().map(|&s| [10.0 * s, 0.0]).collect();
        let (v, a) = finite_difference_rates(&track, DT).unwrap();
        assert_eq!(v.len(), 19);
        assert_eq!(a.len(), 18);
        assert!(v.iter().all(|p| (p[0] - 10.0).abs() < 1e-9 && p[1] == 0.0));
        assert!(a.iter().all(|p| p[0].abs() < 1e-8 && p[1] == 0.0));
    }

    #[test]
    fn quadratic_motion_has_constant_accel() {
        let track: Vec<Point> = times(20).iter().map(|&s| [s * s, 0.0]).collect();
        let (_, a) = finite_difference_rates(&track, DT).unwrap();
        assert!(a.iter().all(|p| (p[0] - 2.0).abs() < 1e-9));
    }

    #[test]
    fn rates_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let track: Vec<Point> = (0..20).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
        let (v, a) = finite_difference_rates(&track, 0.1).unwrap();
        let mut ov = Vec::new();
        for i in 1..track.len() {
            ov.push([(track[i][0] - track[i - 1][0]) / 0.1, (track[i][1] - track[i - 1][1]) / 0.1]);
        }
        let mut oa = Vec::new();
        for i in 1..ov.len() {
            oa.push([(ov[i][0] - ov[i - 1][0]) / 0.1, (ov[i][1] - ov[i - 1][1]) / 0.1]);
        }
        assert_eq!(v, ov);
        assert_eq!(a, oa);
        assert!(finite_difference_rates(&track[..2], 0.1).is_err());
    }

    #[test]
    fn smoothing_closed_forms() {
        assert_eq!(smooth_forgetting(&[5.0, 5.0, 5.0], 0.3).unwrap(), 5.0);
        let v = smooth_forgetting(&[0.0, 10.0], 0.5).unwrap();
        assert!((v - 20.0 / 3.0).abs() < 1e-12);
        assert!(matches!(smooth_forgetting(&[], 0.5), Err(Error::EmptySequence)));
        assert!(matches!(smooth_forgetting(&[1.0], 1.0), Err(Error::LambdaOutOfRange(_))));
        assert!(matches!(smooth_forgetting(&[1.0], 0.0), Err(Error::LambdaOutOfRange(_))));
        let raw = smooth_forgetting_with(&[0.0, 10.0], 0.5, Smoothing::RawSum).unwrap();
        assert_eq!(raw, 10.0);
    }

    #[test]
    fn smoothing_matches_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let vals: Vec<f64> = (0..19).map(|_| rng.random_range(-3.0..12.0)).collect();
        let big_t = vals.len() - 1;
        let num: f64 = (0..=big_t).map(|t| 0.9f64.powi((big_t - t) as i32) * vals[t]).sum();
        let den: f64 = (0..=big_t).map(|t| 0.9f64.powi((big_t - t) as i32)).sum();
        let got = smooth_forgetting(&vals, 0.9).unwrap();
        assert!((got - num / den).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn smoothing_is_bounded_and_shift_equivariant(
            vals in prop::collection::vec(-100.0f64..100.0, 1..40),
            lambda in 0.01f64..0.99,
            shift in -50.0f64..50.0,
        ) {
            let s = smooth_forgetting(&vals, lambda).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
            let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let s2 = smooth_forgetting(&shifted, lambda).unwrap();
            prop_assert!((s2 - s - shift).abs() < 1e-9);
        }

        #[test]
        fn ctra_without_accel_is_constant_velocity(v in 0.0f64..40.0, t in 0.0f64..5.0) {
            let state = KinematicState { speed: v, accel: 0.0, lambda: 0.9 };
            prop_assert_eq!(ctra_distance(&state, t).unwrap(), (v * t).max(MIN_TRAVEL));
        }

        #[test]
        fn ctra_is_monotone_for_non_negative_accel(v in 0.0f64..30.0, a in 0.0f64..4.0, t in 0.0f64..5.0, dt in 0.0f64..1.0) {
            let state = KinematicState { speed: v, accel: a, lambda: 0.9 };
            prop_assert!(ctra_distance(&state, t + dt).unwrap() >= ctra_distance(&state, t).unwrap());
        }
    }

    #[test]
    fn ctra_distance_examples() {
        let s = |v, a| KinematicState { speed: v, accel: a, lambda: 0.9 };
        assert_eq!(ctra_distance(&s(10.0, 0.0), 3.0).unwrap(), 30.0);
        assert_eq!(ctra_distance(&s(0.0, 0.0), 3.0).unwrap(), 25.0);
        assert_eq!(ctra_distance(&s(5.0, 2.0), 3.0).unwrap(), 25.0);
        assert!(matches!(ctra_distance(&s(5.0, 2.0), -1.0), Err(Error::NegativeHorizon(_))));
    }

    fn ctra_track(v0: f64, a: f64, n: usize) -> Vec<Point> {
        times(n).iter().map(|&s| [0.0, v0 * s + 0.5 * a * s * s]).collect()
    }

    #[test]
    fn constant_velocity_state() {
        let track: Vec<Point> = times(20).iter().map(|&s| [8.0 * s * 0.6, 8.0 * s * 0.8]).collect();
        let st = estimate_state(&track, DT, 0.9).unwrap();
        assert!((st.speed - 8.0).abs() < 1e-6);
        assert!(st.accel.abs() < 1e-6);
        assert!(matches!(estimate_state(&track[..3], DT, 0.9), Err(Error::TooShort { .. })));
    }

    #[test]
    fn constant_acceleration_state_matches_lag_oracle() {
        // Frame velocities are exact midpoint speeds v0 + a (t_i - dt/2), so the
        // smoothed speed is their forgetting-weighted average.
        let (v0, a) = (5.0, 1.0);
        let track = ctra_track(v0, a, 20);
        let st = estimate_state(&track, DT, 0.9).unwrap();
        let speeds: Vec<f64> = (1..20).map(|i| v0 + a * (i as f64 * DT - DT / 2.0)).collect();
        let w: Vec<f64> = (0..19).map(|i| 0.9f64.powi(18 - i)).collect();
        let expect = speeds.iter().zip(&w).map(|(s, w)| s * w).sum::<f64>() / w.iter().sum::<f64>();
        assert!((st.speed - expect).abs() < 1e-9, "{} vs {expect}", st.speed);
        assert!((st.accel - a).abs() < 1e-6);
        // a short memory tracks the last-frame speed v0 + 1.9 a within 2 %
        let quick = estimate_state(&track, DT, 0.4).unwrap();
        let truth = v0 + a * 1.9;
        assert!((quick.speed - truth).abs() / truth < 0.02);
        assert!((quick.accel - a).abs() / a < 0.05);
    }

    #[test]
    fn filtering_beats_raw_rates_on_noisy_tracks() {
        let noise = Normal::new(0.0, 0.3).unwrap();
        let horizon = 3.0;
        let mut wins = 0;
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v0 = rng.random_range(8.0..16.0);
            let a = rng.random_range(-1.0..2.0);
            let track: Vec<Point> =
                ctra_track(v0, a, 20).into_iter().map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]).collect();
            let v_last = v0 + 1.9 * a;
            let truth = v_last * horizon + 0.5 * a * horizon * horizon;
            let travel = |s: KinematicState| s.speed * horizon + 0.5 * s.accel * horizon * horizon;
            let ls = estimate_state(&track, DT, 0.9).unwrap();
            let raw = estimate_state_with(&track, DT, &EstimateOptions { filter: false, ..Default::default() }).unwrap();
            if (travel(ls) - truth).abs() < (travel(raw) - truth).abs() {
                wins += 1;
            }
        }
        assert!(wins >= 900, "filtered estimate better on only {wins}/1000");
    }

    #[test]
    fn state_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let track: Vec<Point> = (0..20).map(|i| [rng.random_range(-0.3..0.3), i as f64 + rng.random_range(-0.3..0.3)]).collect();
            let frame = RigidTransform::from_angle(rng.random_range(-3.0..3.0), [rng.random_range(-50.0..50.0), 7.0]);
            let moved: Vec<Point> = track.iter().map(|&p| frame.apply(p)).collect();
            for filter in [true, false] {
                let opts = EstimateOptions { filter, ..Default::default() };
                let a = estimate_state_with(&track, DT, &opts).unwrap();
                let b = estimate_state_with(&moved, DT, &opts).unwrap();
                assert!((a.speed - b.speed).abs() < 1e-9);
                assert!((a.accel - b.accel).abs() < 1e-9);
            }
        }
    }
}
