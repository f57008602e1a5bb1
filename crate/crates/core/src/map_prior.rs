//! Physical context for the decoder: a few kinematically truncated lane
//! centerlines plus a cloud of perturbed points around them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::kinematics::{ctra_distance, KinematicState};
use crate::scenario::{Horizon, LaneGraph, Scenario, DT};

/// Number of centerlines per prior.
pub const NUM_CENTERLINES: usize = 3;
/// Plausible-area points per prior.
pub const AREA_POINTS: usize = 200;
/// Per-axis standard deviation of plausible-area offsets, meters.
pub const AREA_SIGMA: f64 = 0.2;
/// Lanes farther than this from the last observation are ignored, meters.
pub const MAX_LANE_DISTANCE: f64 = 50.0;
/// Extra length requested beyond the predicted travel when chaining lanes.
pub const SEARCH_SLACK: f64 = 10.0;
/// Seed lanes considered by the candidate search.
pub const SEED_LANES: usize = 4;
/// Bound on enumerated successor chains per seed lane.
const MAX_PATHS_PER_SEED: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    pub waypoints: Vec<Point>,
    pub source_lane_ids: Vec<String>,
}

impl Centerline {
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| geometry::dist(w[0], w[1])).sum()
    }
}

/// Nearest waypoint: ties go to the lower index.
fn nearest_waypoint(points: &[Point], p: Point) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, w) in points.iter().enumerate() {
        let d = geometry::dist(*w, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Unit direction of travel over the last few observed steps.
fn observed_heading(obs: &[Point]) -> Option<Point> {
    let n = obs.len();
    let back = (n - 1).min(4);
    let d = geometry::sub(obs[n - 1], obs[n - 1 - back]);
    let len = geometry::norm(d);
    (len > 1e-6).then(|| geometry::scale(d, 1.0 / len))
}

fn lane_direction(points: &[Point], i: usize) -> Point {
    let (a, b) = if i + 1 < points.len() { (points[i], points[i + 1]) } else { (points[i - 1], points[i]) };
    let d = geometry::sub(b, a);
    geometry::scale(d, 1.0 / geometry::norm(d))
}

/// Search parameters for [`candidate_centerlines_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSearch {
    pub max_candidates: usize,
    pub seed_lanes: usize,
    /// Chains stop growing once their length ahead of the seed point reaches this.
    pub min_length: f64,
    pub max_distance: f64,
}

impl Default for CandidateSearch {
    fn default() -> Self {
        Self {
            max_candidates: NUM_CENTERLINES,
            seed_lanes: SEED_LANES,
            min_length: crate::kinematics::MIN_TRAVEL + SEARCH_SLACK,
            max_distance: MAX_LANE_DISTANCE,
        }
    }
}

/// Candidate with its ranking score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCenterline {
    pub centerline: Centerline,
    pub score: f64,
}

/// Ranks seed lanes by proximity and heading alignment, then extends them
/// along successors.
pub fn candidate_centerlines(graph: &LaneGraph, target_obs: &[Point], max_candidates: usize) -> Result<Vec<Centerline>> {
    let search = CandidateSearch { max_candidates, ..Default::default() };
    Ok(candidate_centerlines_with(graph, target_obs, &search)?.into_iter().map(|c| c.centerline).collect())
}

/// `-distance - 2 (1 - cos(heading gap))` of the seed point on a lane.
pub fn seed_score(distance: f64, lane_dir: Point, heading: Option<Point>) -> f64 {
    let cos = heading.map_or(1.0, |h| geometry::dot(h, lane_dir));
    -distance - 2.0 * (1.0 - cos)
}

pub fn candidate_centerlines_with(graph: &LaneGraph, target_obs: &[Point], search: &CandidateSearch) -> Result<Vec<ScoredCenterline>> {
    if target_obs.len() < 2 {
        return Err(Error::TooShort { got: target_obs.len(), need: 2 });
    }
    if graph.is_empty() {
        return Err(Error::NoLaneInRange(f64::INFINITY));
    }
    let last = target_obs[target_obs.len() - 1];
    let heading = observed_heading(target_obs);

    // (distance, waypoint index, lane id, lane position)
    let mut seeds: Vec<(f64, usize, &str, usize)> = graph
        .lanes()
        .iter()
        .enumerate()
        .map(|(pos, lane)| {
            let (i, d) = nearest_waypoint(&lane.waypoints, last);
            (d, i, lane.lane_id.as_str(), pos)
        })
        .collect();
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)));
    if seeds[0].0 > search.max_distance {
        return Err(Error::NoLaneInRange(seeds[0].0));
    }
    seeds.truncate(search.seed_lanes);

    let mut paths: Vec<(f64, Vec<String>)> = Vec::new();
    for &(dist, idx, _, pos) in seeds.iter().filter(|s| s.0 <= search.max_distance) {
        let lane = &graph.lanes()[pos];
        let score = seed_score(dist, lane_direction(&lane.waypoints, idx), heading);
        let ahead = geometry::cumulative_length(&lane.waypoints[idx..]).last().copied().unwrap_or(0.0);
        let mut found = Vec::new();
        extend(graph, vec![lane.lane_id.clone()], ahead, search.min_length, &mut found);
        paths.extend(found.into_iter().map(|p| (score, p)));
    }
    paths.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    let mut kept: Vec<(f64, Vec<String>)> = Vec::new();
    for (score, path) in paths {
        if kept.len() == search.max_candidates {
            break;
        }
        if !kept.iter().any(|(_, k)| same_route(k, &path)) {
            kept.push((score, path));
        }
    }
    Ok(kept.into_iter().map(|(score, ids)| ScoredCenterline { centerline: chain(graph, ids), score }).collect())
}

/// Depth-first successor enumeration; a chain stops once long enough, at a
/// dead end, or before revisiting a lane.
fn extend(graph: &LaneGraph, path: Vec<String>, length: f64, min_length: f64, out: &mut Vec<Vec<String>>) {
    if out.len() >= MAX_PATHS_PER_SEED {
        return;
    }
    let lane = graph.get(path.last().expect("non-empty path")).expect("validated graph");
    let next: Vec<&String> = lane.successors.iter().filter(|s| !path.contains(s)).collect();
    if length >= min_length || next.is_empty() {
        out.push(path);
        return;
    }
    for succ in next {
        let succ_len = geometry::cumulative_length(&graph.get(succ).expect("validated graph").waypoints).last().copied().unwrap_or(0.0);
        let mut p = path.clone();
        p.push(succ.clone());
        extend(graph, p, length + succ_len, min_length, out);
    }
}

/// Two chains are one route when, aligned at a shared lane, they agree on
/// every following lane until one of them ends.
fn same_route(a: &[String], b: &[String]) -> bool {
    let agree = |x: &[String], y: &[String]| x.iter().zip(y).all(|(p, q)| p == q);
    if let Some(i) = a.iter().position(|l| *l == b[0]) {
        if agree(&a[i..], b) {
            return true;
        }
    }
    if let Some(j) = b.iter().position(|l| *l == a[0]) {
        if agree(&b[j..], a) {
            return true;
        }
    }
    false
}

/// Concatenates lane waypoints, dropping points repeated across lane joints.
fn chain(graph: &LaneGraph, ids: Vec<String>) -> Centerline {
    let mut waypoints: Vec<Point> = Vec::new();
    for id in &ids {
        for &w in &graph.get(id).expect("validated graph").waypoints {
            if waypoints.last().is_none_or(|&l| geometry::dist(l, w) > 1e-9) {
                waypoints.push(w);
            }
        }
    }
    Centerline { waypoints, source_lane_ids: ids }
}

/// Keeps the part of `c` from the waypoint nearest the last observation up to
/// the first waypoint whose accumulated distance reaches the predicted travel.
pub fn truncate_centerline(c: &Centerline, state: &KinematicState, target_last_obs: Point, horizon: f64) -> Centerline {
    let travel = ctra_distance(state, horizon.max(0.0)).expect("non-negative horizon");
    truncate_to_length(c, target_last_obs, travel)
}

pub fn truncate_to_length(c: &Centerline, target_last_obs: Point, travel: f64) -> Centerline {
    let pts = &c.waypoints;
    // the start never sits on the final waypoint so that two points remain
    let start = nearest_waypoint(pts, target_last_obs).0.min(pts.len() - 2);
    let mut acc = 0.0;
    let mut end = pts.len() - 1;
    for i in start + 1..pts.len() {
        acc += geometry::dist(pts[i - 1], pts[i]);
        if acc >= travel {
            end = i;
            break;
        }
    }
    Centerline { waypoints: pts[start..=end].to_vec(), source_lane_ids: c.source_lane_ids.clone() }
}

/// Natural cubic spline second derivatives for knots `s` and values `y`.
fn spline_moments(s: &[f64], y: &[f64]) -> Vec<f64> {
    let n = s.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let h: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    // Thomas algorithm on the interior equations.
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    let mut upper = vec![0.0; k];
    for i in 0..k {
        diag[i] = 2.0 * (h[i] + h[i + 1]);
        upper[i] = h[i + 1];
        rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
    }
    for i in 1..k {
        let f = h[i] / diag[i - 1];
        diag[i] -= f * upper[i - 1];
        rhs[i] -= f * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

fn spline_eval(s: &[f64], y: &[f64], m: &[f64], t: f64) -> f64 {
    let i = match s.partition_point(|&v| v <= t) {
        0 => 0,
        p => (p - 1).min(s.len() - 2),
    };
    let h = s[i + 1] - s[i];
    let a = (s[i + 1] - t) / h;
    let b = (t - s[i]) / h;
    a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
}

/// `n` points at uniform chord-length parameter; a natural cubic spline per
/// axis for four or more waypoints, linear otherwise.
pub fn resample_cubic(c: &Centerline, n: usize) -> Centerline {
    let pts = &c.waypoints;
    let s = geometry::cumulative_length(pts);
    let total = *s.last().expect("non-empty centerline");
    let targets = (0..n).map(|i| if n == 1 { 0.0 } else { total * i as f64 / (n - 1) as f64 });
    let mut out: Vec<Point> = if pts.len() >= 4 {
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        let (mx, my) = (spline_moments(&s, &xs), spline_moments(&s, &ys));
        targets.map(|t| [spline_eval(&s, &xs, &mx, t), spline_eval(&s, &ys, &my, t)]).collect()
    } else {
        targets
            .map(|t| {
                let i = s.partition_point(|&v| v <= t).clamp(1, s.len() - 1);
                geometry::lerp(pts[i - 1], pts[i], (t - s[i - 1]) / (s[i] - s[i - 1]))
            })
            .collect()
    };
    if n >= 2 {
        out[0] = pts[0];
        out[n - 1] = pts[pts.len() - 1];
    }
    Centerline { waypoints: out, source_lane_ids: c.source_lane_ids.clone() }
}

/// `r` points, each a uniformly chosen point of a uniformly chosen centerline
/// plus an isotropic Gaussian offset. Offsets longer than `3 sigma` are redrawn.
pub fn sample_plausible_area(centerlines: &[Vec<Point>], r: usize, sigma: f64, seed: u64) -> Result<Vec<Point>> {
    let valid: Vec<&Vec<Point>> = centerlines.iter().filter(|c| !c.is_empty()).collect();
    if valid.is_empty() {
        return Err(Error::NoValidCenterline);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = Vec::with_capacity(r);
    for _ in 0..r {
        let line = valid[rng.random_range(0..valid.len())];
        let p = line[rng.random_range(0..line.len())];
        let offset = loop {
            let o = [normal.sample(&mut rng), normal.sample(&mut rng)];
            if geometry::norm(o) <= 3.0 * sigma {
                break o;
            }
        };
        out.push(geometry::add(p, offset));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub num_centerlines: usize,
    pub area_points: usize,
    pub sigma: f64,
    pub horizon: Horizon,
    pub seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { num_centerlines: NUM_CENTERLINES, area_points: AREA_POINTS, sigma: AREA_SIGMA, horizon: Horizon::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterlinePrior {
    /// `num_centerlines` entries of `pred_len` points; padded entries are zero.
    pub centerlines: Vec<Vec<Point>>,
    pub valid: Vec<bool>,
    pub source_lane_ids: Vec<Vec<String>>,
    pub plausible_points: Vec<Point>,
    pub state: KinematicState,
    pub rng_seed: u64,
}

impl CenterlinePrior {
    /// Prior with every centerline padded and the area collapsed to the origin.
    pub fn padded(cfg: &PriorConfig, state: KinematicState, rng_seed: u64) -> Self {
        let m = cfg.num_centerlines;
        Self {
            centerlines: vec![vec![[0.0; 2]; cfg.horizon.pred_len]; m],
            valid: vec![false; m],
            source_lane_ids: vec![Vec::new(); m],
            plausible_points: vec![[0.0; 2]; cfg.area_points],
            state,
            rng_seed,
        }
    }

    pub fn valid_centerlines(&self) -> impl Iterator<Item = &Vec<Point>> {
        self.centerlines.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(c, _)| c)
    }

    pub fn to_json(&self) -> PriorJson {
        PriorJson {
            centerlines: self.centerlines.clone(),
            valid: self.valid.clone(),
            area: self.plausible_points.clone(),
            state: StateJson { v: self.state.speed, a: self.state.accel },
        }
    }

    pub fn from_json(json: &PriorJson, lambda: f64) -> Self {
        Self {
            centerlines: json.centerlines.clone(),
            valid: json.valid.clone(),
            source_lane_ids: vec![Vec::new(); json.centerlines.len()],
            plausible_points: json.area.clone(),
            state: KinematicState { speed: json.state.v, accel: json.state.a, lambda },
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateJson {
    pub v: f64,
    pub a: f64,
}

/// On-disk prior layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorJson {
    pub centerlines: Vec<Vec<Point>>,
    pub valid: Vec<bool>,
    pub area: Vec<Point>,
    pub state: StateJson,
}

/// FNV-1a, used to give every scenario its own sampling stream.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Candidate search, truncation and resampling per centerline, padding to the
/// configured count and sampling the plausible area. A scenario without a lane
/// in range yields a fully padded prior.
pub fn build_prior(scenario: &Scenario, state: &KinematicState, cfg: &PriorConfig) -> Result<CenterlinePrior> {
    let rng_seed = cfg.seed ^ fnv1a(scenario.scenario_id.as_bytes());
    let obs = scenario.target_observed(&cfg.horizon);
    let seconds = cfg.horizon.pred_len as f64 * DT;
    let travel = ctra_distance(state, seconds)?;
    let search = CandidateSearch { max_candidates: cfg.num_centerlines, min_length: travel + SEARCH_SLACK, ..Default::default() };
    let candidates = match candidate_centerlines_with(&scenario.lane_graph, obs, &search) {
        Ok(c) => c,
        Err(Error::NoLaneInRange(_)) => return Ok(CenterlinePrior::padded(cfg, *state, rng_seed)),
        Err(e) => return Err(e),
    };
    let last = obs[obs.len() - 1];
    let mut prior = CenterlinePrior::padded(cfg, *state, rng_seed);
    for (slot, cand) in candidates.iter().enumerate() {
        let cut = truncate_to_length(&cand.centerline, last, travel);
        let res = resample_cubic(&cut, cfg.horizon.pred_len);
        prior.centerlines[slot] = res.waypoints;
        prior.source_lane_ids[slot] = res.source_lane_ids;
        prior.valid[slot] = true;
    }
    let valid: Vec<Vec<Point>> = prior.valid_centerlines().cloned().collect();
    prior.plausible_points = sample_plausible_area(&valid, cfg.area_points, cfg.sigma, rng_seed)?;
    Ok(prior)
}
