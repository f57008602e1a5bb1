//! Seeded synthetic scenarios on simple lane layouts.
//!
//! Every layout places the target's last observed position at the world
//! origin with heading +y. Tracks follow lane routes analytically, so the
//! noise-free future lies on a lane of the generated graph.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{self, Point};

use super::{AgentTrack, Horizon, Lane, LaneGraph, Scenario, DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionModel {
    Cv,
    Ctrv,
    Ctra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneTopology {
    Straight,
    Curve,
    Fork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_agents: usize,
    pub motion: MotionModel,
    pub lane_topology: LaneTopology,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Target speed at the first frame; drawn when absent.
    #[serde(default)]
    pub speed: Option<f64>,
    /// Target longitudinal acceleration; drawn when absent (zero unless CTRA).
    #[serde(default)]
    pub accel: Option<f64>,
    #[serde(default)]
    pub horizon: Horizon,
}

impl SynthSpec {
    pub fn new(motion: MotionModel, lane_topology: LaneTopology, seed: u64) -> Self {
        Self { n_agents: 1, motion, lane_topology, noise_sigma: 0.0, seed, speed: None, accel: None, horizon: Horizon::default() }
    }
}

/// Generator ground truth attached to synthetic scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub motion: MotionModel,
    pub topology: LaneTopology,
    /// Speed at the first frame, m/s.
    pub speed_initial: f64,
    /// Speed at the last observed frame, m/s.
    pub speed_last_obs: f64,
    pub accel: f64,
    /// Arc length travelled by the target over the prediction horizon, m.
    pub future_distance: f64,
    /// Lane ids of the route the target follows.
    pub route: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
enum Piece {
    Line {
        len: f64,
    },
    /// `turn` is +1 for left, -1 for right.
    Arc {
        radius: f64,
        turn: f64,
        len: f64,
    },
}

impl Piece {
    fn len(&self) -> f64 {
        match *self {
            Piece::Line { len } | Piece::Arc { len, .. } => len,
        }
    }
}

/// Arc-length parameterized route made of lines and circular arcs. `s = 0`
/// is `start`; negative `s` extends straight back along the initial heading
/// and `s` beyond the end extends along the final heading.
#[derive(Debug, Clone)]
struct Route {
    start: Point,
    heading: f64,
    pieces: Vec<Piece>,
}

impl Route {
    fn length(&self) -> f64 {
        self.pieces.iter().map(Piece::len).sum()
    }

    fn pose(&self, s: f64) -> (Point, f64) {
        let mut p = self.start;
        let mut h = self.heading;
        if s <= 0.0 {
            return ([p[0] + s * h.cos(), p[1] + s * h.sin()], h);
        }
        let mut left = s;
        for piece in &self.pieces {
            let step = left.min(piece.len());
            match *piece {
                Piece::Line { .. } => {
                    p = [p[0] + step * h.cos(), p[1] + step * h.sin()];
                }
                Piece::Arc { radius, turn, .. } => {
                    let k = turn / radius;
                    let h1 = h + k * step;
                    p = [p[0] + (h1.sin() - h.sin()) / k, p[1] - (h1.cos() - h.cos()) / k];
                    h = h1;
                }
            }
            left -= step;
            if left <= 0.0 {
                return (p, h);
            }
        }
        ([p[0] + left * h.cos(), p[1] + left * h.sin()], h)
    }

    /// Point at arc length `s`, shifted `offset` meters to the right of travel.
    fn point(&self, s: f64, offset: f64) -> Point {
        let (p, h) = self.pose(s);
        [p[0] + offset * h.sin(), p[1] - offset * h.cos()]
    }

    /// Splits `[from, to]` into lanes of at most `seg` meters with waypoints
    /// at most 1 m apart. Adjacent lanes share their boundary waypoint.
    fn lanes(&self, prefix: &str, from: f64, to: f64, offset: f64, seg: f64) -> Vec<Lane> {
        let count = ((to - from) / seg).ceil().max(1.0) as usize;
        let piece = (to - from) / count as f64;
        let mut lanes: Vec<Lane> = (0..count)
            .map(|i| {
                let a = from + i as f64 * piece;
                let steps = piece.ceil().max(1.0) as usize;
                let waypoints = (0..=steps).map(|j| self.point(a + piece * j as f64 / steps as f64, offset)).collect();
                Lane { lane_id: format!("{prefix}{i}"), waypoints, successors: vec![], predecessors: vec![] }
            })
            .collect();
        chain(&mut lanes);
        lanes
    }
}

fn chain(lanes: &mut [Lane]) {
    for i in 1..lanes.len() {
        let (prev, next) = (lanes[i - 1].lane_id.clone(), lanes[i].lane_id.clone());
        lanes[i - 1].successors.push(next);
        lanes[i].predecessors.push(prev);
    }
}

fn link(lanes: &mut [Lane], from: &str, to: &str) {
    for lane in lanes.iter_mut() {
        if lane.lane_id == from {
            lane.successors.push(to.to_string());
        }
        if lane.lane_id == to {
            lane.predecessors.push(from.to_string());
        }
    }
}

const BACK: f64 = 120.0;
const SEGMENT: f64 = 30.0;
const LANE_OFFSET: f64 = 3.5;
const EXIT: f64 = 100.0;

/// Route followed by an agent: the route itself plus a lateral offset and the
/// lane ids it covers.
struct Layout {
    lanes: Vec<Lane>,
    /// (route, offset, lane ids) per selectable route; index 0 is the target's.
    routes: Vec<(Route, f64, Vec<String>)>,
}

fn ids(lanes: &[Lane]) -> Vec<String> {
    lanes.iter().map(|l| l.lane_id.clone()).collect()
}

fn layout(topology: LaneTopology, rng: &mut ChaCha8Rng) -> Layout {
    let up = FRAC_PI_2;
    match topology {
        LaneTopology::Straight | LaneTopology::Curve => {
            let pieces = if topology == LaneTopology::Straight {
                vec![Piece::Line { len: 200.0 }]
            } else {
                let ahead = rng.random_range(0.0..15.0);
                let radius = rng.random_range(25.0..60.0);
                let turn = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                vec![Piece::Line { len: ahead }, Piece::Arc { radius, turn, len: radius * FRAC_PI_2 }, Piece::Line { len: EXIT }]
            };
            let route = Route { start: [0.0, 0.0], heading: up, pieces };
            let end = route.length();
            let main = route.lanes("m", -BACK, end, 0.0, SEGMENT);
            let side = route.lanes("p", -BACK, end, LANE_OFFSET, SEGMENT);
            let routes = vec![(route.clone(), 0.0, ids(&main)), (route, LANE_OFFSET, ids(&side))];
            Layout { lanes: main.into_iter().chain(side).collect(), routes }
        }
        LaneTopology::Fork => {
            let ahead = rng.random_range(3.0..10.0);
            let radius = rng.random_range(25.0..40.0);
            let branch = |turn: f64| Route {
                start: [0.0, 0.0],
                heading: up,
                pieces: vec![Piece::Line { len: ahead }, Piece::Arc { radius, turn, len: radius * FRAC_PI_3 }, Piece::Line { len: EXIT }],
            };
            let left = branch(1.0);
            let right = branch(-1.0);
            let end = left.length();
            let approach = left.lanes("a", -BACK, ahead, 0.0, SEGMENT);
            let l = left.lanes("l", ahead, end, 0.0, SEGMENT);
            let r = right.lanes("r", ahead, end, 0.0, SEGMENT);
            let last = approach.last().expect("approach lane").lane_id.clone();
            let mut route_l = ids(&approach);
            route_l.extend(ids(&l));
            let mut route_r = ids(&approach);
            route_r.extend(ids(&r));
            let mut lanes: Vec<Lane> = approach.into_iter().chain(l).chain(r).collect();
            link(&mut lanes, &last, "l0");
            link(&mut lanes, &last, "r0");
            let routes = if rng.random_bool(0.5) {
                vec![(left, 0.0, route_l), (right, 0.0, route_r)]
            } else {
                vec![(right, 0.0, route_r), (left, 0.0, route_l)]
            };
            Layout { lanes, routes }
        }
    }
}

/// Distance covered after `tau` seconds from speed `v` under constant
/// acceleration `a`, holding still once the speed reaches zero.
fn travelled(v: f64, a: f64, tau: f64) -> f64 {
    if a < 0.0 && v + a * tau < 0.0 {
        v * v / (-2.0 * a)
    } else {
        v * tau + 0.5 * a * tau * tau
    }
}

/// Generates a scenario; identical specs give bit-identical output.
pub fn generate_synthetic(spec: &SynthSpec) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let horizon = spec.horizon;
    let frames = horizon.total();
    let last_obs = (horizon.obs_len - 1) as f64 * DT;

    let layout = layout(spec.lane_topology, &mut rng);
    let speed = spec.speed.unwrap_or_else(|| match spec.motion {
        MotionModel::Cv | MotionModel::Ctrv => rng.random_range(6.0..14.0),
        MotionModel::Ctra => rng.random_range(8.0..16.0),
    });
    let accel = spec.accel.unwrap_or_else(|| match spec.motion {
        MotionModel::Cv | MotionModel::Ctrv => 0.0,
        MotionModel::Ctra => rng.random_range(-1.5..1.5),
    });

    let (route, offset, route_ids) = &layout.routes[0];
    let s0 = -travelled(speed, accel, last_obs);
    let target: Vec<Point> = (0..frames).map(|f| route.point(s0 + travelled(speed, accel, f as f64 * DT), *offset)).collect();
    let end = (frames - 1) as f64 * DT;
    let truth = SynthTruth {
        motion: spec.motion,
        topology: spec.lane_topology,
        speed_initial: speed,
        speed_last_obs: (speed + accel * last_obs).max(0.0),
        accel,
        future_distance: travelled(speed, accel, end) - travelled(speed, accel, last_obs),
        route: route_ids.clone(),
    };

    let mut agents = vec![AgentTrack { agent_id: "target".into(), is_target: true, positions: target }];
    for i in 1..spec.n_agents {
        let pick = rng.random_range(0..layout.routes.len());
        let (route, offset, _) = &layout.routes[pick];
        let gap = rng.random_range(8.0..30.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let v = rng.random_range(5.0..14.0);
        let start = gap - v * last_obs;
        let positions = (0..frames).map(|f| route.point(start + v * f as f64 * DT, *offset)).collect();
        agents.push(AgentTrack { agent_id: format!("a{i}"), is_target: false, positions });
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
        for agent in &mut agents {
            for p in &mut agent.positions {
                p[0] += normal.sample(&mut rng);
                p[1] += normal.sample(&mut rng);
            }
        }
    }

    let motion = match spec.motion {
        MotionModel::Cv => "cv",
        MotionModel::Ctrv => "ctrv",
        MotionModel::Ctra => "ctra",
    };
    let topology = match spec.lane_topology {
        LaneTopology::Straight => "straight",
        LaneTopology::Curve => "curve",
        LaneTopology::Fork => "fork",
    };
    Scenario {
        scenario_id: format!("synth-{motion}-{topology}-{}", spec.seed),
        agents,
        lane_graph: LaneGraph::new(layout.lanes).expect("generated lanes are well formed"),
        city_tag: Some("SYN".into()),
        truth: Some(truth),
    }
}

/// Distance from `p` to the nearest segment of a polyline.
pub fn distance_to_polyline(p: Point, line: &[Point]) -> f64 {
    line.windows(2)
        .map(|w| {
            let d = geometry::sub(w[1], w[0]);
            let t = (geometry::dot(geometry::sub(p, w[0]), d) / geometry::dot(d, d)).clamp(0.0, 1.0);
            geometry::dist(p, geometry::lerp(w[0], w[1], t))
        })
        .fold(f64::INFINITY, f64::min)
}
