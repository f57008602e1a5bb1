//! Traffic scenarios: agent tracks, lane graphs, parsing and the target frame.

mod argoverse;
pub mod synth;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point, RigidTransform};

pub use synth::{generate_synthetic, LaneTopology, MotionModel, SynthSpec, SynthTruth};

/// Sampling period of every track, seconds.
pub const DT: f64 = 0.1;

/// Observed / predicted frame counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub obs_len: usize,
    pub pred_len: usize,
}

impl Default for Horizon {
    fn default() -> Self {
        Self { obs_len: 20, pred_len: 30 }
    }
}

impl Horizon {
    pub fn total(&self) -> usize {
        self.obs_len + self.pred_len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    #[serde(rename = "id")]
    pub agent_id: String,
    #[serde(rename = "target")]
    pub is_target: bool,
    #[serde(rename = "xy")]
    pub positions: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    #[serde(rename = "id")]
    pub lane_id: String,
    pub waypoints: Vec<Point>,
    #[serde(default)]
    pub successors: Vec<String>,
    #[serde(default)]
    pub predecessors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LaneGraph {
    lanes: Vec<Lane>,
    index: BTreeMap<String, usize>,
}

impl LaneGraph {
    /// Builds a graph, checking waypoint and connectivity invariants.
    pub fn new(lanes: Vec<Lane>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, lane) in lanes.iter().enumerate() {
            if index.insert(lane.lane_id.clone(), i).is_some() {
                return Err(Error::MalformedInput(format!("duplicate lane id {}", lane.lane_id)));
            }
            if lane.waypoints.len() < 2 {
                return Err(Error::MalformedInput(format!("lane {} has fewer than 2 waypoints", lane.lane_id)));
            }
            for w in lane.waypoints.windows(2) {
                if !(w[0][0].is_finite() && w[0][1].is_finite() && w[1][0].is_finite() && w[1][1].is_finite()) {
                    return Err(Error::MalformedInput(format!("lane {} has non-finite waypoints", lane.lane_id)));
                }
                if w[0] == w[1] {
                    return Err(Error::MalformedInput(format!("lane {} repeats a waypoint", lane.lane_id)));
                }
            }
        }
        for lane in &lanes {
            for id in lane.successors.iter().chain(&lane.predecessors) {
                if !index.contains_key(id) {
                    return Err(Error::MalformedInput(format!("lane {} references unknown lane {id}", lane.lane_id)));
                }
            }
        }
        Ok(Self { lanes, index })
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn get(&self, id: &str) -> Option<&Lane> {
        self.index.get(id).map(|&i| &self.lanes[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn transformed(&self, frame: &RigidTransform) -> Self {
        let lanes =
            self.lanes.iter().map(|l| Lane { waypoints: l.waypoints.iter().map(|&p| frame.apply(p)).collect(), ..l.clone() }).collect();
        Self { lanes, index: self.index.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scenario_id: String,
    pub agents: Vec<AgentTrack>,
    pub lane_graph: LaneGraph,
    pub city_tag: Option<String>,
    /// Generator ground truth, present on synthetic scenarios.
    pub truth: Option<SynthTruth>,
}

impl Scenario {
    pub fn target_index(&self) -> usize {
        self.agents.iter().position(|a| a.is_target).expect("scenario invariant: one target")
    }

    pub fn target(&self) -> &AgentTrack {
        &self.agents[self.target_index()]
    }

    pub fn frame_count(&self) -> usize {
        self.target().positions.len()
    }

    /// Observed part of the target track.
    pub fn target_observed(&self, horizon: &Horizon) -> &[Point] {
        &self.target().positions[..horizon.obs_len]
    }

    /// Ground-truth future of the target; empty on test scenarios.
    pub fn target_future(&self, horizon: &Horizon) -> &[Point] {
        let p = &self.target().positions;
        &p[horizon.obs_len.min(p.len())..p.len().min(horizon.total())]
    }

    pub fn has_future(&self, horizon: &Horizon) -> bool {
        self.frame_count() >= horizon.total()
    }

    /// Applies a rigid transform to every track and lane.
    pub fn transformed(&self, frame: &RigidTransform) -> Scenario {
        Scenario {
            scenario_id: self.scenario_id.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentTrack { positions: a.positions.iter().map(|&p| frame.apply(p)).collect(), ..a.clone() })
                .collect(),
            lane_graph: self.lane_graph.transformed(frame),
            city_tag: self.city_tag.clone(),
            truth: self.truth.clone(),
        }
    }

    fn validated(mut self, horizon: &Horizon) -> Result<Self> {
        let targets = self.agents.iter().filter(|a| a.is_target).count();
        if targets == 0 {
            return Err(Error::NoTargetAgent);
        }
        if targets > 1 {
            return Err(Error::MalformedInput(format!("{targets} target agents")));
        }
        let frames = self.target().positions.len();
        if frames < horizon.obs_len {
            return Err(Error::InsufficientFrames { got: frames, need: horizon.obs_len });
        }
        for a in &self.agents {
            if a.positions.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return Err(Error::MalformedInput(format!("agent {} has non-finite coordinates", a.agent_id)));
            }
        }
        // Only agents covering the whole horizon of the target take part.
        self.agents.retain(|a| a.is_target || a.positions.len() == frames);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    NativeJson,
    ArgoverseCsv,
}

#[derive(Serialize, Deserialize)]
struct NativeScenario {
    scenario_id: String,
    agents: Vec<AgentTrack>,
    #[serde(default)]
    lanes: Vec<Lane>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<SynthTruth>,
}

/// Parses a scenario and drops agents that do not span the target's horizon.
pub fn parse_scenario(raw: &[u8], format: InputFormat, horizon: &Horizon) -> Result<Scenario> {
    let scenario = match format {
        InputFormat::NativeJson => {
            let native: NativeScenario = serde_json::from_slice(raw).map_err(|e| Error::MalformedInput(e.to_string()))?;
            Scenario {
                scenario_id: native.scenario_id,
                agents: native.agents,
                lane_graph: LaneGraph::new(native.lanes)?,
                city_tag: native.city,
                truth: native.truth,
            }
        }
        InputFormat::ArgoverseCsv => argoverse::parse(raw)?,
    };
    scenario.validated(horizon)
}

/// Serializes to the native JSON document.
pub fn to_native_json(s: &Scenario) -> Result<String> {
    let native = NativeScenario {
        scenario_id: s.scenario_id.clone(),
        agents: s.agents.clone(),
        lanes: s.lane_graph.lanes().to_vec(),
        city: s.city_tag.clone(),
        truth: s.truth.clone(),
    };
    Ok(serde_json::to_string(&native)?)
}

/// Pose of the target at the last observed frame.
pub type TargetFrame = RigidTransform;

/// Heading of the target used to orient the scene, or `None` when it is
/// (nearly) stationary between the last two observed frames.
pub fn target_heading(observed: &[Point]) -> Option<Point> {
    let n = observed.len();
    if n < 2 {
        return None;
    }
    let d = geometry::sub(observed[n - 1], observed[n - 2]);
    let len = geometry::norm(d);
    (len >= 1e-6).then(|| geometry::scale(d, 1.0 / len))
}

/// Moves the target's last observation to the origin and turns its heading onto +y.
pub fn to_target_frame(s: &Scenario, horizon: &Horizon) -> (Scenario, TargetFrame) {
    let observed = s.target_observed(horizon);
    let origin = observed[observed.len() - 1];
    let frame = match target_heading(observed) {
        Some(h) => RigidTransform::from_angle(FRAC_PI_2 - h[1].atan2(h[0]), origin),
        None => RigidTransform { origin, ..RigidTransform::identity() },
    };
    (s.transformed(&frame), frame)
}

/// `v[t] - v[t-1]` for every consecutive pair.
pub fn relative_displacements(positions: &[Point]) -> Result<Vec<Point>> {
    if positions.len() < 2 {
        return Err(Error::TooShort { got: positions.len(), need: 2 });
    }
    Ok(positions.windows(2).map(|w| geometry::sub(w[1], w[0])).collect())
}
