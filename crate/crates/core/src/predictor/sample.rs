use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::kinematics::{PreprocessMethod, DEFAULT_LAMBDA};
use crate::map_prior::{build_prior, CenterlinePrior, PriorConfig};
use crate::scenario::{to_target_frame, Horizon, Scenario, TargetFrame, DT};

/// How scenarios become model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub horizon: Horizon,
    pub method: PreprocessMethod,
    pub lambda: f64,
    pub prior: PriorConfig,
    /// Build the centerline prior (only the map variant reads it).
    pub with_prior: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            horizon: Horizon::default(),
            method: PreprocessMethod::default(),
            lambda: DEFAULT_LAMBDA,
            prior: PriorConfig::default(),
            with_prior: true,
        }
    }
}

/// One scenario in the target frame, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scenario_id: String,
    pub frame: TargetFrame,
    /// Observed positions of every agent, target first.
    pub agents: Vec<Vec<Point>>,
    pub future: Option<Vec<Point>>,
    pub prior: Option<CenterlinePrior>,
}

impl Sample {
    /// Rotates the scene into the target frame and optionally builds its prior.
    pub fn prepare(scenario: &Scenario, cfg: &PrepConfig) -> Result<Self> {
        let h = &cfg.horizon;
        if scenario.frame_count() < h.obs_len {
            return Err(Error::InsufficientFrames { got: scenario.frame_count(), need: h.obs_len });
        }
        let (local, frame) = to_target_frame(scenario, h);
        let prior = if cfg.with_prior {
            let state = cfg.method.estimate(local.target_observed(h), DT, cfg.lambda)?;
            Some(build_prior(&local, &state, &PriorConfig { horizon: *h, ..cfg.prior })?)
        } else {
            None
        };
        let t = local.target_index();
        let order = std::iter::once(t).chain((0..local.agents.len()).filter(|&i| i != t));
        let agents = order.map(|i| local.agents[i].positions[..h.obs_len].to_vec()).collect();
        let future = local.has_future(h).then(|| local.target_future(h).to_vec());
        Ok(Self { scenario_id: local.scenario_id, frame, agents, future, prior })
    }

    pub fn target_observed(&self) -> &[Point] {
        &self.agents[0]
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }
}
