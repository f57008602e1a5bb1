//! Flat JSON run configuration. Every key is optional; flags override the
//! file and the file overrides library defaults.

use std::path::Path;

use serde::Deserialize;
use trajkit::kinematics::PreprocessMethod;
use trajkit::predictor::{ModelConfig, PrepConfig, Variant};
use trajkit::training::TrainConfig;
use trajkit::{Error, Horizon, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // model
    pub variant: Option<Variant>,
    pub obs_len: Option<usize>,
    pub pred_len: Option<usize>,
    pub h_social: Option<usize>,
    pub h_map: Option<usize>,
    pub heads: Option<usize>,
    pub gcn_layers: Option<usize>,
    pub window: Option<usize>,
    pub modes: Option<usize>,
    pub centerlines: Option<usize>,
    pub area_points: Option<usize>,
    pub map_mlp_hidden: Option<usize>,
    pub conf_hidden: Option<usize>,
    pub dropout: Option<f64>,
    // training
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub plateau_factor: Option<f64>,
    pub plateau_patience: Option<usize>,
    pub hard_mining_fraction: Option<f64>,
    pub stage2_epoch: Option<usize>,
    pub eval_batch: Option<usize>,
    pub seed: Option<u64>,
    // loss weights
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    // augmentation
    pub p_drop: Option<f64>,
    pub p_swap: Option<f64>,
    pub sigma: Option<f64>,
    // preprocessing
    pub method: Option<PreprocessMethod>,
    pub lambda: Option<f64>,
    pub area_sigma: Option<f64>,
    /// Agent count assumed by the FLOP report.
    pub agents: Option<usize>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path)?;
        serde_json::from_slice(&raw).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prep: PrepConfig,
    pub agents: usize,
}

macro_rules! take {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl Resolved {
    pub fn new(file: &FileConfig, variant: Option<Variant>, seed: Option<u64>) -> Result<Self> {
        let f = file.clone();
        let mut m = ModelConfig::default();
        take!(m.variant, variant.or(f.variant));
        take!(m.obs_len, f.obs_len);
        take!(m.pred_len, f.pred_len);
        take!(m.h_social, f.h_social);
        take!(m.h_map, f.h_map);
        take!(m.heads, f.heads);
        take!(m.gcn_layers, f.gcn_layers);
        take!(m.window, f.window);
        take!(m.modes, f.modes);
        take!(m.centerlines, f.centerlines);
        take!(m.area_points, f.area_points);
        take!(m.map_mlp_hidden, f.map_mlp_hidden);
        take!(m.conf_hidden, f.conf_hidden);
        take!(m.dropout, f.dropout);
        m.validate()?;

        let mut t = TrainConfig::default();
        take!(t.lr, f.lr);
        take!(t.batch_size, f.batch_size);
        take!(t.epochs, f.epochs);
        take!(t.plateau_factor, f.plateau_factor);
        take!(t.plateau_patience, f.plateau_patience);
        take!(t.hard_mining_fraction, f.hard_mining_fraction);
        take!(t.eval_batch, f.eval_batch);
        take!(t.seed, seed.or(f.seed));
        t.stage2_epoch = f.stage2_epoch.or(t.stage2_epoch);
        take!(t.weights.alpha, f.alpha);
        take!(t.weights.beta, f.beta);
        take!(t.weights.gamma, f.gamma);
        take!(t.weights.epsilon, f.epsilon);
        take!(t.augment.p_drop, f.p_drop);
        take!(t.augment.p_swap, f.p_swap);
        take!(t.augment.sigma, f.sigma);
        t.validate()?;

        let horizon = Horizon { obs_len: m.obs_len, pred_len: m.pred_len };
        let mut p = PrepConfig { horizon, with_prior: m.variant == Variant::Map, ..Default::default() };
        take!(p.method, f.method);
        take!(p.lambda, f.lambda);
        take!(p.prior.sigma, f.area_sigma);
        p.prior.horizon = horizon;
        p.prior.num_centerlines = m.centerlines;
        p.prior.area_points = m.area_points;
        p.prior.seed = t.seed;

        Ok(Self { model: m, train: t, prep: p, agents: f.agents.unwrap_or(10) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let file: FileConfig = serde_json::from_str(r#"{"variant":"map","seed":3,"lr":0.01,"gamma":0.5}"#).unwrap();
        let r = Resolved::new(&file, None, None).unwrap();
        assert_eq!((r.model.variant, r.train.seed, r.train.lr, r.train.weights.gamma), (Variant::Map, 3, 0.01, 0.5));
        assert!(r.prep.with_prior);
        let r = Resolved::new(&file, Some(Variant::Social), Some(9)).unwrap();
        assert_eq!((r.model.variant, r.train.seed), (Variant::Social, 9));
        assert!(!r.prep.with_prior);
        let d = Resolved::new(&FileConfig::default(), None, None).unwrap();
        assert_eq!((d.model, d.train, d.agents), (ModelConfig::default(), TrainConfig::default(), 10));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"learning_rate":1}"#).is_err());
        let file = FileConfig { heads: Some(5), ..Default::default() };
        assert!(matches!(Resolved::new(&file, None, None), Err(Error::IndivisibleHeads { .. })));
    }
}
