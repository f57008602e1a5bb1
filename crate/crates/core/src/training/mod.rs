//! Objective, augmentation, hard mining and the two-stage training loop.
//!
//! Stage 1 optimizes NLL alone. The first plateau of the validation minADE
//! halves the learning rate and switches to stage 2, which adds the hinge and
//! WTA terms and oversamples the hardest training scenes.

mod augment;
mod loss;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::metrics::{self, EvalSummary};
use crate::nn::{absorb_bn_stats, Adam, Mode, Tape};
use crate::predictor::{Model, PredictionSet, Sample};
use crate::scalar::Scalar;

pub use augment::{augment, augment_sample, augment_track, AugmentPolicy};
pub use loss::{
    batch_losses, combined_loss, nll_loss, smooth_l1, winner, wta_hinge, LossParts, LossVars, LossWeights, WtaHinge, CONFIDENCE_FLOOR,
};

/// Weight of a hard-mined scenario relative to the rest.
pub const HARD_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub hard_mining_fraction: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub augment: AugmentPolicy,
    /// Switch to stage 2 at this epoch even without a plateau.
    pub stage2_epoch: Option<usize>,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 50,
            plateau_factor: 0.5,
            plateau_patience: 5,
            hard_mining_fraction: 0.10,
            seed: 0,
            weights: LossWeights::default(),
            augment: AugmentPolicy::default(),
            stage2_epoch: None,
            eval_batch: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.hard_mining_fraction) {
            return Err(Error::InvalidConfig("hard_mining_fraction in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::InvalidConfig("batch sizes must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::InvalidConfig("plateau_factor in (0, 1]".into()));
        }
        self.weights.validate()
    }
}

/// Multiplies the learning rate by `factor` once the watched metric has
/// not improved for `patience` consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad: usize,
    pub triggers: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self { lr, factor, patience, best: f64::INFINITY, bad: 0, triggers: 0 }
    }

    /// Returns true when this observation lowered the rate.
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.bad = 0;
            return false;
        }
        self.bad += 1;
        if self.bad < self.patience.max(1) {
            return false;
        }
        self.bad = 0;
        self.triggers += 1;
        self.lr *= self.factor;
        true
    }
}

/// Normalized sampling weights: the hardest `fraction` of scenes (by error,
/// ties to the lower index) get [`HARD_WEIGHT`], the rest 1.
pub fn hard_mining_weights(errors: &[f64], fraction: f64) -> Vec<f64> {
    let n = errors.len();
    let hard = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    let mut w = vec![1.0; n];
    for &i in &order[..hard] {
        w[i] = HARD_WEIGHT;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Per-scene minADE of the current model, then [`hard_mining_weights`].
pub fn hard_mine<T: Scalar>(model: &Model<T>, samples: &[Sample], fraction: f64, eval_batch: usize) -> Result<Vec<f64>> {
    let (gts, preds) = predict_labelled(model, samples, eval_batch)?;
    Ok(hard_mining_weights(&metrics::min_ade_all(&gts, &preds)?, fraction))
}

/// Eval-mode predictions of every sample with its ground truth.
pub fn predict_labelled<T: Scalar>(
    model: &Model<T>,
    samples: &[Sample],
    eval_batch: usize,
) -> Result<(Vec<Vec<Point>>, Vec<PredictionSet>)> {
    let mut gts = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(eval_batch.max(1)) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        preds.extend(model.predict(&batch)?);
        for s in chunk {
            gts.push(s.future.clone().ok_or_else(|| Error::InvalidConfig(format!("{} has no ground truth", s.scenario_id)))?);
        }
    }
    Ok((gts, preds))
}

pub fn evaluate_model<T: Scalar>(model: &Model<T>, samples: &[Sample], eval_batch: usize) -> Result<EvalSummary> {
    let (gts, preds) = predict_labelled(model, samples, eval_batch)?;
    metrics::evaluate(&gts, &preds)
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_minade_k1: f64,
    pub val_minfde_k1: f64,
    pub val_minade_k6: f64,
    pub val_minfde_k6: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// First stage-2 epoch, if reached.
    pub stage2_from: Option<usize>,
}

/// Trains `model` in place, calling `on_epoch` after each epoch. Runs on the
/// calling thread only and is reproducible for a fixed `cfg.seed`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(s) = train_set.iter().find(|s| s.future.is_none()) {
        return Err(Error::InvalidConfig(format!("{} has no ground truth", s.scenario_id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
    let mut stage2_from = None;
    let mut sampling: Option<WeightedIndex<f64>> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_id = 0;
    for epoch in 1..=cfg.epochs {
        if stage2_from.is_none() && cfg.stage2_epoch.is_some_and(|e| epoch >= e) {
            stage2_from = Some(epoch);
        }
        if stage2_from == Some(epoch) {
            let w = hard_mine(model, train_set, cfg.hard_mining_fraction, cfg.eval_batch)?;
            sampling = Some(WeightedIndex::new(&w).map_err(|e| Error::InvalidConfig(e.to_string()))?);
            log::info!("stage 2 from epoch {epoch}");
        }
        let weights = if stage2_from.is_some() { cfg.weights } else { cfg.weights.stage1() };
        let order: Vec<usize> = match &sampling {
            Some(dist) => (0..train_set.len()).map(|_| dist.sample(&mut rng)).collect(),
            None => {
                let mut o: Vec<usize> = (0..train_set.len()).collect();
                o.shuffle(&mut rng);
                o
            }
        };
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| augment_sample(&train_set[i], &cfg.augment, &mut rng)).collect();
            let refs: Vec<&Sample> = batch.iter().collect();
            let gts: Vec<&[Point]> = batch.iter().map(|s| s.future.as_deref().unwrap_or(&[])).collect();
            let mut tape = Tape::new(Mode::Train, rng.next_u64());
            let out = model.forward(&mut tape, &refs)?;
            let l = batch_losses(&mut tape, &out, &gts, &weights)?;
            let value = tape.value(l.total).item().f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { batch: batch_id });
            }
            model.store.zero_grad();
            tape.backward(l.total, &mut model.store)?;
            absorb_bn_stats(&tape, &mut model.store);
            adam.lr = sched.lr;
            adam.step(&mut model.store)?;
            loss_sum += value * chunk.len() as f64;
            seen += chunk.len();
            batch_id += 1;
        }
        let val = evaluate_model(model, val_set, cfg.eval_batch)?;
        let m = EpochMetrics {
            epoch,
            lr: sched.lr,
            train_loss: loss_sum / seen as f64,
            val_minade_k1: val.minade_k1,
            val_minfde_k1: val.minfde_k1,
            val_minade_k6: val.minade_k6,
            val_minfde_k6: val.minfde_k6,
        };
        log::debug!("{m:?}");
        on_epoch(&m);
        history.push(m);
        if sched.observe(val.minade_k6) && stage2_from.is_none() {
            stage2_from = Some(epoch + 1);
        }
    }
    Ok(TrainReport { history, stage2_from })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{ModelConfig, PrepConfig, Variant};
    use crate::scenario::{generate_synthetic, LaneTopology, MotionModel, SynthSpec};
    use rand::Rng;

    #[test]
    fn scheduler_halves_on_plateaus() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 2);
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.0));
        assert!(s.observe(1.1));
        assert!(!s.observe(1.0));
        assert!(s.observe(1.0));
        assert_eq!(s.lr, 0.00025);
        assert!(!s.observe(0.5));
    }

    #[test]
    fn hard_mining_selection() {
        assert!(hard_mining_weights(&[1.0, 5.0, 2.0], 0.0).iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        let errs = [0.3, 0.1, 0.9, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8, 0.05];
        let w = hard_mining_weights(&errs, 0.10);
        let up: Vec<usize> = (0..10).filter(|&i| w[i] > w[0]).collect();
        assert_eq!(up, vec![2]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_share_per_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let errs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let w = hard_mining_weights(&errs, 0.1);
        let hard: Vec<bool> = w.iter().map(|&v| v > 1.5 / 1100.0).collect();
        let dist = WeightedIndex::new(&w).unwrap();
        let draws = 200_000;
        let hits = (0..draws).filter(|_| hard[dist.sample(&mut rng)]).count();
        let share = hits as f64 / draws as f64;
        assert!((share - 0.2 / 1.1).abs() < 0.01, "share {share}");
    }

    fn cv_samples(n: usize, seed: u64) -> Vec<Sample> {
        let prep = PrepConfig { with_prior: false, ..Default::default() };
        (0..n)
            .map(|i| {
                let mut spec = SynthSpec::new(MotionModel::Cv, LaneTopology::Straight, seed + i as u64);
                spec.n_agents = 2;
                Sample::prepare(&generate_synthetic(&spec), &prep).unwrap()
            })
            .collect()
    }

    #[test]
    fn short_runs_are_reproducible_and_learn() {
        let data = cv_samples(24, 100);
        let cfg = TrainConfig { epochs: 3, batch_size: 8, lr: 3e-3, ..Default::default() };
        let run = || {
            let mut m = Model::<f32>::new(ModelConfig::new(Variant::Social), 1).unwrap();
            let r = train(&mut m, &data[..16], &data[16..], &cfg, |_| {}).unwrap();
            (m, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(a.store, b.store);
        assert!(ra.history[2].train_loss < ra.history[0].train_loss);
    }

    #[test]
    fn forced_stage_two_and_errors() {
        let data = cv_samples(12, 200);
        let cfg = TrainConfig { epochs: 2, batch_size: 6, stage2_epoch: Some(2), ..Default::default() };
        let mut m = Model::<f64>::new(ModelConfig::new(Variant::Social), 2).unwrap();
        let r = train(&mut m, &data[..8], &data[8..], &cfg, |_| {}).unwrap();
        assert_eq!(r.stage2_from, Some(2));
        assert!(matches!(train(&mut m, &[], &data, &cfg, |_| {}), Err(Error::EmptySet)));
        let bad = TrainConfig { lr: 0.0, ..cfg.clone() };
        assert!(train(&mut m, &data, &data, &bad, |_| {}).is_err());
        let mut poisoned = data.clone();
        poisoned[0].agents[0][3] = [f64::NAN, 0.0];
        let no_aug = TrainConfig { augment: AugmentPolicy::none(), batch_size: 64, ..cfg };
        assert!(matches!(train(&mut m, &poisoned[..8], &data[8..], &no_aug, |_| {}), Err(Error::NonFiniteLoss { batch: 0 })));
    }
}
