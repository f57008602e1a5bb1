//! minADE / minFDE and end-point error statistics of centerline priors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::map_prior::CenterlinePrior;
use crate::predictor::PredictionSet;

/// Modes considered at `k_eval`: the `k_eval` most confident (stable on
/// ties); every mode when `k_eval` is the mode count.
fn selected(pred: &PredictionSet, gt: &[Point], k_eval: usize) -> Result<Vec<usize>> {
    let k = pred.trajectories.len();
    if k_eval == 0 || k_eval > k || pred.confidences.len() != k {
        return Err(Error::ShapeMismatch(format!("k_eval {k_eval} of {k} modes")));
    }
    if gt.is_empty() || pred.trajectories.iter().any(|t| t.len() != gt.len()) {
        return Err(Error::ShapeMismatch(format!("ground truth of {} steps", gt.len())));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| pred.confidences[b].total_cmp(&pred.confidences[a]));
    order.truncate(k_eval);
    Ok(order)
}

fn ade(traj: &[Point], gt: &[Point]) -> f64 {
    traj.iter().zip(gt).map(|(&p, &q)| geometry::dist(p, q)).sum::<f64>() / gt.len() as f64
}

fn fde(traj: &[Point], gt: &[Point]) -> f64 {
    geometry::dist(traj[traj.len() - 1], gt[gt.len() - 1])
}

/// Lowest mean per-step L2 over the selected modes.
pub fn min_ade(gt: &[Point], pred: &PredictionSet, k_eval: usize) -> Result<f64> {
    let modes = selected(pred, gt, k_eval)?;
    Ok(modes.iter().map(|&m| ade(&pred.trajectories[m], gt)).fold(f64::INFINITY, f64::min))
}

/// Lowest final-step L2 over the selected modes.
pub fn min_fde(gt: &[Point], pred: &PredictionSet, k_eval: usize) -> Result<f64> {
    let modes = selected(pred, gt, k_eval)?;
    Ok(modes.iter().map(|&m| fde(&pred.trajectories[m], gt)).fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub minade_k1: f64,
    pub minfde_k1: f64,
    pub minade_k6: f64,
    pub minfde_k6: f64,
    pub n: usize,
}

/// Means over scenarios; the `k6` figures use every mode.
pub fn evaluate(gts: &[Vec<Point>], preds: &[PredictionSet]) -> Result<EvalSummary> {
    if gts.is_empty() {
        return Err(Error::EmptySet);
    }
    if gts.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!("{} ground truths, {} predictions", gts.len(), preds.len())));
    }
    let mut acc = [0.0; 4];
    for (gt, p) in gts.iter().zip(preds) {
        let k = p.trajectories.len();
        acc[0] += min_ade(gt, p, 1)?;
        acc[1] += min_fde(gt, p, 1)?;
        acc[2] += min_ade(gt, p, k)?;
        acc[3] += min_fde(gt, p, k)?;
    }
    let n = gts.len() as f64;
    Ok(EvalSummary { minade_k1: acc[0] / n, minfde_k1: acc[1] / n, minade_k6: acc[2] / n, minfde_k6: acc[3] / n, n: gts.len() })
}

/// Per-scenario minADE over every mode.
pub fn min_ade_all(gts: &[Vec<Point>], preds: &[PredictionSet]) -> Result<Vec<f64>> {
    gts.iter().zip(preds).map(|(g, p)| min_ade(g, p, p.trajectories.len())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointStats {
    pub mean: f64,
    pub median: f64,
}

/// Distance from the ground-truth end point to the closest valid centerline
/// end point.
pub fn endpoint_error(prior: &CenterlinePrior, gt_end: Point) -> Result<f64> {
    prior
        .valid_centerlines()
        .filter_map(|c| c.last())
        .map(|&e| geometry::dist(e, gt_end))
        .min_by(f64::total_cmp)
        .ok_or(Error::NoValidCenterline)
}

pub fn endpoint_error_stats(priors: &[CenterlinePrior], gt_ends: &[Point]) -> Result<EndpointStats> {
    if priors.is_empty() {
        return Err(Error::EmptySet);
    }
    if priors.len() != gt_ends.len() {
        return Err(Error::ShapeMismatch(format!("{} priors, {} end points", priors.len(), gt_ends.len())));
    }
    let errs = priors.iter().zip(gt_ends).map(|(p, &g)| endpoint_error(p, g)).collect::<Result<Vec<_>>>()?;
    Ok(summarize(&errs))
}

/// Mean and median (midpoint average for even counts) of a non-empty slice.
pub fn summarize(values: &[f64]) -> EndpointStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    EndpointStats { mean: v.iter().sum::<f64>() / n as f64, median }
}
