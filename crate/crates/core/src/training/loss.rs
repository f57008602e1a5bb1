use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nn::{Tape, Tensor, Var};
use crate::predictor::ForwardOut;
use crate::scalar::Scalar;

/// Floor applied to confidences inside the logarithm.
pub const CONFIDENCE_FLOOR: f64 = 1e-12;

/// `alpha NLL + beta hinge + gamma WTA`, with hinge margin `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1, gamma: 0.65, epsilon: 1e-4 }
    }
}

impl LossWeights {
    /// NLL only.
    pub fn stage1(&self) -> Self {
        Self { beta: 0.0, gamma: 0.0, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma, self.epsilon].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub nll: f64,
    pub hinge: f64,
    pub wta: f64,
}

pub fn combined_loss(parts: LossParts, w: &LossWeights) -> f64 {
    w.alpha * parts.nll + w.beta * parts.hinge + w.gamma * parts.wta
}

/// Squared-error energy `1/2 sum_t |p_t - g_t|^2` of one mode.
fn energy(traj: &[Point], gt: &[Point]) -> f64 {
    0.5 * traj.iter().zip(gt).map(|(p, g)| (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sum::<f64>()
}

/// `-log sum_k c_k exp(-E_k)` under unit covariance, evaluated with the
/// max shift.
pub fn nll_loss(gt: &[Point], preds: &[Vec<Point>], conf: &[f64]) -> Result<f64> {
    check(gt, preds, conf)?;
    let logits: Vec<f64> = preds.iter().zip(conf).map(|(p, c)| c.max(CONFIDENCE_FLOOR).ln() - energy(p, gt)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(-(max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()))
}

fn check(gt: &[Point], preds: &[Vec<Point>], conf: &[f64]) -> Result<()> {
    if preds.is_empty() || preds.len() != conf.len() || preds.iter().any(|p| p.len() != gt.len()) {
        return Err(Error::ShapeMismatch(format!("{} modes, {} confidences, {} steps", preds.len(), conf.len(), gt.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WtaHinge {
    pub wta: f64,
    pub hinge: f64,
    pub winner: usize,
}

/// Mode whose end point is closest to the ground truth's, lowest index on ties.
pub fn winner(gt: &[Point], preds: &[Vec<Point>]) -> usize {
    let end = gt[gt.len() - 1];
    let d = |p: &Vec<Point>| {
        let e = p[p.len() - 1];
        (e[0] - end[0]).powi(2) + (e[1] - end[1]).powi(2)
    };
    let mut best = 0;
    for m in 1..preds.len() {
        if d(&preds[m]) < d(&preds[best]) {
            best = m;
        }
    }
    best
}

/// Mean Huber (threshold 1) over every coordinate.
pub fn smooth_l1(a: &[Point], b: &[Point]) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .flat_map(|(p, q)| [(p[0] - q[0]).abs(), (p[1] - q[1]).abs()])
        .map(|d| if d < 1.0 { 0.5 * d * d } else { d - 0.5 })
        .sum();
    total / (2 * a.len()) as f64
}

/// Smooth L1 of the winning mode, and the mean margin violation of the
/// other confidences against the winner's.
pub fn wta_hinge(gt: &[Point], preds: &[Vec<Point>], conf: &[f64], eps: f64) -> Result<WtaHinge> {
    check(gt, preds, conf)?;
    let w = winner(gt, preds);
    let k = preds.len();
    let hinge =
        if k == 1 { 0.0 } else { (0..k).filter(|&m| m != w).map(|m| (conf[m] + eps - conf[w]).max(0.0)).sum::<f64>() / (k - 1) as f64 };
    Ok(WtaHinge { wta: smooth_l1(&preds[w], gt), hinge, winner: w })
}

/// Batch losses recorded on the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVars {
    pub total: Var,
    pub nll: Var,
    pub hinge: Var,
    pub wta: Var,
    pub winners: Vec<usize>,
}

/// Batch means of every part over a forward pass; `gts[b]` is the
/// ground truth of batch element `b`.
pub fn batch_losses<T: Scalar>(tape: &mut Tape<T>, out: &ForwardOut, gts: &[&[Point]], w: &LossWeights) -> Result<LossVars> {
    let b = out.batch;
    let [rows, cols] = tape.shape(out.trajectories);
    let k = rows / b.max(1);
    if gts.len() != b || gts.iter().any(|g| 2 * g.len() != cols) || k * b != rows {
        return Err(Error::ShapeMismatch(format!("{} ground truths for a {:?} forward", gts.len(), [rows, cols])));
    }
    let gt_flat: Vec<f64> = gts.iter().flat_map(|g| g.iter().flatten().copied()).collect();
    let gt = tape.constant(Tensor::from_f64(b, cols, &gt_flat)?);
    let rep: Vec<usize> = (0..k).flat_map(|_| 0..b).collect();
    let gt_rep = tape.gather_rows(gt, &rep)?;

    let diff = tape.sub(out.trajectories, gt_rep)?;
    let sq = tape.square(diff);
    let e = tape.row_sums(sq);
    let e = tape.reshape(e, k, b)?;
    let e = tape.transpose(e);
    let e = tape.scale(e, -0.5);
    let logc = tape.log(out.confidences, CONFIDENCE_FLOOR);
    let logits = tape.add(logc, e)?;
    let lse = tape.logsumexp_rows(logits);
    let nll = tape.mean(lse);
    let nll = tape.scale(nll, -1.0);

    let traj = tape.value(out.trajectories);
    let winners: Vec<usize> = (0..b)
        .map(|i| {
            let modes: Vec<Vec<Point>> =
                (0..k).map(|m| traj.row(m * b + i).chunks(2).map(|p| [p[0].f64(), p[1].f64()]).collect()).collect();
            winner(gts[i], &modes)
        })
        .collect();
    let rows_won: Vec<usize> = winners.iter().enumerate().map(|(i, &m)| m * b + i).collect();
    let best = tape.gather_rows(out.trajectories, &rows_won)?;
    let wta = tape.smooth_l1(best, gt)?;

    let hinge = if k == 1 {
        tape.constant(Tensor::scalar(T::zero()))
    } else {
        let mut onehot = Tensor::zeros(b, k);
        let mut others = Tensor::filled(b, k, T::one());
        for (i, &m) in winners.iter().enumerate() {
            onehot.set(i, m, T::one());
            others.set(i, m, T::zero());
        }
        let onehot = tape.constant(onehot);
        let others = tape.constant(others);
        let ones = tape.constant(Tensor::filled(1, k, T::one()));
        let picked = tape.mul(out.confidences, onehot)?;
        let cw = tape.row_sums(picked);
        let cw = tape.matmul(cw, ones)?;
        let gap = tape.sub(out.confidences, cw)?;
        let gap = tape.add_scalar(gap, w.epsilon);
        let gap = tape.relu(gap);
        let gap = tape.mul(gap, others)?;
        let total = tape.sum(gap);
        tape.scale(total, 1.0 / ((k - 1) * b) as f64)
    };

    let a = tape.scale(nll, w.alpha);
    let h = tape.scale(hinge, w.beta);
    let g = tape.scale(wta, w.gamma);
    let total = tape.add(a, h)?;
    let total = tape.add(total, g)?;
    Ok(LossVars { total, nll, hinge, wta, winners })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ray(dx: f64) -> Vec<Point> {
        (1..=30).map(|t| [dx * t as f64, t as f64]).collect()
    }

    #[test]
    fn closed_forms() {
        let gt = ray(0.0);
        assert_eq!(nll_loss(&gt, std::slice::from_ref(&gt), &[1.0]).unwrap(), 0.0);
        let far = ray(10.0);
        let two = nll_loss(&gt, &[gt.clone(), far.clone()], &[0.5, 0.5]).unwrap();
        assert!((two - 2f64.ln()).abs() < 1e-12);
        let near = ray(0.01);
        let e2 = energy(&near, &gt);
        let expect = -(0.5 + 0.5 * (-e2).exp()).ln();
        assert!((nll_loss(&gt, &[gt.clone(), near], &[0.5, 0.5]).unwrap() - expect).abs() < 1e-12);
        assert!(expect <= 2f64.ln());

        let preds = [gt.clone(), far];
        let h = wta_hinge(&gt, &preds, &[0.6, 0.4], 1e-4).unwrap();
        assert_eq!((h.winner, h.hinge, h.wta), (0, 0.0, 0.0));
        let h = wta_hinge(&gt, &preds, &[0.4, 0.6], 1e-4).unwrap();
        assert!((h.hinge - 0.2001).abs() < 1e-12);
        let h = wta_hinge(&gt, &[ray(1.0)], &[1.0], 1e-4).unwrap();
        assert_eq!(h.hinge, 0.0);

        let w = LossWeights::default();
        assert_eq!(combined_loss(LossParts { nll: 2.0, hinge: 1.0, wta: 1.0 }, &w), 2.75);
        assert_eq!(combined_loss(LossParts { nll: 2.0, hinge: 1.0, wta: 1.0 }, &w.stage1()), 2.0);
    }

    fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> (Vec<Point>, Vec<Vec<Point>>, Vec<f64>) {
        let gt: Vec<Point> = (0..30).map(|t| [rng.random_range(-1.0..1.0), t as f64 * 0.3]).collect();
        let preds =
            (0..k).map(|_| gt.iter().map(|p| [p[0] + rng.random_range(-2.0..2.0), p[1] + rng.random_range(-2.0..2.0)]).collect()).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = raw.iter().sum();
        (gt, preds, raw.iter().map(|c| c / z).collect())
    }

    #[test]
    fn nll_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (gt, mut preds, conf) = random_instance(&mut rng, 6);
            // keep the energies small enough for the unshifted sum
            for p in &mut preds {
                for (q, g) in p.iter_mut().zip(&gt) {
                    q[0] = g[0] + (q[0] - g[0]) * 0.2;
                    q[1] = g[1] + (q[1] - g[1]) * 0.2;
                }
            }
            let direct: f64 = -preds.iter().zip(&conf).map(|(p, c)| c * (-energy(p, &gt)).exp()).sum::<f64>().ln();
            assert!((nll_loss(&gt, &preds, &conf).unwrap() - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn wta_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let (gt, preds, conf) = random_instance(&mut rng, 6);
            let dists: Vec<f64> = preds.iter().map(|p| ((p[29][0] - gt[29][0]).powi(2) + (p[29][1] - gt[29][1]).powi(2)).sqrt()).collect();
            let best = (0..6).fold(0, |b, m| if dists[m] < dists[b] { m } else { b });
            let h = wta_hinge(&gt, &preds, &conf, 1e-4).unwrap();
            assert_eq!(h.winner, best);
            assert_eq!(h.wta, smooth_l1(&preds[best], &gt));
            let mut hinge = 0.0;
            for m in 0..6 {
                if m != best {
                    hinge += (conf[m] + 1e-4 - conf[best]).max(0.0);
                }
            }
            assert_eq!(h.hinge, hinge / 5.0);
        }
    }

    #[test]
    fn nll_prefers_the_better_mode() {
        let gt = ray(0.0);
        let preds = [ray(0.02), ray(0.2)];
        let at = |c0: f64| nll_loss(&gt, &preds, &[c0, 1.0 - c0]).unwrap();
        assert!(at(0.6) < at(0.5) && at(0.9) < at(0.6));
    }

    proptest! {
        #[test]
        fn hinge_zero_iff_margin_holds(c in proptest::collection::vec(0.0f64..1.0, 2..7)) {
            let z: f64 = c.iter().sum::<f64>() + 1e-9;
            let conf: Vec<f64> = c.iter().map(|v| v / z).collect();
            let gt = ray(0.0);
            let mut preds: Vec<Vec<Point>> = (0..conf.len()).map(|m| ray(0.5 + m as f64)).collect();
            preds[0] = ray(0.0);
            let h = wta_hinge(&gt, &preds, &conf, 1e-4).unwrap();
            let holds = (1..conf.len()).all(|m| conf[0] >= conf[m] + 1e-4);
            prop_assert_eq!(h.hinge == 0.0, holds);
        }

        #[test]
        fn combined_is_monotone(n in 0.0f64..5.0, h in 0.0f64..5.0, w in 0.0f64..5.0, bump in 0.0f64..1.0) {
            let lw = LossWeights::default();
            let f = |nll, hinge, wta| combined_loss(LossParts { nll, hinge, wta }, &lw);
            let base = f(n, h, w);
            prop_assert!(f(n + bump, h, w) >= base);
            prop_assert!(f(n, h + bump, w) >= base);
            prop_assert!(f(n, h, w + bump) >= base);
        }
    }

    /// Forward pass stand-in built from fixed trajectories and logits.
    fn fake_forward(tape: &mut Tape<f64>, trajs: &[Vec<Vec<Point>>], logits: &Tensor<f64>, track: bool) -> (ForwardOut, Var, Var) {
        let b = trajs.len();
        let k = trajs[0].len();
        let mut flat = Vec::new();
        for m in 0..k {
            for t in trajs {
                flat.extend(t[m].iter().flatten());
            }
        }
        let tr = Tensor::from_f64(k * b, 60, &flat).unwrap();
        let (tv, lv) =
            if track { (tape.variable(tr), tape.variable(logits.clone())) } else { (tape.constant(tr), tape.constant(logits.clone())) };
        let conf = tape.softmax(lv, crate::nn::Axis::Cols);
        (ForwardOut { trajectories: tv, confidences: conf, batch: b }, tv, lv)
    }

    #[test]
    fn tape_losses_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = LossWeights::default();
        for _ in 0..20 {
            let b = rng.random_range(1..4);
            let inst: Vec<_> = (0..b).map(|_| random_instance(&mut rng, 6)).collect();
            let logits = Tensor::from_vec(b, 6, (0..6 * b).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mut tape = Tape::new(Mode::Eval, 0);
            let trajs: Vec<Vec<Vec<Point>>> = inst.iter().map(|i| i.1.clone()).collect();
            let (out, _, _) = fake_forward(&mut tape, &trajs, &logits, false);
            let gts: Vec<&[Point]> = inst.iter().map(|i| i.0.as_slice()).collect();
            let l = batch_losses(&mut tape, &out, &gts, &w).unwrap();
            let conf = tape.value(out.confidences).clone();
            let (mut nll, mut hinge, mut wta) = (0.0, 0.0, 0.0);
            for (i, (gt, preds, _)) in inst.iter().enumerate() {
                let c = conf.row(i);
                nll += nll_loss(gt, preds, c).unwrap();
                let wh = wta_hinge(gt, preds, c, w.epsilon).unwrap();
                hinge += wh.hinge;
                wta += wh.wta;
                assert_eq!(l.winners[i], wh.winner);
            }
            let n = b as f64;
            assert!((tape.value(l.nll).item() - nll / n).abs() < 1e-9);
            assert!((tape.value(l.hinge).item() - hinge / n).abs() < 1e-12);
            assert!((tape.value(l.wta).item() - wta / n).abs() < 1e-12);
            let parts = LossParts { nll: nll / n, hinge: hinge / n, wta: wta / n };
            assert!((tape.value(l.total).item() - combined_loss(parts, &w)).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use crate::nn::gradcheck::check_inputs;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let b = rng.random_range(1..3);
            let inst: Vec<_> = (0..b).map(|_| random_instance(&mut rng, 6)).collect();
            let trajs: Vec<Vec<Vec<Point>>> =
                inst.iter().map(|i| i.1.iter().map(|p| p.iter().map(|q| [q[0] * 0.3, q[1] * 0.3]).collect()).collect()).collect();
            let gts: Vec<Vec<Point>> = inst.iter().map(|i| i.0.iter().map(|q| [q[0] * 0.3, q[1] * 0.3]).collect()).collect();
            let logits = Tensor::from_vec(b, 6, (0..6 * b).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mut flat = Vec::new();
            for m in 0..6 {
                for t in &trajs {
                    flat.extend(t[m].iter().flatten());
                }
            }
            let tr = Tensor::from_f64(6 * b, 60, &flat).unwrap();
            let w = LossWeights::default();
            let err = check_inputs(&[tr, logits], |tape, v| {
                let conf = tape.softmax(v[1], crate::nn::Axis::Cols);
                let out = ForwardOut { trajectories: v[0], confidences: conf, batch: b };
                let g: Vec<&[Point]> = gts.iter().map(|g| g.as_slice()).collect();
                Ok(batch_losses(tape, &out, &g, &w)?.total)
            })
            .unwrap();
            assert!(err < 1e-4, "relative error {err}");
        }
    }
}
