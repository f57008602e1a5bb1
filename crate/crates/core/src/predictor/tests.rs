use super::*;
use crate::map_prior::CenterlinePrior;
use crate::scenario::{generate_synthetic, LaneTopology, MotionModel, SynthSpec};
use rand::Rng;

fn sample(topo: LaneTopology, agents: usize, seed: u64) -> Sample {
    let mut spec = SynthSpec::new(MotionModel::Cv, topo, seed);
    spec.n_agents = agents;
    spec.noise_sigma = 0.1;
    Sample::prepare(&generate_synthetic(&spec), &PrepConfig::default()).unwrap()
}

/// Every slot valid, with three distinct straight lines.
fn full_prior(mut s: Sample) -> Sample {
    let p: &mut CenterlinePrior = s.prior.as_mut().unwrap();
    for (j, line) in p.centerlines.iter_mut().enumerate() {
        *line = (0..30).map(|i| [j as f64 * 0.5 * i as f64, 1.2 * i as f64]).collect();
    }
    p.valid = vec![true; 3];
    s
}

/// Map heads start at zero; tests that look at trajectories want them live.
fn randomize_heads<T: Scalar>(model: &mut Model<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for head in model.layout.decoder.heads.clone() {
        for id in [head.w, head.b] {
            model.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = T::of(rng.random_range(-0.3..0.3)));
        }
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn parameter_counts() {
    // social: encoder 17152, social module 50304, decoder 1640 + 27136 + 780,
    // confidence 25686
    assert_eq!(count_params(&ModelConfig::new(Variant::Social)), 122_698);
    // map adds area MLP 152832, lane MLP 65792, fusion 41088, offset
    // embedding 1640 and widens the decoder by 59904 + 768
    assert_eq!(count_params(&ModelConfig::new(Variant::Map)), 444_722);
    for v in [Variant::Social, Variant::Map] {
        let m = Model::<f32>::new(ModelConfig::new(v), 1).unwrap();
        assert_eq!(m.num_params(), count_params(&m.config));
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(m.save(dir.path()).unwrap().param_count(), m.num_params());
    }
}

#[test]
fn flop_count_matches_tape() {
    for v in [Variant::Social, Variant::Map] {
        let model = Model::<f64>::new(ModelConfig::new(v), 2).unwrap();
        for n in [1, 3, 10] {
            let s = full_prior(sample(LaneTopology::Straight, n, 5));
            let mut tape = Tape::new(Mode::Eval, 0);
            model.forward(&mut tape, &[&s]).unwrap();
            assert_eq!(tape.flops(), count_flops(&model.config, n).total(), "{v:?} with {n} agents");
        }
    }
}

#[test]
fn zero_parameters_give_bias_rays() {
    let mut model = Model::<f64>::new(ModelConfig::default(), 3).unwrap();
    model.store.zero_values();
    let heads = model.layout.decoder.heads.clone();
    for (m, h) in heads.iter().enumerate() {
        let b = model.store.value_mut(h.b);
        b.set(0, 0, 0.1 * m as f64);
        b.set(0, 1, 1.0 + m as f64);
    }
    let mut s = sample(LaneTopology::Straight, 1, 1);
    s.agents[0] = vec![[0.0, 0.0]; 20];
    let pred = &model.predict(&[&s]).unwrap()[0];
    for (m, traj) in pred.trajectories.iter().enumerate() {
        for (t, p) in traj.iter().enumerate() {
            let k = (t + 1) as f64;
            assert!((p[0] - 0.1 * m as f64 * k).abs() < 1e-12);
            assert!((p[1] - (1.0 + m as f64) * k).abs() < 1e-12);
        }
    }
    assert!(pred.confidences.iter().all(|c| (c - 1.0 / 6.0).abs() < 1e-15));
}

/// The decoder written out with plain loops for one batch element and mode.
fn reference_decode(model: &Model<f64>, s: &Sample, h0: &[f64], mode: usize) -> Vec<Point> {
    let c = &model.config;
    let st = &model.store;
    let dec = &model.layout.decoder;
    let lin = |l: &Linear, x: &[f64]| -> Vec<f64> {
        let (w, b) = (st.value(l.w), st.value(l.b));
        (0..l.outputs).map(|o| b.get(0, o) + x.iter().enumerate().map(|(i, v)| v * w.get(i, o)).sum::<f64>()).collect()
    };
    let obs = s.target_observed();
    let mut window = vec![0.0; 2 * c.window];
    for i in 1..obs.len() {
        let slot = c.window - (obs.len() - i);
        window[2 * slot] = obs[i][0] - obs[i - 1][0];
        window[2 * slot + 1] = obs[i][1] - obs[i - 1][1];
    }
    let n = c.decoder_hidden();
    let (wi, wh, b) = (st.value(dec.lstm.w_ih), st.value(dec.lstm.w_hh), st.value(dec.lstm.b));
    let mut h = h0.to_vec();
    let mut cell = vec![0.0; n];
    let mut pos = [0.0, 0.0];
    let mut out = Vec::new();
    for t in 1..=c.pred_len {
        let mut x = lin(&dec.embed, &window);
        x.push(t as f64 / c.pred_len as f64);
        let z: Vec<f64> = (0..4 * n)
            .map(|g| {
                b.get(0, g)
                    + x.iter().enumerate().map(|(i, v)| v * wi.get(i, g)).sum::<f64>()
                    + h.iter().enumerate().map(|(i, v)| v * wh.get(i, g)).sum::<f64>()
            })
            .collect();
        for j in 0..n {
            cell[j] = sig(z[n + j]) * cell[j] + sig(z[j]) * z[2 * n + j].tanh();
            h[j] = sig(z[3 * n + j]) * cell[j].tanh();
        }
        let d = lin(&dec.heads[mode], &h);
        pos = [pos[0] + d[0], pos[1] + d[1]];
        out.push(pos);
        window.drain(..2);
        window.extend_from_slice(&d);
    }
    out
}

#[test]
fn decoder_matches_loop_reference() {
    let model = Model::<f64>::new(ModelConfig::default(), 4).unwrap();
    let samples: Vec<Sample> = (0..3).map(|i| sample(LaneTopology::Curve, 1 + i, 10 + i as u64)).collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    let mut tape = Tape::new(Mode::Eval, 0);
    let out = model.forward(&mut tape, &batch).unwrap();
    // the social context is the decoder's initial state; recover it
    let mut t2 = Tape::new(Mode::Eval, 0);
    let ctx: Vec<Vec<f64>> = batch
        .iter()
        .map(|s| {
            let disp: Vec<Vec<Point>> =
                s.agents.iter().map(|a| a.windows(2).map(|p| [p[1][0] - p[0][0], p[1][1] - p[0][1]]).collect()).collect();
            let enc = model.encode_history(&mut t2, &disp).unwrap();
            let last: Vec<Point> = s.agents.iter().map(|a| a[19]).collect();
            let g = build_graph(&t2, enc, &last, &slices_from_sizes(&[s.num_agents()])).unwrap();
            let all = model.layout.social.forward(&mut t2, &model.store, &g).unwrap();
            t2.value(all).row(0).to_vec()
        })
        .collect();
    let sets = model.prediction_sets(&tape, &out);
    for (b, s) in batch.iter().enumerate() {
        for m in 0..6 {
            let expect = reference_decode(&model, s, &ctx[b], m);
            for (p, q) in sets[b].trajectories[m].iter().zip(&expect) {
                assert!((p[0] - q[0]).abs() < 1e-10 && (p[1] - q[1]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn history_encoding_is_shared_and_order_free() {
    let model = Model::<f64>::new(ModelConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut seqs: Vec<Vec<Point>> =
        (0..5).map(|_| (0..19).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)]).collect()).collect();
    seqs[3] = seqs[1].clone();
    let mut t = Tape::new(Mode::Eval, 0);
    let h = model.encode_history(&mut t, &seqs).unwrap();
    let h = t.value(h).clone();
    assert_eq!(h.row(1), h.row(3));
    let order = [4, 2, 0, 3, 1];
    let shuffled: Vec<Vec<Point>> = order.iter().map(|&i| seqs[i].clone()).collect();
    let hs = model.encode_history(&mut t, &shuffled).unwrap();
    for (r, &i) in order.iter().enumerate() {
        assert_eq!(t.value(hs).row(r), h.row(i));
    }
    let zero = vec![vec![[0.0, 0.0]; 19]];
    let mut zm = model.clone();
    zm.store.zero_values();
    let mut t = Tape::new(Mode::Eval, 0);
    let hz = zm.encode_history(&mut t, &zero).unwrap();
    assert!(t.value(hz).data().iter().all(|v| *v == 0.0));
    assert!(model.encode_history(&mut t, &[vec![[0.0, 0.0]; 5]]).is_err());
}

#[test]
fn map_encoder_paths() {
    let model = Model::<f64>::new(ModelConfig::new(Variant::Map), 6).unwrap();
    let base = full_prior(sample(LaneTopology::Fork, 2, 7));
    let mut dup = base.clone();
    {
        let p = dup.prior.as_mut().unwrap();
        p.centerlines[2] = p.centerlines[0].clone();
    }
    let mut t = Tape::new(Mode::Eval, 0);
    let (_, spec) = model.encode_map(&mut t, &[&dup]).unwrap();
    assert_eq!(t.value(spec).row(0), t.value(spec).row(2));

    let mut shifted = base.clone();
    shifted.prior.as_mut().unwrap().centerlines[1].iter_mut().for_each(|p| p[0] += 0.5);
    let (_, a) = model.encode_map(&mut t, &[&base]).unwrap();
    let (_, b) = model.encode_map(&mut t, &[&shifted]).unwrap();
    let moved: f64 = t.value(a).row(1).iter().zip(t.value(b).row(1)).map(|(x, y)| (x - y).abs()).sum();
    assert!(moved > 1e-6);

    let mut padded = base.clone();
    padded.prior.as_mut().unwrap().valid = vec![true, false, false];
    let (_, p) = model.encode_map(&mut t, &[&padded]).unwrap();
    let zero_row = t.constant(Tensor::zeros(1, 60));
    let image = model.layout.map.unwrap().lane.forward(&mut t, &model.store, zero_row).unwrap();
    assert_eq!(t.value(p).row(1), t.value(image).row(0));
    let pred = &model.predict(&[&padded]).unwrap()[0];
    assert!(pred.trajectories.iter().flatten().all(|p| p[0].is_finite() && p[1].is_finite()));

    let mut zm = model.clone();
    zm.store.zero_values();
    let mut t = Tape::new(Mode::Eval, 0);
    let (st, sp) = zm.encode_map(&mut t, &[&base]).unwrap();
    assert!(t.value(st).data().iter().chain(t.value(sp).data()).all(|v| *v == 0.0));
}

#[test]
fn missing_prior_is_reported() {
    let model = Model::<f64>::new(ModelConfig::new(Variant::Map), 6).unwrap();
    let mut s = sample(LaneTopology::Straight, 1, 2);
    s.prior = None;
    assert!(matches!(model.predict(&[&s]), Err(Error::MissingPrior)));
}

#[test]
fn batching_and_repeats_are_consistent() {
    for v in [Variant::Social, Variant::Map] {
        let mut model = Model::<f64>::new(ModelConfig::new(v), 8).unwrap();
        randomize_heads(&mut model, 1);
        let samples: Vec<Sample> = (0..4).map(|i| sample(LaneTopology::Fork, 1 + i % 3, 30 + i as u64)).collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        let together = model.predict(&batch).unwrap();
        assert_eq!(together, model.predict(&batch).unwrap());
        for (s, p) in samples.iter().zip(&together) {
            let alone = &model.predict(&[s]).unwrap()[0];
            let sum: f64 = p.confidences.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6 && p.confidences.iter().all(|c| *c >= 0.0));
            for (a, b) in alone.trajectories.iter().flatten().zip(p.trajectories.iter().flatten()) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
            for (a, b) in alone.confidences.iter().zip(&p.confidences) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let mut model = Model::<f32>::new(ModelConfig::new(Variant::Map), 9).unwrap();
    randomize_heads(&mut model, 2);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = Model::<f32>::load(dir.path()).unwrap();
    let s = sample(LaneTopology::Curve, 2, 3);
    assert_eq!(model.predict(&[&s]).unwrap(), back.predict(&[&s]).unwrap());
    let json = model.predict(&[&s]).unwrap()[0].to_json().unwrap();
    assert_eq!(PredictionSet::from_json(&json).unwrap(), model.predict(&[&s]).unwrap()[0]);
}

#[test]
fn config_validation() {
    assert!(ModelConfig { window: 21, ..Default::default() }.validate().is_err());
    assert!(matches!(ModelConfig { heads: 5, ..Default::default() }.validate(), Err(Error::IndivisibleHeads { .. })));
    assert!(ModelConfig { window: 10, ..Default::default() }.validate().is_ok());
}

#[test]
fn svg_mentions_every_mode() {
    let model = Model::<f64>::new(ModelConfig::new(Variant::Map), 1).unwrap();
    let s = sample(LaneTopology::Fork, 2, 4);
    let pred = &model.predict(&[&s]).unwrap()[0];
    let svg = render_svg(&s, pred);
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("stroke-opacity").count(), 6);
}

#[test]
fn map_modes_start_together() {
    let map = Model::<f64>::new(ModelConfig::new(Variant::Map), 3).unwrap();
    let s = full_prior(sample(LaneTopology::Fork, 2, 4));
    let p = &map.predict(&[&s]).unwrap()[0];
    assert!(p.trajectories.iter().flatten().all(|q| *q == [0.0, 0.0]));
    let social = Model::<f64>::new(ModelConfig::new(Variant::Social), 3).unwrap();
    let p = &social.predict(&[&s]).unwrap()[0];
    assert_ne!(p.trajectories[0], p.trajectories[1]);
}
