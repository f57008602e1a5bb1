//! End-to-end predictor: LSTM history encoder, social module, optional map
//! encoders, autoregressive window decoder and confidence head.
//!
//! Decoder rows are mode-major: row `m * B + b` carries mode `m` of batch
//! element `b`.

mod render;
mod sample;

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::interaction::{build_graph, slices_from_sizes, SocialModule};
use crate::nn::checkpoint::{self, Manifest};
use crate::nn::{Axis, BatchNorm, Linear, LstmCell, Mode, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub use render::render_svg;
pub use sample::{PrepConfig, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Social,
    Map,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "social" => Ok(Self::Social),
            "map" => Ok(Self::Map),
            other => Err(Error::InvalidConfig(format!("unknown variant {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub obs_len: usize,
    pub pred_len: usize,
    pub h_social: usize,
    /// Width of the map encoders and of the map-variant decoder.
    pub h_map: usize,
    pub heads: usize,
    pub gcn_layers: usize,
    pub window: usize,
    pub modes: usize,
    pub centerlines: usize,
    pub area_points: usize,
    /// First hidden layer of the map MLPs.
    pub map_mlp_hidden: usize,
    pub conf_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Social,
            obs_len: 20,
            pred_len: 30,
            h_social: 64,
            h_map: 128,
            heads: 4,
            gcn_layers: 2,
            window: 20,
            modes: 6,
            centerlines: 3,
            area_points: 200,
            map_mlp_hidden: 256,
            conf_hidden: 60,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.obs_len < 2 || self.pred_len == 0 {
            return bad("obs_len >= 2 and pred_len >= 1");
        }
        if self.window == 0 || self.window > self.obs_len {
            return bad("1 <= window <= obs_len");
        }
        if self.heads == 0 || !self.h_social.is_multiple_of(self.heads) {
            return Err(Error::IndivisibleHeads { hidden: self.h_social, heads: self.heads });
        }
        if self.modes == 0 || self.centerlines == 0 || self.gcn_layers == 0 || self.conf_hidden == 0 {
            return bad("modes, centerlines, gcn_layers and conf_hidden must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout in [0, 1)");
        }
        Ok(())
    }

    /// Hidden width of the decoder LSTM.
    pub fn decoder_hidden(&self) -> usize {
        match self.variant {
            Variant::Social => self.h_social,
            Variant::Map => self.h_map,
        }
    }

    /// Flattened window plus the time scalar.
    pub fn decoder_input(&self) -> usize {
        2 * self.window + 1
    }
}

/// Three-layer MLP: `in -> hidden -> out -> out` with batch norm and ReLU
/// after the first two layers and dropout after the first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub bn1: BatchNorm,
    pub l2: Linear,
    pub bn2: BatchNorm,
    pub l3: Linear,
    pub dropout: f64,
}

impl Mlp {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dims: [usize; 3], dropout: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let [i, h, o] = dims;
        Ok(Self {
            l1: Linear::new(store, &format!("{name}.l1"), i, h, rng)?,
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), h)?,
            l2: Linear::new(store, &format!("{name}.l2"), h, o, rng)?,
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), o)?,
            l3: Linear::new(store, &format!("{name}.l3"), o, o, rng)?,
            dropout,
        })
    }

    pub fn num_params([i, h, o]: [usize; 3]) -> usize {
        Linear::num_params(i, h) + BatchNorm::num_params(h) + Linear::num_params(h, o) + BatchNorm::num_params(o) + Linear::num_params(o, o)
    }

    /// Eval-mode count (dropout is free).
    pub fn flops(rows: usize, [i, h, o]: [usize; 3]) -> u64 {
        Linear::flops(rows, i, h)
            + BatchNorm::flops(rows, h)
            + (rows * h) as u64
            + Linear::flops(rows, h, o)
            + BatchNorm::flops(rows, o)
            + (rows * o) as u64
            + Linear::flops(rows, o, o)
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let x = self.l1.forward(tape, store, x)?;
        let x = self.bn1.forward(tape, store, x)?;
        let x = tape.relu(x);
        let x = tape.dropout(x, self.dropout);
        let x = self.l2.forward(tape, store, x)?;
        let x = self.bn2.forward(tape, store, x)?;
        let x = tape.relu(x);
        self.l3.forward(tape, store, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEncoder {
    pub area: Mlp,
    pub lane: Mlp,
    /// `social | static | specific -> decoder hidden`.
    pub fusion: Linear,
    /// Embedding of the window-to-centerline offsets.
    pub dist_embed: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub embed: Linear,
    pub lstm: LstmCell,
    pub heads: Vec<Linear>,
}

/// `in -> hidden`, ReLU, `h + relu(W h + b)`, `hidden -> modes`, softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceHead {
    pub input: Linear,
    pub residual: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub encoder: LstmCell,
    pub social: SocialModule,
    pub map: Option<MapEncoder>,
    pub decoder: Decoder,
    pub confidence: ConfidenceHead,
}

/// Graph outputs of one batched forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOut {
    /// `modes * B x 2 pred_len` absolute positions, `x, y` interleaved.
    pub trajectories: Var,
    /// `B x modes`.
    pub confidences: Var,
    pub batch: usize,
}

/// `k` trajectories of `pred_len` target-frame points and their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    #[serde(rename = "modes")]
    pub trajectories: Vec<Vec<Point>>,
    pub confidences: Vec<f64>,
}

impl PredictionSet {
    /// Index of the most confident mode, lowest index on ties.
    pub fn best_mode(&self) -> usize {
        let mut best = 0;
        for (m, c) in self.confidences.iter().enumerate() {
            if *c > self.confidences[best] {
                best = m;
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        serde_json::from_str(raw).map_err(|e| Error::MalformedInput(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let encoder = LstmCell::new(s, "encoder.lstm", 2, c.h_social, &mut rng)?;
        let social = SocialModule::new(s, "social", c.h_social, c.heads, c.gcn_layers, &mut rng)?;
        let w2 = 2 * c.window;
        let map = match c.variant {
            Variant::Social => None,
            Variant::Map => Some(MapEncoder {
                area: Mlp::new(s, "map.area", [2 * c.area_points, c.map_mlp_hidden, c.h_map], c.dropout, &mut rng)?,
                lane: Mlp::new(s, "map.lane", [2 * c.pred_len, c.map_mlp_hidden, c.h_map], c.dropout, &mut rng)?,
                fusion: Linear::new(s, "map.fusion", c.h_social + 2 * c.h_map, c.h_map, &mut rng)?,
                dist_embed: Linear::new(s, "decoder.dist_embed", w2, w2, &mut rng)?,
            }),
        };
        let hd = c.decoder_hidden();
        let decoder = Decoder {
            embed: Linear::new(s, "decoder.embed", w2, w2, &mut rng)?,
            lstm: LstmCell::new(s, "decoder.lstm", c.decoder_input(), hd, &mut rng)?,
            heads: (0..c.modes).map(|m| Linear::new(s, &format!("decoder.head{m}"), hd, 2, &mut rng)).collect::<Result<_>>()?,
        };
        let confidence = ConfidenceHead {
            input: Linear::new(s, "confidence.input", c.modes * 2 * c.pred_len, c.conf_hidden, &mut rng)?,
            residual: Linear::new(s, "confidence.residual", c.conf_hidden, c.conf_hidden, &mut rng)?,
            output: Linear::new(s, "confidence.output", c.conf_hidden, c.modes, &mut rng)?,
        };
        // Map modes see their own centerline, which breaks the symmetry of
        // zero heads: every mode starts on the same trajectory, so the NLL
        // responsibilities begin at the confidences instead of one-hot.
        // Social modes share one hidden state and keep random heads.
        let zero_heads = if c.variant == Variant::Map { &decoder.heads[..] } else { &[] };
        for head in zero_heads {
            s.value_mut(head.w).data_mut().iter_mut().for_each(|v| *v = T::zero());
            s.value_mut(head.b).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        let layout = Layout { encoder, social, map, decoder, confidence };
        Ok(Self { config, layout, store })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }

    /// Same model with parameters converted to `U`.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), layout: self.layout.clone(), store: self.store.cast() }
    }

    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        checkpoint::save(&self.store, serde_json::to_value(&self.config)?, dir)
    }

    /// Rebuilds the layout from the stored config and loads the tensors.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(dir)?;
        let config: ModelConfig = serde_json::from_value(manifest.config.clone()).map_err(|e| Error::MalformedInput(e.to_string()))?;
        let mut model = Self::new(config, 0)?;
        checkpoint::load_into(dir, &mut model.store)?;
        Ok(model)
    }

    /// Final hidden state of the shared LSTM per agent; each sequence is
    /// `obs_len - 1` displacements.
    pub fn encode_history(&self, tape: &mut Tape<T>, displacements: &[Vec<Point>]) -> Result<Var> {
        let steps = self.config.obs_len - 1;
        if displacements.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(bad) = displacements.iter().find(|d| d.len() != steps) {
            return Err(Error::ShapeMismatch(format!("{} displacements, expected {steps}", bad.len())));
        }
        let n = displacements.len();
        let xs: Vec<Var> = (0..steps)
            .map(|t| {
                let flat: Vec<f64> = displacements.iter().flat_map(|d| d[t]).collect();
                Tensor::from_f64(n, 2, &flat).map(|x| tape.constant(x))
            })
            .collect::<Result<_>>()?;
        self.layout.encoder.run(tape, &self.store, &xs)
    }

    /// Static (`B x h_map`) and specific (`B * M x h_map`, row `b * M + j`)
    /// physical context.
    pub fn encode_map(&self, tape: &mut Tape<T>, batch: &[&Sample]) -> Result<(Var, Var)> {
        let map = self.layout.map.as_ref().ok_or_else(|| Error::InvalidConfig("social variant has no map encoder".into()))?;
        let c = &self.config;
        let mut area = Vec::with_capacity(batch.len() * 2 * c.area_points);
        let mut lanes = Vec::with_capacity(batch.len() * c.centerlines * 2 * c.pred_len);
        for s in batch {
            let p = s.prior.as_ref().ok_or(Error::MissingPrior)?;
            if p.plausible_points.len() != c.area_points || p.centerlines.len() != c.centerlines {
                return Err(Error::ShapeMismatch(format!(
                    "prior with {} area points and {} centerlines",
                    p.plausible_points.len(),
                    p.centerlines.len()
                )));
            }
            area.extend(p.plausible_points.iter().flatten());
            for (line, valid) in p.centerlines.iter().zip(&p.valid) {
                if line.len() != c.pred_len {
                    return Err(Error::ShapeMismatch(format!("centerline of {} points", line.len())));
                }
                if *valid {
                    lanes.extend(line.iter().flatten());
                } else {
                    lanes.extend(std::iter::repeat_n(0.0, 2 * c.pred_len));
                }
            }
        }
        let area = tape.constant(Tensor::from_f64(batch.len(), 2 * c.area_points, &area)?);
        let lanes = tape.constant(Tensor::from_f64(batch.len() * c.centerlines, 2 * c.pred_len, &lanes)?);
        let stat = map.area.forward(tape, &self.store, area)?;
        let spec = map.lane.forward(tape, &self.store, lanes)?;
        Ok((stat, spec))
    }

    /// Decoder initial hidden state per mode row.
    fn traffic_context(&self, tape: &mut Tape<T>, batch: &[&Sample], social: Var) -> Result<Var> {
        let (k, b) = (self.config.modes, batch.len());
        let rep: Vec<usize> = (0..k).flat_map(|_| 0..b).collect();
        let social = tape.gather_rows(social, &rep)?;
        let Some(map) = &self.layout.map else {
            return Ok(social);
        };
        let (stat, spec) = self.encode_map(tape, batch)?;
        let m = self.config.centerlines;
        let stat = tape.gather_rows(stat, &rep)?;
        let lane_rows: Vec<usize> = (0..k).flat_map(|mode| (0..b).map(move |i| i * m + mode % m)).collect();
        let spec = tape.gather_rows(spec, &lane_rows)?;
        let cat = tape.concat_cols(&[social, stat, spec])?;
        map.fusion.forward(tape, &self.store, cat)
    }

    /// Last `window` target displacements, zero-padded at the oldest end.
    fn initial_window(&self, s: &Sample) -> Vec<f64> {
        let w = self.config.window;
        let obs = s.target_observed();
        let mut out = vec![0.0; 2 * w];
        let disp: Vec<Point> = obs.windows(2).map(|p| [p[1][0] - p[0][0], p[1][1] - p[0][1]]).collect();
        let take = disp.len().min(w);
        for (slot, d) in disp[disp.len() - take..].iter().enumerate() {
            let at = 2 * (w - take + slot);
            out[at] = d[0];
            out[at + 1] = d[1];
        }
        out
    }

    /// Runs the decoder for every mode from `h0` (`modes * B` rows).
    pub fn decode(&self, tape: &mut Tape<T>, batch: &[&Sample], h0: Var) -> Result<Var> {
        let c = &self.config;
        let (k, b, w, p) = (c.modes, batch.len(), c.window, c.pred_len);
        let rows = k * b;
        if tape.shape(h0) != [rows, c.decoder_hidden()] {
            return Err(Error::ShapeMismatch(format!("decoder state {:?}", tape.shape(h0))));
        }
        let dec = &self.layout.decoder;
        let rep = |per: &dyn Fn(&Sample) -> Vec<f64>| -> Vec<f64> {
            let each: Vec<Vec<f64>> = batch.iter().map(|s| per(s)).collect();
            (0..k).flat_map(|_| each.iter().flatten().copied()).collect()
        };
        let window0 = rep(&|s| self.initial_window(s));
        let mut window = tape.constant(Tensor::from_f64(rows, 2 * w, &window0)?);
        let guide = match &self.layout.map {
            Some(_) => Some(CenterlineGuide::new(c, batch)?),
            None => None,
        };
        let mut pos_window = match &guide {
            Some(_) => {
                let pw = rep(&|s| s.target_observed()[c.obs_len - w..].iter().flatten().copied().collect());
                Some(tape.constant(Tensor::from_f64(rows, 2 * w, &pw)?))
            }
            None => None,
        };
        let (mut h, mut cell) = (h0, tape.constant(Tensor::zeros(rows, c.decoder_hidden())));
        let mut pos = tape.constant(Tensor::zeros(rows, 2));
        let mut outs = Vec::with_capacity(p);
        for t in 1..=p {
            let mut e = dec.embed.forward(tape, &self.store, window)?;
            if let (Some(g), Some(pw), Some(map)) = (&guide, pos_window, &self.layout.map) {
                let target = tape.constant(g.aligned(t)?);
                let mask = tape.constant(g.mask.cast());
                let offset = tape.sub(pw, target)?;
                let offset = tape.mul(offset, mask)?;
                let d = map.dist_embed.forward(tape, &self.store, offset)?;
                e = tape.add(e, d)?;
            }
            let time = tape.constant(Tensor::filled(rows, 1, T::of(t as f64 / p as f64)));
            let x = tape.concat_cols(&[e, time])?;
            (h, cell) = dec.lstm.step(tape, &self.store, x, h, cell)?;
            let mut disp = Vec::with_capacity(k);
            for (m, head) in dec.heads.iter().enumerate() {
                let hm = tape.slice_rows(h, m * b, (m + 1) * b)?;
                disp.push(head.forward(tape, &self.store, hm)?);
            }
            let disp = tape.concat_rows(&disp)?;
            pos = tape.add(pos, disp)?;
            outs.push(pos);
            let tail = tape.slice_cols(window, 2, 2 * w)?;
            window = tape.concat_cols(&[tail, disp])?;
            if let Some(pw) = pos_window {
                let tail = tape.slice_cols(pw, 2, 2 * w)?;
                pos_window = Some(tape.concat_cols(&[tail, pos])?);
            }
        }
        tape.concat_cols(&outs)
    }

    /// Mode probabilities from the flattened trajectories (`B x modes`). The
    /// trajectories enter as constants: the head learns to rank them but does
    /// not move them.
    pub fn confidence_head(&self, tape: &mut Tape<T>, trajectories: Var, batch: usize) -> Result<Var> {
        let c = &self.config;
        let [rows, cols] = tape.shape(trajectories);
        if rows != c.modes * batch || cols != 2 * c.pred_len {
            return Err(Error::ShapeMismatch(format!("confidence input {:?}", [rows, cols])));
        }
        let fixed = tape.constant(tape.value(trajectories).clone());
        let per_mode: Vec<Var> = (0..c.modes).map(|m| tape.slice_rows(fixed, m * batch, (m + 1) * batch)).collect::<Result<_>>()?;
        let flat = tape.concat_cols(&per_mode)?;
        let head = &self.layout.confidence;
        let h = head.input.forward(tape, &self.store, flat)?;
        let h = tape.relu(h);
        let r = head.residual.forward(tape, &self.store, h)?;
        let r = tape.relu(r);
        let h = tape.add(h, r)?;
        let logits = head.output.forward(tape, &self.store, h)?;
        Ok(tape.softmax(logits, Axis::Cols))
    }

    /// Batched forward pass; the tape mode selects batch statistics and dropout.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &[&Sample]) -> Result<ForwardOut> {
        if batch.is_empty() {
            return Err(Error::EmptySequence);
        }
        let c = &self.config;
        let mut disp = Vec::new();
        let mut last = Vec::new();
        let mut sizes = Vec::with_capacity(batch.len());
        for s in batch {
            if c.variant == Variant::Map && s.prior.is_none() {
                return Err(Error::MissingPrior);
            }
            sizes.push(s.num_agents());
            for track in &s.agents {
                if track.len() != c.obs_len {
                    return Err(Error::ShapeMismatch(format!("track of {} frames, expected {}", track.len(), c.obs_len)));
                }
                disp.push(track.windows(2).map(|p| [p[1][0] - p[0][0], p[1][1] - p[0][1]]).collect());
                last.push(track[c.obs_len - 1]);
            }
        }
        let encoded = self.encode_history(tape, &disp)?;
        let slices = slices_from_sizes(&sizes);
        let graph = build_graph(tape, encoded, &last, &slices)?;
        let all = self.layout.social.forward(tape, &self.store, &graph)?;
        let targets: Vec<usize> = slices.iter().map(|r| r.start).collect();
        let social = tape.gather_rows(all, &targets)?;
        let h0 = self.traffic_context(tape, batch, social)?;
        let trajectories = self.decode(tape, batch, h0)?;
        let confidences = self.confidence_head(tape, trajectories, batch.len())?;
        Ok(ForwardOut { trajectories, confidences, batch: batch.len() })
    }

    /// Unpacks the graph outputs of `forward`.
    pub fn prediction_sets(&self, tape: &Tape<T>, out: &ForwardOut) -> Vec<PredictionSet> {
        let (k, p, b) = (self.config.modes, self.config.pred_len, out.batch);
        let traj = tape.value(out.trajectories);
        let conf = tape.value(out.confidences);
        (0..b)
            .map(|i| PredictionSet {
                trajectories: (0..k)
                    .map(|m| traj.row(m * b + i).chunks(2).take(p).map(|xy| [xy[0].f64(), xy[1].f64()]).collect())
                    .collect(),
                confidences: conf.row(i).iter().map(|v| v.f64()).collect(),
            })
            .collect()
    }

    /// Eval-mode predictions.
    pub fn predict(&self, batch: &[&Sample]) -> Result<Vec<PredictionSet>> {
        let mut tape = Tape::new(Mode::Eval, 0);
        let out = self.forward(&mut tape, batch)?;
        Ok(self.prediction_sets(&tape, &out))
    }
}

/// Per-row centerline points aligned with the decoder's position window.
struct CenterlineGuide {
    /// Centerline of each decoder row (empty when padded).
    lines: Vec<Vec<Point>>,
    mask: Tensor<f64>,
    window: usize,
    pred_len: usize,
}

impl CenterlineGuide {
    fn new(c: &ModelConfig, batch: &[&Sample]) -> Result<Self> {
        let mut lines = Vec::with_capacity(c.modes * batch.len());
        let mut mask = Vec::with_capacity(c.modes * batch.len() * 2 * c.window);
        for m in 0..c.modes {
            for s in batch {
                let p = s.prior.as_ref().ok_or(Error::MissingPrior)?;
                let j = m % c.centerlines;
                let valid = p.valid.get(j).copied().unwrap_or(false);
                lines.push(if valid { p.centerlines[j].clone() } else { Vec::new() });
                mask.extend(std::iter::repeat_n(if valid { 1.0 } else { 0.0 }, 2 * c.window));
            }
        }
        let mask = Tensor::from_vec(lines.len(), 2 * c.window, mask)?;
        Ok(Self { lines, mask, window: c.window, pred_len: c.pred_len })
    }

    /// Centerline point for every slot of the window seen at decoder step
    /// `t`. Slot `i` holds the position at time `t - window + i` (0 is the
    /// last observation); time `s` maps to arc index `s (n - 1) / pred_len`,
    /// clamped to the ends.
    fn aligned<T: Scalar>(&self, t: usize) -> Result<Tensor<T>> {
        let w = self.window;
        let mut out = Vec::with_capacity(self.lines.len() * 2 * w);
        for line in &self.lines {
            for i in 0..w {
                let s = t as f64 - w as f64 + i as f64;
                let q = if line.is_empty() { [0.0, 0.0] } else { at_time(line, s, self.pred_len) };
                out.extend(q.map(T::of));
            }
        }
        Tensor::from_vec(self.lines.len(), 2 * w, out)
    }
}

fn at_time(line: &[Point], s: f64, pred_len: usize) -> Point {
    let n = line.len();
    if n == 1 {
        return line[0];
    }
    let u = (s.max(0.0) / pred_len as f64 * (n - 1) as f64).min((n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    let f = u - i as f64;
    [line[i][0] + f * (line[i + 1][0] - line[i][0]), line[i][1] + f * (line[i + 1][1] - line[i][1])]
}

/// Analytic parameter count of a configuration.
pub fn count_params(c: &ModelConfig) -> usize {
    let (hs, hm, w2) = (c.h_social, c.h_map, 2 * c.window);
    let hd = c.decoder_hidden();
    let mut n = LstmCell::num_params(2, hs)
        + SocialModule::num_params(hs, c.gcn_layers)
        + Linear::num_params(w2, w2)
        + LstmCell::num_params(c.decoder_input(), hd)
        + c.modes * Linear::num_params(hd, 2)
        + Linear::num_params(c.modes * 2 * c.pred_len, c.conf_hidden)
        + Linear::num_params(c.conf_hidden, c.conf_hidden)
        + Linear::num_params(c.conf_hidden, c.modes);
    if c.variant == Variant::Map {
        n += Mlp::num_params([2 * c.area_points, c.map_mlp_hidden, hm])
            + Mlp::num_params([2 * c.pred_len, c.map_mlp_hidden, hm])
            + Linear::num_params(hs + 2 * hm, hm)
            + Linear::num_params(w2, w2);
    }
    n
}

/// Eval-mode forward FLOPs of one scenario per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub encoder: u64,
    pub social: u64,
    pub map: u64,
    pub decoder: u64,
    pub confidence: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.encoder + self.social + self.map + self.decoder + self.confidence
    }
}

/// One multiply-accumulate is 2 FLOPs; elementwise arithmetic,
/// nonlinearities, reductions, softmax and scatter are 1 per element; batch
/// norm 2 per element; concatenation, slicing, gathers and transposes are
/// free. Every centerline slot is assumed valid.
pub fn count_flops(c: &ModelConfig, agents: usize) -> FlopBreakdown {
    let (hs, hm, w2, k) = (c.h_social, c.h_map, 2 * c.window, c.modes);
    let hd = c.decoder_hidden();
    let encoder = (c.obs_len as u64 - 1) * LstmCell::flops(agents, 2, hs);
    let social = SocialModule::flops(agents, hs, c.heads, c.gcn_layers);
    let mut map = 0;
    let mut step =
        Linear::flops(k, w2, w2) + LstmCell::flops(k, c.decoder_input(), hd) + k as u64 * Linear::flops(1, hd, 2) + (2 * k) as u64;
    if c.variant == Variant::Map {
        map = Mlp::flops(1, [2 * c.area_points, c.map_mlp_hidden, hm])
            + Mlp::flops(c.centerlines, [2 * c.pred_len, c.map_mlp_hidden, hm])
            + Linear::flops(k, hs + 2 * hm, hm);
        // offset, mask, embedding and the add into the spatial embedding
        step += (3 * k * w2) as u64 + Linear::flops(k, w2, w2);
    }
    let decoder = c.pred_len as u64 * step;
    let ch = c.conf_hidden;
    let confidence = Linear::flops(1, k * 2 * c.pred_len, ch)
        + ch as u64
        + Linear::flops(1, ch, ch)
        + 2 * ch as u64
        + Linear::flops(1, ch, k)
        + k as u64;
    FlopBreakdown { encoder, social, map, decoder, confidence }
}

#[cfg(test)]
mod tests;
