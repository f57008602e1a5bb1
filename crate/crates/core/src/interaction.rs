//! Social module: a fully connected per-scene agent graph, Crystal-GCN message
//! passing with edge features and multi-head self-attention.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::nn::{Axis, BatchNorm, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Agents of a batch of scenes. Node `k` of scene `s` lives at row
/// `scene_slices[s].start + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    pub node_features: Var,
    /// Dense `N x N`, `edges[k * N + l] = p_k - p_l`.
    pub edges: Vec<Point>,
    pub scene_slices: Vec<Range<usize>>,
    /// Ordered pairs `(i, j)`, `i != j`, inside one scene.
    pub pairs: Vec<(usize, usize)>,
}

impl InteractionGraph {
    pub fn nodes(&self) -> usize {
        self.scene_slices.last().map_or(0, |s| s.end)
    }

    pub fn edge(&self, k: usize, l: usize) -> Point {
        self.edges[k * self.nodes() + l]
    }

    /// Row index of the scene each node belongs to.
    pub fn scene_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.nodes()];
        for (s, r) in self.scene_slices.iter().enumerate() {
            out[r.clone()].iter_mut().for_each(|v| *v = s);
        }
        out
    }
}

/// Contiguous slices of the given sizes.
pub fn slices_from_sizes(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

pub fn build_graph<T: Scalar>(
    tape: &Tape<T>,
    encoded: Var,
    last_obs_positions: &[Point],
    scene_slices: &[Range<usize>],
) -> Result<InteractionGraph> {
    let n = tape.shape(encoded)[0];
    let mut expect = 0;
    for s in scene_slices {
        if s.start != expect || s.end <= s.start {
            return Err(Error::SliceMismatch(format!("slice {s:?} after row {expect}")));
        }
        expect = s.end;
    }
    if expect != n || last_obs_positions.len() != n {
        return Err(Error::SliceMismatch(format!("{n} encoded rows, {} positions, slices cover {expect}", last_obs_positions.len())));
    }
    let mut edges = vec![[0.0; 2]; n * n];
    let mut pairs = Vec::new();
    for s in scene_slices {
        for k in s.clone() {
            for l in s.clone() {
                if k != l {
                    edges[k * n + l] = geometry::sub(last_obs_positions[k], last_obs_positions[l]);
                    pairs.push((k, l));
                }
            }
        }
    }
    Ok(InteractionGraph { node_features: encoded, edges, scene_slices: scene_slices.to_vec(), pairs })
}

/// `v_i' = v_i + sum_j sigmoid(z W_f + b_f) * softplus(z W_s + b_s)` with
/// `z = v_i | v_j | e_ij`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnLayer {
    pub w_f: ParamId,
    pub b_f: ParamId,
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub hidden: usize,
}

impl GcnLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let z = 2 * hidden + 2;
        let bound = 1.0 / (z as f64).sqrt();
        Ok(Self {
            w_f: store.add_uniform(format!("{name}.w_f"), z, hidden, bound, rng)?,
            b_f: store.add_uniform(format!("{name}.b_f"), 1, hidden, bound, rng)?,
            w_s: store.add_uniform(format!("{name}.w_s"), z, hidden, bound, rng)?,
            b_s: store.add_uniform(format!("{name}.b_s"), 1, hidden, bound, rng)?,
            hidden,
        })
    }

    pub fn num_params(hidden: usize) -> usize {
        2 * ((2 * hidden + 2) * hidden + hidden)
    }

    /// The `z W` product is split as `v_i W_i + v_j W_j + e W_e`, so node
    /// projections are computed once per node rather than once per pair.
    pub fn flops(nodes: usize, pairs: usize, hidden: usize) -> u64 {
        let (n, p, h) = (nodes, pairs, hidden);
        let per_gate = 2 * (2 * n * h * h) + 2 * p * 2 * h + 3 * p * h;
        // sigmoid, softplus, product, scatter, then the residual add
        (2 * per_gate + 4 * p * h + n * h) as u64
    }

    #[allow(clippy::too_many_arguments)]
    fn gate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        g: &InteractionGraph,
        v: Var,
        edges: Var,
        w: ParamId,
        b: ParamId,
    ) -> Result<Var> {
        let h = self.hidden;
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        let w_i = tape.slice_rows(w, 0, h)?;
        let w_j = tape.slice_rows(w, h, 2 * h)?;
        let w_e = tape.slice_rows(w, 2 * h, 2 * h + 2)?;
        let a = tape.matmul(v, w_i)?;
        let c = tape.matmul(v, w_j)?;
        let src: Vec<usize> = g.pairs.iter().map(|p| p.0).collect();
        let dst: Vec<usize> = g.pairs.iter().map(|p| p.1).collect();
        let ai = tape.gather_rows(a, &src)?;
        let cj = tape.gather_rows(c, &dst)?;
        let e = tape.matmul(edges, w_e)?;
        let s = tape.add(ai, cj)?;
        let s = tape.add(s, e)?;
        tape.add_row(s, b)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, g: &InteractionGraph, v: Var) -> Result<Var> {
        let n = g.nodes();
        if tape.shape(v) != [n, self.hidden] {
            return Err(Error::ShapeMismatch(format!("gcn input {:?}, expected [{n}, {}]", tape.shape(v), self.hidden)));
        }
        if g.pairs.is_empty() {
            return Ok(v);
        }
        let flat: Vec<f64> = g.pairs.iter().flat_map(|&(i, j)| g.edge(i, j)).collect();
        let edges = tape.constant(Tensor::from_f64(g.pairs.len(), 2, &flat)?);
        let f = self.gate(tape, store, g, v, edges, self.w_f, self.b_f)?;
        let s = self.gate(tape, store, g, v, edges, self.w_s, self.b_s)?;
        let f = tape.sigmoid(f);
        let s = tape.softplus(s);
        let msg = tape.mul(f, s)?;
        let src: Vec<usize> = g.pairs.iter().map(|p| p.0).collect();
        let agg = tape.scatter_add_rows(msg, &src, n)?;
        tape.add(v, agg)
    }
}

/// Scaled dot-product attention with `heads` heads restricted to each scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mhsa {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhsaOutput {
    pub out: Var,
    /// One `N x N` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

impl Mhsa {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::IndivisibleHeads { hidden, heads });
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), hidden, hidden, rng)?,
            k: Linear::new(store, &format!("{name}.k"), hidden, hidden, rng)?,
            v: Linear::new(store, &format!("{name}.v"), hidden, hidden, rng)?,
            o: Linear::new(store, &format!("{name}.o"), hidden, hidden, rng)?,
            heads,
            hidden,
        })
    }

    pub fn num_params(hidden: usize) -> usize {
        4 * Linear::num_params(hidden, hidden)
    }

    /// Projections, per-head score and value products, scaling, the mask add
    /// and softmax over the `N x N` scores.
    pub fn flops(nodes: usize, hidden: usize, heads: usize) -> u64 {
        let (n, h) = (nodes, hidden);
        let d = h / heads;
        let proj = 4 * Linear::flops(n, h, h);
        let per_head = (2 * n * n * d + 3 * n * n + 2 * n * n * d) as u64;
        proj + heads as u64 * per_head
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        scene_slices: &[Range<usize>],
    ) -> Result<MhsaOutput> {
        let [n, h] = tape.shape(x);
        if h != self.hidden {
            return Err(Error::ShapeMismatch(format!("mhsa input width {h}, expected {}", self.hidden)));
        }
        let mut mask = Tensor::filled(n, n, T::neg_infinity());
        for s in scene_slices {
            for i in s.clone() {
                for j in s.clone() {
                    mask.set(i, j, T::zero());
                }
            }
        }
        let mask = tape.constant(mask);
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, x)?;
        let v = self.v.forward(tape, store, x)?;
        let d = h / self.heads;
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for m in 0..self.heads {
            let qh = tape.slice_cols(q, m * d, (m + 1) * d)?;
            let kh = tape.slice_cols(k, m * d, (m + 1) * d)?;
            let vh = tape.slice_cols(v, m * d, (m + 1) * d)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
            let scores = tape.add(scores, mask)?;
            let a = tape.softmax(scores, Axis::Cols);
            heads.push(tape.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = tape.concat_cols(&heads)?;
        let out = self.o.forward(tape, store, cat)?;
        Ok(MhsaOutput { out, weights })
    }
}

/// Crystal-GCN layers with batch norm and ReLU between consecutive layers,
/// then MHSA.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialModule {
    pub gcn: Vec<GcnLayer>,
    /// `bns[i]` sits between `gcn[i]` and `gcn[i + 1]`.
    pub bns: Vec<BatchNorm>,
    pub mhsa: Mhsa,
    pub hidden: usize,
}

impl SocialModule {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        hidden: usize,
        heads: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidConfig("at least one GCN layer".into()));
        }
        let mut gcn = Vec::with_capacity(layers);
        let mut bns = Vec::with_capacity(layers - 1);
        for i in 0..layers {
            if i > 0 {
                bns.push(BatchNorm::new(store, &format!("{name}.gcn_bn{i}"), hidden)?);
            }
            gcn.push(GcnLayer::new(store, &format!("{name}.gcn{}", i + 1), hidden, rng)?);
        }
        Ok(Self { gcn, bns, mhsa: Mhsa::new(store, &format!("{name}.mhsa"), hidden, heads, rng)?, hidden })
    }

    pub fn num_params(hidden: usize, layers: usize) -> usize {
        layers * GcnLayer::num_params(hidden) + (layers - 1) * BatchNorm::num_params(hidden) + Mhsa::num_params(hidden)
    }

    pub fn flops(nodes: usize, hidden: usize, heads: usize, layers: usize) -> u64 {
        let pairs = nodes * nodes.saturating_sub(1);
        let gcn = if pairs == 0 { 0 } else { GcnLayer::flops(nodes, pairs, hidden) };
        let between = BatchNorm::flops(nodes, hidden) + (nodes * hidden) as u64;
        layers as u64 * gcn + (layers as u64 - 1) * between + Mhsa::flops(nodes, hidden, heads)
    }

    /// Node features after every GCN layer and attention.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, g: &InteractionGraph) -> Result<Var> {
        let mut v = self.gcn[0].forward(tape, store, g, g.node_features)?;
        for (bn, layer) in self.bns.iter().zip(&self.gcn[1..]) {
            v = bn.forward(tape, store, v)?;
            v = tape.relu(v);
            v = layer.forward(tape, store, g, v)?;
        }
        Ok(self.mhsa.forward(tape, store, v, &g.scene_slices)?.out)
    }
}

/// Target row of every scene after the social module.
pub fn social_context<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    module: &SocialModule,
    g: &InteractionGraph,
    targets: &[usize],
) -> Result<Var> {
    if targets.len() != g.scene_slices.len() || targets.iter().zip(&g.scene_slices).any(|(t, s)| !s.contains(t)) {
        return Err(Error::SliceMismatch("one target per scene, inside its slice".into()));
    }
    let all = module.forward(tape, store, g)?;
    tape.gather_rows(all, targets)
}
