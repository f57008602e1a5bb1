//! Reverse-mode automatic differentiation over a flat node arena.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs. `backward` sweeps the arena in reverse, so creation order is a
//! valid topological order.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{BufferId, ParamId, ParamStore};
use super::tensor::{gemm_into, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStat {
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var, T),
    Square(Var),
    Softmax(Var, Axis),
    LogSumExpRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    ColSums(Var),
    Reshape(Var),
    Dropout(Var, Vec<T>),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch: bool },
    SmoothL1(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Gradients of the tracked leaves after a backward sweep.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    mode: Mode,
    rng: ChaCha8Rng,
    flops: u64,
    bn_stats: Vec<BnStat>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Tape<T> {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self { nodes: Vec::new(), bound: HashMap::new(), mode, rng: ChaCha8Rng::seed_from_u64(seed), flops: 0, bn_stats: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Floating point operations issued so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bn_stats(&self) -> &[BnStat] {
        &self.bn_stats
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op<T>) -> Var {
        let value = self.nodes[x.0].value.map(|v| T::of(f(v.f64())));
        self.flops += value.len() as u64;
        let tracked = self.tracked(&[x]);
        self.push(value, op, tracked)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data)?;
        self.flops += value.len() as u64;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, op, tracked))
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter, once per tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul {:?} x {:?}", [m, k], [k2, n])));
        }
        let mut out = Tensor::zeros(m, n);
        gemm_into(&self.nodes[a.0].value, false, &self.nodes[b.0].value, false, &mut out, T::zero());
        self.flops += 2 * (m * k * n) as u64;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([r, c], sb) = (self.shape(a), self.shape(b));
        if sb != [1, c] {
            return Err(Error::ShapeMismatch(format!("add_row {:?} + {sb:?}", [r, c])));
        }
        let bias = self.nodes[b.0].value.data().to_vec();
        let mut value = self.nodes[a.0].value.clone();
        for row in value.data_mut().chunks_mut(c.max(1)) {
            row.iter_mut().zip(&bias).for_each(|(v, b)| *v += *b);
        }
        self.flops += (r * c) as u64;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::AddRow(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let value = self.nodes[a.0].value.map(|v| v * s);
        self.flops += value.len() as u64;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::Scale(a, s), tracked)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let value = self.nodes[a.0].value.map(|v| v + s);
        self.flops += value.len() as u64;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::AddScalar(a), tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// `ln(1 + e^x)` in the overflow-safe form `max(x, 0) + ln(1 + e^-|x|)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, move |v| v.max(floor).ln(), Op::Log(x, T::of(floor)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Softmax along `axis` with max subtraction; `-inf` entries get weight zero.
    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let src = &self.nodes[x.0].value;
        let [r, c] = src.shape();
        let mut value = Tensor::zeros(r, c);
        let (outer, inner) = match axis {
            Axis::Cols => (r, c),
            Axis::Rows => (c, r),
        };
        let at = |o: usize, i: usize| match axis {
            Axis::Cols => o * c + i,
            Axis::Rows => i * c + o,
        };
        for o in 0..outer {
            let max = (0..inner).map(|i| src.data()[at(o, i)].f64()).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..inner).map(|i| (src.data()[at(o, i)].f64() - max).exp()).collect();
            let total: f64 = e.iter().sum();
            for (i, ei) in e.iter().enumerate() {
                value.data_mut()[at(o, i)] = T::of(ei / total);
            }
        }
        self.flops += value.len() as u64;
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Softmax(x, axis), tracked)
    }

    /// `log sum_j exp(x_ij)` per row, as an `r x 1` column.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let [r, c] = src.shape();
        let data = (0..r)
            .map(|i| {
                let row = src.row(i);
                let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return T::of(max);
                }
                T::of(max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln())
            })
            .collect();
        self.flops += (r * c) as u64;
        let tracked = self.tracked(&[x]);
        self.push(Tensor::from_vec(r, 1, data).expect("r values"), Op::LogSumExpRows(x), tracked)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p)[0]).ok_or_else(|| Error::ShapeMismatch("empty concat".into()))?;
        if parts.iter().any(|&p| self.shape(p)[0] != rows) {
            return Err(Error::ShapeMismatch("concat_cols row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let tracked = self.tracked(parts);
        Ok(self.push(Tensor::from_vec(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), tracked))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p)[1]).ok_or_else(|| Error::ShapeMismatch("empty concat".into()))?;
        if parts.iter().any(|&p| self.shape(p)[1] != cols) {
            return Err(Error::ShapeMismatch("concat_rows column counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let rows = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let tracked = self.tracked(parts);
        Ok(self.push(Tensor::from_vec(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), tracked))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if start > end || end > c {
            return Err(Error::ShapeMismatch(format!("slice_cols {start}..{end} of {c}")));
        }
        let src = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..end]);
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_vec(r, end - start, data)?, Op::SliceCols(x, start), tracked))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if start > end || end > r {
            return Err(Error::ShapeMismatch(format!("slice_rows {start}..{end} of {r}")));
        }
        let data = self.nodes[x.0].value.data()[start * c..end * c].to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_vec(end - start, c, data)?, Op::SliceRows(x, start), tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.transpose();
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Transpose(x), tracked)
    }

    /// Row `i` of the output is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let [r, c] = self.shape(x);
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::ShapeMismatch(format!("gather row {bad} of {r}")));
        }
        let src = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(src.row(i));
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_vec(idx.len(), c, data)?, Op::GatherRows(x, idx.to_vec()), tracked))
    }

    /// Output row `idx[i]` accumulates row `i` of `x`.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], out_rows: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if idx.len() != r || idx.iter().any(|&i| i >= out_rows) {
            return Err(Error::ShapeMismatch(format!("scatter {r} rows into {out_rows}")));
        }
        let mut value = Tensor::zeros(out_rows, c);
        let src = &self.nodes[x.0].value;
        for (i, &o) in idx.iter().enumerate() {
            let row = src.row(i);
            value.data_mut()[o * c..(o + 1) * c].iter_mut().zip(row).for_each(|(v, s)| *v += *s);
        }
        self.flops += (r * c) as u64;
        let tracked = self.tracked(&[x]);
        Ok(self.push(value, Op::ScatterAddRows(x, idx.to_vec()), tracked))
    }

    fn reduce(&mut self, x: Var, mean: bool) -> Var {
        let src = &self.nodes[x.0].value;
        let n = src.len();
        let total: f64 = src.data().iter().map(|v| v.f64()).sum();
        let v = if mean { total / n.max(1) as f64 } else { total };
        self.flops += n as u64;
        let tracked = self.tracked(&[x]);
        self.push(Tensor::scalar(T::of(v)), if mean { Op::Mean(x) } else { Op::Sum(x) }, tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(x, false)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(x, true)
    }

    /// Sum over columns: `r x c -> r x 1`.
    pub fn row_sums(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let [r, _] = src.shape();
        let data = (0..r).map(|i| T::of(src.row(i).iter().map(|v| v.f64()).sum())).collect();
        self.flops += src.len() as u64;
        let tracked = self.tracked(&[x]);
        self.push(Tensor::from_vec(r, 1, data).expect("r values"), Op::RowSums(x), tracked)
    }

    /// Sum over rows: `r x c -> 1 x c`.
    pub fn col_sums(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let [r, c] = src.shape();
        let mut acc = vec![0.0f64; c];
        for i in 0..r {
            acc.iter_mut().zip(src.row(i)).for_each(|(a, v)| *a += v.f64());
        }
        self.flops += src.len() as u64;
        let tracked = self.tracked(&[x]);
        self.push(Tensor::from_vec(1, c, acc.into_iter().map(T::of).collect()).expect("c values"), Op::ColSums(x), tracked)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshaped(rows, cols)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(value, Op::Reshape(x), tracked))
    }

    /// Inverted dropout; identity in eval mode or for `p = 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if self.mode == Mode::Eval || p <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<T> = (0..n).map(|_| if self.rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(src.rows(), src.cols(), data).expect("same shape");
        self.flops += n as u64;
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Dropout(x, mask), tracked)
    }

    /// Per-column normalization of the rows of `x`, then `gamma * xhat + beta`.
    /// Training mode uses batch statistics and records them against the
    /// running buffers; eval mode uses the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&Tensor<T>, &Tensor<T>),
        buffers: (BufferId, BufferId),
    ) -> Result<Var> {
        let [r, c] = self.shape(x);
        if self.shape(gamma) != [1, c] || self.shape(beta) != [1, c] {
            return Err(Error::ShapeMismatch(format!("batch_norm over {c} features")));
        }
        let src = &self.nodes[x.0].value;
        let batch = self.mode == Mode::Train;
        let (mean, var): (Vec<f64>, Vec<f64>) = if batch {
            let mut mean = vec![0.0; c];
            for i in 0..r {
                mean.iter_mut().zip(src.row(i)).for_each(|(m, v)| *m += v.f64());
            }
            mean.iter_mut().for_each(|m| *m /= r.max(1) as f64);
            let mut var = vec![0.0; c];
            for i in 0..r {
                var.iter_mut().zip(src.row(i)).zip(&mean).for_each(|((s, v), m)| *s += (v.f64() - m).powi(2));
            }
            var.iter_mut().for_each(|s| *s /= r.max(1) as f64);
            (mean, var)
        } else {
            (running.0.to_f64(), running.1.to_f64())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.nodes[gamma.0].value.to_f64();
        let b = self.nodes[beta.0].value.to_f64();
        let mut xhat = Vec::with_capacity(r * c);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (j, v) in src.row(i).iter().enumerate() {
                let h = (v.f64() - mean[j]) * inv_std[j];
                xhat.push(T::of(h));
                out.push(T::of(g[j] * h + b[j]));
            }
        }
        if batch {
            let unbiased = if r > 1 { var.iter().map(|v| v * r as f64 / (r - 1) as f64).collect() } else { var.clone() };
            self.bn_stats.push(BnStat { running_mean: buffers.0, running_var: buffers.1, mean, var: unbiased });
        }
        self.flops += 2 * (r * c) as u64;
        let tracked = self.tracked(&[x, gamma, beta]);
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std: inv_std.into_iter().map(T::of).collect(), batch };
        Ok(self.push(Tensor::from_vec(r, c, out)?, op, tracked))
    }

    /// Mean Smooth L1 (Huber, threshold 1) between same-shaped tensors.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "smooth_l1")?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let n = va.len();
        let total: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| {
                let d = (x.f64() - y.f64()).abs();
                if d < 1.0 {
                    0.5 * d * d
                } else {
                    d - 0.5
                }
            })
            .sum();
        self.flops += 2 * n as u64;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Tensor::scalar(T::of(total / n.max(1) as f64)), Op::SmoothL1(a, b), tracked))
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added to
    /// `store` (so two sweeps double them); gradients of tracked
    /// [`Tape::variable`] leaves are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Grads<T>> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    leaves.insert(i, Tensor::from_vec(node.value.rows(), node.value.cols(), g)?);
                }
                Op::Param(id) => store.accumulate_grad(*id, &g),
                op => self.backprop(op, &node.value, &g, &mut grads),
            }
        }
        Ok(Grads { leaves })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf | Op::Param(_) => unreachable!("leaves handled by caller"),
            Op::MatMul(a, b) => {
                let gt = Tensor::from_vec(out.rows(), out.cols(), g.to_vec()).expect("output shape");
                if let Some(ga) = self.acc(grads, *a) {
                    let mut t = Tensor::from_vec(val(a).rows(), val(a).cols(), std::mem::take(ga)).expect("shape");
                    gemm_into(&gt, false, val(b), true, &mut t, T::one());
                    *ga = t.into_data();
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let mut t = Tensor::from_vec(val(b).rows(), val(b).cols(), std::mem::take(gb)).expect("shape");
                    gemm_into(val(a), true, &gt, false, &mut t, T::one());
                    *gb = t.into_data();
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.acc(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(x, d)| *x += *d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += *d);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, d)| *x -= *d);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a).data(), val(b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(vb).for_each(|((x, d), y)| *x += *d * *y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).zip(va).for_each(|((x, d), y)| *x += *d * *y);
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += *d);
                }
                let c = out.cols();
                if let Some(gb) = self.acc(grads, *b) {
                    let mut sums = vec![0.0f64; c];
                    for row in g.chunks(c.max(1)) {
                        sums.iter_mut().zip(row).for_each(|(s, d)| *s += d.f64());
                    }
                    gb.iter_mut().zip(sums).for_each(|(x, s)| *x += T::of(s));
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += *d * *s);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += *d);
                }
            }
            Op::Relu(a) => {
                let va = val(a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(va).for_each(|((x, d), v)| {
                        if *v > T::zero() {
                            *x += *d
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(out.data()).for_each(|((x, d), y)| *x += *d * *y * (T::one() - *y));
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(out.data()).for_each(|((x, d), y)| *x += *d * (T::one() - *y * *y));
                }
            }
            Op::Softplus(a) => {
                let va = val(a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(va).for_each(|((x, d), v)| *x += *d * T::of(sigmoid(v.f64())));
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(out.data()).for_each(|((x, d), y)| *x += *d * *y);
                }
            }
            Op::Log(a, floor) => {
                let va = val(a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(va).for_each(|((x, d), v)| {
                        if *v > *floor {
                            *x += *d / *v
                        }
                    });
                }
            }
            Op::Square(a) => {
                let va = val(a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(va).for_each(|((x, d), v)| *x += *d * T::of(2.0) * *v);
                }
            }
            Op::Softmax(a, axis) => {
                let [r, c] = out.shape();
                let y = out.data();
                let (outer, inner) = match axis {
                    Axis::Cols => (r, c),
                    Axis::Rows => (c, r),
                };
                let at = |o: usize, i: usize| match axis {
                    Axis::Cols => o * c + i,
                    Axis::Rows => i * c + o,
                };
                if let Some(ga) = self.acc(grads, *a) {
                    for o in 0..outer {
                        let dot: f64 = (0..inner).map(|i| y[at(o, i)].f64() * g[at(o, i)].f64()).sum();
                        for i in 0..inner {
                            let k = at(o, i);
                            ga[k] += T::of(y[k].f64() * (g[k].f64() - dot));
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let src = val(a);
                let c = src.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, row) in src.data().chunks(c.max(1)).enumerate() {
                        let lse = out.data()[i].f64();
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        for (j, v) in row.iter().enumerate() {
                            ga[i * c + j] += T::of(g[i].f64() * (v.f64() - lse).exp());
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let cols = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    if let Some(gp) = self.acc(grads, *p) {
                        for r in 0..out.rows() {
                            gp[r * w..(r + 1) * w].iter_mut().zip(&g[r * cols + offset..r * cols + offset + w]).for_each(|(x, d)| *x += *d);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).len();
                    if let Some(gp) = self.acc(grads, *p) {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(x, d)| *x += *d);
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let c = val(a).cols();
                let w = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..out.rows() {
                        ga[r * c + start..r * c + start + w].iter_mut().zip(&g[r * w..(r + 1) * w]).for_each(|(x, d)| *x += *d);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let c = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    ga[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(x, d)| *x += *d);
                }
            }
            Op::Transpose(a) => {
                let [r, c] = out.shape();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let c = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, &src) in idx.iter().enumerate() {
                        ga[src * c..(src + 1) * c].iter_mut().zip(&g[i * c..(i + 1) * c]).for_each(|(x, d)| *x += *d);
                    }
                }
            }
            Op::ScatterAddRows(a, idx) => {
                let c = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, &dst) in idx.iter().enumerate() {
                        ga[i * c..(i + 1) * c].iter_mut().zip(&g[dst * c..(dst + 1) * c]).for_each(|(x, d)| *x += *d);
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let n = val(a).len();
                let d = if matches!(op, Op::Mean(_)) { g[0] / T::of(n.max(1) as f64) } else { g[0] };
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += d);
                }
            }
            Op::RowSums(a) => {
                let c = val(a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, row) in ga.chunks_mut(c.max(1)).enumerate() {
                        row.iter_mut().for_each(|x| *x += g[r]);
                    }
                }
            }
            Op::ColSums(a) => {
                let c = val(a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for row in ga.chunks_mut(c.max(1)) {
                        row.iter_mut().zip(g).for_each(|(x, d)| *x += *d);
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).zip(mask).for_each(|((x, d), m)| *x += *d * *m);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                let [r, c] = out.shape();
                let gam = val(gamma).to_f64();
                if let Some(gg) = self.acc(grads, *gamma) {
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g[i * c + j];
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    if *batch {
                        let n = r as f64;
                        let mut sum_d = vec![0.0f64; c];
                        let mut sum_dx = vec![0.0f64; c];
                        for i in 0..r {
                            for j in 0..c {
                                let d = g[i * c + j].f64() * gam[j];
                                sum_d[j] += d;
                                sum_dx[j] += d * xhat[i * c + j].f64();
                            }
                        }
                        for i in 0..r {
                            for j in 0..c {
                                let d = g[i * c + j].f64() * gam[j];
                                let h = xhat[i * c + j].f64();
                                gx[i * c + j] += T::of(inv_std[j].f64() / n * (n * d - sum_d[j] - h * sum_dx[j]));
                            }
                        }
                    } else {
                        for i in 0..r {
                            for j in 0..c {
                                gx[i * c + j] += T::of(g[i * c + j].f64() * gam[j] * inv_std[j].f64());
                            }
                        }
                    }
                }
            }
            Op::SmoothL1(a, b) => {
                let n = val(a).len().max(1) as f64;
                let deriv: Vec<T> = val(a)
                    .data()
                    .iter()
                    .zip(val(b).data())
                    .map(|(x, y)| {
                        let d = x.f64() - y.f64();
                        T::of(g[0].f64() * d.clamp(-1.0, 1.0) / n)
                    })
                    .collect();
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(&deriv).for_each(|(x, d)| *x += *d);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(&deriv).for_each(|(x, d)| *x -= *d);
                }
            }
        }
    }
}
