use rand_chacha::ChaCha8Rng;

use super::params::{BufferId, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Ok(Self {
            w: store.add_uniform(format!("{name}.weight"), inputs, outputs, bound, rng)?,
            b: store.add_uniform(format!("{name}.bias"), 1, outputs, bound, rng)?,
            inputs,
            outputs,
        })
    }

    pub fn num_params(inputs: usize, outputs: usize) -> usize {
        inputs * outputs + outputs
    }

    /// Multiply-add count of one row is `2 in out`, plus `out` for the bias.
    pub fn flops(rows: usize, inputs: usize, outputs: usize) -> u64 {
        (rows * (2 * inputs * outputs + outputs)) as u64
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// LSTM cell with gate order input, forget, cell, output and a single bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        Ok(Self {
            w_ih: store.add_uniform(format!("{name}.w_ih"), inputs, 4 * hidden, bound, rng)?,
            w_hh: store.add_uniform(format!("{name}.w_hh"), hidden, 4 * hidden, bound, rng)?,
            b: store.add_uniform(format!("{name}.bias"), 1, 4 * hidden, bound, rng)?,
            inputs,
            hidden,
        })
    }

    pub fn num_params(inputs: usize, hidden: usize) -> usize {
        4 * hidden * (inputs + hidden + 1)
    }

    /// Two matmuls, the pre-activation sum and bias, five nonlinearities over
    /// the gates and cell, and the four elementwise cell updates.
    pub fn flops(rows: usize, inputs: usize, hidden: usize) -> u64 {
        let g = 4 * hidden;
        let matmul = 2 * rows * (inputs + hidden) * g;
        let adds = 2 * rows * g;
        let nonlin = rows * g + rows * hidden;
        let cell = 4 * rows * hidden;
        (matmul + adds + nonlin + cell) as u64
    }

    pub fn zero_state<T: Scalar>(&self, tape: &mut Tape<T>, rows: usize) -> (Var, Var) {
        (tape.constant(Tensor::zeros(rows, self.hidden)), tape.constant(Tensor::zeros(rows, self.hidden)))
    }

    pub fn step<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        if tape.shape(x)[1] != self.inputs || tape.shape(h)[1] != self.hidden {
            return Err(Error::ShapeMismatch(format!("lstm step with input {:?} and hidden {:?}", tape.shape(x), tape.shape(h))));
        }
        let (w_ih, w_hh, b) = (tape.param(store, self.w_ih), tape.param(store, self.w_hh), tape.param(store, self.b));
        let xi = tape.matmul(x, w_ih)?;
        let hh = tape.matmul(h, w_hh)?;
        let z = tape.add(xi, hh)?;
        let z = tape.add_row(z, b)?;
        let n = self.hidden;
        let zi = tape.slice_cols(z, 0, n)?;
        let zf = tape.slice_cols(z, n, 2 * n)?;
        let zg = tape.slice_cols(z, 2 * n, 3 * n)?;
        let zo = tape.slice_cols(z, 3 * n, 4 * n)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c2 = tape.add(fc, ig)?;
        let tc = tape.tanh(c2);
        let h2 = tape.mul(o, tc)?;
        Ok((h2, c2))
    }

    /// Runs the cell over `steps` (each `rows x inputs`) from zero state and
    /// returns the final hidden state.
    pub fn run<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, steps: &[Var]) -> Result<Var> {
        let rows = steps.first().map(|&s| tape.shape(s)[0]).ok_or(Error::EmptySequence)?;
        let (mut h, mut c) = self.zero_state(tape, rows);
        for &x in steps {
            (h, c) = self.step(tape, store, x, h, c)?;
        }
        Ok(h)
    }
}

/// Batch normalization over rows with learnable scale/shift and running
/// statistics (momentum 0.1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub features: usize,
}

pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(1, features, T::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, features))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(1, features))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::filled(1, features, T::one()))?,
            features,
        })
    }

    pub fn num_params(features: usize) -> usize {
        2 * features
    }

    pub fn flops(rows: usize, features: usize) -> u64 {
        (2 * rows * features) as u64
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batch_norm(x, g, b, (store.buffer(self.running_mean), store.buffer(self.running_var)), (self.running_mean, self.running_var))
    }
}

/// Folds the batch statistics recorded on `tape` into the running buffers.
pub fn absorb_bn_stats<T: Scalar>(tape: &Tape<T>, store: &mut ParamStore<T>) {
    for stat in tape.bn_stats() {
        for (buf, batch) in [(stat.running_mean, &stat.mean), (stat.running_var, &stat.var)] {
            for (r, b) in store.buffer_mut(buf).data_mut().iter_mut().zip(batch) {
                *r = T::of((1.0 - BN_MOMENTUM) * r.f64() + BN_MOMENTUM * b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Mode;
    use rand::{Rng, SeedableRng};

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Straight-line LSTM over one row, written from the gate equations.
    fn reference_lstm(store: &ParamStore<f64>, cell: &LstmCell, xs: &[Vec<f64>]) -> Vec<f64> {
        let (wi, wh, b) = (store.value(cell.w_ih), store.value(cell.w_hh), store.value(cell.b));
        let n = cell.hidden;
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        for x in xs {
            let mut z = vec![0.0; 4 * n];
            for (k, zk) in z.iter_mut().enumerate() {
                let mut acc = b.get(0, k);
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * wi.get(i, k);
                }
                for (j, hj) in h.iter().enumerate() {
                    acc += hj * wh.get(j, k);
                }
                *zk = acc;
            }
            for k in 0..n {
                let (i, f, g, o) = (sig(z[k]), sig(z[n + k]), z[2 * n + k].tanh(), sig(z[3 * n + k]));
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
        }
        h
    }

    #[test]
    fn lstm_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, "lstm", 3, 5, &mut rng).unwrap();
        let rows: Vec<Vec<Vec<f64>>> =
            (0..2).map(|_| (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()).collect();
        let mut tape = Tape::new(Mode::Eval, 0);
        let steps: Vec<Var> =
            (0..5).map(|t| tape.constant(Tensor::from_rows(&[rows[0][t].clone(), rows[1][t].clone()]).unwrap())).collect();
        let h = cell.run(&mut tape, &store, &steps).unwrap();
        for (r, seq) in rows.iter().enumerate() {
            let expect = reference_lstm(&store, &cell, seq);
            for (k, e) in expect.iter().enumerate() {
                assert!((tape.value(h).get(r, k) - e).abs() < 1e-10);
            }
        }
        assert_eq!(LstmCell::num_params(3, 5), store.num_elements());
    }

    #[test]
    fn lstm_zero_fixed_point_and_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, "lstm", 2, 4, &mut rng).unwrap();
        let mut tape = Tape::new(Mode::Eval, 0);
        let x = tape.constant(Tensor::from_f64(1, 2, &[0.3, -0.7]).unwrap());
        let (h0, c0) = cell.zero_state(&mut tape, 1);
        let (h1, _) = cell.step(&mut tape, &store, x, h0, c0).unwrap();
        let hr = cell.run(&mut tape, &store, &[x]).unwrap();
        assert_eq!(tape.value(h1), tape.value(hr));

        store.zero_values();
        let mut tape = Tape::new(Mode::Eval, 0);
        let x = tape.constant(Tensor::zeros(1, 2));
        let (h0, c0) = cell.zero_state(&mut tape, 1);
        let (h1, c1) = cell.step(&mut tape, &store, x, h0, c0).unwrap();
        assert!(tape.value(h1).data().iter().chain(tape.value(c1).data()).all(|v| *v == 0.0));
    }

    #[test]
    fn flop_formulas_match_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, "lstm", 7, 6, &mut rng).unwrap();
        let lin = Linear::new(&mut store, "lin", 6, 3, &mut rng).unwrap();
        let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
        let mut tape = Tape::new(Mode::Eval, 0);
        let x = tape.constant(Tensor::zeros(4, 7));
        let (h, c) = cell.zero_state(&mut tape, 4);
        let (h, _) = cell.step(&mut tape, &store, x, h, c).unwrap();
        assert_eq!(tape.flops(), LstmCell::flops(4, 7, 6));
        let y = lin.forward(&mut tape, &store, h).unwrap();
        assert_eq!(tape.flops(), LstmCell::flops(4, 7, 6) + Linear::flops(4, 6, 3));
        bn.forward(&mut tape, &store, y).unwrap();
        assert_eq!(tape.flops(), LstmCell::flops(4, 7, 6) + Linear::flops(4, 6, 3) + BatchNorm::flops(4, 3));
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let mut tape = Tape::new(Mode::Train, 0);
        let x = tape.constant(Tensor::from_f64(4, 1, &[1.0, 2.0, 3.0, 4.0]).unwrap());
        bn.forward(&mut tape, &store, x).unwrap();
        absorb_bn_stats(&tape, &mut store);
        assert!((store.buffer(bn.running_mean).item() - 0.25).abs() < 1e-12);
        // unbiased batch variance 5/3
        assert!((store.buffer(bn.running_var).item() - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }
}
