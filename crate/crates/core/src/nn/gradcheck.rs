//! Central finite-difference checks of tape gradients.

use super::params::ParamStore;
use super::tape::{Mode, Tape, Var};
use super::Tensor;
use crate::error::Result;

/// Step used by the central differences.
pub const FD_STEP: f64 = 1e-5;

/// `||a - n|| / max(||a|| + ||n||, 1e-12)` with Euclidean norms.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

/// Compares the gradients of the scalar built by `f` with respect to each
/// input against central differences; returns the worst relative error.
/// `f` must be deterministic and is evaluated in eval mode.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_inputs_with(inputs, &ParamStore::new(), Mode::Eval, f)
}

/// As [`check_inputs`] for closures that also bind parameters of `store`.
pub fn check_inputs_with<F>(inputs: &[Tensor<f64>], store: &ParamStore<f64>, mode: Mode, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new(mode, 0);
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new(mode, 0);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut scratch = store.clone();
    let grads = tape.backward(out, &mut scratch)?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(|g| g.to_f64()).unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            let mut xs = inputs.to_vec();
            let base = xs[k].data()[i];
            xs[k].data_mut()[i] = base + FD_STEP;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = base - FD_STEP;
            let down = eval(&xs)?;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Same check for the parameters of `store`, optionally on a subset of
/// `(parameter index, element index)` pairs.
pub fn check_params<F>(store: &mut ParamStore<f64>, mode: Mode, picks: Option<&[(usize, usize)]>, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(mode, 0);
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).item())
    };
    store.zero_grad();
    let mut tape = Tape::new(mode, 0);
    let out = f(&mut tape, store)?;
    tape.backward(out, store)?;
    let all: Vec<(usize, usize)> = match picks {
        Some(p) => p.to_vec(),
        None => store.params().iter().enumerate().flat_map(|(p, t)| (0..t.value.len()).map(move |i| (p, i))).collect(),
    };
    let mut analytic = Vec::with_capacity(all.len());
    let mut numeric = Vec::with_capacity(all.len());
    for (p, i) in all {
        analytic.push(store.params()[p].grad.data()[i]);
        let base = store.params()[p].value.data()[i];
        store.params_mut()[p].value.data_mut()[i] = base + FD_STEP;
        let up = eval(store)?;
        store.params_mut()[p].value.data_mut()[i] = base - FD_STEP;
        let down = eval(store)?;
        store.params_mut()[p].value.data_mut()[i] = base;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(relative_error(&analytic, &numeric))
}
