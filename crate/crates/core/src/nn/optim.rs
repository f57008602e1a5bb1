use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with bias correction; moments are kept per parameter in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients currently held by `store`.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.is_empty() {
            self.m = store.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.params().len() {
            return Err(Error::ShapeMismatch("optimizer state does not match the parameter set".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.len() != p.value.len() {
                return Err(Error::ShapeMismatch(format!("optimizer state for {}", p.name)));
            }
            let grad = p.grad.data().to_vec();
            for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let update = self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *w = T::of(w.f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(1, 3, &[1.0, -2.0, 3.0]).unwrap()).unwrap();
        let mut adam = Adam::new(1e-3);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(id).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(1, 3, &[1.0, -2.0, 3.0]).unwrap()).unwrap();
        store.params_mut()[0].grad = Tensor::from_f64(1, 3, &[0.5, -4.0, 2.0]).unwrap();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store).unwrap();
        let got = store.value(id).data();
        for (g, e) in got.iter().zip([1.0 - 1e-3, -2.0 + 1e-3, 3.0 - 1e-3]) {
            assert!((g - e).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut store = ParamStore::<f64>::new();
        let target = [0.7, -1.3, 2.2];
        let id = store.add("w", Tensor::zeros(1, 3)).unwrap();
        let mut adam = Adam::new(0.05);
        let loss = |s: &ParamStore<f64>| s.value(id).data().iter().zip(target).map(|(w, t)| (w - t).powi(2)).sum::<f64>();
        for _ in 0..500 {
            let grad: Vec<f64> = store.value(id).data().iter().zip(target).map(|(w, t)| 2.0 * (w - t)).collect();
            store.params_mut()[0].grad = Tensor::from_vec(1, 3, grad).unwrap();
            adam.step(&mut store).unwrap();
        }
        assert!(loss(&store) < 1e-6, "{}", loss(&store));
    }
}
