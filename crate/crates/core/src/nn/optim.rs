use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{Gradients, NnError, ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Real>(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let sizes: Vec<usize> = store.ids().map(|id| store.get(id).len()).collect();
        Adam {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<F: Real>(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) -> Result<(), NnError> {
        for (id, g) in grads.iter() {
            if !g.all_finite() {
                return Err(NnError::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (id, g) in grads.iter() {
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = store.get_mut(id).data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = learning_rate * (*m / c1) / (libm::sqrt(*v / c2) + epsilon);
                *p = F::from_f64(p.to_f64() - update);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm<F: Real>(grads: &Gradients<F>) -> f64 {
    let ss: f64 = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|v| {
            let v = v.to_f64();
            v * v
        })
        .sum();
    libm::sqrt(ss)
}

/// Rescale every gradient by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut Gradients<F>, max_norm: f64) -> Result<f64, NnError> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(NnError::NonFiniteGradient("global norm".to_string()));
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v = F::from_f64(v.to_f64() * s);
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};
    use alloc::vec;

    fn quadratic_grads(store: &ParamStore<f64>, target: &[f64]) -> (f64, Gradients<f64>) {
        let mut g = Graph::new();
        let id = store.ids().next().unwrap();
        let x = g.param(store, id);
        let t = g.input(Tensor::new(vec![target.len()], target.to_vec()).unwrap()).unwrap();
        let d = g.sub(x, t).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.sum(sq).unwrap();
        let value = g.value(loss).data()[0];
        (value, g.backward(loss).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::<f64>::new();
        store.add("p", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = store.clone();
        let grads = Gradients::zeros_like(&store);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap());
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(id).unwrap().data_mut().copy_from_slice(&[3.0, -0.01, 250.0]);
        let config = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(config, &store);
        adam.step(&mut store, &grads).unwrap();
        let p = store.get(id).data();
        for (&v, expected) in p.iter().zip([-0.01, 0.01, -0.01]) {
            assert!((v - expected).abs() < 1e-8, "{v} vs {expected}");
        }
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let target = [1.5, -0.75, 0.25, 2.0];
        let mut store = ParamStore::<f64>::new();
        store.add("p", Tensor::zeros(vec![4]));
        let config = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(config, &store);
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            let (l, grads) = quadratic_grads(&store, &target);
            loss = l;
            adam.step(&mut store, &grads).unwrap();
        }
        // optimum of sum (x - t)^2 is 0 at x = t
        let (final_loss, _) = quadratic_grads(&store, &target);
        assert!(final_loss.min(loss) < 1e-4, "loss {final_loss}");
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", Tensor::zeros(vec![2]));
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(id).unwrap().data_mut()[1] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default(), &store);
        assert!(matches!(adam.step(&mut store, &grads), Err(NnError::NonFiniteGradient(_))));
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::zeros(vec![2]));
        let b = store.add("b", Tensor::zeros(vec![1]));
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(a).unwrap().data_mut().copy_from_slice(&[3.0, 0.0]);
        grads.get_mut(b).unwrap().data_mut()[0] = 4.0;
        let norm = clip_global_norm(&mut grads, 1.0).unwrap();
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((global_norm(&grads) - 1.0).abs() < 1e-12);
        assert!((grads.get(a).unwrap().data()[0] - 0.6).abs() < 1e-12);

        let norm = clip_global_norm(&mut grads, 10.0).unwrap();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((grads.get(b).unwrap().data()[0] - 0.8).abs() < 1e-12);
    }
}
