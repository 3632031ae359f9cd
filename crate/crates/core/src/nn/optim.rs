use serde::{Deserialize, Serialize};

use super::params::{Grads, Mat, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &ParamSet, cfg: AdamWConfig) -> Self {
        let zeros = params.zeros_like().0;
        AdamW {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64) {
        self.step_masked(params, grads, lr, None);
    }

    /// Updates only parameters whose `trainable` flag is set (all when `None`).
    pub fn step_masked(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64, trainable: Option<&[bool]>) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            if trainable.is_some_and(|t| !t[i]) {
                continue;
            }
            let g = &grads.0[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= lr * c.weight_decay * *p;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Mat::from_elem((1, 2), 1.0));
        let mut opt = AdamW::new(&ps, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let g = Grads(vec![Mat::from_shape_vec((1, 2), vec![0.3, -2.0]).unwrap()]);
        opt.step(&mut ps, &g, 0.1);
        let p = ps.value(id);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[[0, 1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Mat::from_elem((1, 1), 2.0));
        let mut opt = AdamW::new(&ps, AdamWConfig::default());
        let zero = ps.zeros_like();
        opt.step(&mut ps, &zero, 0.5);
        assert!((ps.value(id)[[0, 0]] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-12);
    }
}
