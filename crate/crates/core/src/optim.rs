//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecay {
    /// `wd·θ` is added to the gradient before the moment updates.
    #[default]
    Coupled,
    /// `lr·wd·θ` is subtracted after the adaptive step.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(default)]
    pub decay_mode: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_mode: WeightDecay::Coupled,
        }
    }
}

/// Moment accumulators, one pair per tensor of the store being optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        OptimState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update to every tensor of `store`.
    pub fn adam_step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} gradients / {} moments for {} tensors",
                    grads.len(),
                    self.m.len(),
                    store.len()
                ),
            ));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.len() != store.get(id).len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient for {} has length {}", store.name(id), g.len()),
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {}",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let theta = store.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..theta.len() {
                let mut gj = grads[i][j];
                if c.decay_mode == WeightDecay::Coupled {
                    gj += c.weight_decay * theta[j];
                }
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let mut delta = m_hat / (v_hat.sqrt() + c.eps);
                if c.decay_mode == WeightDecay::Decoupled {
                    delta += c.weight_decay * theta[j];
                }
                theta[j] -= c.lr * delta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::vector(vec![v])).unwrap();
        s
    }

    fn cfg(lr: f64, wd: f64, mode: WeightDecay) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: wd,
            decay_mode: mode,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn first_step_closed_form_decoupled() {
        let (lr, wd, g, theta) = (0.01, 0.1, 0.3, 2.0);
        let mut s = scalar_store(theta);
        let mut opt = OptimState::new(cfg(lr, wd, WeightDecay::Decoupled), &s);
        opt.adam_step(&mut s, &[vec![g]]).unwrap();
        let want = theta - lr * g / (g.abs() + 1e-8) - lr * wd * theta;
        assert!((s.get(s.id("theta").unwrap()).data()[0] - want).abs() <= 1e-15);
    }

    #[test]
    fn first_step_closed_form_coupled() {
        let (lr, wd, g, theta) = (0.01, 0.1, 0.3, 2.0);
        let mut s = scalar_store(theta);
        let mut opt = OptimState::new(cfg(lr, wd, WeightDecay::Coupled), &s);
        opt.adam_step(&mut s, &[vec![g]]).unwrap();
        let ge = g + wd * theta;
        let want = theta - lr * ge / (ge.abs() + 1e-8);
        assert!((s.get(s.id("theta").unwrap()).data()[0] - want).abs() <= 1e-15);
    }

    #[test]
    fn zero_gradient_at_origin_is_fixed_point() {
        let mut s = scalar_store(0.0);
        let mut opt = OptimState::new(AdamConfig::default(), &s);
        opt.adam_step(&mut s, &[vec![0.0]]).unwrap();
        assert_eq!(s.get(s.id("theta").unwrap()).data(), &[0.0]);
    }

    #[test]
    fn three_step_trajectory() {
        // scalar oracle with g ≡ 1, lr = 0.1, wd = 0
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut m, mut v, mut theta) = (0.0, 0.0, 0.5);
        let mut expected = Vec::new();
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
            expected.push(theta);
        }
        let mut s = scalar_store(0.5);
        let mut opt = OptimState::new(cfg(lr, 0.0, WeightDecay::Coupled), &s);
        for want in expected {
            opt.adam_step(&mut s, &[vec![1.0]]).unwrap();
            let got = s.get(s.id("theta").unwrap()).data()[0];
            assert!((got - want).abs() <= 1e-15, "{got} vs {want}");
        }
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn lr_scale_covariance() {
        for g in [0.7, -2.5, 1e-3] {
            let mut a = scalar_store(0.0);
            let mut b = scalar_store(0.0);
            let mut oa = OptimState::new(cfg(1e-3, 0.0, WeightDecay::Coupled), &a);
            let mut ob = OptimState::new(cfg(2e-3, 0.0, WeightDecay::Coupled), &b);
            oa.adam_step(&mut a, &[vec![g]]).unwrap();
            ob.adam_step(&mut b, &[vec![g]]).unwrap();
            let da = a.get(a.id("theta").unwrap()).data()[0];
            let db = b.get(b.id("theta").unwrap()).data()[0];
            assert_eq!(db, 2.0 * da);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut opt = OptimState::new(AdamConfig::default(), &s);
        let err = opt.adam_step(&mut s, &[vec![f64::NAN]]).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(opt.step, 0);
    }
}
