use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParameterSet, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2 coefficient: `weight_decay * theta` is added to the
    /// gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter from its stored gradient.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<(), TensorError> {
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (name, value, grad) in params.values_and_grads_mut() {
            if value.shape() != grad.shape() {
                return Err(TensorError::Shape {
                    op: "adam",
                    detail: format!("{name}: {:?} vs {:?}", value.shape(), grad.shape()),
                });
            }
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            if m.shape() != value.shape() {
                return Err(TensorError::Shape {
                    op: "adam",
                    detail: format!("{name}: moment {:?} vs {:?}", m.shape(), value.shape()),
                });
            }
            let (md, vd) = (m.data_mut(), v.data_mut());
            let g = grad.data();
            for (k, theta) in value.data_mut().iter_mut().enumerate() {
                let gk = g[k] + c.weight_decay * *theta;
                md[k] = c.beta1 * md[k] + (1.0 - c.beta1) * gk;
                vd[k] = c.beta2 * vd[k] + (1.0 - c.beta2) * gk * gk;
                let m_hat = md[k] / bias1;
                let v_hat = vd[k] / bias2;
                *theta -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: &[f64], g: &[f64]) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::from_vec(vec![v.len()], v.to_vec()).unwrap());
        p.accumulate_grad("w", &Tensor::from_vec(vec![g.len()], g.to_vec()).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut p = params(&[0.5, -1.0], &[0.0, 0.0]);
        let mut s = AdamState::new(AdamConfig::default());
        s.step(&mut p).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.5, -1.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params(&[0.5, -1.0, 0.0], &[3.0, -0.2, 1e-3]);
        let mut s = AdamState::new(AdamConfig::default());
        s.step(&mut p).unwrap();
        let w = p.get("w").unwrap().data();
        // m_hat / sqrt(v_hat) = sign(g) up to epsilon
        for (after, (before, g)) in w.iter().zip([(0.5, 3.0), (-1.0, -0.2), (0.0, 1e-3f64)]) {
            let expect = before - 1e-3 * g / (g.abs() + 1e-8);
            assert!((after - expect).abs() < 1e-15);
            assert!(((after - before).abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn coupled_decay_shrinks_toward_zero() {
        let mut p = params(&[2.0, -0.5], &[0.0, 0.0]);
        let mut s = AdamState::new(AdamConfig {
            weight_decay: 1e-5,
            ..AdamConfig::default()
        });
        s.step(&mut p).unwrap();
        let w = p.get("w").unwrap().data();
        // effective gradient wd*theta, so the first step is lr * sign(theta)
        for (after, before) in w.iter().zip([2.0f64, -0.5]) {
            let g = 1e-5 * before;
            let expect = before - 1e-3 * g / (g.abs() + 1e-8);
            assert!((after - expect).abs() < 1e-15);
            assert!(after.abs() < before.abs());
        }
    }
}
