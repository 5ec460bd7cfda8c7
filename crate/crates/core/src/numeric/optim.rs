use serde::{Deserialize, Serialize};

use super::{ParamId, Parameters, Tensor, TensorError};

/// How the regularization coefficient enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DecayMode {
    /// Decoupled weight decay applied directly to the parameters (AdamW).
    #[default]
    Decoupled,
    /// Classic L2 penalty: `weight_decay · θ` is added to the gradient, which is
    /// the gradient of `weight_decay/2 · ‖θ‖²` added to the loss.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_mode: DecayMode,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_mode: DecayMode::Decoupled,
        }
    }
}

/// Optimizer state: first and second moments per parameter plus step count.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters absent from `grads` are left untouched.
    pub fn step(&mut self, params: &mut Parameters, grads: &[(ParamId, Tensor)]) -> Result<(), TensorError> {
        for (id, g) in grads {
            let p = params.get(*id);
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamWConfig {
            learning_rate: lr,
            weight_decay: wd,
            beta1: b1,
            beta2: b2,
            eps,
            decay_mode,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for (id, g) in grads {
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let theta = params.get_mut(*id).data_mut();
            for i in 0..theta.len() {
                let mut gi = g.data()[i];
                if decay_mode == DecayMode::L2 {
                    gi += wd * theta[i];
                }
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let mut update = m_hat / (v_hat.sqrt() + eps);
                if decay_mode == DecayMode::Decoupled {
                    update += wd * theta[i];
                }
                theta[i] -= lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(theta: f64) -> (Parameters, ParamId) {
        let mut p = Parameters::new();
        let id = p.register("theta", Tensor::vector(vec![theta]));
        (p, id)
    }

    #[test]
    fn zero_grad_no_decay_is_a_no_op() {
        let (mut p, id) = single(0.7);
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.1,
                weight_decay: 0.0,
                ..Default::default()
            },
            &p,
        );
        opt.step(&mut p, &[(id, Tensor::vector(vec![0.0]))]).unwrap();
        assert_eq!(p.get(id).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
        let (mut p, id) = single(0.0);
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.1,
                weight_decay: 0.0,
                ..Default::default()
            },
            &p,
        );
        opt.step(&mut p, &[(id, Tensor::vector(vec![1.0]))]).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.get(id).data()[0] - expected).abs() < 1e-15);
        assert!((p.get(id).data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn pure_decay_term() {
        let (mut p, id) = single(1.0);
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.1,
                weight_decay: 0.01,
                ..Default::default()
            },
            &p,
        );
        opt.step(&mut p, &[(id, Tensor::vector(vec![0.0]))]).unwrap();
        assert!((p.get(id).data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn l2_mode_feeds_decay_through_moments() {
        // g_eff = 0 + 0.01·1 → first step moves by lr regardless of magnitude.
        let (mut p, id) = single(1.0);
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.1,
                weight_decay: 0.01,
                decay_mode: DecayMode::L2,
                ..Default::default()
            },
            &p,
        );
        opt.step(&mut p, &[(id, Tensor::vector(vec![0.0]))]).unwrap();
        let expected = 1.0 - 0.1 * 0.01 / (0.01 + 1e-8);
        assert!((p.get(id).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut p, id) = single(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let err = opt.step(&mut p, &[(id, Tensor::vector(vec![0.0, 1.0]))]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
        assert_eq!(opt.steps(), 0);
    }
}
