//! Adaptive-moment optimizer with decoupled weight decay. Decay applies to
//! rank >= 2 tensors (matrices and embedding tables); biases, layer-norm
//! parameters, the pooling vector, and the uncertainty log-variances are
//! exempt.

use super::TrainConfig;
use crate::net::GuardrailModel;

pub struct AdamW {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(model: &GuardrailModel) -> Self {
        let mut m = Vec::new();
        let mut decay = Vec::new();
        model.for_each_param(|_, shape, data| {
            m.push(vec![0.0; data.len()]);
            decay.push(shape.len() >= 2);
        });
        AdamW {
            step: 0,
            v: m.clone(),
            m,
            decay,
        }
    }

    pub fn step(&mut self, model: &mut GuardrailModel, grads: &GuardrailModel, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);

        let mut grad_data: Vec<Vec<f64>> = Vec::with_capacity(self.m.len());
        grads.for_each_param(|_, _, data| grad_data.push(data.to_vec()));

        let mut idx = 0usize;
        model.for_each_param_mut(|_, params| {
            let g = &grad_data[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let wd = if self.decay[idx] { cfg.weight_decay } else { 0.0 };
            for i in 0..params.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.adam_eps));
                params[i] -= cfg.learning_rate * wd * params[i];
            }
            idx += 1;
        });
    }
}

/// Scales all gradients so the global L2 norm does not exceed `max_norm`.
pub fn clip_global_norm(grads: &mut GuardrailModel, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mut sq = 0.0;
    grads.for_each_param(|_, _, data| {
        for &g in data {
            sq += g * g;
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.for_each_param_mut(|_, data| {
            for g in data {
                *g *= scale;
            }
        });
    }
}
