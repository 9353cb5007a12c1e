use serde::{Deserialize, Serialize};

use super::Parameter;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    /// Generator / discriminator setting: betas (0.0, 0.9).
    pub fn gan(lr: f32) -> Self {
        AdamConfig { lr, beta1: 0.0, beta2: 0.9, eps: 1e-8 }
    }

    /// Controller setting: betas (0.9, 0.999).
    pub fn controller(lr: f32) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update using `param.grad`.
///
/// `step_count` is incremented before the bias correction is computed.
pub fn adam_step(name: &str, param: &mut Parameter, cfg: &AdamConfig) -> Result<()> {
    if !param.grad.is_finite() {
        return Err(Error::Optimizer(name.to_string()));
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let Parameter { value, grad, adam_m, adam_v, .. } = param;
    for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(adam_m.data_mut()).zip(adam_v.data_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
