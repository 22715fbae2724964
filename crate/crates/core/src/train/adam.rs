use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `w` in place; `t` is the 1-based step.
pub fn adam_step(
    w: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    lr: f32,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Usage("adam step count starts at 1".into()));
    }
    if grad.len() != w.len() || m.len() != w.len() || v.len() != w.len() {
        return Err(Error::dim(format!(
            "adam buffers differ in length: params {}, grad {}, m {}, v {}",
            w.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = (1.0 - (cfg.beta1 as f64).powi(exp)) as f32;
    let c2 = (1.0 - (cfg.beta2 as f64).powi(exp)) as f32;
    for i in 0..w.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        w[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// First and second moments for every trainable tensor, in storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.trainable().map(|e| Tensor::zeros(e.tensor.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one step to every trainable tensor; `grads` is in storage order.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f32, t: u64, cfg: &AdamConfig) -> Result<()> {
        let n = params.trainable().count();
        if grads.len() != n || self.m.len() != n || self.v.len() != n {
            return Err(Error::dim(format!(
                "adam expects {n} gradient and moment tensors, got {}, {} and {}",
                grads.len(),
                self.m.len(),
                self.v.len()
            )));
        }
        for (((entry, g), m), v) in params.trainable_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            adam_step(entry.tensor.data_mut(), g.data(), m.data_mut(), v.data_mut(), lr, t, cfg)?;
        }
        Ok(())
    }
}
