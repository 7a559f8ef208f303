use crate::error::{Error, Result};
use crate::numeric::{Gradients, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient, added to the gradient as `weight_decay * param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers for the parameters of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| t.zeros_like()).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update of `params`. Parameters outside `params` are left
    /// untouched; every listed parameter must have a gradient.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        params: &[ParamId],
    ) -> Result<()> {
        let mut resolved = Vec::with_capacity(params.len());
        for &id in params {
            let g = grads
                .param(id)
                .ok_or_else(|| Error::MissingGrad(store.name(id).to_string()))?;
            resolved.push((id, g));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in resolved {
            let p = store.get_mut(id);
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let grad = gv + weight_decay * *pv;
                *mv = beta1 * *mv + (1.0 - beta1) * grad;
                *vv = beta2 * *vv + (1.0 - beta2) * grad * grad;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
