//! Bias-corrected Adam.

use crate::ndnum::{NdError, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f64>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { lr, beta1, beta2, eps, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One update of every parameter for which `trainable(id)` holds. A
    /// missing gradient counts as zero. Parameters are untouched if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<f64>, grads: &[Option<Tensor<f64>>], trainable: impl Fn(usize) -> bool) -> Result<(), NdError> {
        if grads.len() != params.len() {
            return Err(NdError::Shape { op: "adam", detail: format!("{} gradients for {} parameters", grads.len(), params.len()) });
        }
        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.len() != params.get(id).len() {
                    return Err(NdError::Shape { op: "adam", detail: format!("gradient of {} has the wrong size", params.name(id)) });
                }
                if !g.is_finite() {
                    return Err(NdError::NumericFault("non-finite gradient"));
                }
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter().enumerate() {
            if !trainable(id) {
                continue;
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.as_ref().map_or(0.0, |g| g.data()[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                p[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
