//! Adam with decoupled weight decay.

use std::collections::BTreeMap;

use regionmix_autograd::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Moments of one optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<f64>>,
    pub v: BTreeMap<String, Tensor<f64>>,
}

impl AdamState {
    /// One update of every parameter in `grads`:
    /// `θ ← θ - lr (m̂ / (√v̂ + ε) + wd θ)`.
    pub fn update(&mut self, opt: &AdamW, lr: f64, store: &mut ParamStore, grads: &BTreeMap<String, Tensor<f64>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for (name, g) in grads {
            let p = store
                .get_mut(name)
                .ok_or_else(|| Error::Argument(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient of `{name}` is {:?}, parameter is {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = opt.beta1 * *mv + (1.0 - opt.beta1) * gv;
                *vv = opt.beta2 * *vv + (1.0 - opt.beta2) * gv * gv;
                let step = (*mv / c1) / ((*vv / c2).sqrt() + opt.eps) + opt.weight_decay * *pv;
                *pv -= lr * step;
            }
        }
        Ok(())
    }

    /// Flattens into named arrays under `prefix` for checkpointing.
    pub fn to_arrays(&self, prefix: &str) -> BTreeMap<String, Tensor<f64>> {
        let mut out = BTreeMap::new();
        out.insert(format!("{prefix}/step"), Tensor::from_f64(&[1], &[self.step as f64]));
        for (n, t) in &self.m {
            out.insert(format!("{prefix}/m/{n}"), t.clone());
        }
        for (n, t) in &self.v {
            out.insert(format!("{prefix}/v/{n}"), t.clone());
        }
        out
    }

    /// Inverse of [`AdamState::to_arrays`]; missing state starts fresh.
    pub fn from_arrays(prefix: &str, arrays: &BTreeMap<String, Tensor<f64>>) -> Self {
        let mut s = Self::default();
        for (k, t) in arrays {
            let Some(rest) = k.strip_prefix(prefix).and_then(|r| r.strip_prefix('/')) else { continue };
            if rest == "step" {
                s.step = t.data().first().copied().unwrap_or(0.0).max(0.0) as u64;
            } else if let Some(n) = rest.strip_prefix("m/") {
                s.m.insert(n.to_string(), t.clone());
            } else if let Some(n) = rest.strip_prefix("v/") {
                s.v.insert(n.to_string(), t.clone());
            }
        }
        s
    }
}
