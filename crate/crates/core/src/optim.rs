//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| Tensor::zeros(params.get(id).dims()))
                .collect()
        };
        AdamState {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every parameter, visited in name order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients / {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c = self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::lit(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let one = T::one();
        let ids: Vec<_> = params.sorted_ids().collect();
        for id in ids {
            let g = grads.get(id);
            let p = params.get_mut(id);
            if g.dims() != p.dims() {
                return Err(Error::shape("adam", p.dims(), g.dims()));
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
