use serde::{Deserialize, Serialize};

use crate::params::{Gradients, ParamStore};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Adam moments with a step count per parameter.
///
/// A parameter that receives no gradient in a step (for example the heads of
/// a dataset that was not sampled) is skipped entirely: its value, moments and
/// step count stay as they were.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub steps: Vec<u64>,
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            steps: vec![0; param_count],
            m: vec![None; param_count],
            v: vec![None; param_count],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64, cfg: &AdamConfig) {
        assert_eq!(params.len(), self.len(), "optimizer state does not match parameters");
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let eps = T::of(cfg.eps);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let shape = g.shape();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            let c1 = T::one() - T::of(cfg.beta1.powi(t));
            let c2 = T::one() - T::of(cfg.beta2.powi(t));
            let lr = T::of(lr);
            let p = params.get_mut(id);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    pub fn cast<U: Float>(&self) -> AdamState<U> {
        let c = |x: &Vec<Option<Tensor<T>>>| x.iter().map(|t| t.as_ref().map(Tensor::cast)).collect();
        AdamState {
            steps: self.steps.clone(),
            m: c(&self.m),
            v: c(&self.v),
        }
    }
}
