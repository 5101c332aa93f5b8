//! Bias-corrected Adam over the named parameter store.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: usize,
    m: BTreeMap<String, Tensor<f64>>,
    v: BTreeMap<String, Tensor<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Apply one update. Parameters without a gradient entry are treated as
    /// having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor<f64>>) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let names: Vec<String> = store.trainable_names().cloned().collect();
        for name in names {
            let p = store.get(&name).clone();
            let zero = Tensor::zeros(p.shape());
            let g = grads.get(&name).unwrap_or(&zero);
            if g.shape() != p.shape() {
                return Err(Error::shape(format!(
                    "gradient for {name}: {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient for {name}")));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            *m = m.zip(g, |mv, gv| self.beta1 * mv + (1.0 - self.beta1) * gv)?;
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            *v = v.zip(g, |vv, gv| self.beta2 * vv + (1.0 - self.beta2) * gv * gv)?;
            let (m, v) = (&self.m[&name], &self.v[&name]);
            let mut new = p.clone();
            let nd = new.data_mut();
            for i in 0..nd.len() {
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                nd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            store.set(&name, new);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::full(&[3], 1.5));
        let mut opt = Adam::new(0.1);
        opt.step(&mut store, &BTreeMap::new()).unwrap();
        assert_eq!(store.get("w").data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = w^2, gradient 2w, lr 0.1: Adam's effective step is ~lr, so
        // |w| decreases strictly until it reaches the lr scale, then hovers
        // in a small band around 0 (signed overshoot is inherent to Adam)
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let mut opt = Adam::new(0.1);
        let mut prev: f64 = 1.0;
        for step in 0..100 {
            let w = store.get("w").item();
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), Tensor::scalar(2.0 * w));
            opt.step(&mut store, &grads).unwrap();
            let now = store.get("w").item().abs();
            if step < 10 {
                assert!(now < prev, "|w| should decrease early: {now} vs {prev}");
            } else {
                assert!(now < 0.3, "|w| should stay near 0, got {now}");
            }
            prev = now;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let mut opt = Adam::new(0.1);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(f64::NAN));
        assert!(opt.step(&mut store, &grads).is_err());
    }
}
