//! Named parameter store, weight init, and checkpoint I/O.
//!
//! Parameters live outside the tape. Each training step binds them into a
//! fresh [`Tape`] through [`Forward`], runs forward/backward, and the
//! optimizer writes updated tensors back by name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dtz;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

#[derive(Default, Clone)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor<f64>>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f64>) {
        self.tensors.insert(name.into(), t);
    }

    /// Non-trainable state (running statistics).
    pub fn insert_frozen(&mut self, name: impl Into<String>, t: Tensor<f64>) {
        let name = name.into();
        self.frozen.insert(name.clone());
        self.tensors.insert(name, t);
    }

    pub fn get(&self, name: &str) -> &Tensor<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn set(&mut self, name: &str, t: Tensor<f64>) {
        debug_assert!(self.tensors.contains_key(name), "unknown parameter {name}");
        self.tensors.insert(name.to_string(), t);
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys().filter(move |n| !self.frozen.contains(*n))
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.trainable_names().map(|n| self.tensors[n].len()).sum()
    }

    pub fn save(&self, dir: &Path, manifest: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, t) in &self.tensors {
            dtz::save_dtz(&dir.join(format!("{name}.dtz")), t)?;
        }
        let meta = serde_json::json!({
            "config": manifest,
            "frozen": self.frozen.iter().collect::<Vec<_>>(),
            "tensors": self.tensors.keys().collect::<Vec<_>>(),
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let names: Vec<String> = meta["tensors"]
            .as_array()
            .ok_or_else(|| Error::data("manifest missing tensor list"))?
            .iter()
            .filter_map(|v| v.as_str().map(String::from))
            .collect();
        let frozen: BTreeSet<String> = meta["frozen"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
            .unwrap_or_default();
        let mut tensors = BTreeMap::new();
        for name in names {
            let t = dtz::load_dtz(&dir.join(format!("{name}.dtz")))?;
            tensors.insert(name, t);
        }
        Ok((ParamStore { tensors, frozen }, meta["config"].clone()))
    }
}

/// Truncated normal: resample outside two standard deviations.
pub fn trunc_normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    let dist = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}

/// He-uniform init for conv kernels [C_out, C_in/g, k, k].
pub fn kaiming_uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// One forward pass: a fresh tape with every parameter bound as a tape node.
pub struct Forward {
    pub tape: Tape<f64>,
    bound: HashMap<String, Var>,
    pub train: bool,
    /// Test hook: `bconv` becomes the identity map when set.
    pub identity_bconv: bool,
    /// Batch statistics gathered by train-mode BN, keyed by `{prefix}.bn`.
    pub bn_updates: Vec<(String, Tensor<f64>, Tensor<f64>)>,
}

impl Forward {
    pub fn new(store: &ParamStore, train: bool) -> Self {
        let mut tape = Tape::new();
        let mut bound = HashMap::new();
        for (name, t) in &store.tensors {
            let requires = !store.frozen.contains(name);
            bound.insert(name.clone(), tape.leaf(t.clone(), requires));
        }
        Forward { tape, bound, train, identity_bconv: false, bn_updates: Vec::new() }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .bound
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn input(&mut self, t: Tensor<f64>) -> Var {
        self.tape.constant(t)
    }

    pub fn grad_of<'g>(
        &self,
        grads: &'g crate::tape::Grads<f64>,
        name: &str,
    ) -> Option<&'g Tensor<f64>> {
        grads.get(self.var(name))
    }
}

/// Fold batch statistics into running statistics with the BN momentum.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[(String, Tensor<f64>, Tensor<f64>)]) {
    for (prefix, mean, var) in updates {
        for (suffix, batch) in [("rmean", mean), ("rvar", var)] {
            let name = format!("{prefix}.{suffix}");
            let old = store.get(&name);
            let new = old
                .zip(batch, |o, b| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * b)
                .expect("running stat shape");
            store.set(&name, new);
        }
    }
}
