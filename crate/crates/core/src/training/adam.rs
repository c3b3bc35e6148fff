use indexmap::IndexMap;
use projsynth_tensor::Element;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::generators::ParamStore;
use crate::objectives::WeightSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.004, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail!(Config, "learning rate must be positive, got {}", self.learning_rate);
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bail!(Config, "{name} must be in [0, 1), got {b}");
            }
        }
        if !(self.epsilon > 0.0) {
            bail!(Config, "epsilon must be positive");
        }
        Ok(())
    }
}

/// Apply one ADAM update in place. `t` is the step number *after*
/// incrementing (1 on the first step). Arithmetic is carried out in f64.
pub fn adam_update<T: Element>(theta: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i].as_f64();
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let step = cfg.learning_rate * (mi / c1) / ((vi / c2).sqrt() + cfg.epsilon);
        theta[i] = T::of(theta[i].as_f64() - step);
    }
}

/// First and second moment buffers per parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    t: u64,
    m: IndexMap<String, Vec<T>>,
    v: IndexMap<String, Vec<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|(k, p)| (k.to_owned(), vec![T::zero(); p.numel()])).collect();
        Ok(Self { config, t: 0, m: zeros(), v: zeros() })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// Update every parameter from its accumulated gradient (parameters
    /// without a gradient count as zero). Any non-finite gradient aborts
    /// before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        let mut grads = Vec::with_capacity(self.m.len());
        for (name, p) in params.iter() {
            let Some(m) = self.m.get(name) else {
                bail!(Config, "optimizer has no state for parameter '{name}'");
            };
            if m.len() != p.numel() {
                bail!(Dimension, "optimizer state for '{name}' has {} entries, parameter has {}", m.len(), p.numel());
            }
            let g = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
            if let Some(i) = g.iter().position(|v| !v.as_f64().is_finite()) {
                bail!(Numerical, "non-finite gradient {} at index {i} of '{name}' (step {})", g[i].as_f64(), self.t + 1);
            }
            grads.push((name.to_owned(), p.data().to_vec(), g));
        }
        self.t += 1;
        for (name, mut theta, g) in grads {
            let (m, v) = (self.m.get_mut(&name).expect("checked"), self.v.get_mut(&name).expect("checked"));
            adam_update(&mut theta, &g, m, v, self.t, &self.config);
            params.set_data(&name, theta)?;
        }
        Ok(())
    }

    /// Moment buffers as two weight sets, for checkpointing.
    pub fn to_weight_sets(&self) -> (WeightSet, WeightSet) {
        let pack = |map: &IndexMap<String, Vec<T>>| {
            let mut w = WeightSet::new();
            for (k, d) in map {
                w.insert(k.clone(), vec![d.len()], d.iter().map(|v| v.as_f64() as f32).collect()).expect("unique names");
            }
            w
        };
        (pack(&self.m), pack(&self.v))
    }

    pub fn from_weight_sets(config: AdamConfig, t: u64, params: &ParamStore<T>, m: &WeightSet, v: &WeightSet) -> Result<Self> {
        let mut state = Self::new(config, params)?;
        state.t = t;
        for (name, p) in params.iter() {
            let shape = [p.numel()];
            state.m.insert(name.to_owned(), m.get_shaped(name, &shape)?.data.iter().map(|&x| T::of(x as f64)).collect());
            state.v.insert(name.to_owned(), v.get_shaped(name, &shape)?.data.iter().map(|&x| T::of(x as f64)).collect());
        }
        Ok(state)
    }
}
