use indexmap::IndexMap;
use projsynth_tensor::{ops, Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{bail, Result};
use crate::objectives::WeightSet;

/// Deterministically combine seed components (splitmix64 finalizer chain).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element = f32> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            bail!(Config, "duplicate parameter name '{name}'");
        }
        self.params.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        match self.params.get(name) {
            Some(t) => Ok(t),
            None => bail!(Config, "no parameter named '{name}'"),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Replace the values of `name` with a fresh leaf of the same shape and tracking flag.
    pub fn set_data(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let Some(slot) = self.params.get_mut(name) else {
            bail!(Config, "no parameter named '{name}'");
        };
        let fresh = if slot.requires_grad() { Tensor::parameter(slot.shape(), data)? } else { Tensor::from_vec(slot.shape(), data)? };
        *slot = fresh;
        Ok(())
    }

    /// Swap in another tensor of the same shape, e.g. one that is part of
    /// an outer graph.
    pub fn replace(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let Some(slot) = self.params.get_mut(name) else {
            bail!(Config, "no parameter named '{name}'");
        };
        if slot.shape() != tensor.shape() {
            bail!(Dimension, "parameter '{name}' has shape {:?}, got {:?}", slot.shape(), tensor.shape());
        }
        *slot = tensor;
        Ok(())
    }

    pub fn zero_grads(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    pub fn to_weight_set(&self) -> WeightSet {
        let mut w = WeightSet::new();
        for (name, t) in &self.params {
            w.insert_tensor(name.clone(), t).expect("names are unique");
        }
        w
    }

    /// Overwrite every parameter from `weights`, which must hold exactly
    /// this store's names with matching shapes.
    pub fn load_weight_set(&mut self, weights: &WeightSet) -> Result<()> {
        for name in weights.names() {
            if !self.params.contains_key(name) {
                bail!(Load, "unexpected tensor '{name}' for this architecture");
            }
        }
        let names: Vec<String> = self.params.keys().cloned().collect();
        for name in names {
            let shape = self.params[&name].shape().to_vec();
            let w = weights.get_shaped(&name, &shape)?;
            self.set_data(&name, w.data.iter().map(|&v| T::of(v as f64)).collect())?;
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, t)| (k.clone(), t.cast::<U>().with_requires_grad(t.requires_grad()))).collect(),
        }
    }

    /// Same values with tracking switched on or off for every entry.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self { params: self.params.iter().map(|(k, t)| (k.clone(), t.with_requires_grad(requires_grad))).collect() }
    }
}

/// Registers layers with He-uniform kernels and zero biases. Each
/// parameter draws from its own stream seeded by `(seed, name)`, so
/// parameter values do not depend on how many other layers exist.
pub(crate) struct Builder<T: Element> {
    pub store: ParamStore<T>,
    seed: u64,
    trainable: bool,
}

impl<T: Element> Builder<T> {
    pub fn new(seed: u64, trainable: bool) -> Self {
        Self { store: ParamStore::new(), seed, trainable }
    }

    fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let digest = h.finalize();
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
    }

    fn add(&mut self, name: String, shape: &[usize], data: Vec<T>) -> Result<()> {
        let t = if self.trainable { Tensor::parameter(shape, data)? } else { Tensor::from_vec(shape, data)? };
        self.store.insert(name, t)
    }

    fn he_uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = self.stream(&name);
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        self.add(name, shape, data)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<()> {
        let n = shape.iter().product();
        self.add(name, shape, vec![T::of(value); n])
    }

    /// `<name>.weight` `[cout, cin, k, k]` and `<name>.bias` `[cout]`.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        self.he_uniform(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k)?;
        self.constant(format!("{name}.bias"), &[cout], 0.0)
    }

    /// Transposed conv: `<name>.weight` `[cin, cout, k, k]` and `<name>.bias` `[cout]`.
    pub fn conv_t(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        self.he_uniform(format!("{name}.weight"), &[cin, cout, k, k], cin * k * k)?;
        self.constant(format!("{name}.bias"), &[cout], 0.0)
    }

    /// `<name>.gamma` (ones) and `<name>.beta` (zeros), one per channel.
    pub fn norm(&mut self, name: &str, channels: usize) -> Result<()> {
        self.constant(format!("{name}.gamma"), &[channels], 1.0)?;
        self.constant(format!("{name}.beta"), &[channels], 0.0)
    }
}

/// Layer application against a parameter store.
pub(crate) struct Layers<'a, T: Element> {
    pub params: &'a ParamStore<T>,
}

impl<T: Element> Layers<'_, T> {
    pub fn conv(&self, name: &str, x: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let b = self.params.get(&format!("{name}.bias"))?;
        Ok(ops::conv2d(x, w, Some(b), stride, pad)?)
    }

    pub fn conv_t(&self, name: &str, x: &Tensor<T>, stride: usize, pad: usize, out_pad: usize) -> Result<Tensor<T>> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let b = self.params.get(&format!("{name}.bias"))?;
        Ok(ops::conv2d_transpose(x, w, Some(b), stride, pad, out_pad)?)
    }

    pub fn norm(&self, name: &str, x: &Tensor<T>, mode: ops::NormMode, eps: f64) -> Result<Tensor<T>> {
        let g = self.params.get(&format!("{name}.gamma"))?;
        let b = self.params.get(&format!("{name}.beta"))?;
        Ok(ops::normalize(x, mode, eps, Some((g, b)))?)
    }
}

/// Optional collection of named intermediate feature maps.
pub(crate) struct Tracer<T: Element> {
    pub items: Option<Vec<(String, Tensor<T>)>>,
}

impl<T: Element> Tracer<T> {
    pub fn new(enabled: bool) -> Self {
        Self { items: enabled.then(Vec::new) }
    }

    pub fn record(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        if let Some(items) = &mut self.items {
            items.push((name.into(), t.clone()));
        }
    }
}
