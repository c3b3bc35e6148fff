use std::path::Path;

use projsynth_tensor::{ops, Element, Tensor};
use serde::{Deserialize, Serialize};

use super::weights::WeightSet;
use crate::error::{bail, Result};
use crate::generators::{Builder, ParamStore};

/// VGG-19 conv widths per block and conv count per block.
const VGG19_BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum EvalLayer {
    /// Same-padded conv with bias.
    Conv { name: String, in_channels: usize, out_channels: usize, kernel: usize },
    Relu { name: String },
    /// 2 × 2 max pooling, stride 2.
    Pool { name: String },
}

impl EvalLayer {
    pub fn name(&self) -> &str {
        match self {
            EvalLayer::Conv { name, .. } | EvalLayer::Relu { name } | EvalLayer::Pool { name } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalNetConfig {
    pub input_channels: usize,
    pub layers: Vec<EvalLayer>,
}

impl EvalNetConfig {
    /// VGG-19 feature stack (16 convs in five blocks, `conv{b}_{i}`,
    /// `relu{b}_{i}`, `pool{b}`) with every width divided by `width_divisor`.
    pub fn vgg19(width_divisor: usize) -> Self {
        let widths: Vec<usize> = VGG19_BLOCKS.iter().map(|&(w, _)| (w / width_divisor.max(1)).max(1)).collect();
        Self::vgg19_with_widths(3, &widths)
    }

    fn vgg19_with_widths(input_channels: usize, widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut cin = input_channels;
        for (b, (&(_, convs), &w)) in VGG19_BLOCKS.iter().zip(widths).enumerate() {
            for i in 1..=convs {
                layers.push(EvalLayer::Conv { name: format!("conv{}_{i}", b + 1), in_channels: cin, out_channels: w, kernel: 3 });
                layers.push(EvalLayer::Relu { name: format!("relu{}_{i}", b + 1) });
                cin = w;
            }
            layers.push(EvalLayer::Pool { name: format!("pool{}", b + 1) });
        }
        Self { input_channels, layers }
    }

    /// A single 1 × 1 conv layer named `identity` on one channel.
    pub fn identity() -> Self {
        Self {
            input_channels: 1,
            layers: vec![EvalLayer::Conv { name: "identity".into(), in_channels: 1, out_channels: 1, kernel: 1 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.layers.is_empty() {
            bail!(Config, "evaluation network needs input channels and at least one layer");
        }
        let mut channels = self.input_channels;
        let mut seen = std::collections::HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name()) {
                bail!(Config, "duplicate evaluation layer name '{}'", layer.name());
            }
            if let EvalLayer::Conv { name, in_channels, out_channels, kernel } = layer {
                if *in_channels != channels || *out_channels == 0 || kernel % 2 == 0 {
                    bail!(Config, "layer '{name}': expects {in_channels} input channels (have {channels}), odd kernel");
                }
                channels = *out_channels;
            }
        }
        Ok(())
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(EvalLayer::name)
    }
}

/// Frozen feature extractor whose activations define the perceptual loss.
#[derive(Debug, Clone)]
pub struct EvaluationNetwork<T: Element = f32> {
    config: EvalNetConfig,
    params: ParamStore<T>,
}

impl<T: Element> EvaluationNetwork<T> {
    /// Seeded He-uniform weights; parameters never require gradients.
    pub fn random(config: EvalNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::<T>::new(seed, false);
        for layer in &config.layers {
            if let EvalLayer::Conv { name, in_channels, out_channels, kernel } = layer {
                b.conv(name, *in_channels, *out_channels, *kernel)?;
            }
        }
        Ok(Self { config, params: b.store })
    }

    /// The identity network: output of layer `identity` equals its input.
    pub fn identity() -> Self {
        let mut w = WeightSet::new();
        w.insert("identity.weight", vec![1, 1, 1, 1], vec![1.0]).expect("static shape");
        w.insert("identity.bias", vec![1], vec![0.0]).expect("static shape");
        Self::from_weights(EvalNetConfig::identity(), &w).expect("consistent")
    }

    pub fn from_weights(config: EvalNetConfig, weights: &WeightSet) -> Result<Self> {
        let mut net = Self::random(config, 0)?;
        net.params.load_weight_set(weights)?;
        Ok(net)
    }

    pub fn load(config: EvalNetConfig, path: &Path) -> Result<Self> {
        Self::from_weights(config, &WeightSet::load(path)?)
    }

    /// Load a VGG-19 stack, reading its widths from the stored kernels.
    pub fn load_vgg19(path: &Path) -> Result<Self> {
        let weights = WeightSet::load(path)?;
        let first = weights.get("conv1_1.weight")?;
        if first.shape.len() != 4 {
            bail!(Load, "tensor 'conv1_1.weight' must be 4D, has shape {:?}", first.shape);
        }
        let mut widths = Vec::new();
        for b in 1..=5 {
            widths.push(weights.get(&format!("conv{b}_1.weight"))?.shape[0]);
        }
        let config = EvalNetConfig::vgg19_with_widths(first.shape[1], &widths);
        Self::from_weights(config, &weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_weights().save(path)
    }

    pub fn to_weights(&self) -> WeightSet {
        self.params.to_weight_set()
    }

    pub fn config(&self) -> &EvalNetConfig {
        &self.config
    }

    pub fn has_layer(&self, name: &str) -> bool {
        self.config.layer_names().any(|n| n == name)
    }

    pub fn cast<U: Element>(&self) -> EvaluationNetwork<U> {
        EvaluationNetwork { config: self.config.clone(), params: self.params.cast() }
    }

    /// Activations of the named layers, in the order requested. A
    /// single-channel input is replicated to the network's channel count.
    pub fn activations(&self, x: &Tensor<T>, layers: &[String]) -> Result<Vec<Tensor<T>>> {
        let mut positions = Vec::with_capacity(layers.len());
        for name in layers {
            match self.config.layer_names().position(|n| n == name) {
                Some(p) => positions.push(p),
                None => bail!(Config, "evaluation network has no layer '{name}'"),
            }
        }
        let last = positions.iter().copied().max().unwrap_or(0);
        let (_, c, _, _) = x.dims4()?;
        let mut h = if c == self.config.input_channels {
            x.clone()
        } else if c == 1 {
            ops::repeat_channels(x, self.config.input_channels)?
        } else {
            bail!(Dimension, "evaluation network takes 1 or {} channels, got {c}", self.config.input_channels);
        };
        let mut outputs: Vec<Option<Tensor<T>>> = vec![None; layers.len()];
        for (idx, layer) in self.config.layers.iter().enumerate().take(last + 1) {
            h = match layer {
                EvalLayer::Conv { name, kernel, .. } => {
                    let w = self.params.get(&format!("{name}.weight"))?;
                    let b = self.params.get(&format!("{name}.bias"))?;
                    ops::conv2d(&h, w, Some(b), 1, kernel / 2)?
                }
                EvalLayer::Relu { .. } => ops::relu(&h),
                EvalLayer::Pool { .. } => ops::max_pool2d(&h, 2, 2)?,
            };
            for (slot, &p) in outputs.iter_mut().zip(&positions) {
                if p == idx {
                    *slot = Some(h.clone());
                }
            }
        }
        Ok(outputs.into_iter().map(|o| o.expect("every position visited")).collect())
    }
}
