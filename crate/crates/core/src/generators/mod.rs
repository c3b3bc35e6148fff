//! Generator networks mapping a single-channel MR projection to a
//! single-channel synthesized X-ray projection of the same size.

mod crn;
mod params;
mod resnet;
mod unet;

use std::path::Path;

use projsynth_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

pub use crn::CrnConfig;
pub use params::{mix_seed, ParamStore};
pub use resnet::ResNetGenConfig;
pub use unet::UNetConfig;

pub(crate) use params::Builder;
use params::{Layers, Tracer};

use crate::error::{bail, Result};
use crate::objectives::WeightSet;
use crate::projector::{Modality, ProjectionImage};

/// Architecture and its hyperparameters; serialized with an `arch` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ArchConfig {
    Unet(UNetConfig),
    Resnet(ResNetGenConfig),
    Crn(CrnConfig),
}

impl ArchConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ArchConfig::Unet(_) => "unet",
            ArchConfig::Resnet(_) => "resnet",
            ArchConfig::Crn(_) => "crn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ArchConfig::Unet(c) => c.validate(),
            ArchConfig::Resnet(c) => c.validate(),
            ArchConfig::Crn(c) => c.validate(),
        }
    }

    /// Whether an `h × w` input is compatible with this configuration.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        match self {
            ArchConfig::Unet(c) => c.check_input(h, w),
            ArchConfig::Resnet(c) => c.check_input(h, w),
            ArchConfig::Crn(c) => c.check_input(h, w),
        }
    }
}

/// Forward-pass mode. Dropout is active only when `training`; its masks
/// derive from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub training: bool,
    pub seed: u64,
}

impl Mode {
    pub fn eval() -> Self {
        Self { training: false, seed: 0 }
    }

    pub fn train(seed: u64) -> Self {
        Self { training: true, seed }
    }
}

/// Architecture plus its named parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Element = f32> {
    config: ArchConfig,
    params: ParamStore<T>,
}

impl<T: Element> Model<T> {
    /// Build with He-uniform kernels and zero biases drawn from `seed`.
    pub fn build(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new(seed, true);
        match &config {
            ArchConfig::Unet(c) => unet::build(c, &mut b)?,
            ArchConfig::Resnet(c) => resnet::build(c, &mut b)?,
            ArchConfig::Crn(c) => crn::build(c, &mut b)?,
        }
        Ok(Self { config, params: b.store })
    }

    pub fn build_unet(config: UNetConfig, seed: u64) -> Result<Self> {
        Self::build(ArchConfig::Unet(config), seed)
    }

    pub fn build_resnet_generator(config: ResNetGenConfig, seed: u64) -> Result<Self> {
        Self::build(ArchConfig::Resnet(config), seed)
    }

    pub fn build_crn(config: CrnConfig, seed: u64) -> Result<Self> {
        Self::build(ArchConfig::Crn(config), seed)
    }

    /// Rebuild `config` and take every parameter from `weights`.
    pub fn from_weights(config: ArchConfig, weights: &WeightSet) -> Result<Self> {
        let mut model = Self::build(config, 0)?;
        model.params.load_weight_set(weights)?;
        Ok(model)
    }

    pub fn load(config: ArchConfig, path: &Path) -> Result<Self> {
        Self::from_weights(config, &WeightSet::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_weights().save(path)
    }

    pub fn to_weights(&self) -> WeightSet {
        self.params.to_weight_set()
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn arch_name(&self) -> &'static str {
        self.config.name()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn residual_block_count(&self) -> Option<usize> {
        match &self.config {
            ArchConfig::Resnet(c) => Some(c.n_residual_blocks),
            _ => None,
        }
    }

    pub fn refinement_module_count(&self) -> Option<usize> {
        match &self.config {
            ArchConfig::Crn(c) => Some(c.n_modules),
            _ => None,
        }
    }

    /// Channel count of the final layer.
    pub fn output_channels(&self) -> usize {
        self.params.get("out.weight").map(|w| w.shape()[0]).unwrap_or(0)
    }

    /// Zero the second conv (and its normalization shift) of every residual
    /// block, turning each block into the identity.
    pub fn zero_residual_branches(&mut self) -> Result<()> {
        let Some(n) = self.residual_block_count() else {
            bail!(Config, "{} has no residual blocks", self.arch_name());
        };
        for i in 0..n {
            for name in [format!("block{i}.conv2.weight"), format!("block{i}.conv2.bias"), format!("block{i}.norm2.beta")] {
                let len = self.params.get(&name)?.numel();
                self.params.set_data(&name, vec![T::zero(); len])?;
            }
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast() }
    }

    fn check_tensor(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 {
            bail!(Dimension, "generators take single-channel input, got {c} channels");
        }
        self.config.check_input(h, w)
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, trace: &mut Tracer<T>) -> Result<Tensor<T>> {
        self.check_tensor(x)?;
        let layers = Layers { params: &self.params };
        match &self.config {
            ArchConfig::Unet(c) => unet::forward(c, &layers, x, mode, trace),
            ArchConfig::Resnet(c) => resnet::forward(c, &layers, x, trace),
            ArchConfig::Crn(c) => crn::forward(c, &layers, x, trace),
        }
    }

    /// `N × 1 × H × W` → `N × 1 × H × W`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.run(x, mode, &mut Tracer::new(false))
    }

    /// Forward pass that also returns named intermediate feature maps
    /// (`enc*`/`dec*`, `stem`/`down*`/`block*`/`up*`, or `module*`).
    pub fn forward_traced(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<(String, Tensor<T>)>)> {
        let mut trace = Tracer::new(true);
        let y = self.run(x, mode, &mut trace)?;
        Ok((y, trace.items.unwrap_or_default()))
    }

    /// Synthesize one image. Dropout masks in training mode use seed 0.
    pub fn forward_image(&self, input: &ProjectionImage, training: bool) -> Result<ProjectionImage> {
        let mode = Mode { training, seed: 0 };
        let y = self.forward(&input.to_tensor::<T>().detach(), mode)?;
        let out = ProjectionImage::from_tensor(&y, input.spacing(), Modality::Synth)?;
        if out.data().iter().any(|v| !v.is_finite()) {
            bail!(Numerical, "{} produced non-finite output", self.arch_name());
        }
        Ok(out)
    }
}
