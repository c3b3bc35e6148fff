use projsynth_tensor::ops::{self, NormMode};
use projsynth_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use super::params::{Builder, Layers, Tracer};
use crate::error::{bail, Result};

/// Style-transfer style generator: stem, two stride-2 downsamplings,
/// residual blocks, two transposed-conv upsamplings, output conv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResNetGenConfig {
    pub n_residual_blocks: usize,
    pub stem_channels: usize,
    /// Widths after the first and second downsampling.
    pub down_channels: [usize; 2],
    /// Kernel of the stem and output convs.
    pub stem_kernel: usize,
    /// Kernel of the resampling convs and residual blocks.
    pub kernel: usize,
    pub norm_eps: f64,
}

impl Default for ResNetGenConfig {
    fn default() -> Self {
        Self { n_residual_blocks: 9, stem_channels: 32, down_channels: [64, 128], stem_kernel: 7, kernel: 3, norm_eps: 1e-5 }
    }
}

impl ResNetGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_residual_blocks == 0 {
            bail!(Config, "n_residual_blocks must be >= 1");
        }
        if self.stem_channels == 0 || self.down_channels.contains(&0) {
            bail!(Config, "ResNet channel widths must be >= 1");
        }
        for k in [self.stem_kernel, self.kernel] {
            if k == 0 || k % 2 == 0 {
                bail!(Config, "ResNet kernels must be odd, got {k}");
            }
        }
        if !(self.norm_eps > 0.0) {
            bail!(Config, "norm_eps must be positive");
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h % 4 != 0 || w % 4 != 0 {
            bail!(Config, "ResNet generator needs input dims divisible by 4, got {h}x{w}");
        }
        Ok(())
    }
}

pub(super) fn build<T: Element>(cfg: &ResNetGenConfig, b: &mut Builder<T>) -> Result<()> {
    let (c0, [c1, c2]) = (cfg.stem_channels, cfg.down_channels);
    let k = cfg.kernel;
    b.conv("stem", 1, c0, cfg.stem_kernel)?;
    b.norm("stem.norm", c0)?;
    b.conv("down1", c0, c1, k)?;
    b.norm("down1.norm", c1)?;
    b.conv("down2", c1, c2, k)?;
    b.norm("down2.norm", c2)?;
    for i in 0..cfg.n_residual_blocks {
        b.conv(&format!("block{i}.conv1"), c2, c2, k)?;
        b.norm(&format!("block{i}.norm1"), c2)?;
        b.conv(&format!("block{i}.conv2"), c2, c2, k)?;
        b.norm(&format!("block{i}.norm2"), c2)?;
    }
    b.conv_t("up1", c2, c1, k)?;
    b.norm("up1.norm", c1)?;
    b.conv_t("up2", c1, c0, k)?;
    b.norm("up2.norm", c0)?;
    b.conv("out", c0, 1, cfg.stem_kernel)
}

pub(super) fn forward<T: Element>(
    cfg: &ResNetGenConfig,
    layers: &Layers<'_, T>,
    x: &Tensor<T>,
    trace: &mut Tracer<T>,
) -> Result<Tensor<T>> {
    let (ps, p) = (cfg.stem_kernel / 2, cfg.kernel / 2);
    let inorm = |name: &str, t: &Tensor<T>| layers.norm(name, t, NormMode::Instance, cfg.norm_eps);
    let mut h = ops::relu(&inorm("stem.norm", &layers.conv("stem", x, 1, ps)?)?);
    trace.record("stem", &h);
    for name in ["down1", "down2"] {
        h = ops::relu(&inorm(&format!("{name}.norm"), &layers.conv(name, &h, 2, p)?)?);
        trace.record(name, &h);
    }
    for i in 0..cfg.n_residual_blocks {
        let r = ops::relu(&inorm(&format!("block{i}.norm1"), &layers.conv(&format!("block{i}.conv1"), &h, 1, p)?)?);
        let r = inorm(&format!("block{i}.norm2"), &layers.conv(&format!("block{i}.conv2"), &r, 1, p)?)?;
        h = ops::add(&h, &r)?;
        trace.record(format!("block{i}"), &h);
    }
    for name in ["up1", "up2"] {
        h = ops::relu(&inorm(&format!("{name}.norm"), &layers.conv_t(name, &h, 2, p, 1)?)?);
        trace.record(name, &h);
    }
    layers.conv("out", &h, 1, ps)
}
