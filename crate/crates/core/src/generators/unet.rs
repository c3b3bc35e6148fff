use projsynth_tensor::{ops, Element, Tensor};
use serde::{Deserialize, Serialize};

use super::params::{mix_seed, Builder, Layers, Tracer};
use super::Mode;
use crate::error::{bail, Result};

/// Encoder–decoder with same-level skip concatenations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    /// Resolution levels; the input must be divisible by `2^(depth−1)`.
    pub depth: usize,
    /// Channels at full resolution; level `i` has `base_channels·2^i`.
    pub base_channels: usize,
    pub kernel: usize,
    pub dropout_keep: f64,
    /// How many decoder levels, starting from the coarsest, apply dropout.
    pub dropout_levels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 4, base_channels: 32, kernel: 3, dropout_keep: 0.5, dropout_levels: 3 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 16 {
            bail!(Config, "U-net depth must be in 1..=16, got {}", self.depth);
        }
        if self.base_channels == 0 {
            bail!(Config, "U-net base_channels must be >= 1");
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            bail!(Config, "U-net kernel must be odd, got {}", self.kernel);
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            bail!(Config, "dropout_keep must be in (0, 1], got {}", self.dropout_keep);
        }
        if self.dropout_levels > self.depth {
            bail!(Config, "dropout_levels ({}) exceeds depth ({})", self.dropout_levels, self.depth);
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << (self.depth - 1);
        if h % f != 0 || w % f != 0 {
            bail!(Config, "U-net of depth {} needs input dims divisible by {f}, got {h}x{w}", self.depth);
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

pub(super) fn build<T: Element>(cfg: &UNetConfig, b: &mut Builder<T>) -> Result<()> {
    let k = cfg.kernel;
    let c = |i| cfg.level_channels(i);
    b.conv("enc0.conv1", 1, c(0), k)?;
    b.conv("enc0.conv2", c(0), c(0), k)?;
    for i in 1..cfg.depth {
        b.conv(&format!("enc{i}.down"), c(i - 1), c(i), k)?;
        b.conv(&format!("enc{i}.conv"), c(i), c(i), k)?;
    }
    for i in (1..cfg.depth).rev() {
        b.conv_t(&format!("dec{i}.up"), c(i), c(i - 1), k)?;
        b.conv(&format!("dec{i}.conv"), 2 * c(i - 1), c(i - 1), k)?;
    }
    b.conv("out", c(0), 1, 1)
}

pub(super) fn forward<T: Element>(
    cfg: &UNetConfig,
    layers: &Layers<'_, T>,
    x: &Tensor<T>,
    mode: Mode,
    trace: &mut Tracer<T>,
) -> Result<Tensor<T>> {
    let p = cfg.kernel / 2;
    let h = ops::relu(&layers.conv("enc0.conv1", x, 1, p)?);
    let h = ops::relu(&layers.conv("enc0.conv2", &h, 1, p)?);
    trace.record("enc0", &h);
    let mut skips = vec![h];
    for i in 1..cfg.depth {
        let d = ops::relu(&layers.conv(&format!("enc{i}.down"), &skips[i - 1], 2, p)?);
        let e = ops::relu(&layers.conv(&format!("enc{i}.conv"), &d, 1, p)?);
        trace.record(format!("enc{i}"), &e);
        skips.push(e);
    }
    let mut y = skips.pop().expect("depth >= 1");
    for (j, i) in (1..cfg.depth).rev().enumerate() {
        let mut u = ops::relu(&layers.conv_t(&format!("dec{i}.up"), &y, 2, p, 1)?);
        if j < cfg.dropout_levels {
            u = ops::dropout(&u, cfg.dropout_keep, mode.training, mix_seed(&[mode.seed, i as u64]))?;
        }
        let cat = ops::concat_channels(&skips[i - 1], &u)?;
        y = ops::relu(&layers.conv(&format!("dec{i}.conv"), &cat, 1, p)?);
        trace.record(format!("dec{i}"), &y);
    }
    layers.conv("out", &y, 1, 0)
}
