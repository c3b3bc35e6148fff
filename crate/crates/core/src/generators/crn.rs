use projsynth_tensor::ops::{self, NormMode};
use projsynth_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use super::params::{Builder, Layers, Tracer};
use crate::error::{bail, Result};

/// Cascaded refinement network: one module per scale, coarse to fine.
/// The input reaches every scale only through bilinear resizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrnConfig {
    pub n_modules: usize,
    /// Resolution `(h0, w0)` of the first module.
    pub coarsest: [usize; 2],
    /// Feature width of each module, coarse to fine; non-increasing.
    pub widths: Vec<usize>,
    #[serde(default = "default_slope")]
    pub lrelu_slope: f64,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
}

fn default_slope() -> f64 {
    0.2
}

fn default_eps() -> f64 {
    1e-5
}

impl Default for CrnConfig {
    /// Eight modules from 4×4 up to 512×512.
    fn default() -> Self {
        Self::halving(8, [4, 4], 256)
    }
}

impl CrnConfig {
    /// Widths start at `first_width` and halve per module (never below 1).
    pub fn halving(n_modules: usize, coarsest: [usize; 2], first_width: usize) -> Self {
        Self {
            n_modules,
            coarsest,
            widths: (0..n_modules).map(|m| (first_width >> m.min(63)).max(1)).collect(),
            lrelu_slope: default_slope(),
            norm_eps: default_eps(),
        }
    }

    /// Configuration whose finest module matches an `h × w` input.
    pub fn for_input(h: usize, w: usize, n_modules: usize, first_width: usize) -> Result<Self> {
        let f = 1usize.checked_shl(n_modules.saturating_sub(1) as u32).unwrap_or(0);
        if n_modules == 0 || f == 0 || h % f != 0 || w % f != 0 {
            bail!(Config, "{h}x{w} input cannot be reached by {n_modules} doubling modules");
        }
        Ok(Self::halving(n_modules, [h / f, w / f], first_width))
    }

    pub fn finest(&self) -> [usize; 2] {
        let f = 1usize << (self.n_modules - 1);
        [self.coarsest[0] * f, self.coarsest[1] * f]
    }

    pub fn module_resolution(&self, m: usize) -> [usize; 2] {
        [self.coarsest[0] << m, self.coarsest[1] << m]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modules == 0 || self.n_modules > 16 {
            bail!(Config, "CRN needs 1..=16 modules, got {}", self.n_modules);
        }
        if self.coarsest.contains(&0) {
            bail!(Config, "CRN coarsest resolution must be >= 1");
        }
        if self.widths.len() != self.n_modules {
            bail!(Config, "CRN has {} modules but {} widths", self.n_modules, self.widths.len());
        }
        if self.widths.contains(&0) || self.widths.windows(2).any(|w| w[1] > w[0]) {
            bail!(Config, "CRN widths must be >= 1 and non-increasing from coarse to fine, got {:?}", self.widths);
        }
        if !(0.0..1.0).contains(&self.lrelu_slope) {
            bail!(Config, "lrelu slope must be in [0, 1)");
        }
        if !(self.norm_eps > 0.0) {
            bail!(Config, "norm_eps must be positive");
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let [fh, fw] = self.finest();
        if (h, w) != (fh, fw) {
            bail!(Config, "CRN finest resolution is {fh}x{fw} but the input is {h}x{w}");
        }
        Ok(())
    }
}

pub(super) fn build<T: Element>(cfg: &CrnConfig, b: &mut Builder<T>) -> Result<()> {
    for m in 0..cfg.n_modules {
        let cin = 1 + if m == 0 { 0 } else { cfg.widths[m - 1] };
        let w = cfg.widths[m];
        b.conv(&format!("module{m}.conv1"), cin, w, 3)?;
        b.norm(&format!("module{m}.norm1"), w)?;
        b.conv(&format!("module{m}.conv2"), w, w, 3)?;
        b.norm(&format!("module{m}.norm2"), w)?;
    }
    b.conv("out", cfg.widths[cfg.n_modules - 1], 1, 1)
}

pub(super) fn forward<T: Element>(
    cfg: &CrnConfig,
    layers: &Layers<'_, T>,
    x: &Tensor<T>,
    trace: &mut Tracer<T>,
) -> Result<Tensor<T>> {
    let act = |t: &Tensor<T>| ops::leaky_relu(t, cfg.lrelu_slope);
    let mut prev: Option<Tensor<T>> = None;
    for m in 0..cfg.n_modules {
        let [h, w] = cfg.module_resolution(m);
        let scaled = ops::resize_bilinear(x, h, w)?;
        let input = match &prev {
            None => scaled,
            Some(f) => ops::concat_channels(&scaled, &ops::resize_bilinear(f, h, w)?)?,
        };
        let f = act(&layers.norm(&format!("module{m}.norm1"), &layers.conv(&format!("module{m}.conv1"), &input, 1, 1)?, NormMode::Layer, cfg.norm_eps)?)?;
        let f = act(&layers.norm(&format!("module{m}.norm2"), &layers.conv(&format!("module{m}.conv2"), &f, 1, 1)?, NormMode::Layer, cfg.norm_eps)?)?;
        trace.record(format!("module{m}"), &f);
        prev = Some(f);
    }
    layers.conv("out", prev.as_ref().expect("n_modules >= 1"), 1, 0)
}
