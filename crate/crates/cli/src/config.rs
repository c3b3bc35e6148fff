//! The pipeline configuration file. Every section is optional; flags given
//! on the command line take precedence over values read here.

use std::path::{Path, PathBuf};

use projsynth_core::generators::ArchConfig;
use projsynth_core::metrics::SsimConfig;
use projsynth_core::objectives::LossConfig;
use projsynth_core::phantom::PhantomSpec;
use projsynth_core::projector::TrajectorySpec;
use projsynth_core::training::TrainConfig;
use projsynth_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub size: usize,
    pub seed: u64,
    /// Voxel edge in mm; defaults to a 192 mm field of view.
    pub spacing_mm: Option<f64>,
    pub supersample: Option<usize>,
    /// Full phantom description; the built-in head phantom when absent.
    pub spec: Option<PhantomSpec>,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self { size: 64, seed: 0, spacing_mm: None, supersample: None, spec: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSection {
    pub views: usize,
    pub angular_range_deg: f64,
    pub sid_mm: f64,
    pub sdd_mm: f64,
    /// Square detector side in pixels, covering the default 317 mm panel.
    pub detector_pixels: usize,
    pub threads: usize,
    pub pgm: bool,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub split_seed: u64,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        let t = TrajectorySpec::default();
        Self {
            views: t.n_views,
            angular_range_deg: t.angular_range_deg,
            sid_mm: t.sid_mm,
            sdd_mm: t.sdd_mm,
            detector_pixels: 64,
            threads: 1,
            pgm: false,
            n_train: None,
            n_test: None,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalNetSection {
    /// VGG-19 weights container; a seeded random network when absent.
    pub weights: Option<PathBuf>,
    pub width_divisor: usize,
    pub seed: u64,
}

impl Default for EvalNetSection {
    fn default() -> Self {
        Self { weights: None, width_divisor: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub phantom: PhantomSection,
    pub projection: ProjectionSection,
    /// Architecture and hyperparameters; per-architecture defaults fitted
    /// to the data when absent.
    pub model: Option<ArchConfig>,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub evalnet: EvalNetSection,
    pub metrics: SsimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSection::default(),
            projection: ProjectionSection::default(),
            model: None,
            init_seed: 0,
            train: TrainConfig::default(),
            loss: LossConfig::l1(),
            evalnet: EvalNetSection::default(),
            metrics: SsimConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(Error::json(path))
    }

    /// Checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if let Some(spec) = &self.phantom.spec {
            spec.validate()?;
        }
        if let Some(model) = &self.model {
            model.validate()?;
        }
        self.train.validate()?;
        self.loss.validate()?;
        self.metrics.validate()?;
        Ok(())
    }
}
