//! The desk-scale experiment end to end: head phantom → co-registered MR
//! and X-ray projections over a circular trajectory → seeded train/test
//! split → generator training → test-set metrics, with the input MR
//! projection itself as the baseline "synthesis".

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::generators::{ArchConfig, Model, UNetConfig};
use crate::metrics::{evaluate_set, EvalPair, MetricsReport, SsimConfig};
use crate::objectives::{EvalNetConfig, EvaluationNetwork, LossConfig, LossKind, Objective};
use crate::phantom::{default_spacing, generate_head_phantom, PhantomSpec};
use crate::projector::{forward_project_views, DetectorSpec, ProjectionImage, TrajectorySpec, Volume3D};
use crate::training::{split_dataset, DatasetPair, EpochRecord, TrainConfig, Trainer};

/// MR and X-ray projection of one view.
#[derive(Debug, Clone)]
pub struct ProjectedView {
    pub view_id: usize,
    pub angle_deg: f64,
    pub mr: ProjectionImage,
    pub xray: ProjectionImage,
}

/// Project both volumes over every view of `trajectory`.
pub fn project_pairs(mr: &Volume3D, xray: &Volume3D, trajectory: &TrajectorySpec, threads: usize) -> Result<Vec<ProjectedView>> {
    let geometries = trajectory.geometries()?;
    let step = mr.default_step();
    let mr_views = forward_project_views(mr, &geometries, step, threads)?;
    let xray_views = forward_project_views(xray, &geometries, step, threads)?;
    Ok(mr_views
        .into_iter()
        .zip(xray_views)
        .zip(&geometries)
        .enumerate()
        .map(|(view_id, ((mr, xray), g))| ProjectedView { view_id, angle_deg: g.angulation_deg(), mr, xray })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskConfig {
    pub phantom_size: usize,
    pub phantom_seed: u64,
    pub n_views: usize,
    pub detector_pixels: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub split_seed: u64,
    pub init_seed: u64,
    pub arch: ArchConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Width divisor and seed of the evaluation network (perceptual loss only).
    pub evalnet_width_divisor: usize,
    pub evalnet_seed: u64,
    pub threads: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            phantom_size: 64,
            phantom_seed: 7,
            n_views: 64,
            detector_pixels: 64,
            n_train: 56,
            n_test: 8,
            split_seed: 1,
            init_seed: 2,
            arch: ArchConfig::Unet(UNetConfig { base_channels: 16, ..Default::default() }),
            loss: LossConfig::l1(),
            train: TrainConfig { epochs: 30, seed: 3, ..Default::default() },
            evalnet_width_divisor: 8,
            evalnet_seed: 4,
            threads: 1,
        }
    }
}

impl DeskConfig {
    pub fn trajectory(&self) -> TrajectorySpec {
        TrajectorySpec {
            n_views: self.n_views,
            detector: DetectorSpec::square_covering_default(self.detector_pixels),
            ..TrajectorySpec::default()
        }
    }

    pub fn objective(&self) -> Result<Objective<f32>> {
        let net = match self.loss.kind {
            LossKind::L1 => None,
            LossKind::Perceptual => Some(EvaluationNetwork::random(EvalNetConfig::vgg19(self.evalnet_width_divisor), self.evalnet_seed)?),
        };
        Objective::new(&self.loss, net)
    }
}

/// The desk dataset, split into training and test pairs.
pub fn desk_dataset(cfg: &DeskConfig) -> Result<(Vec<DatasetPair>, Vec<DatasetPair>)> {
    let n = cfg.phantom_size;
    let (mr, xray) = generate_head_phantom([n; 3], default_spacing(n), &PhantomSpec::head(cfg.phantom_seed))?;
    let views = project_pairs(&mr, &xray, &cfg.trajectory(), cfg.threads)?;
    let pairs = views.iter().map(|v| DatasetPair::new(v.view_id, &v.mr, &v.xray)).collect::<Result<Vec<_>>>()?;
    split_dataset(&pairs, cfg.n_train, cfg.n_test, cfg.split_seed)
}

#[derive(Debug, Clone)]
pub struct DeskOutcome {
    pub history: Vec<EpochRecord>,
    pub model: Model<f32>,
    /// Synthesized test projections against their labels.
    pub synthesis: MetricsReport,
    /// Input MR test projections against the same labels.
    pub baseline: MetricsReport,
    pub data_time: Duration,
    pub train_time: Duration,
}

/// Run the whole experiment.
pub fn run_desk(cfg: &DeskConfig) -> Result<DeskOutcome> {
    let start = Instant::now();
    let (train, test) = desk_dataset(cfg)?;
    let data_time = start.elapsed();

    let start = Instant::now();
    let model = Model::<f32>::build(cfg.arch.clone(), cfg.init_seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    trainer.run(&train, &cfg.objective()?, None, |_| {})?;
    let train_time = start.elapsed();
    let (model, history) = trainer.into_parts();

    let mut synth = Vec::with_capacity(test.len());
    let mut base = Vec::with_capacity(test.len());
    for p in &test {
        let id = format!("view{:04}", p.view_id);
        let generated = model.forward_image(&p.mr, false)?;
        synth.push(EvalPair { id: id.clone(), label: p.xray.clone(), generated });
        base.push(EvalPair { id, label: p.xray.clone(), generated: p.mr.clone() });
    }
    let ssim = SsimConfig::default();
    Ok(DeskOutcome {
        history,
        model,
        synthesis: evaluate_set(&synth, &ssim)?,
        baseline: evaluate_set(&base, &ssim)?,
        data_time,
        train_time,
    })
}
