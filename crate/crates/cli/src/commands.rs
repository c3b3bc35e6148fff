use std::fs;
use std::path::{Path, PathBuf};

use projsynth_core::experiment::project_pairs;
use projsynth_core::generators::{ArchConfig, CrnConfig, Model, ResNetGenConfig, UNetConfig};
use projsynth_core::metrics::{evaluate_set, EvalPair, MetricsReport};
use projsynth_core::objectives::{EvalNetConfig, EvaluationNetwork, LossKind, Objective};
use projsynth_core::phantom::{default_spacing, generate_head_phantom, PhantomSpec};
use projsynth_core::projector::io::{read_projection, read_volume, write_projection, write_volume};
use projsynth_core::projector::{DetectorSpec, ProjectionImage, TrajectorySpec};
use projsynth_core::training::{split_dataset, write_history_csv, DatasetManifest, PairRecord, SplitRecord, Trainer};
use projsynth_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::{ArchArg, EvalArgs, GenPhantomArgs, LossArg, ProjectArgs, SplitArg, SynthArgs, TrainArgs};

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

/// Phantom description written next to the volumes.
#[derive(Serialize, Deserialize)]
struct PhantomRecord {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    spec: PhantomSpec,
}

pub fn gen_phantom(cfg: PipelineConfig, a: GenPhantomArgs) -> Result<()> {
    cfg.validate()?;
    let size = a.size.unwrap_or(cfg.phantom.size);
    if size == 0 {
        return Err(config_error("phantom size must be >= 1"));
    }
    let seed = a.seed.unwrap_or(cfg.phantom.seed);
    let spacing = match a.spacing.or(cfg.phantom.spacing_mm) {
        Some(s) if !(s > 0.0 && s.is_finite()) => return Err(config_error(format!("spacing must be positive, got {s}"))),
        Some(s) => [s; 3],
        None => default_spacing(size),
    };
    let mut spec = cfg.phantom.spec.clone().unwrap_or_else(|| PhantomSpec::head(seed));
    spec.seed = seed;
    if let Some(s) = a.supersample.or(cfg.phantom.supersample) {
        spec.supersample = s;
    }
    spec.validate()?;

    let (mr, xray) = generate_head_phantom([size; 3], spacing, &spec)?;
    create_dir(&a.out)?;
    write_volume(&a.out.join("mr"), &mr)?;
    write_volume(&a.out.join("xray"), &xray)?;
    write_json(&a.out.join("phantom.json"), &PhantomRecord { dims: [size; 3], spacing_mm: spacing, spec })?;
    println!("wrote {size}^3 MR and X-ray volumes ({:.3} mm voxels) to {}", spacing[0], a.out.display());
    Ok(())
}

pub fn project(cfg: PipelineConfig, a: ProjectArgs) -> Result<()> {
    cfg.validate()?;
    let p = &cfg.projection;
    let views = a.views.map_or(p.views, |v| v as usize);
    let pixels = a.detector.map_or(p.detector_pixels, |v| v as usize);
    if views == 0 || pixels == 0 {
        return Err(config_error("views and detector pixels must be >= 1"));
    }
    let trajectory = TrajectorySpec {
        n_views: views,
        angular_range_deg: a.range.unwrap_or(p.angular_range_deg),
        sid_mm: a.sid.unwrap_or(p.sid_mm),
        sdd_mm: a.sdd.unwrap_or(p.sdd_mm),
        detector: DetectorSpec::square_covering_default(pixels),
    };
    trajectory.geometries()?;
    let (n_train, n_test) = (a.train.or(p.n_train), a.test.or(p.n_test));
    let split_sizes = match (n_train, n_test) {
        (None, None) => None,
        (Some(tr), None) => Some((tr, views.checked_sub(tr).ok_or_else(|| config_error(format!("{tr} training pairs exceed {views} views")))?)),
        (None, Some(te)) => Some((views.checked_sub(te).ok_or_else(|| config_error(format!("{te} test pairs exceed {views} views")))?, te)),
        (Some(tr), Some(te)) => Some((tr, te)),
    };
    let split_seed = a.split_seed.unwrap_or(p.split_seed);
    let split = match split_sizes {
        None => None,
        Some((tr, te)) => {
            let ids: Vec<usize> = (0..views).collect();
            let (train, test) = split_dataset(&ids, tr, te, split_seed)?;
            Some(SplitRecord { seed: split_seed, train, test })
        }
    };

    let mr = read_volume(&a.volumes.join("mr"))?;
    let xray = read_volume(&a.volumes.join("xray"))?;
    if mr.dims() != xray.dims() || mr.spacing() != xray.spacing() || mr.origin() != xray.origin() {
        return Err(Error::Dimension("MR and X-ray volumes are not on the same grid".into()));
    }
    let projected = project_pairs(&mr, &xray, &trajectory, a.threads.unwrap_or(p.threads).max(1))?;

    create_dir(&a.out)?;
    let pgm = a.pgm || p.pgm;
    let mut pairs = Vec::with_capacity(projected.len());
    for v in &projected {
        let (mr_name, xray_name) = (format!("mr_{:04}", v.view_id), format!("xray_{:04}", v.view_id));
        write_projection(&a.out.join(&mr_name), &v.mr, pgm)?;
        write_projection(&a.out.join(&xray_name), &v.xray, pgm)?;
        pairs.push(PairRecord { view_id: v.view_id, angle_deg: v.angle_deg, mr: mr_name, xray: xray_name });
    }
    let manifest = DatasetManifest { pairs, split };
    manifest.write(&a.out.join("dataset.json"))?;
    println!("wrote {views} projection pairs ({pixels}x{pixels}) and dataset.json to {}", a.out.display());
    Ok(())
}

/// Largest power of two dividing both `h` and `w`.
fn common_power_of_two(h: usize, w: usize) -> u32 {
    (h | w).trailing_zeros()
}

/// Per-architecture defaults that fit an `h × w` input.
fn default_arch(arch: ArchArg, h: usize, w: usize) -> Result<ArchConfig> {
    Ok(match arch {
        ArchArg::Unet => ArchConfig::Unet(UNetConfig::default()),
        ArchArg::Resnet => ArchConfig::Resnet(ResNetGenConfig::default()),
        ArchArg::Crn => {
            let modules = (common_power_of_two(h, w) as usize + 1).min(8);
            ArchConfig::Crn(CrnConfig::for_input(h, w, modules, 256)?)
        }
    })
}

fn arch_matches(arch: ArchArg, cfg: &ArchConfig) -> bool {
    matches!((arch, cfg), (ArchArg::Unet, ArchConfig::Unet(_)) | (ArchArg::Resnet, ArchConfig::Resnet(_)) | (ArchArg::Crn, ArchConfig::Crn(_)))
}

fn selected_ids(manifest: &DatasetManifest, split: Option<SplitArg>, default: SplitArg) -> Result<Vec<usize>> {
    let all = || manifest.pairs.iter().map(|p| p.view_id).collect();
    let which = split.unwrap_or(if manifest.split.is_some() { default } else { SplitArg::All });
    Ok(match (which, &manifest.split) {
        (SplitArg::All, _) => all(),
        (SplitArg::Train, Some(s)) => s.train.clone(),
        (SplitArg::Test, Some(s)) => s.test.clone(),
        (_, None) => return Err(config_error("the dataset manifest has no train/test split")),
    })
}

pub fn train(cfg: PipelineConfig, a: TrainArgs) -> Result<()> {
    cfg.validate()?;
    let manifest = DatasetManifest::read(&a.dataset)?;
    let ids = selected_ids(&manifest, None, SplitArg::Train)?;
    let pairs = manifest.load_pairs(&a.dataset, Some(&ids))?;
    let Some(first) = pairs.first() else {
        return Err(config_error("the training split is empty"));
    };
    let (h, w) = (first.mr.nv(), first.mr.nu());

    let arch = match (a.arch, &cfg.model) {
        (Some(arch), Some(model)) if arch_matches(arch, model) => model.clone(),
        (Some(arch), _) => default_arch(arch, h, w)?,
        (None, Some(model)) => model.clone(),
        (None, None) => default_arch(ArchArg::Unet, h, w)?,
    };
    arch.validate()?;
    arch.check_input(h, w)?;

    let mut loss = cfg.loss.clone();
    if let Some(kind) = a.loss {
        loss.kind = match kind {
            LossArg::L1 => LossKind::L1,
            LossArg::Perceptual => LossKind::Perceptual,
        };
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.epochs = a.epochs.unwrap_or(train_cfg.epochs);
    train_cfg.learning_rate = a.lr.unwrap_or(train_cfg.learning_rate);
    train_cfg.batch_size = a.batch_size.unwrap_or(train_cfg.batch_size);
    train_cfg.seed = a.seed.unwrap_or(train_cfg.seed);
    train_cfg.checkpoint_every = a.checkpoint_every.unwrap_or(train_cfg.checkpoint_every);
    train_cfg.validate()?;

    create_dir(&a.out)?;
    let evalnet = match loss.kind {
        LossKind::L1 => None,
        LossKind::Perceptual => {
            let net = match a.evalnet.as_ref().or(cfg.evalnet.weights.as_ref()) {
                Some(path) => EvaluationNetwork::<f32>::load_vgg19(path)?,
                None => EvaluationNetwork::random(EvalNetConfig::vgg19(cfg.evalnet.width_divisor), cfg.evalnet.seed)?,
            };
            net.save(&a.out.join("evalnet.json"))?;
            write_json(&a.out.join("evalnet_config.json"), net.config())?;
            Some(net)
        }
    };
    let objective = Objective::new(&loss, evalnet)?;

    let checkpoint = a.out.join("checkpoint");
    let mut trainer = if a.resume {
        let t = Trainer::<f32>::resume(&checkpoint, Some(train_cfg.epochs))?;
        if t.model().config() != &arch {
            return Err(Error::Load(format!("checkpoint in {} is for a different architecture", checkpoint.display())));
        }
        t
    } else {
        let model = Model::<f32>::build(arch.clone(), a.init_seed.unwrap_or(cfg.init_seed))?;
        Trainer::new(model, train_cfg.clone())?
    };
    write_json(&a.out.join("arch.json"), &arch)?;
    write_json(&a.out.join("loss.json"), &loss)?;
    write_json(&a.out.join("train.json"), trainer.config())?;

    println!(
        "training {} ({} parameters) with {:?} loss on {} pairs of {w}x{h} for {} epochs",
        arch.name(),
        trainer.model().params().num_scalars(),
        loss.kind,
        pairs.len(),
        trainer.config().epochs
    );
    let outcome = trainer.run(&pairs, &objective, Some(&checkpoint), |r| println!("epoch {:>4}  mean loss {:.6}", r.epoch, r.mean_loss));
    write_history_csv(&a.out.join("history.csv"), trainer.history())?;
    outcome?;
    trainer.model().save(&a.out.join("model.json"))?;
    println!("wrote model.json, history.csv and checkpoint/ to {}", a.out.display());
    Ok(())
}

fn load_model(dir: &Path) -> Result<Model<f32>> {
    let arch: ArchConfig = read_json(&dir.join("arch.json"))?;
    Model::load(arch, &dir.join("model.json"))
}

fn synth_stem(dir: &Path, view_id: usize) -> PathBuf {
    dir.join(format!("synth_{view_id:04}"))
}

/// Synthesize the given views and write them (and optional previews) to `out`.
fn synthesize(model: &Model<f32>, manifest: &DatasetManifest, manifest_path: &Path, ids: &[usize], out: &Path, pgm: bool) -> Result<Vec<ProjectionImage>> {
    create_dir(out)?;
    let pairs = manifest.load_pairs(manifest_path, Some(ids))?;
    let mut images = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let image = model.forward_image(&p.mr, false)?;
        write_projection(&synth_stem(out, p.view_id), &image, pgm)?;
        images.push(image);
    }
    Ok(images)
}

pub fn synth(cfg: PipelineConfig, a: SynthArgs) -> Result<()> {
    cfg.validate()?;
    let manifest = DatasetManifest::read(&a.dataset)?;
    let ids = selected_ids(&manifest, a.split, SplitArg::Test)?;
    let model = load_model(&a.model)?;
    synthesize(&model, &manifest, &a.dataset, &ids, &a.out, a.pgm)?;
    println!("synthesized {} projections with {} into {}", ids.len(), model.arch_name(), a.out.display());
    Ok(())
}

fn write_report(report: &MetricsReport, dir: &Path, stem: &str) -> Result<()> {
    report.write_json(&dir.join(format!("{stem}.json")))?;
    report.write_csv(&dir.join(format!("{stem}.csv")))
}

fn summary(name: &str, r: &MetricsReport) -> String {
    let psnr = r.psnr_peak_mse.map_or_else(|| "undefined".to_string(), |p| format!("{:.3}", p.mean));
    format!("{name}: {} pairs, MSE {:.5}, SSIM {:.4}, PSNR {psnr}", r.pairs.len(), r.mse.mean, r.ssim.mean)
}

pub fn eval(cfg: PipelineConfig, a: EvalArgs) -> Result<()> {
    cfg.validate()?;
    let manifest = DatasetManifest::read(&a.dataset)?;
    let ids = selected_ids(&manifest, a.split, SplitArg::Test)?;
    let generated: Vec<ProjectionImage> = match (&a.synth, &a.model) {
        (Some(dir), _) => ids.iter().map(|&id| read_projection(&synth_stem(dir, id))).collect::<Result<_>>()?,
        (None, Some(model_dir)) => synthesize(&load_model(model_dir)?, &manifest, &a.dataset, &ids, &a.out, true)?,
        (None, None) => return Err(config_error("eval needs --synth or --model")),
    };
    create_dir(&a.out)?;

    let mut synth_pairs = Vec::with_capacity(ids.len());
    let mut base_pairs = Vec::with_capacity(ids.len());
    for (&id, generated) in ids.iter().zip(generated) {
        let record = manifest.record(id)?;
        let label = read_projection(&DatasetManifest::resolve(&a.dataset, &record.xray))?;
        let key = format!("view{id:04}");
        if a.baseline {
            let mr = read_projection(&DatasetManifest::resolve(&a.dataset, &record.mr))?;
            base_pairs.push(EvalPair { id: key.clone(), label: label.clone(), generated: mr });
        }
        synth_pairs.push(EvalPair { id: key, label, generated });
    }
    let report = evaluate_set(&synth_pairs, &cfg.metrics)?;
    write_report(&report, &a.out, "report")?;
    println!("{}", summary("synthesized", &report));
    if a.baseline {
        let base = evaluate_set(&base_pairs, &cfg.metrics)?;
        write_report(&base, &a.out, "baseline_report")?;
        println!("{}", summary("MR baseline", &base));
    }
    Ok(())
}
