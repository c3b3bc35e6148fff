//! Dataset handling, ADAM, and the training loop.
//!
//! All randomness is derived from `TrainConfig::seed`: epoch `e` shuffles
//! with `mix_seed([seed, SHUFFLE, e])` and the dropout masks of step `s`
//! in that epoch use `mix_seed([seed, e, s])`, `s` counting samples. A run is therefore fully
//! determined by its inputs, and resuming from a checkpoint continues
//! exactly as the uninterrupted run would have.

mod adam;
mod dataset;

use std::fs;
use std::path::{Path, PathBuf};

use projsynth_tensor::{ops, Element, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_update, AdamConfig, AdamState};
pub use dataset::{split_dataset, DatasetManifest, DatasetPair, PairRecord, SplitRecord};

use crate::error::{bail, Error, Result};
use crate::generators::{mix_seed, ArchConfig, Mode, Model};
use crate::metrics::csv_error;
use crate::objectives::{Objective, WeightSet};
use crate::projector::io::{read_json, write_json};

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Write a checkpoint after every `checkpoint_every` epochs (0: only
    /// at the end of training).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 1, learning_rate: 0.004, seed: 0, checkpoint_every: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Config, "batch size must be >= 1");
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["epoch", "mean_loss"]).map_err(|e| csv_error(path, e))?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.mean_loss.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Everything besides tensors needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingState {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub epochs_completed: usize,
    pub adam_steps: u64,
    pub adam: AdamConfig,
    pub history: Vec<EpochRecord>,
    pub model: String,
    pub adam_m: String,
    pub adam_v: String,
}

/// Checkpoint file names inside a checkpoint directory.
pub struct CheckpointPaths {
    pub state: PathBuf,
    pub model: PathBuf,
    pub adam_m: PathBuf,
    pub adam_v: PathBuf,
}

impl CheckpointPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            state: dir.join("state.json"),
            model: dir.join("model.json"),
            adam_m: dir.join("adam_m.json"),
            adam_v: dir.join("adam_v.json"),
        }
    }
}

/// A model together with its optimizer state and loss history.
#[derive(Debug, Clone)]
pub struct Trainer<T: Element = f32> {
    model: Model<T>,
    adam: AdamState<T>,
    config: TrainConfig,
    history: Vec<EpochRecord>,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.adam(), model.params())?;
        Ok(Self { model, adam, config, history: Vec::new() })
    }

    /// Continue from a checkpoint directory, optionally with a new epoch
    /// target; everything else about the run comes from the checkpoint.
    pub fn resume(dir: &Path, epochs: Option<usize>) -> Result<Self> {
        let paths = CheckpointPaths::in_dir(dir);
        let state: TrainingState = read_json(&paths.state)?;
        let model = Model::<T>::from_weights(state.arch.clone(), &WeightSet::load(&dir.join(&state.model))?)?;
        let m = WeightSet::load(&dir.join(&state.adam_m))?;
        let v = WeightSet::load(&dir.join(&state.adam_v))?;
        let adam = AdamState::from_weight_sets(state.adam, state.adam_steps, model.params(), &m, &v)?;
        if state.history.len() != state.epochs_completed {
            bail!(Load, "{}: history has {} entries for {} epochs", paths.state.display(), state.history.len(), state.epochs_completed);
        }
        let mut config = state.train;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        Ok(Self { model, adam, config, history: state.history })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epochs_completed(&self) -> usize {
        self.history.len()
    }

    pub fn into_parts(self) -> (Model<T>, Vec<EpochRecord>) {
        (self.model, self.history)
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let paths = CheckpointPaths::in_dir(dir);
        self.model.save(&paths.model)?;
        let (m, v) = self.adam.to_weight_sets();
        m.save(&paths.adam_m)?;
        v.save(&paths.adam_v)?;
        let name = |p: &Path| p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
        let state = TrainingState {
            arch: self.model.config().clone(),
            train: self.config.clone(),
            epochs_completed: self.history.len(),
            adam_steps: self.adam.step_count(),
            adam: self.adam.config,
            history: self.history.clone(),
            model: name(&paths.model),
            adam_m: name(&paths.adam_m),
            adam_v: name(&paths.adam_v),
        };
        write_json(&paths.state, &state)
    }

    /// One pass over `data` in a seeded order. Returns the mean
    /// per-sample loss.
    pub fn run_epoch(&mut self, data: &[(Tensor<T>, Tensor<T>)], objective: &Objective<T>) -> Result<f64> {
        if data.is_empty() {
            bail!(Config, "training set is empty");
        }
        let epoch = self.history.len() as u64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, SHUFFLE_STREAM, epoch])));

        let mut total = 0.0;
        for (step, batch) in order.chunks(self.config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for (j, &i) in batch.iter().enumerate() {
                let sample = (step * self.config.batch_size + j) as u64;
                let mode = Mode::train(mix_seed(&[self.config.seed, epoch, sample]));
                let (input, label) = &data[i];
                let generated = self.model.forward(input, mode)?;
                let loss = objective.evaluate(label, &generated)?;
                let value = loss.item()?.as_f64();
                if !value.is_finite() {
                    bail!(Numerical, "loss became {value} at epoch {} step {step}", epoch + 1);
                }
                total += value;
                ops::scale(&loss, scale).backward()?;
            }
            self.adam.step(self.model.params_mut())?;
        }
        let mean_loss = total / data.len() as f64;
        self.history.push(EpochRecord { epoch: epoch as usize + 1, mean_loss });
        Ok(mean_loss)
    }

    /// Train until `config.epochs` epochs are complete, checkpointing into
    /// `checkpoint_dir` at the configured cadence and at the end. On a
    /// numerical failure the most recent checkpoint is left untouched.
    pub fn run(
        &mut self,
        pairs: &[DatasetPair],
        objective: &Objective<T>,
        checkpoint_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        if pairs.is_empty() {
            bail!(Config, "training set is empty");
        }
        for p in pairs {
            self.model.config().check_input(p.mr.nv(), p.mr.nu())?;
        }
        let data: Vec<(Tensor<T>, Tensor<T>)> = pairs.iter().map(|p| (p.mr.to_tensor::<T>(), p.xray.to_tensor::<T>())).collect();
        while self.history.len() < self.config.epochs {
            self.run_epoch(&data, objective)?;
            on_epoch(self.history.last().expect("just pushed"));
            let done = self.history.len();
            if let Some(dir) = checkpoint_dir {
                if self.config.checkpoint_every > 0 && done % self.config.checkpoint_every == 0 {
                    self.save_checkpoint(dir)?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            self.save_checkpoint(dir)?;
        }
        Ok(())
    }
}

/// Train `model` on `pairs` from scratch; returns the trained model and the
/// per-epoch mean losses.
pub fn train<T: Element>(
    model: Model<T>,
    pairs: &[DatasetPair],
    config: &TrainConfig,
    objective: &Objective<T>,
) -> Result<(Model<T>, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.run(pairs, objective, None, |_| {})?;
    Ok(trainer.into_parts())
}
