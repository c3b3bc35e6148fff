use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::metrics::scale_to_unit_range;
use crate::projector::io::{read_json, read_projection, write_json};
use crate::projector::ProjectionImage;

/// Co-registered MR input and X-ray label for one view, both scaled to
/// `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub view_id: usize,
    pub mr: ProjectionImage,
    pub xray: ProjectionImage,
}

impl DatasetPair {
    /// Scales both images to `[-1, 1]` independently.
    pub fn new(view_id: usize, mr: &ProjectionImage, xray: &ProjectionImage) -> Result<Self> {
        if !mr.same_dims(xray) {
            bail!(Dimension, "view {view_id}: MR {}x{} vs X-ray {}x{}", mr.nu(), mr.nv(), xray.nu(), xray.nv());
        }
        Ok(Self { view_id, mr: scale_to_unit_range(mr), xray: scale_to_unit_range(xray) })
    }
}

/// One view in a dataset manifest. Paths are container stems relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub view_id: usize,
    pub angle_deg: f64,
    pub mr: String,
    pub xray: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRecord {
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub pairs: Vec<PairRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitRecord>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<usize> = self.pairs.iter().map(|p| p.view_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            bail!(Config, "dataset manifest has duplicate view ids");
        }
        if let Some(split) = &self.split {
            for id in split.train.iter().chain(&split.test) {
                if ids.binary_search(id).is_err() {
                    bail!(Config, "split refers to unknown view id {id}");
                }
            }
            if split.train.iter().any(|id| split.test.contains(id)) {
                bail!(Config, "train and test splits overlap");
            }
        }
        Ok(())
    }

    pub fn record(&self, view_id: usize) -> Result<&PairRecord> {
        match self.pairs.iter().find(|p| p.view_id == view_id) {
            Some(r) => Ok(r),
            None => bail!(Config, "no view {view_id} in dataset manifest"),
        }
    }

    /// Load the listed views (all views if `ids` is `None`), in order.
    pub fn load_pairs(&self, manifest_path: &Path, ids: Option<&[usize]>) -> Result<Vec<DatasetPair>> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let ids: Vec<usize> = match ids {
            Some(ids) => ids.to_vec(),
            None => self.pairs.iter().map(|p| p.view_id).collect(),
        };
        ids.iter()
            .map(|&id| {
                let r = self.record(id)?;
                let mr = read_projection(&dir.join(&r.mr))?;
                let xray = read_projection(&dir.join(&r.xray))?;
                DatasetPair::new(id, &mr, &xray)
            })
            .collect()
    }

    pub fn resolve(manifest_path: &Path, relative: &str) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(relative)
    }
}

/// Seeded shuffle, then the first `n_train` items for training and the
/// next `n_test` for testing.
pub fn split_dataset<T: Clone>(items: &[T], n_train: usize, n_test: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let Some(needed) = n_train.checked_add(n_test).filter(|&n| n <= items.len()) else {
        bail!(Config, "cannot split {} pairs into {n_train} training and {n_test} test pairs", items.len());
    };
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| items[i].clone()).collect();
    Ok((pick(0..n_train), pick(n_train..needed)))
}
