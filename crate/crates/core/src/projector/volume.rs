use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// What the values of a volume or projection represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "MR")]
    Mr,
    #[serde(rename = "XRAY")]
    Xray,
    /// Output of a generator network.
    #[serde(rename = "SYNTH")]
    Synth,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Mr => "MR",
            Modality::Xray => "XRAY",
            Modality::Synth => "SYNTH",
        })
    }
}

/// Scalar field on a regular grid. Voxel `(i, j, k)` has its center at
/// `origin + (i·sx, j·sy, k·sz)`; data is stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
    modality: Modality,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f32>, modality: Modality) -> Result<Self> {
        if dims.contains(&0) {
            bail!(Dimension, "volume dims must be >= 1, got {dims:?}");
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            bail!(Parameter, "voxel spacing must be positive and finite, got {spacing:?}");
        }
        if origin.iter().any(|o| !o.is_finite()) {
            bail!(Parameter, "volume origin must be finite, got {origin:?}");
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            bail!(Dimension, "volume {dims:?} needs {n} values, got {}", data.len());
        }
        Ok(Self { dims, spacing, origin, data, modality })
    }

    /// Volume whose grid is centered on the world origin.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>, modality: Modality) -> Result<Self> {
        let origin = centered_origin(dims, spacing);
        Self::new(dims, spacing, origin, data, modality)
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32, modality: Modality) -> Result<Self> {
        let n = dims.iter().product();
        Self::centered(dims, spacing, vec![value; n], modality)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let idx = [i, j, k];
        std::array::from_fn(|a| self.origin[a] + idx[a] as f64 * self.spacing[a])
    }

    /// Axis-aligned extent covered by the voxels (outer faces, not centers).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let lo = std::array::from_fn(|a| self.origin[a] - 0.5 * self.spacing[a]);
        let hi = std::array::from_fn(|a| self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a]);
        (lo, hi)
    }

    /// Half the smallest voxel spacing.
    pub fn default_step(&self) -> f64 {
        0.5 * self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Same grid with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        Self { data: self.data.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    /// Total of the field, `Σ value · voxel volume`.
    pub fn integral(&self) -> f64 {
        let cell: f64 = self.spacing.iter().product();
        self.data.iter().map(|&v| v as f64).sum::<f64>() * cell
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

pub(crate) fn centered_origin(dims: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|a| -0.5 * (dims[a] as f64 - 1.0) * spacing[a])
}
