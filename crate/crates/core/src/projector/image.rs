use projsynth_tensor::{Element, Tensor};

use super::volume::Modality;
use crate::error::{bail, Result};

/// A 2D detector image, row-major with `nu` columns and `nv` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    nu: usize,
    nv: usize,
    spacing: [f64; 2],
    data: Vec<f32>,
    modality: Modality,
}

impl ProjectionImage {
    pub fn new(nu: usize, nv: usize, spacing: [f64; 2], data: Vec<f32>, modality: Modality) -> Result<Self> {
        if nu == 0 || nv == 0 {
            bail!(Dimension, "projection dims must be >= 1, got {nu}x{nv}");
        }
        if data.len() != nu * nv {
            bail!(Dimension, "projection {nu}x{nv} needs {} values, got {}", nu * nv, data.len());
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            bail!(Parameter, "pixel spacing must be positive, got {spacing:?}");
        }
        Ok(Self { nu, nv, spacing, data, modality })
    }

    /// Unit-pitch image, convenient for metrics on synthetic data.
    pub fn from_rows(nu: usize, nv: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(nu, nv, [1.0, 1.0], data, Modality::Synth)
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
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

    pub fn get(&self, iu: usize, iv: usize) -> f32 {
        self.data[iv * self.nu + iu]
    }

    pub fn same_dims(&self, other: &ProjectionImage) -> bool {
        self.nu == other.nu && self.nv == other.nv
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.nu, self.nv, self.spacing, data, self.modality)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// As a `1 × 1 × nv × nu` tensor without gradient tracking.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, 1, self.nv, self.nu], self.data.iter().map(|&v| T::of(v as f64)).collect())
            .expect("image dims are consistent")
    }

    /// Read back a `1 × 1 × nv × nu` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, spacing: [f64; 2], modality: Modality) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 || c != 1 {
            bail!(Dimension, "expected a 1x1xHxW tensor, got {:?}", t.shape());
        }
        Self::new(w, h, spacing, t.data().iter().map(|v| v.as_f64() as f32).collect(), modality)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}
