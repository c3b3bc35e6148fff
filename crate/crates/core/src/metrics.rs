//! Image-quality metrics on `[-1, 1]`-scaled projection pairs: MSE, SSIM
//! and PSNR (as printed and in its conventional form).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::projector::io::{read_json, write_json};
use crate::projector::ProjectionImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Window {
    Gaussian { size: usize, sigma: f64 },
    Uniform { size: usize },
}

impl Window {
    pub fn size(&self) -> usize {
        match *self {
            Window::Gaussian { size, .. } | Window::Uniform { size } => size,
        }
    }

    /// Normalized 1D profile; the 2D window is its outer product.
    pub fn profile(&self) -> Vec<f64> {
        let raw: Vec<f64> = match *self {
            Window::Gaussian { size, sigma } => {
                let c = 0.5 * (size as f64 - 1.0);
                (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
            }
            Window::Uniform { size } => vec![1.0; size],
        };
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    /// Span of admissible intensities; 2 for images scaled to `[-1, 1]`.
    pub dynamic_range: f64,
    pub window: Window,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { k1: 0.01, k2: 0.03, dynamic_range: 2.0, window: Window::Gaussian { size: 11, sigma: 1.5 } }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1() > 0.0 && self.c2() > 0.0 && self.c1().is_finite() && self.c2().is_finite()) {
            bail!(Config, "SSIM constants must be positive (k1={}, k2={}, range={})", self.k1, self.k2, self.dynamic_range);
        }
        if self.window.size() == 0 {
            bail!(Config, "SSIM window size must be >= 1");
        }
        if let Window::Gaussian { sigma, .. } = self.window {
            if !(sigma > 0.0 && sigma.is_finite()) {
                bail!(Config, "Gaussian window sigma must be positive");
            }
        }
        Ok(())
    }
}

/// Linear map of the image minimum to −1 and maximum to +1; a constant
/// image maps to all zeros.
pub fn scale_to_unit_range(img: &ProjectionImage) -> ProjectionImage {
    let (lo, hi) = img.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let data = if hi > lo {
        img.data().iter().map(|&v| (2.0 * (v as f64 - lo) / (hi - lo) - 1.0) as f32).collect()
    } else {
        vec![0.0; img.len()]
    };
    img.with_data(data).expect("same dims")
}

fn check_pair(l: &ProjectionImage, g: &ProjectionImage) -> Result<()> {
    if !l.same_dims(g) {
        bail!(Dimension, "image dims differ: {}x{} vs {}x{}", l.nu(), l.nv(), g.nu(), g.nv());
    }
    Ok(())
}

/// Mean squared pixel difference.
pub fn mse(l: &ProjectionImage, g: &ProjectionImage) -> Result<f64> {
    check_pair(l, g)?;
    let total: f64 = l.data().iter().zip(g.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(total / l.len() as f64)
}

/// Separable "valid" filtering of a row-major `w × h` field with `k`.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean of the SSIM map over every window position lying fully inside the image.
pub fn ssim(l: &ProjectionImage, g: &ProjectionImage, cfg: &SsimConfig) -> Result<f64> {
    check_pair(l, g)?;
    cfg.validate()?;
    let size = cfg.window.size();
    if l.nu() < size || l.nv() < size {
        bail!(Dimension, "image {}x{} is smaller than the {size}x{size} SSIM window", l.nu(), l.nv());
    }
    let k = cfg.window.profile();
    let (w, h) = (l.nu(), l.nv());
    let x: Vec<f64> = l.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = g.data().iter().map(|&v| v as f64).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let (mx, _, _) = filter_valid(&x, w, h, &k);
    let (my, _, _) = filter_valid(&y, w, h, &k);
    let (exx, _, _) = filter_valid(&prod(&x, &x), w, h, &k);
    let (eyy, _, _) = filter_valid(&prod(&y, &y), w, h, &k);
    let (exy, _, _) = filter_valid(&prod(&x, &y), w, h, &k);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (a, b) = (mx[i], my[i]);
        let sxx = exx[i] - a * a;
        let syy = eyy[i] - b * b;
        let sxy = exy[i] - a * b;
        total += ((2.0 * a * b + c1) * (2.0 * sxy + c2)) / ((a * a + b * b + c1) * (sxx + syy + c2));
    }
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsnrVariant {
    /// `20·log10(max(G) / MSE)`: the peak of the generated image over the
    /// plain (not root) mean squared error.
    PeakOverMse,
    /// `20·log10(max(G) / √MSE)`.
    Standard,
}

/// Peak signal-to-noise ratio in dB, with the peak taken as the maximum of `g`.
pub fn psnr(l: &ProjectionImage, g: &ProjectionImage, variant: PsnrVariant) -> Result<f64> {
    let err = mse(l, g)?;
    if err == 0.0 {
        return Err(Error::Undefined("PSNR of identical images".into()));
    }
    let peak = g.min_max().1 as f64;
    if !(peak > 0.0) {
        return Err(Error::Undefined(format!("PSNR with non-positive peak {peak}")));
    }
    Ok(match variant {
        PsnrVariant::PeakOverMse => 20.0 * (peak / err).log10(),
        PsnrVariant::Standard => 20.0 * (peak / err.sqrt()).log10(),
    })
}

/// Label and generated image for one test item.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub id: String,
    pub label: ProjectionImage,
    pub generated: ProjectionImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub id: String,
    pub mse: f64,
    pub ssim: f64,
    /// `None` where PSNR is undefined (identical images).
    pub psnr_peak_mse: Option<f64>,
    pub psnr_standard: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt(), count: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// Every image was min-max mapped to this range before measuring.
    pub range: [f64; 2],
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pairs: Vec<PairMetrics>,
    pub mse: Aggregate,
    pub ssim: Aggregate,
    /// Over pairs with a defined PSNR; `None` when no pair has one.
    pub psnr_peak_mse: Option<Aggregate>,
    pub psnr_standard: Option<Aggregate>,
    pub psnr_undefined: usize,
    pub scaling: Scaling,
    pub ssim_config: SsimConfig,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scale every image to `[-1, 1]`, then measure each pair and aggregate.
pub fn evaluate_set(pairs: &[EvalPair], cfg: &SsimConfig) -> Result<MetricsReport> {
    if pairs.is_empty() {
        bail!(Parameter, "cannot evaluate an empty set");
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        let l = scale_to_unit_range(&p.label);
        let g = scale_to_unit_range(&p.generated);
        rows.push(PairMetrics {
            id: p.id.clone(),
            mse: mse(&l, &g)?,
            ssim: ssim(&l, &g, cfg)?,
            psnr_peak_mse: defined(psnr(&l, &g, PsnrVariant::PeakOverMse))?,
            psnr_standard: defined(psnr(&l, &g, PsnrVariant::Standard))?,
        });
    }
    let col = |f: &dyn Fn(&PairMetrics) -> Option<f64>| rows.iter().filter_map(f).collect::<Vec<f64>>();
    Ok(MetricsReport {
        mse: Aggregate::of(&col(&|r| Some(r.mse))).expect("non-empty"),
        ssim: Aggregate::of(&col(&|r| Some(r.ssim))).expect("non-empty"),
        psnr_peak_mse: Aggregate::of(&col(&|r| r.psnr_peak_mse)),
        psnr_standard: Aggregate::of(&col(&|r| r.psnr_standard)),
        psnr_undefined: rows.iter().filter(|r| r.psnr_peak_mse.is_none()).count(),
        pairs: rows,
        scaling: Scaling { range: [-1.0, 1.0], applied: true },
        ssim_config: *cfg,
    })
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// One row per pair: `id, mse, ssim, psnr_peak_mse, psnr_standard`, with
    /// undefined PSNR written as `undefined`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        w.write_record(["id", "mse", "ssim", "psnr_peak_mse", "psnr_standard"]).map_err(|e| csv_error(path, e))?;
        for r in &self.pairs {
            w.write_record([r.id.clone(), r.mse.to_string(), r.ssim.to_string(), fmt(r.psnr_peak_mse), fmt(r.psnr_standard)])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(Error::io(path))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) }
}
