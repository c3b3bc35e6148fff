//! File containers: a JSON sidecar next to a raw little-endian f32 blob,
//! plus 16-bit PGM previews of projections.
//!
//! A container is addressed by its stem: `dir/mr` means `dir/mr.json` and
//! `dir/mr.raw`. Paths given with a `.json` extension are accepted too.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Modality, ProjectionImage, Volume3D};
use crate::error::{bail, Error, Result};

const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    pub modality: Modality,
}

/// Linear map used to quantize a projection into a 16-bit PGM:
/// `min` → 0, `max` → 65535.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmMapping {
    pub file: String,
    pub min: f32,
    pub max: f32,
    pub maxval: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSidecar {
    /// `[nu, nv]`: columns, rows.
    pub dims: [usize; 2],
    pub spacing_mm: [f64; 2],
    pub dtype: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pgm: Option<PgmMapping>,
}

pub fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "raw" | "pgm") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    with_suffix(&stem_of(stem), "json")
}

pub fn raw_path(stem: &Path) -> PathBuf {
    with_suffix(&stem_of(stem), "raw")
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub(crate) fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn f32_from_le_bytes(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        bail!(Load, "{}: length {} is not a multiple of 4 bytes", path.display(), bytes.len());
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn read_raw(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let data = f32_from_le_bytes(&bytes, path)?;
    if data.len() != expected {
        bail!(Load, "{}: expected {expected} values, found {}", path.display(), data.len());
    }
    Ok(data)
}

fn check_dtype(dtype: &str, path: &Path) -> Result<()> {
    if dtype != DTYPE {
        bail!(Load, "{}: unsupported dtype '{dtype}', expected '{DTYPE}'", path.display());
    }
    Ok(())
}

pub fn write_volume(stem: &Path, volume: &Volume3D) -> Result<()> {
    let sidecar = VolumeSidecar {
        dims: volume.dims(),
        spacing_mm: volume.spacing(),
        origin_mm: volume.origin(),
        dtype: DTYPE.into(),
        modality: volume.modality(),
    };
    let raw = raw_path(stem);
    fs::write(&raw, f32_to_le_bytes(volume.data())).map_err(Error::io(&raw))?;
    write_json(&sidecar_path(stem), &sidecar)
}

pub fn read_volume(stem: &Path) -> Result<Volume3D> {
    let json = sidecar_path(stem);
    let sc: VolumeSidecar = read_json(&json)?;
    check_dtype(&sc.dtype, &json)?;
    let n = sc.dims.iter().product();
    let data = read_raw(&raw_path(stem), n)?;
    Volume3D::new(sc.dims, sc.spacing_mm, sc.origin_mm, data, sc.modality)
}

/// Write a projection container; with `pgm` also write `<stem>.pgm` and
/// record its intensity mapping in the sidecar.
pub fn write_projection(stem: &Path, image: &ProjectionImage, pgm: bool) -> Result<()> {
    let stem = stem_of(stem);
    let raw = raw_path(&stem);
    fs::write(&raw, f32_to_le_bytes(image.data())).map_err(Error::io(&raw))?;
    let pgm = if pgm {
        let path = with_suffix(&stem, "pgm");
        let mapping = write_pgm(&path, image)?;
        Some(mapping)
    } else {
        None
    };
    let sidecar = ProjectionSidecar {
        dims: [image.nu(), image.nv()],
        spacing_mm: image.spacing(),
        dtype: DTYPE.into(),
        modality: image.modality(),
        pgm,
    };
    write_json(&sidecar_path(&stem), &sidecar)
}

pub fn read_projection(stem: &Path) -> Result<ProjectionImage> {
    let json = sidecar_path(stem);
    let sc: ProjectionSidecar = read_json(&json)?;
    check_dtype(&sc.dtype, &json)?;
    let [nu, nv] = sc.dims;
    let data = read_raw(&raw_path(stem), nu * nv)?;
    ProjectionImage::new(nu, nv, sc.spacing_mm, data, sc.modality)
}

/// Binary 16-bit PGM (P5, big-endian samples), linearly mapping the image
/// minimum to 0 and maximum to 65535. Constant images map to 0.
pub fn write_pgm(path: &Path, image: &ProjectionImage) -> Result<PgmMapping> {
    let (min, max) = image.min_max();
    let range = (max - min) as f64;
    let mut bytes = format!("P5\n{} {}\n65535\n", image.nu(), image.nv()).into_bytes();
    for &v in image.data() {
        let q = if range > 0.0 { (((v - min) as f64 / range) * 65535.0).round() as u16 } else { 0 };
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, bytes).map_err(Error::io(path))?;
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(PgmMapping { file, min, max, maxval: u16::MAX })
}

/// Parse a 16-bit P5 PGM back into quantized samples `(width, height, samples)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!(Load, "{}: truncated PGM header", path.display());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Load(format!("{}: bad PGM header field '{s}'", path.display())));
    if fields[0] != "P5" || parse(&fields[3])? != 65535 {
        bail!(Load, "{}: expected a 16-bit P5 PGM", path.display());
    }
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 2 * w * h {
        bail!(Load, "{}: expected {} sample bytes, found {}", path.display(), 2 * w * h, body.len());
    }
    Ok((w, h, body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}
