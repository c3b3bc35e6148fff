//! Procedural head phantom built from ellipsoids, rasterized into a pair of
//! co-registered volumes: MR intensity and X-ray attenuation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::projector::{Modality, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// MR signal, arbitrary units.
    pub mr_intensity: f64,
    /// Linear attenuation coefficient, per mm.
    pub xray_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    /// Rotations about x, y, z in degrees, applied in that order.
    #[serde(default)]
    pub rotation_deg: [f64; 3],
    pub material: String,
    /// Higher priority paints over lower; among equals the later entry wins.
    #[serde(default)]
    pub priority: i32,
}

/// Randomly placed small ellipsoids, drawn from the phantom seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionSpec {
    pub count: usize,
    /// Centers are drawn uniformly inside this ellipsoid (axis aligned).
    pub region_center_mm: [f64; 3],
    pub region_semi_axes_mm: [f64; 3],
    /// Range of each semi-axis, mm.
    pub radius_mm: [f64; 2],
    pub materials: Vec<String>,
    pub priority: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub ellipsoids: Vec<Ellipsoid>,
    pub materials: BTreeMap<String, Material>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusions: Option<InclusionSpec>,
    /// Sub-samples per voxel edge; 1 rasterizes voxel centers only, larger
    /// values average `n³` sub-samples (partial-volume antialiasing).
    #[serde(default = "one")]
    pub supersample: usize,
}

fn one() -> usize {
    1
}

impl PhantomSpec {
    /// Head with scalp, a skull shell, brain, two ventricles and ten seeded
    /// small inclusions. Bone is bright for X-ray and dark for MR, fat the
    /// opposite, so the two modalities are not related by a monotone map.
    pub fn head(seed: u64) -> Self {
        let materials = [
            ("soft_tissue", 0.55, 0.0200),
            ("bone", 0.12, 0.0480),
            ("brain", 0.80, 0.0210),
            ("csf", 1.00, 0.0190),
            ("lesion", 0.95, 0.0225),
            ("calcification", 0.15, 0.0600),
            ("fat", 1.00, 0.0170),
        ]
        .into_iter()
        .map(|(name, mr, mu)| (name.to_string(), Material { mr_intensity: mr, xray_mu: mu }))
        .collect();
        let e = |center: [f64; 3], axes: [f64; 3], rot_z: f64, material: &str, priority: i32| Ellipsoid {
            center_mm: center,
            semi_axes_mm: axes,
            rotation_deg: [0.0, 0.0, rot_z],
            material: material.into(),
            priority,
        };
        let brain_axes = [62.5, 80.5, 74.5];
        Self {
            ellipsoids: vec![
                e([0.0; 3], [72.0, 90.0, 84.0], 0.0, "soft_tissue", 0),
                e([0.0; 3], [68.0, 86.0, 80.0], 0.0, "bone", 1),
                e([0.0; 3], brain_axes, 0.0, "brain", 2),
                e([-11.0, 5.0, 8.0], [6.0, 18.0, 10.0], -15.0, "csf", 3),
                e([11.0, 5.0, 8.0], [6.0, 18.0, 10.0], 15.0, "csf", 3),
            ],
            materials,
            seed,
            inclusions: Some(InclusionSpec {
                count: 10,
                region_center_mm: [0.0; 3],
                region_semi_axes_mm: brain_axes.map(|a| 0.6 * a),
                radius_mm: [4.0, 10.0],
                materials: vec!["lesion".into(), "calcification".into(), "fat".into()],
                priority: 4,
            }),
            supersample: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ellipsoids.is_empty() && self.inclusions.as_ref().is_none_or(|i| i.count == 0) {
            bail!(Config, "phantom spec has no ellipsoids");
        }
        if self.supersample == 0 {
            bail!(Config, "supersample must be >= 1");
        }
        for (name, m) in &self.materials {
            if !(m.mr_intensity.is_finite() && m.xray_mu.is_finite() && m.mr_intensity >= 0.0 && m.xray_mu >= 0.0) {
                bail!(Config, "material '{name}' needs finite non-negative values");
            }
        }
        let known = |m: &str| -> Result<()> {
            if !self.materials.contains_key(m) {
                bail!(Config, "unknown material '{m}'");
            }
            Ok(())
        };
        for e in &self.ellipsoids {
            known(&e.material)?;
            if e.semi_axes_mm.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                bail!(Config, "semi-axes must be positive, got {:?}", e.semi_axes_mm);
            }
            if e.center_mm.iter().chain(&e.rotation_deg).any(|v| !v.is_finite()) {
                bail!(Config, "ellipsoid center and rotation must be finite");
            }
        }
        if let Some(inc) = &self.inclusions {
            if inc.count > 0 && inc.materials.is_empty() {
                bail!(Config, "inclusions need at least one material");
            }
            inc.materials.iter().try_for_each(|m| known(m))?;
            let [lo, hi] = inc.radius_mm;
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                bail!(Config, "inclusion radius range must satisfy 0 < min <= max, got {:?}", inc.radius_mm);
            }
            if inc.region_semi_axes_mm.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                bail!(Config, "inclusion region semi-axes must be positive");
            }
        }
        Ok(())
    }

    /// The explicit ellipsoids followed by the seeded inclusions.
    pub fn expanded_ellipsoids(&self) -> Vec<Ellipsoid> {
        let mut out = self.ellipsoids.clone();
        let Some(inc) = &self.inclusions else {
            return out;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in 0..inc.count {
            // Rejection-sample a point in the unit ball, then stretch it.
            let unit = loop {
                let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    break p;
                }
            };
            let center = std::array::from_fn(|a| inc.region_center_mm[a] + unit[a] * inc.region_semi_axes_mm[a]);
            let semi_axes = std::array::from_fn(|_| rng.random_range(inc.radius_mm[0]..=inc.radius_mm[1]));
            let rotation = std::array::from_fn(|_| rng.random_range(0.0..180.0));
            let material = inc.materials[rng.random_range(0..inc.materials.len())].clone();
            out.push(Ellipsoid { center_mm: center, semi_axes_mm: semi_axes, rotation_deg: rotation, material, priority: inc.priority });
        }
        out
    }
}

/// Precomputed insideness test for one ellipsoid.
struct Shape {
    center: [f64; 3],
    /// Rows of Rᵀ scaled by the inverse semi-axes: `q = M (p − c)`, inside iff |q| ≤ 1.
    m: [[f64; 3]; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    material: usize,
}

impl Shape {
    fn new(e: &Ellipsoid, material: usize) -> Self {
        let [ax, ay, az] = e.rotation_deg.map(f64::to_radians);
        let rx = [[1.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin()], [0.0, ax.sin(), ax.cos()]];
        let ry = [[ay.cos(), 0.0, ay.sin()], [0.0, 1.0, 0.0], [-ay.sin(), 0.0, ay.cos()]];
        let rz = [[az.cos(), -az.sin(), 0.0], [az.sin(), az.cos(), 0.0], [0.0, 0.0, 1.0]];
        let r = matmul(rz, matmul(ry, rx));
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[j][i] / e.semi_axes_mm[i];
            }
        }
        // Half-extent of the rotated ellipsoid along world axis a.
        let half: [f64; 3] = std::array::from_fn(|a| (0..3).map(|j| (r[a][j] * e.semi_axes_mm[j]).powi(2)).sum::<f64>().sqrt());
        Self {
            center: e.center_mm,
            m,
            lo: std::array::from_fn(|a| e.center_mm[a] - half[a]),
            hi: std::array::from_fn(|a| e.center_mm[a] + half[a]),
            material,
        }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        if (0..3).any(|a| p[a] < self.lo[a] || p[a] > self.hi[a]) {
            return false;
        }
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let mut s = 0.0;
        for row in &self.m {
            let q = row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
            s += q * q;
        }
        s <= 1.0
    }
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

/// Rasterize `spec` onto a grid centered on the world origin. Both volumes
/// take their value from the same winning material at every sample point;
/// the background is 0 in both.
pub fn generate_head_phantom(dims: [usize; 3], spacing: [f64; 3], spec: &PhantomSpec) -> Result<(Volume3D, Volume3D)> {
    spec.validate()?;
    let names: Vec<&String> = spec.materials.keys().collect();
    let mut ellipsoids = spec.expanded_ellipsoids();
    // Stable: equal priorities keep their listed order, so later entries win.
    ellipsoids.sort_by_key(|e| e.priority);
    let shapes: Vec<Shape> = ellipsoids
        .iter()
        .map(|e| Shape::new(e, names.iter().position(|n| **n == e.material).expect("validated")))
        .collect();
    let values: Vec<Material> = names.iter().map(|n| spec.materials[*n]).collect();

    let grid = Volume3D::filled(dims, spacing, 0.0, Modality::Mr)?;
    let k = spec.supersample;
    let offsets: Vec<f64> = (0..k).map(|s| (s as f64 + 0.5) / k as f64 - 0.5).collect();
    let weight = 1.0 / (k * k * k) as f64;
    let n = grid.len();
    let (mut mr, mut xray) = (vec![0.0f32; n], vec![0.0f32; n]);
    for kz in 0..dims[2] {
        for jy in 0..dims[1] {
            for ix in 0..dims[0] {
                let c = grid.voxel_center(ix, jy, kz);
                let (mut acc_mr, mut acc_mu) = (0.0f64, 0.0f64);
                for &oz in &offsets {
                    for &oy in &offsets {
                        for &ox in &offsets {
                            let p = [c[0] + ox * spacing[0], c[1] + oy * spacing[1], c[2] + oz * spacing[2]];
                            if let Some(s) = shapes.iter().rev().find(|s| s.contains(p)) {
                                acc_mr += values[s.material].mr_intensity;
                                acc_mu += values[s.material].xray_mu;
                            }
                        }
                    }
                }
                let idx = grid.index(ix, jy, kz);
                mr[idx] = (acc_mr * weight) as f32;
                xray[idx] = (acc_mu * weight) as f32;
            }
        }
    }
    Ok((
        Volume3D::new(dims, spacing, grid.origin(), mr, Modality::Mr)?,
        Volume3D::new(dims, spacing, grid.origin(), xray, Modality::Xray)?,
    ))
}

/// Default voxel pitch for an isotropic `size³` grid covering a 192 mm field of view.
pub fn default_spacing(size: usize) -> [f64; 3] {
    [192.0 / size as f64; 3]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nested() -> PhantomSpec {
        let mut materials = BTreeMap::new();
        materials.insert("outer".to_string(), Material { mr_intensity: 1.0, xray_mu: 0.5 });
        materials.insert("inner".to_string(), Material { mr_intensity: 0.2, xray_mu: 2.0 });
        let e = |axes: [f64; 3], material: &str, priority| Ellipsoid {
            center_mm: [0.0; 3],
            semi_axes_mm: axes,
            rotation_deg: [0.0; 3],
            material: material.into(),
            priority,
        };
        PhantomSpec {
            // Listed inner-first: priority, not order, decides.
            ellipsoids: vec![e([3.0; 3], "inner", 1), e([8.0, 6.0, 5.0], "outer", 0)],
            materials,
            seed: 0,
            inclusions: None,
            supersample: 1,
        }
    }

    #[test]
    fn highest_priority_material_wins_at_the_center() {
        let (mr, xray) = generate_head_phantom([9, 9, 9], [2.0; 3], &nested()).unwrap();
        assert_eq!((mr.get(4, 4, 4), xray.get(4, 4, 4)), (0.2, 2.0));
        assert_eq!((mr.get(4, 4, 6), xray.get(4, 4, 6)), (1.0, 0.5));
        assert_eq!((mr.get(0, 0, 0), xray.get(0, 0, 0)), (0.0, 0.0));
    }

    #[test]
    fn equal_priority_later_entry_wins() {
        let mut spec = nested();
        spec.ellipsoids[0].priority = 0;
        let (mr, _) = generate_head_phantom([9, 9, 9], [2.0; 3], &spec).unwrap();
        assert_eq!(mr.get(4, 4, 4), 1.0);
    }

    #[test]
    fn rotation_swaps_extent() {
        let mut spec = nested();
        spec.ellipsoids = vec![Ellipsoid {
            center_mm: [0.0; 3],
            semi_axes_mm: [7.5, 1.0, 1.0],
            rotation_deg: [0.0, 0.0, 90.0],
            material: "outer".into(),
            priority: 0,
        }];
        let (mr, _) = generate_head_phantom([9, 9, 1], [2.0; 3], &spec).unwrap();
        assert_eq!(mr.get(4, 0, 0), 0.0);
        assert_eq!(mr.get(4, 1, 0), 1.0);
        assert_eq!(mr.get(1, 4, 0), 0.0);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut empty = nested();
        empty.ellipsoids.clear();
        assert!(generate_head_phantom([4; 3], [1.0; 3], &empty).is_err());
        let mut unknown = nested();
        unknown.ellipsoids[0].material = "marrow".into();
        assert!(unknown.validate().is_err());
        let mut flat = nested();
        flat.ellipsoids[0].semi_axes_mm[1] = 0.0;
        assert!(flat.validate().is_err());
    }

    #[test]
    fn head_spec_is_valid_and_seeded() {
        let a = PhantomSpec::head(7);
        a.validate().unwrap();
        assert_eq!(a.expanded_ellipsoids().len(), 15);
        assert_eq!(a.expanded_ellipsoids(), PhantomSpec::head(7).expanded_ellipsoids());
        assert_ne!(a.expanded_ellipsoids(), PhantomSpec::head(8).expanded_ellipsoids());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<PhantomSpec>(&json).unwrap(), a);
    }

    #[test]
    fn supersampling_gives_partial_volumes() {
        let mut spec = nested();
        spec.supersample = 4;
        let (mr, _) = generate_head_phantom([9, 9, 9], [2.0; 3], &spec).unwrap();
        let edge = mr.get(8, 4, 4);
        assert!(edge > 0.0 && edge < 1.0, "{edge}");
    }
}
