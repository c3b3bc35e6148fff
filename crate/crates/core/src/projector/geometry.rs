use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

pub(crate) type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add_scaled(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Flat-panel detector sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub nu: usize,
    pub nv: usize,
    /// Pixel pitch along u, mm.
    pub du: f64,
    /// Pixel pitch along v, mm.
    pub dv: f64,
}

impl DetectorSpec {
    /// The default C-arm panel: 512 × 512 pixels at 0.62 mm.
    pub const DEFAULT: DetectorSpec = DetectorSpec { nu: 512, nv: 512, du: 0.62, dv: 0.62 };

    /// A panel of `n × n` pixels covering the same physical area as [`DetectorSpec::DEFAULT`].
    pub fn square_covering_default(n: usize) -> Self {
        let pitch = Self::DEFAULT.du * Self::DEFAULT.nu as f64 / n as f64;
        Self { nu: n, nv: n, du: pitch, dv: pitch }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 || self.nv == 0 {
            bail!(Parameter, "detector needs at least one pixel, got {}x{}", self.nu, self.nv);
        }
        if !(self.du > 0.0 && self.dv > 0.0 && self.du.is_finite() && self.dv.is_finite()) {
            bail!(Parameter, "detector pitch must be positive, got ({}, {})", self.du, self.dv);
        }
        Ok(())
    }
}

/// One cone-beam view: a point source and a flat detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRecord", into = "GeometryRecord")]
pub struct ProjectionGeometry {
    source: Vec3,
    detector_center: Vec3,
    axis_u: Vec3,
    axis_v: Vec3,
    detector: DetectorSpec,
    isocenter: Vec3,
    angulation_deg: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryRecord {
    source_mm: Vec3,
    detector_center_mm: Vec3,
    detector_u: Vec3,
    detector_v: Vec3,
    detector: DetectorSpec,
    isocenter_mm: Vec3,
    angulation_deg: f64,
}

impl TryFrom<GeometryRecord> for ProjectionGeometry {
    type Error = Error;

    fn try_from(r: GeometryRecord) -> Result<Self> {
        ProjectionGeometry::new(r.source_mm, r.detector_center_mm, [r.detector_u, r.detector_v], r.detector, r.isocenter_mm, r.angulation_deg)
    }
}

impl From<ProjectionGeometry> for GeometryRecord {
    fn from(g: ProjectionGeometry) -> Self {
        GeometryRecord {
            source_mm: g.source,
            detector_center_mm: g.detector_center,
            detector_u: g.axis_u,
            detector_v: g.axis_v,
            detector: g.detector,
            isocenter_mm: g.isocenter,
            angulation_deg: g.angulation_deg,
        }
    }
}

impl ProjectionGeometry {
    pub fn new(
        source: Vec3,
        detector_center: Vec3,
        axes: [Vec3; 2],
        detector: DetectorSpec,
        isocenter: Vec3,
        angulation_deg: f64,
    ) -> Result<Self> {
        detector.validate()?;
        let [u, v] = axes;
        for (name, a) in [("u", u), ("v", v)] {
            if (norm(a) - 1.0).abs() > 1e-9 {
                bail!(Geometry, "detector axis {name} is not unit length: {a:?}");
            }
        }
        if dot(u, v).abs() > 1e-9 {
            bail!(Geometry, "detector axes are not orthogonal: u={u:?} v={v:?}");
        }
        let g = Self { source, detector_center, axis_u: u, axis_v: v, detector, isocenter, angulation_deg };
        let (sid, sdd) = (g.sid(), g.sdd());
        if !(sid > 0.0 && sdd > sid) {
            bail!(Geometry, "need SDD > SID > 0, got SID {sid} mm, SDD {sdd} mm");
        }
        Ok(g)
    }

    pub fn source(&self) -> Vec3 {
        self.source
    }

    pub fn detector_center(&self) -> Vec3 {
        self.detector_center
    }

    pub fn axes(&self) -> [Vec3; 2] {
        [self.axis_u, self.axis_v]
    }

    pub fn detector(&self) -> DetectorSpec {
        self.detector
    }

    pub fn isocenter(&self) -> Vec3 {
        self.isocenter
    }

    pub fn angulation_deg(&self) -> f64 {
        self.angulation_deg
    }

    /// Source-to-isocenter distance.
    pub fn sid(&self) -> f64 {
        norm(sub(self.isocenter, self.source))
    }

    /// Perpendicular distance from the source to the detector plane.
    pub fn sdd(&self) -> f64 {
        dot(sub(self.detector_center, self.source), cross(self.axis_u, self.axis_v)).abs()
    }

    /// World position of the center of detector pixel `(iu, iv)`; `iv` is the image row.
    pub fn pixel_center(&self, iu: usize, iv: usize) -> Vec3 {
        let du = (iu as f64 - 0.5 * (self.detector.nu as f64 - 1.0)) * self.detector.du;
        let dv = (iv as f64 - 0.5 * (self.detector.nv as f64 - 1.0)) * self.detector.dv;
        add_scaled(add_scaled(self.detector_center, self.axis_u, du), self.axis_v, dv)
    }
}

/// Parameters of a circular source trajectory about the world origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub n_views: usize,
    pub angular_range_deg: f64,
    pub sid_mm: f64,
    pub sdd_mm: f64,
    pub detector: DetectorSpec,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self { n_views: 64, angular_range_deg: 360.0, sid_mm: 750.0, sdd_mm: 1200.0, detector: DetectorSpec::DEFAULT }
    }
}

impl TrajectorySpec {
    pub fn geometries(&self) -> Result<Vec<ProjectionGeometry>> {
        make_circular_trajectory(self.n_views, self.angular_range_deg, self.sid_mm, self.sdd_mm, self.detector)
    }
}

/// Views equally spaced over `angular_range_deg` (view `k` at `k·range/n`),
/// source circling the origin in the z = 0 plane, detector perpendicular to
/// the central ray with its v axis along −z (image row 0 at the top).
pub fn make_circular_trajectory(
    n_views: usize,
    angular_range_deg: f64,
    sid: f64,
    sdd: f64,
    detector: DetectorSpec,
) -> Result<Vec<ProjectionGeometry>> {
    if n_views == 0 {
        bail!(Parameter, "n_views must be >= 1");
    }
    if !angular_range_deg.is_finite() {
        bail!(Parameter, "angular range must be finite");
    }
    if !(sid > 0.0 && sdd > sid && sdd.is_finite()) {
        bail!(Parameter, "need SDD > SID > 0, got SID {sid} mm, SDD {sdd} mm");
    }
    detector.validate()?;
    (0..n_views)
        .map(|k| {
            let angle = k as f64 * angular_range_deg / n_views as f64;
            let (s, c) = angle.to_radians().sin_cos();
            let source = [sid * c, sid * s, 0.0];
            let center = [source[0] - sdd * c, source[1] - sdd * s, 0.0];
            ProjectionGeometry::new(source, center, [[-s, c, 0.0], [0.0, 0.0, -1.0]], detector, [0.0; 3], angle)
        })
        .collect()
}
