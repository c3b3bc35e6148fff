//! Ray-driven cone-beam forward projection of voxel volumes.

mod geometry;
mod image;
pub mod io;
mod volume;

pub use geometry::{make_circular_trajectory, DetectorSpec, ProjectionGeometry, TrajectorySpec};
pub use image::ProjectionImage;
pub use volume::{Modality, Volume3D};

use geometry::{add_scaled, norm, sub, Vec3};

use crate::error::{bail, Result};

/// Trilinear interpolation of the eight voxels around `p`.
///
/// Inside the voxel extent but beyond the outermost centers the edge value
/// is held; outside the extent the field is 0.
pub fn sample_trilinear(volume: &Volume3D, p: Vec3) -> f64 {
    let dims = volume.dims();
    let spacing = volume.spacing();
    let origin = volume.origin();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let u = (p[a] - origin[a]) / spacing[a];
        let n = dims[a] as f64;
        if !(u >= -0.5 && u <= n - 0.5) {
            return 0.0;
        }
        let u = u.clamp(0.0, n - 1.0);
        let i = (u.floor() as usize).min(dims[a].saturating_sub(2));
        base[a] = i;
        frac[a] = u - i as f64;
    }
    let data = volume.data();
    let (nx, nxy) = (dims[0], dims[0] * dims[1]);
    let step = |a: usize| usize::from(dims[a] > 1);
    let (sx, sy, sz) = (step(0), step(1) * nx, step(2) * nxy);
    let i000 = base[2] * nxy + base[1] * nx + base[0];
    let v = |off: usize| data[i000 + off] as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let [fx, fy, fz] = frac;
    let c00 = lerp(v(0), v(sx), fx);
    let c10 = lerp(v(sy), v(sy + sx), fx);
    let c01 = lerp(v(sz), v(sz + sx), fx);
    let c11 = lerp(v(sz + sy), v(sz + sy + sx), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

/// Parameter interval `[t0, t1]` where `origin + t·dir` lies inside the box.
fn clip_to_box(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 > t0).then_some((t0, t1))
}

/// Line integral of `volume` along the segment from `from` to `to`,
/// midpoint rule with `ceil(chord / step)` equal sub-intervals of the part
/// of the segment inside the volume extent.
pub fn ray_integral(volume: &Volume3D, from: Vec3, to: Vec3, step_mm: f64) -> f64 {
    let delta = sub(to, from);
    let length = norm(delta);
    if length == 0.0 {
        return 0.0;
    }
    let dir = [delta[0] / length, delta[1] / length, delta[2] / length];
    let (lo, hi) = volume.bounds();
    let Some((t0, t1)) = clip_to_box(from, dir, lo, hi) else {
        return 0.0;
    };
    let (t0, t1) = (t0.max(0.0), t1.min(length));
    if t1 <= t0 {
        return 0.0;
    }
    let n = ((t1 - t0) / step_mm).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        acc += sample_trilinear(volume, add_scaled(from, dir, t0 + (i as f64 + 0.5) * h));
    }
    acc * h
}

fn check_projection_args(volume: &Volume3D, geometry: &ProjectionGeometry, step_mm: f64) -> Result<()> {
    if !(step_mm > 0.0 && step_mm.is_finite()) {
        bail!(Parameter, "step_mm must be positive, got {step_mm}");
    }
    let (lo, hi) = volume.bounds();
    let s = geometry.source();
    if (0..3).all(|a| s[a] > lo[a] && s[a] < hi[a]) {
        bail!(Geometry, "source {s:?} lies inside the volume extent {lo:?}..{hi:?}");
    }
    Ok(())
}

/// Line integrals from the source through every detector pixel center, in
/// units of (volume value)·mm. Rays that miss the volume give 0.
pub fn forward_project(volume: &Volume3D, geometry: &ProjectionGeometry, step_mm: f64) -> Result<ProjectionImage> {
    check_projection_args(volume, geometry, step_mm)?;
    let det = geometry.detector();
    let source = geometry.source();
    let mut data = Vec::with_capacity(det.nu * det.nv);
    for iv in 0..det.nv {
        for iu in 0..det.nu {
            let value = ray_integral(volume, source, geometry.pixel_center(iu, iv), step_mm);
            data.push(value as f32);
        }
    }
    ProjectionImage::new(det.nu, det.nv, [det.du, det.dv], data, volume.modality())
}

/// Project every view, distributing views over up to `threads` workers.
/// Each ray is accumulated in a fixed order, so the result does not depend
/// on the thread count.
pub fn forward_project_views(
    volume: &Volume3D,
    geometries: &[ProjectionGeometry],
    step_mm: f64,
    threads: usize,
) -> Result<Vec<ProjectionImage>> {
    let threads = threads.clamp(1, geometries.len().max(1));
    if threads == 1 {
        return geometries.iter().map(|g| forward_project(volume, g, step_mm)).collect();
    }
    let chunk = geometries.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = geometries
            .chunks(chunk)
            .map(|views| scope.spawn(move || views.iter().map(|g| forward_project(volume, g, step_mm)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(geometries.len());
        for h in handles {
            out.extend(h.join().expect("projection worker panicked")?);
        }
        Ok(out)
    })
}
