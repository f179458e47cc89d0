//! Geometry metrics: chamfer distance, F-score, and mask IoU.

use glam::DVec3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::OrthoCamera;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::render::{rasterize_layers_k, RasterOptions};
use crate::spatial::PointIndex;

/// Published F-score distance threshold.
pub const FSCORE_TAU: f64 = 0.01;

/// Area-uniform surface samples with a fixed seed.
pub fn sample_surface(mesh: &TriMesh, n_samples: usize, seed: u64) -> Result<Vec<DVec3>> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be >= 1"));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let pick = rng.gen::<f64>() * total;
        let face = cumulative.partition_point(|&c| c < pick).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.face_points(face);
        // Uniform barycentric via the square-root trick.
        let r1 = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        out.push(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
    }
    Ok(out)
}

/// Symmetric chamfer distance: the mean of squared nearest-neighbor
/// distances between area-uniform samplings of each surface.
pub fn chamfer(a: &TriMesh, b: &TriMesh, n_samples: usize, seed: u64) -> Result<f64> {
    let pa = sample_surface(a, n_samples, seed)?;
    let pb = sample_surface(b, n_samples, seed)?;
    let d_ab = mean_sq_nn(&pa, &pb);
    let d_ba = mean_sq_nn(&pb, &pa);
    Ok(0.5 * (d_ab + d_ba))
}

fn mean_sq_nn(from: &[DVec3], to: &[DVec3]) -> f64 {
    let index = PointIndex::build(to);
    let mut total = 0.0;
    for &p in from {
        total += index.nearest(p).1;
    }
    total / from.len() as f64
}

/// F-score at threshold `tau`: harmonic mean of precision and recall over
/// surface samples.
pub fn fscore(a: &TriMesh, b: &TriMesh, tau: f64, n_samples: usize, seed: u64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::domain("tau must be > 0"));
    }
    let pa = sample_surface(a, n_samples, seed)?;
    let pb = sample_surface(b, n_samples, seed)?;
    let precision = fraction_within(&pa, &pb, tau);
    let recall = fraction_within(&pb, &pa, tau);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

fn fraction_within(from: &[DVec3], to: &[DVec3], tau: f64) -> f64 {
    let index = PointIndex::build(to);
    let tau2 = tau * tau;
    let hits = from.iter().filter(|&&p| index.nearest(p).1 <= tau2).count();
    hits as f64 / from.len() as f64
}

/// Intersection over union of two binary masks; both empty counts as 1.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("masks {} vs {}", a.len(), b.len())));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean rendered-mask IoU of two meshes over a camera ring (hard pixel
/// coverage, no skirt).
pub fn silhouette_iou(a: &TriMesh, b: &TriMesh, cameras: &[OrthoCamera]) -> Result<f64> {
    if cameras.is_empty() {
        return Err(Error::domain("need at least one camera"));
    }
    let opts = RasterOptions::default();
    let mut total = 0.0;
    for cam in cameras {
        let ra = rasterize_layers_k(&[a], cam, &opts, 1)?;
        let rb = rasterize_layers_k(&[b], cam, &opts, 1)?;
        total += mask_iou(&ra.raster_coverage(), &rb.raster_coverage())?;
    }
    Ok(total / cameras.len() as f64)
}
