//! Orthographic ray-marching renderer over semantic fields.

use glam::DVec3;
use rayon::prelude::*;

use crate::camera::OrthoCamera;
use crate::error::{Error, Result};
use crate::field::{FieldMode, FieldSampler};
use crate::render::target::RenderTarget;
use crate::scene::density_from_sdf;
use crate::semantic::SemanticSet;

/// Fractional padding around the unit cube used as the marching domain.
pub const DOMAIN_PAD: f64 = 0.05;

/// Transmittance floor below which marching a ray stops.
const T_CUTOFF: f64 = 1e-12;

/// Ray-marching settings.
#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub n_samples: usize,
    /// Width for the SDF→density conversion when the field is in SDF mode.
    pub beta: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            n_samples: 96,
            beta: crate::scene::DEFAULT_BETA,
        }
    }
}

/// Marches `n_samples` uniform positions per pixel ray through the padded
/// unit cube. `kept = None` renders unfiltered; `Some(set)` keeps only that
/// semantic mass. Depth is the opacity-weighted expected view depth; normals
/// come from the geometry gradient (central differences at the ray step),
/// oriented outward, expressed in camera space, and composited like color.
pub fn render_view(
    field: &dyn FieldSampler,
    camera: &OrthoCamera,
    kept: Option<SemanticSet>,
    options: &RenderOptions,
) -> Result<RenderTarget> {
    camera.validate()?;
    if options.n_samples < 2 {
        return Err(Error::domain("n_samples must be >= 2"));
    }
    let k = field.semantic_count();
    if let Some(set) = kept {
        set.check(k)?;
    }
    let res = camera.resolution as usize;
    let mut target = RenderTarget::zeros(res, res, k);
    let basis = camera.basis();
    let lo = DVec3::splat(-0.5 - DOMAIN_PAD);
    let hi = DVec3::splat(0.5 + DOMAIN_PAD);

    let width = res;
    let rows: Vec<(usize, RowBuffers)> = (0..res)
        .into_par_iter()
        .map(|y| {
            let mut row = RowBuffers::new(width, k);
            for x in 0..width {
                let ray = camera.pixel_ray(x as u32, y as u32);
                let Some((t0, t1)) = ray.clip_to_box(lo, hi) else {
                    continue;
                };
                let t0 = t0.max(camera.near);
                let t1 = t1.min(camera.far);
                if !(t1 > t0) {
                    continue;
                }
                let n = options.n_samples;
                let dt = (t1 - t0) / n as f64;
                let mut transmittance = 1.0f64;
                let mut rgb = [0.0f64; 3];
                let mut alpha = 0.0f64;
                let mut depth = 0.0f64;
                let mut normal = DVec3::ZERO;
                let mut semantic = vec![0.0f64; k];
                for i in 0..n {
                    if transmittance < T_CUTOFF {
                        break;
                    }
                    let t = t0 + (i as f64 + 0.5) * dt;
                    let p = ray.at(t);
                    let s = field.sample(p);
                    let sigma = match field.mode() {
                        FieldMode::Density => s.geom,
                        FieldMode::Sdf => density_from_sdf(s.geom, options.beta)
                            .expect("options.beta validated positive"),
                    };
                    let a = -(-sigma * dt).exp_m1();
                    let q = match kept {
                        Some(set) => s.probs.mass(set),
                        None => 1.0,
                    };
                    let e = a * q;
                    let w = transmittance * e;
                    if w > 1e-12 {
                        for ch in 0..3 {
                            rgb[ch] += w * s.color[ch];
                        }
                        for ch in 0..k {
                            semantic[ch] += w * s.probs[ch];
                        }
                        depth += w * t;
                        let g = geometry_gradient(field, p, dt);
                        let outward = match field.mode() {
                            FieldMode::Sdf => g,
                            FieldMode::Density => -g,
                        };
                        let len = outward.length();
                        if len > 1e-18 {
                            normal += w * (outward / len);
                        }
                    }
                    alpha += w;
                    transmittance *= 1.0 - e;
                }
                let idx = x;
                row.rgb[idx] = rgb;
                row.alpha[idx] = alpha;
                row.depth[idx] = depth;
                row.semantic[idx * k..(idx + 1) * k].copy_from_slice(&semantic);
                if alpha > 0.0 {
                    let n_cam = DVec3::new(
                        normal.dot(basis.right),
                        normal.dot(basis.up),
                        -normal.dot(basis.forward),
                    );
                    let len = n_cam.length();
                    if len > 1e-12 {
                        row.normal[idx] = (n_cam / len).to_array();
                    }
                } else {
                    // Empty pixels carry exact zeros in every buffer.
                    row.depth[idx] = 0.0;
                }
            }
            (y, row)
        })
        .collect();

    for (y, row) in rows {
        let base = y * width;
        target.rgb[base..base + width].copy_from_slice(&row.rgb);
        target.alpha[base..base + width].copy_from_slice(&row.alpha);
        target.depth[base..base + width].copy_from_slice(&row.depth);
        target.normal[base..base + width].copy_from_slice(&row.normal);
        target.semantic[base * k..(base + width) * k].copy_from_slice(&row.semantic);
    }
    Ok(target)
}

struct RowBuffers {
    rgb: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    semantic: Vec<f64>,
    depth: Vec<f64>,
    normal: Vec<[f64; 3]>,
}

impl RowBuffers {
    fn new(width: usize, k: usize) -> Self {
        RowBuffers {
            rgb: vec![[0.0; 3]; width],
            alpha: vec![0.0; width],
            semantic: vec![0.0; width * k],
            depth: vec![0.0; width],
            normal: vec![[0.0; 3]; width],
        }
    }
}

fn geometry_gradient(field: &dyn FieldSampler, p: DVec3, h: f64) -> DVec3 {
    let dx = field.sample(p + DVec3::X * h).geom - field.sample(p - DVec3::X * h).geom;
    let dy = field.sample(p + DVec3::Y * h).geom - field.sample(p - DVec3::Y * h).geom;
    let dz = field.sample(p + DVec3::Z * h).geom - field.sample(p - DVec3::Z * h).geom;
    DVec3::new(dx, dy, dz) / (2.0 * h)
}
