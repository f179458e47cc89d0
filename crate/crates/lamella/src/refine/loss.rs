//! Multi-view silhouette/normal refinement loss with per-vertex gradients
//! through the soft-silhouette rasterizer, plus the collision penalty.

use glam::{DVec2, DVec3};

use crate::camera::OrthoCamera;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::refine::collision::{collision_loss_grad, collision_loss_points, InnerSurface};
use crate::refine::RefineConfig;
use crate::render::raster::{
    rasterize_detailed, signed_distance_grad, skirt_alpha_grad, RasterDetail, RasterOptions,
};
use crate::render::RenderTarget;

/// Loss of prerendered views against targets plus the collision penalty of
/// the layer against its frozen inner layers: mask term over all pixels,
/// squared normal error over target-foreground pixels, collision cubed
/// penetration.
pub fn refinement_loss(
    rendered: &[RenderTarget],
    targets: &[RenderTarget],
    outer: &TriMesh,
    inner: &[&TriMesh],
    config: &RefineConfig,
) -> Result<f64> {
    if rendered.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} rendered views vs {} targets",
            rendered.len(),
            targets.len()
        )));
    }
    let mut mask_sq = 0.0;
    let mut mask_n = 0.0;
    let mut normal_sq = 0.0;
    let mut normal_n = 0.0;
    for (r, t) in rendered.iter().zip(targets) {
        r.same_shape(t)?;
        for p in 0..t.pixel_count() {
            let dm = r.alpha[p] - t.alpha[p];
            mask_sq += dm * dm;
            mask_n += 1.0;
            if t.alpha[p] > 0.5 {
                for c in 0..3 {
                    let dn = r.normal[p][c] - t.normal[p][c];
                    normal_sq += dn * dn;
                }
                normal_n += 1.0;
            }
        }
    }
    let mut loss = config.lambda_mask * if mask_n > 0.0 { mask_sq / mask_n } else { 0.0 }
        + config.lambda_normal * if normal_n > 0.0 { normal_sq / normal_n } else { 0.0 };
    let inner_nonempty: Vec<&TriMesh> = inner.iter().copied().filter(|m| !m.is_empty()).collect();
    if !inner_nonempty.is_empty() && !outer.is_empty() {
        let surface = InnerSurface::from_meshes(&inner_nonempty)?;
        loss += config.lambda_collision * collision_loss_points(&outer.vertices, &surface);
    }
    Ok(loss)
}

/// Full evaluation of one refinement state: renders the frozen stack plus
/// the active layer, pools the loss, and (optionally) accumulates gradients
/// on the active layer's vertices.
pub(crate) struct RefineEval {
    pub loss: f64,
    pub grads: Option<Vec<DVec3>>,
    pub renders: Vec<RenderTarget>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate_refinement(
    layer: &TriMesh,
    frozen: &[&TriMesh],
    cameras: &[OrthoCamera],
    targets: &[RenderTarget],
    config: &RefineConfig,
    surface: Option<&InnerSurface>,
    hair_masks: Option<&[Vec<bool>]>,
    want_grads: bool,
) -> Result<RefineEval> {
    if cameras.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} cameras vs {} targets",
            cameras.len(),
            targets.len()
        )));
    }
    let raster_opts = RasterOptions {
        softness_px: config.softness_px,
    };
    let mut stack: Vec<&TriMesh> = frozen.to_vec();
    stack.push(layer);
    let active_layer = frozen.len() as u32;
    let k = targets.first().map_or(3, |t| t.semantic_count);

    // Forward: render every view and pool the denominators.
    let mut details: Vec<RasterDetail> = Vec::with_capacity(cameras.len());
    let mut pooled = Pooled::default();
    for (cam, target) in cameras.iter().zip(targets) {
        let detail = rasterize_detailed(&stack, cam, &raster_opts, k)?;
        pool_view(
            &mut pooled,
            &detail,
            target,
            hair_masks.map(|h| &h[details.len()]),
        );
        details.push(detail);
    }
    let mut loss = pooled.combined(config);
    let mut collision_grads: Option<Vec<DVec3>> = None;
    if let Some(surface) = surface {
        if !layer.vertices.is_empty() {
            if want_grads {
                let (value, grads) = collision_loss_grad(&layer.vertices, surface);
                loss += config.lambda_collision * value;
                collision_grads = Some(grads);
            } else {
                loss += config.lambda_collision
                    * collision_loss_points(&layer.vertices, surface);
            }
        }
    }

    if !want_grads {
        return Ok(RefineEval {
            loss,
            grads: None,
            renders: details.into_iter().map(|d| d.target).collect(),
        });
    }

    // Backward: pixel terms to active-layer vertices.
    let mut grads = vec![DVec3::ZERO; layer.vertices.len()];
    if let Some(cg) = collision_grads {
        for (g, c) in grads.iter_mut().zip(cg) {
            *g += config.lambda_collision * c;
        }
    }
    for (view, (cam, target)) in cameras.iter().zip(targets).enumerate() {
        let detail = &details[view];
        let basis = cam.basis();
        let res = cam.resolution as usize;
        let px_per_world = res as f64 / cam.ortho_scale;
        let to_world = |g: DVec2| -> DVec3 {
            basis.right * (g.x * px_per_world) + basis.up * (-g.y * px_per_world)
        };
        let hair = hair_masks.map(|h| &h[view]);
        for y in 0..res {
            for x in 0..res {
                let idx = y * res + x;
                let pix = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let is_hair = hair.map_or(false, |h| h[idx]);
                // Mask term: gradient lives in the soft skirt and only flows
                // into the active layer's faces.
                if let Some((face_id, d)) = detail.skirt[idx] {
                    let f = &detail.faces[face_id as usize];
                    if f.layer == active_layer {
                        let mut coeff = 0.0;
                        if pooled.mask_n > 0.0 {
                            coeff += config.lambda_mask * 2.0
                                * (detail.target.alpha[idx] - target.alpha[idx])
                                / pooled.mask_n;
                        }
                        if is_hair && pooled.hair_mask_n > 0.0 {
                            coeff += config.hair_mask_weight * 2.0
                                * (detail.target.alpha[idx] - target.alpha[idx])
                                / pooled.hair_mask_n;
                        }
                        if coeff != 0.0 {
                            let coeff =
                                coeff * skirt_alpha_grad(d, config.softness_px.max(1e-6));
                            let (_, g2d) = signed_distance_grad(pix, &f.v, f.flip);
                            let ids = layer.faces[f.face as usize];
                            for c in 0..3 {
                                grads[ids[c] as usize] += to_world(g2d[c] * coeff);
                            }
                        }
                    }
                }
                // Normal term on target-foreground hits of the active layer.
                if target.alpha[idx] > 0.5 {
                    if let Some(hit) = detail.hits[idx] {
                        let f = &detail.faces[hit.face as usize];
                        if f.layer != active_layer {
                            continue;
                        }
                        let mut scale = 0.0;
                        if pooled.normal_n > 0.0 {
                            scale += config.lambda_normal / pooled.normal_n;
                        }
                        if is_hair && pooled.hair_normal_n > 0.0 {
                            scale += config.hair_normal_weight / pooled.hair_normal_n;
                        }
                        if scale == 0.0 {
                            continue;
                        }
                        let rn = detail.target.normal[idx];
                        let tn = target.normal[idx];
                        let dn_cam = DVec3::new(
                            2.0 * (rn[0] - tn[0]),
                            2.0 * (rn[1] - tn[1]),
                            2.0 * (rn[2] - tn[2]),
                        ) * scale;
                        let g_nhat = basis.right * dn_cam.x + basis.up * dn_cam.y
                            - basis.forward * dn_cam.z;
                        let ids = layer.faces[f.face as usize];
                        let tri = [
                            layer.vertices[ids[0] as usize],
                            layer.vertices[ids[1] as usize],
                            layer.vertices[ids[2] as usize],
                        ];
                        let u = tri[1] - tri[0];
                        let v = tri[2] - tri[0];
                        let n = u.cross(v);
                        let len = n.length();
                        if len > 1e-18 {
                            let nhat = n / len;
                            let g_n = (g_nhat - nhat * nhat.dot(g_nhat)) / len;
                            let gb = v.cross(g_n);
                            let gc = g_n.cross(u);
                            grads[ids[1] as usize] += gb;
                            grads[ids[2] as usize] += gc;
                            grads[ids[0] as usize] -= gb + gc;
                        }
                    }
                }
            }
        }
    }
    Ok(RefineEval {
        loss,
        grads: Some(grads),
        renders: details.into_iter().map(|d| d.target).collect(),
    })
}

#[derive(Default)]
struct Pooled {
    mask_sq: f64,
    mask_n: f64,
    normal_sq: f64,
    normal_n: f64,
    hair_mask_sq: f64,
    hair_mask_n: f64,
    hair_normal_sq: f64,
    hair_normal_n: f64,
}

impl Pooled {
    fn combined(&self, config: &RefineConfig) -> f64 {
        let term = |sq: f64, n: f64| if n > 0.0 { sq / n } else { 0.0 };
        config.lambda_mask * term(self.mask_sq, self.mask_n)
            + config.lambda_normal * term(self.normal_sq, self.normal_n)
            + config.hair_mask_weight * term(self.hair_mask_sq, self.hair_mask_n)
            + config.hair_normal_weight * term(self.hair_normal_sq, self.hair_normal_n)
    }
}

fn pool_view(
    pooled: &mut Pooled,
    detail: &RasterDetail,
    target: &RenderTarget,
    hair: Option<&Vec<bool>>,
) {
    for p in 0..target.pixel_count() {
        let dm = detail.target.alpha[p] - target.alpha[p];
        pooled.mask_sq += dm * dm;
        pooled.mask_n += 1.0;
        let is_hair = hair.map_or(false, |h| h[p]);
        if is_hair {
            pooled.hair_mask_sq += dm * dm;
            pooled.hair_mask_n += 1.0;
        }
        if target.alpha[p] > 0.5 {
            let mut sq = 0.0;
            for c in 0..3 {
                let dn = detail.target.normal[p][c] - target.normal[p][c];
                sq += dn * dn;
            }
            pooled.normal_sq += sq;
            pooled.normal_n += 1.0;
            if is_hair {
                pooled.hair_normal_sq += sq;
                pooled.hair_normal_n += 1.0;
            }
        }
    }
}
