//! Inter-layer collision penalty and the dilation that resolves contacts.

use glam::DVec3;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::spatial::PointIndex;

/// Frozen inner-layer geometry prepared for nearest-neighbor queries.
pub struct InnerSurface {
    index: PointIndex,
    normals: Vec<DVec3>,
}

impl InnerSurface {
    pub fn from_meshes(meshes: &[&TriMesh]) -> Result<InnerSurface> {
        let merged = TriMesh::merged(meshes);
        if merged.vertices.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let normals = merged.vertex_normals();
        Ok(InnerSurface {
            index: PointIndex::build(&merged.vertices),
            normals,
        })
    }

    pub fn nearest(&self, p: DVec3) -> (DVec3, DVec3, f64) {
        let (id, d2) = self.index.nearest(p);
        (self.index.point(id), self.normals[id], d2.sqrt())
    }

    /// Positive penetration depth of a point along its neighbor's normal.
    pub fn penetration(&self, p: DVec3) -> f64 {
        let (vj, nj, _) = self.nearest(p);
        ((vj - p).dot(nj)).max(0.0)
    }
}

/// Cubed positive penetration of outer vertices along the normals of their
/// nearest inner vertices, averaged over the outer vertex count.
pub fn collision_loss(outer: &TriMesh, inner: &TriMesh) -> Result<f64> {
    if outer.vertices.is_empty() || inner.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let surface = InnerSurface::from_meshes(&[inner])?;
    Ok(collision_loss_points(&outer.vertices, &surface))
}

pub fn collision_loss_points(outer: &[DVec3], surface: &InnerSurface) -> f64 {
    let mut total = 0.0;
    for &v in outer {
        let pen = surface.penetration(v);
        total += pen * pen * pen;
    }
    total / outer.len() as f64
}

/// Collision loss and its gradient with respect to the outer vertices
/// (nearest-neighbor assignment held fixed).
pub fn collision_loss_grad(outer: &[DVec3], surface: &InnerSurface) -> (f64, Vec<DVec3>) {
    let n = outer.len() as f64;
    let mut total = 0.0;
    let mut grads = vec![DVec3::ZERO; outer.len()];
    for (i, &v) in outer.iter().enumerate() {
        let (vj, nj, _) = surface.nearest(v);
        let pen = (vj - v).dot(nj);
        if pen > 0.0 {
            total += pen * pen * pen;
            grads[i] = -3.0 * pen * pen * nj / n;
        }
    }
    (total / n, grads)
}

/// Moves outer vertices along their nearest inner normal to resolve
/// penetrations: displacement (pen + clearance)·exp(−(d − pen)/σ), where d
/// is the distance to the nearest inner vertex. Vertices far from the inner
/// layer stay put; resting contacts gain the clearance margin.
pub fn dilate(outer: &TriMesh, inner: &TriMesh, sigma: f64, clearance: f64) -> Result<TriMesh> {
    if !(sigma > 0.0) {
        return Err(Error::domain("dilation sigma must be > 0"));
    }
    if inner.vertices.is_empty() {
        return Ok(outer.clone());
    }
    let surface = InnerSurface::from_meshes(&[inner])?;
    Ok(dilate_against(outer, &surface, sigma, clearance))
}

pub fn dilate_against(
    outer: &TriMesh,
    surface: &InnerSurface,
    sigma: f64,
    clearance: f64,
) -> TriMesh {
    let mut out = outer.clone();
    for v in &mut out.vertices {
        let (vj, nj, d) = surface.nearest(*v);
        let pen = ((vj - *v).dot(nj)).max(0.0);
        let delta = pen + clearance;
        if delta <= 0.0 {
            continue;
        }
        let falloff = (-(d - pen).max(0.0) / sigma).exp();
        *v += nj * (delta * falloff);
    }
    out
}
