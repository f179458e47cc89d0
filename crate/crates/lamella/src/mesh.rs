//! Indexed triangle meshes with per-vertex attributes.

use std::collections::HashMap;

use glam::DVec3;

use crate::error::{Error, Result};
use crate::semantic::SemanticSet;

/// Faces below this area are considered degenerate and dropped.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// An indexed triangle mesh tagged with the semantic set it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<DVec3>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_colors: Option<Vec<[f64; 3]>>,
    pub semantics: SemanticSet,
}

impl TriMesh {
    pub fn new(vertices: Vec<DVec3>, faces: Vec<[u32; 3]>) -> Self {
        TriMesh {
            vertices,
            faces,
            vertex_colors: None,
            semantics: SemanticSet::EMPTY,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for f in &self.faces {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::domain(format!("face index out of range in {f:?}")));
            }
        }
        if let Some(colors) = &self.vertex_colors {
            if colors.len() != self.vertices.len() {
                return Err(Error::shape(format!(
                    "{} colors for {} vertices",
                    colors.len(),
                    self.vertices.len()
                )));
            }
        }
        for (i, f) in self.faces.iter().enumerate() {
            if self.face_area(i) <= DEGENERATE_AREA && !f.iter().all(|&v| f[0] == v) {
                return Err(Error::domain(format!("degenerate face {i}")));
            }
        }
        Ok(())
    }

    pub fn face_points(&self, face: usize) -> [DVec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_points(face);
        0.5 * (b - a).cross(c - a).length()
    }

    /// Unit face normal; zero for degenerate faces.
    pub fn face_normal(&self, face: usize) -> DVec3 {
        let [a, b, c] = self.face_points(face);
        let n = (b - a).cross(c - a);
        let len = n.length();
        if len > 1e-18 {
            n / len
        } else {
            DVec3::ZERO
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed volume via the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (
                    self.vertices[a as usize],
                    self.vertices[b as usize],
                    self.vertices[c as usize],
                );
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    /// Area-weighted vertex normals (unnormalized cross products summed,
    /// then normalized). Deterministic: accumulation follows face order.
    pub fn vertex_normals(&self) -> Vec<DVec3> {
        let mut normals = vec![DVec3::ZERO; self.vertices.len()];
        for &[a, b, c] in &self.faces {
            let (pa, pb, pc) = (
                self.vertices[a as usize],
                self.vertices[b as usize],
                self.vertices[c as usize],
            );
            let n = (pb - pa).cross(pc - pa);
            normals[a as usize] += n;
            normals[b as usize] += n;
            normals[c as usize] += n;
        }
        for n in &mut normals {
            let len = n.length();
            if len > 1e-18 {
                *n /= len;
            }
        }
        normals
    }

    /// Undirected edge → incident face count.
    pub fn edge_face_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut map = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *map.entry(key).or_insert(0) += 1;
            }
        }
        map
    }

    /// A mesh is watertight when every edge has exactly two incident faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_face_counts().values().all(|&c| c == 2)
    }

    pub fn bounds(&self) -> Option<(DVec3, DVec3)> {
        if self.vertices.is_empty() {
            return None;
        }
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices {
            min = min.min(*v);
            max = max.max(*v);
        }
        Some((min, max))
    }

    pub fn mean_edge_length(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for &[a, b, c] in &self.faces {
            let (pa, pb, pc) = (
                self.vertices[a as usize],
                self.vertices[b as usize],
                self.vertices[c as usize],
            );
            total += (pa - pb).length() + (pb - pc).length() + (pc - pa).length();
            count += 3;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Drops degenerate faces and unreferenced vertices, remapping indices.
    pub fn compact(&mut self) {
        let keep: Vec<[u32; 3]> = self
            .faces
            .iter()
            .enumerate()
            .filter(|&(i, f)| self.face_area(i) > DEGENERATE_AREA && f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .map(|(_, f)| *f)
            .collect();
        self.faces = keep;

        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut next = 0u32;
        for f in &self.faces {
            for &v in f {
                if remap[v as usize] == u32::MAX {
                    remap[v as usize] = next;
                    next += 1;
                }
            }
        }
        let mut vertices = vec![DVec3::ZERO; next as usize];
        let mut colors = self
            .vertex_colors
            .as_ref()
            .map(|_| vec![[0.0; 3]; next as usize]);
        for (old, &new) in remap.iter().enumerate() {
            if new != u32::MAX {
                vertices[new as usize] = self.vertices[old];
                if let (Some(dst), Some(src)) = (&mut colors, &self.vertex_colors) {
                    dst[new as usize] = src[old];
                }
            }
        }
        for f in &mut self.faces {
            for v in f.iter_mut() {
                *v = remap[*v as usize];
            }
        }
        self.vertices = vertices;
        self.vertex_colors = colors;
    }

    /// Concatenation of several meshes into one (attributes dropped).
    pub fn merged(meshes: &[&TriMesh]) -> TriMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut semantics = SemanticSet::EMPTY;
        for m in meshes {
            let base = vertices.len() as u32;
            vertices.extend_from_slice(&m.vertices);
            faces.extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
            semantics = semantics.union(m.semantics);
        }
        TriMesh {
            vertices,
            faces,
            vertex_colors: None,
            semantics,
        }
    }
}

#[cfg(test)]
pub(crate) fn unit_tetrahedron() -> TriMesh {
    // Outward-wound regular-ish tetrahedron.
    let v = vec![
        DVec3::new(0.0, 0.0, 0.0),
        DVec3::new(1.0, 0.0, 0.0),
        DVec3::new(0.0, 1.0, 0.0),
        DVec3::new(0.0, 0.0, 1.0),
    ];
    let f = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    TriMesh::new(v, f)
}
