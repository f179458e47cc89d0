//! Classic cube-marching isosurface extraction on a fixed node grid.

use std::collections::HashMap;

use glam::DVec3;

use crate::error::{Error, Result};
use crate::extract::tables::{CORNER_OFFSETS, EDGE_CORNERS, TRIANGLE_TABLE};
use crate::mesh::TriMesh;

/// Node lattice for surface extraction: `dims` nodes per axis spanning
/// `extents` (a fraction of the field domain), centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionGrid {
    pub dims: [usize; 3],
    pub extents: [f64; 3],
}

impl Default for ExtractionGrid {
    fn default() -> Self {
        ExtractionGrid {
            dims: [100, 100, 150],
            extents: [0.7, 0.7, 1.05],
        }
    }
}

impl ExtractionGrid {
    pub fn new(dims: [usize; 3], extents: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::domain("extraction grid needs >= 2 nodes per axis"));
        }
        if extents.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::domain("extraction extents must be > 0"));
        }
        Ok(ExtractionGrid { dims, extents })
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Node index in x-fastest order.
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> DVec3 {
        DVec3::new(
            (i as f64 / (self.dims[0] - 1) as f64 - 0.5) * self.extents[0],
            (j as f64 / (self.dims[1] - 1) as f64 - 0.5) * self.extents[1],
            (k as f64 / (self.dims[2] - 1) as f64 - 0.5) * self.extents[2],
        )
    }

    pub fn cell_size(&self) -> DVec3 {
        DVec3::new(
            self.extents[0] / (self.dims[0] - 1) as f64,
            self.extents[1] / (self.dims[1] - 1) as f64,
            self.extents[2] / (self.dims[2] - 1) as f64,
        )
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size().length()
    }
}

/// Identity of a lattice vertex: either snapped onto a node or on the open
/// segment between two nodes. Snapping crossings that land within
/// [`SNAP_FRACTION`] of a node collapses would-be sliver triangles into
/// id-degenerate ones, which both incident cells skip consistently, so the
/// surface stays watertight after the degenerate drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    Node(u32),
    Edge(u32, u32),
}

const SNAP_FRACTION: f64 = 1e-3;

/// Zero-level-set extraction with linear interpolation along cell edges.
///
/// Boundary nodes are clamped positive before marching so every surface
/// closes inside the grid; an all-positive field yields an empty mesh.
/// Vertex indices are assigned in cell-major scan order, so the output is
/// deterministic.
pub fn marching_cubes(values: &[f64], grid: &ExtractionGrid) -> Result<TriMesh> {
    let mesh = marching_cubes_with_edges(values, grid)?.0;
    Ok(mesh)
}

/// As [`marching_cubes`], also returning each vertex's lattice edge key and
/// interpolation endpoints (node indices into `values`).
pub fn marching_cubes_with_edges(
    values: &[f64],
    grid: &ExtractionGrid,
) -> Result<(TriMesh, Vec<(u32, u32)>)> {
    let [nx, ny, nz] = grid.dims;
    if values.len() != grid.node_count() {
        return Err(Error::shape(format!(
            "{} values for a {}x{}x{} grid",
            values.len(),
            nx,
            ny,
            nz
        )));
    }
    let padded = pad_boundary(values, grid);

    let mut vertices: Vec<DVec3> = Vec::new();
    let mut vertex_edges: Vec<(u32, u32)> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut edge_cache: HashMap<VertexKey, u32> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut corner_vals = [0.0f64; 8];
                let mut corner_nodes = [0usize; 8];
                let mut case = 0usize;
                for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                    let node = grid.node_index(i + off[0], j + off[1], k + off[2]);
                    corner_nodes[c] = node;
                    corner_vals[c] = padded[node];
                    if padded[node] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                let mut cell_verts = [u32::MAX; 12];
                let mut t = 0;
                while row[t] >= 0 {
                    let tri_edges = [row[t] as usize, row[t + 1] as usize, row[t + 2] as usize];
                    let mut tri = [0u32; 3];
                    for (slot, &e) in tri_edges.iter().enumerate() {
                        if cell_verts[e] == u32::MAX {
                            let [ca, cb] = EDGE_CORNERS[e];
                            let (na, nb) = (corner_nodes[ca] as u32, corner_nodes[cb] as u32);
                            let (va, vb) = (corner_vals[ca], corner_vals[cb]);
                            let frac = va / (va - vb);
                            let key = if frac < SNAP_FRACTION {
                                VertexKey::Node(na)
                            } else if frac > 1.0 - SNAP_FRACTION {
                                VertexKey::Node(nb)
                            } else {
                                VertexKey::Edge(na.min(nb), na.max(nb))
                            };
                            cell_verts[e] = *edge_cache.entry(key).or_insert_with(|| {
                                let id = vertices.len() as u32;
                                let pos = match key {
                                    VertexKey::Node(n) => node_pos(grid, n as usize),
                                    VertexKey::Edge(_, _) => {
                                        let pa = node_pos(grid, na as usize);
                                        let pb = node_pos(grid, nb as usize);
                                        pa + (pb - pa) * frac
                                    }
                                };
                                vertices.push(pos);
                                vertex_edges.push((na, nb));
                                id
                            });
                        }
                        tri[slot] = cell_verts[e];
                    }
                    if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                        // Table order winds clockwise seen from outside; flip
                        // for outward normals (positive signed volume).
                        faces.push([tri[0], tri[2], tri[1]]);
                    }
                    t += 3;
                }
            }
        }
    }

    let mut mesh = TriMesh::new(vertices, faces);
    drop_degenerate_faces(&mut mesh);
    Ok((mesh, vertex_edges))
}

fn node_pos(grid: &ExtractionGrid, node: usize) -> DVec3 {
    let nx = grid.dims[0];
    let ny = grid.dims[1];
    let i = node % nx;
    let j = (node / nx) % ny;
    let k = node / (nx * ny);
    grid.node_position(i, j, k)
}

fn pad_boundary(values: &[f64], grid: &ExtractionGrid) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims;
    let eps = 0.5 * grid.cell_size().min_element();
    let mut out = values.to_vec();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1 {
                    let idx = grid.node_index(i, j, k);
                    out[idx] = out[idx].max(eps);
                }
            }
        }
    }
    out
}

fn drop_degenerate_faces(mesh: &mut TriMesh) {
    mesh.compact();
}
