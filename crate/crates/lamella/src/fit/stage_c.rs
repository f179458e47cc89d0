//! Mesh-stage fine-tuning: extract level surfaces once, freeze their
//! connectivity, then optimize the grid so the rasterized meshes match the
//! supervision targets. Vertex positions stay differentiable functions of
//! the lattice's equivalent-SDF values through the edge interpolation.

use glam::{DVec2, DVec3};

use crate::camera::OrthoCamera;
use crate::error::Result;
use crate::field::FieldSampler;
use crate::extract::marching::marching_cubes_with_edges;
use crate::extract::ExtractionGrid;
use crate::fit::grid::{DenseGrid, Stencil, MAX_CHANNELS};
use crate::fit::loss::{LossWeights, SupervisionLevel, TargetAux, LOG_EPS};
use crate::fit::{FitConfig, Objective};
use crate::mesh::TriMesh;
use crate::render::raster::{
    barycentric_grad, rasterize_detailed, signed_distance_grad, skirt_alpha_grad, RasterDetail,
    RasterOptions,
};
use crate::render::RenderTarget;
use crate::semantic::{SemanticSet, MAX_SEMANTICS};

/// A lattice node's equivalent-SDF evaluation with the max branch recorded.
#[derive(Debug, Clone, Copy)]
struct NodeEval {
    eq: f64,
    probs: [f64; MAX_SEMANTICS],
    /// True when the geometry SDF wins the max; otherwise the margin does.
    geom_branch: bool,
    /// Argmax labels of the margin; `u8::MAX` marks the −1 constant.
    arg_out: u8,
    arg_in: u8,
}

/// One frozen level: mesh connectivity, vertex provenance, and targets.
struct FrozenLevel {
    kept: SemanticSet,
    faces: Vec<[u32; 3]>,
    vertex_edges: Vec<(u32, u32)>,
    targets: Vec<RenderTarget>,
    auxes: Vec<TargetAux>,
    /// Lattice cells with crossings at freeze time: crossing edge lists.
    dev_cells: Vec<Vec<(u32, u32)>>,
}

struct LevelCache {
    nodes: Vec<NodeEval>,
    vertex_ts: Vec<(f64, bool)>,
    mesh: TriMesh,
    details: Vec<RasterDetail>,
    pooled: Pooled,
    dev_mean: f64,
    dev_cell_count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Pooled {
    mask_sq: f64,
    mask_denom: f64,
    rgb_sq: f64,
    rgb_denom: f64,
    ce: f64,
    ce_denom: f64,
    normal_sum: f64,
    depth_sum: f64,
    geo_denom: f64,
}

impl Pooled {
    fn combined(&self, w: &LossWeights, dev_mean: f64) -> f64 {
        let mask = if self.mask_denom > 0.0 { self.mask_sq / self.mask_denom } else { 0.0 };
        let rgb = if self.rgb_denom > 0.0 { self.rgb_sq / self.rgb_denom } else { 0.0 };
        let ce = if self.ce_denom > 0.0 { self.ce / self.ce_denom } else { 0.0 };
        let normal = if self.geo_denom > 0.0 { self.normal_sum / self.geo_denom } else { 0.0 };
        let depth = if self.geo_denom > 0.0 { self.depth_sum / self.geo_denom } else { 0.0 };
        rgb + w.lambda_mask * mask
            + w.lambda_sem * ce
            + w.lambda_normal * normal
            + w.lambda_depth * depth
            + w.lambda_dev * dev_mean
    }
}

pub(crate) struct StageCObjective<'a> {
    cameras: &'a [OrthoCamera],
    lattice: ExtractionGrid,
    node_stencils: Vec<Stencil>,
    levels: Vec<FrozenLevel>,
    weights: LossWeights,
    k: usize,
    raster: RasterOptions,
    cache: Option<Vec<LevelCache>>,
}

impl<'a> StageCObjective<'a> {
    pub fn prepare(
        grid: &DenseGrid,
        cameras: &'a [OrthoCamera],
        supervision: &[SupervisionLevel],
        config: &FitConfig,
    ) -> Result<Self> {
        let lattice = ExtractionGrid::new(config.stage_c_dims, config.stage_c_extents)?;
        let [nx, ny, nz] = lattice.dims;
        let mut node_stencils = Vec::with_capacity(lattice.node_count());
        for kz in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    node_stencils.push(grid.stencil(lattice.node_position(i, j, kz)));
                }
            }
        }
        let k = grid.semantic_count();
        let mut levels = Vec::new();
        for level in supervision {
            let nodes = eval_nodes(grid, &node_stencils, level.kept, k);
            let values: Vec<f64> = nodes.iter().map(|n| n.eq).collect();
            let (mesh, vertex_edges) = marching_cubes_with_edges(&values, &lattice)?;
            if mesh.faces.is_empty() {
                continue;
            }
            let dev_cells = freeze_dev_cells(&values, &lattice);
            levels.push(FrozenLevel {
                kept: level.kept,
                faces: mesh.faces.clone(),
                vertex_edges,
                targets: level.targets.clone(),
                auxes: level.targets.iter().map(TargetAux::from_target).collect(),
                dev_cells,
            });
        }
        Ok(StageCObjective {
            cameras,
            lattice,
            node_stencils,
            levels,
            weights: config.weights.clone(),
            k,
            raster: RasterOptions::default(),
            cache: None,
        })
    }

    fn forward(&self, grid: &DenseGrid) -> Result<(f64, Vec<LevelCache>)> {
        let mut caches = Vec::with_capacity(self.levels.len());
        let mut total = 0.0;
        for level in &self.levels {
            let nodes = eval_nodes(grid, &self.node_stencils, level.kept, self.k);
            let (vertices, vertex_ts) = vertex_positions(&nodes, &level.vertex_edges, &self.lattice);
            let mut mesh = TriMesh::new(vertices, level.faces.clone());
            mesh.semantics = level.kept;
            let mut details = Vec::with_capacity(self.cameras.len());
            let mut pooled = Pooled::default();
            for (cam, (target, aux)) in self
                .cameras
                .iter()
                .zip(level.targets.iter().zip(&level.auxes))
            {
                let detail = rasterize_detailed(&[&mesh], cam, &self.raster, self.k)?;
                accumulate_pooled(
                    &mut pooled,
                    grid,
                    cam,
                    &detail,
                    target,
                    aux,
                    &self.weights,
                );
                details.push(detail);
            }
            let (dev_sum, count) = dev_value(&nodes, &level.dev_cells, &self.lattice);
            let dev_mean = if count > 0 { dev_sum / count as f64 } else { 0.0 };
            total += pooled.combined(&self.weights, dev_mean);
            caches.push(LevelCache {
                nodes,
                vertex_ts,
                mesh,
                details,
                pooled,
                dev_mean,
                dev_cell_count: count,
            });
        }
        Ok((total, caches))
    }
}

impl Objective for StageCObjective<'_> {
    fn eval(&mut self, grid: &DenseGrid) -> Result<f64> {
        let (loss, caches) = self.forward(grid)?;
        self.cache = Some(caches);
        Ok(loss)
    }

    fn grad(&mut self, grid: &DenseGrid) -> Result<Vec<f64>> {
        if self.cache.is_none() {
            let (_, caches) = self.forward(grid)?;
            self.cache = Some(caches);
        }
        let caches = self.cache.as_ref().unwrap();
        let ch = grid.channels();
        let mut grad = vec![0.0; grid.parameter_count()];
        for (level, cache) in self.levels.iter().zip(caches) {
            let mut node_grad = vec![0.0; self.lattice.node_count()];
            let mut vertex_grad = vec![DVec3::ZERO; cache.mesh.vertices.len()];
            let w = &self.weights;
            let p = &cache.pooled;
            for (cam, ((detail, target), aux)) in self.cameras.iter().zip(
                cache
                    .details
                    .iter()
                    .zip(&level.targets)
                    .zip(&level.auxes),
            ) {
                let basis = cam.basis();
                let res = cam.resolution as usize;
                let px_per_world = res as f64 / cam.ortho_scale;
                // 2D pixel gradients map to world through the camera plane.
                let to_world = |g: DVec2| -> DVec3 {
                    basis.right * (g.x * px_per_world) + basis.up * (-g.y * px_per_world)
                };
                for y in 0..res {
                    for x in 0..res {
                        let idx = y * res + x;
                        let pix = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                        // Mask term through the soft skirt.
                        if p.mask_denom > 0.0 {
                            if let Some((face_id, d)) = detail.skirt[idx] {
                                let alpha = detail.target.alpha[idx];
                                let d_alpha = w.lambda_mask
                                    * 2.0
                                    * (alpha - target.alpha[idx])
                                    / p.mask_denom;
                                if d_alpha != 0.0 {
                                    let f = &detail.faces[face_id as usize];
                                    let coeff = d_alpha
                                        * skirt_alpha_grad(d, self.raster.softness_px.max(1e-6));
                                    let (_, g2d) = signed_distance_grad(pix, &f.v, f.flip);
                                    let ids = cache.mesh.faces[f.face as usize];
                                    for c in 0..3 {
                                        vertex_grad[ids[c] as usize] +=
                                            to_world(g2d[c] * coeff);
                                    }
                                }
                            }
                        }
                        let Some(hit) = detail.hits[idx] else { continue };
                        if !aux.foreground[idx] {
                            continue;
                        }
                        let f = &detail.faces[hit.face as usize];
                        let ids = cache.mesh.faces[f.face as usize];
                        let tri = [
                            cache.mesh.vertices[ids[0] as usize],
                            cache.mesh.vertices[ids[1] as usize],
                            cache.mesh.vertices[ids[2] as usize],
                        ];
                        // Normal alignment term.
                        if p.geo_denom > 0.0 {
                            let gt_n = DVec3::from_array(target.normal[idx]);
                            let dn_cam = -gt_n * (w.lambda_normal / p.geo_denom);
                            // Adjoint of the camera transform.
                            let g_nhat = basis.right * dn_cam.x + basis.up * dn_cam.y
                                - basis.forward * dn_cam.z;
                            let u = tri[1] - tri[0];
                            let vv = tri[2] - tri[0];
                            let n = u.cross(vv);
                            let len = n.length();
                            if len > 1e-18 {
                                let nhat = n / len;
                                let g_n = (g_nhat - nhat * nhat.dot(g_nhat)) / len;
                                let gb = vv.cross(g_n);
                                let gc = g_n.cross(u);
                                vertex_grad[ids[1] as usize] += gb;
                                vertex_grad[ids[2] as usize] += gc;
                                vertex_grad[ids[0] as usize] -= gb + gc;
                            }
                            // Depth term: interpolated view depth.
                            let d_depth = w.lambda_depth / p.geo_denom
                                * (hit.depth - target.depth[idx]).signum();
                            if d_depth != 0.0 {
                                let (bw, bg) = barycentric_grad(pix, &f.v);
                                for c in 0..3 {
                                    vertex_grad[ids[c] as usize] +=
                                        basis.forward * (d_depth * bw[c]);
                                }
                                let depth_vals = f.depth;
                                for j in 0..3 {
                                    let mut g2d = DVec2::ZERO;
                                    for i in 0..3 {
                                        g2d += bg[i][j] * depth_vals[i];
                                    }
                                    vertex_grad[ids[j] as usize] += to_world(g2d * d_depth);
                                }
                            }
                        }
                        // Color and semantics sampled from the field at the
                        // hit point (hit position treated as fixed).
                        let world = hit_world(cam, pix, hit.depth);
                        let stencil = grid.stencil(world);
                        let raw = grid.raw_at(&stencil);
                        let mut raw_grad = [0.0f64; MAX_CHANNELS];
                        if p.rgb_denom > 0.0 {
                            for chn in 0..3 {
                                let c = crate::scene::sigmoid(raw[1 + chn]);
                                let d = 2.0 * (c - target.rgb[idx][chn]) / p.rgb_denom;
                                raw_grad[1 + chn] = d * c * (1.0 - c);
                            }
                        }
                        if p.ce_denom > 0.0 {
                            let probs =
                                crate::semantic::Probs::from_logits(&raw[4..4 + self.k]);
                            let class = aux.class[idx] as usize;
                            let p_hat = probs[class];
                            if p_hat > LOG_EPS && p_hat < 1.0 {
                                let dp = -w.lambda_sem * w.class_weight(class)
                                    / (p_hat * p.ce_denom);
                                // Softmax jacobian: ∂p_c/∂l_m = p_c(δ_cm − p_m).
                                for m in 0..self.k {
                                    let delta = if m == class { 1.0 } else { 0.0 };
                                    raw_grad[4 + m] += dp * p_hat * (delta - probs[m]);
                                }
                            }
                        }
                        if raw_grad.iter().any(|&g| g != 0.0) {
                            scatter(&stencil, &raw_grad, ch, &mut grad);
                        }
                    }
                }
            }
            // Deviation term: crossings on frozen cell edges.
            if cache.dev_cell_count > 0 && w.lambda_dev != 0.0 {
                dev_backward(
                    &cache.nodes,
                    &level.dev_cells,
                    &self.lattice,
                    w.lambda_dev / cache.dev_cell_count as f64,
                    &mut node_grad,
                );
            }
            // Vertex gradients chain to the two lattice nodes of each edge.
            for (vid, g) in vertex_grad.iter().enumerate() {
                if *g == DVec3::ZERO {
                    continue;
                }
                let (na, nb) = level.vertex_edges[vid];
                let (t, interior) = cache.vertex_ts[vid];
                if !interior {
                    continue;
                }
                let pa = node_world(&self.lattice, na);
                let pb = node_world(&self.lattice, nb);
                let dir = pb - pa;
                let va = cache.nodes[na as usize].eq;
                let vb = cache.nodes[nb as usize].eq;
                let denom = va - vb;
                if denom.abs() < 1e-12 {
                    continue;
                }
                let g_dot = g.dot(dir);
                let _ = t;
                node_grad[na as usize] += g_dot * (-vb / (denom * denom));
                node_grad[nb as usize] += g_dot * (va / (denom * denom));
            }
            // Node gradients flow into grid channels through the max branch.
            for (nid, &ng) in node_grad.iter().enumerate() {
                if ng == 0.0 {
                    continue;
                }
                let node = &cache.nodes[nid];
                let stencil = &self.node_stencils[nid];
                let mut raw_grad = [0.0f64; MAX_CHANNELS];
                if node.geom_branch {
                    raw_grad[0] = ng;
                } else {
                    // margin = p_out − p_in (p_out = −1 constant when absent).
                    let mut dp = [0.0f64; MAX_SEMANTICS];
                    if node.arg_out != u8::MAX {
                        dp[node.arg_out as usize] += ng;
                    }
                    dp[node.arg_in as usize] -= ng;
                    let mut dot = 0.0;
                    for m in 0..self.k {
                        dot += dp[m] * node.probs[m];
                    }
                    for m in 0..self.k {
                        raw_grad[4 + m] = node.probs[m] * (dp[m] - dot);
                    }
                }
                scatter(stencil, &raw_grad, ch, &mut grad);
            }
        }
        Ok(grad)
    }
}

fn scatter(stencil: &Stencil, raw_grad: &[f64; MAX_CHANNELS], ch: usize, grad: &mut [f64]) {
    for corner in 0..8 {
        let w = stencil.weights[corner];
        if w == 0.0 {
            continue;
        }
        let base = stencil.nodes[corner] as usize * ch;
        for (c, rg) in raw_grad.iter().enumerate().take(ch) {
            if *rg != 0.0 {
                grad[base + c] += w * rg;
            }
        }
    }
}

fn eval_nodes(
    grid: &DenseGrid,
    stencils: &[Stencil],
    kept: SemanticSet,
    k: usize,
) -> Vec<NodeEval> {
    stencils
        .iter()
        .map(|stencil| {
            let raw = grid.raw_at(stencil);
            let f = raw[0];
            let probs_v = crate::semantic::Probs::from_logits(&raw[4..4 + k]);
            let mut probs = [0.0f64; MAX_SEMANTICS];
            probs[..k].copy_from_slice(probs_v.as_slice());
            let mut arg_in = 0u8;
            let mut in_max = f64::NEG_INFINITY;
            let mut arg_out = u8::MAX;
            let mut out_max = -1.0f64;
            for m in 0..k {
                if kept.contains_index(m) {
                    if probs[m] > in_max {
                        in_max = probs[m];
                        arg_in = m as u8;
                    }
                } else if probs[m] > out_max {
                    out_max = probs[m];
                    arg_out = m as u8;
                }
            }
            let margin = out_max - in_max;
            let geom_branch = f >= margin;
            NodeEval {
                eq: f.max(margin),
                probs,
                geom_branch,
                arg_out,
                arg_in,
            }
        })
        .collect()
}

fn vertex_positions(
    nodes: &[NodeEval],
    vertex_edges: &[(u32, u32)],
    lattice: &ExtractionGrid,
) -> (Vec<DVec3>, Vec<(f64, bool)>) {
    let mut positions = Vec::with_capacity(vertex_edges.len());
    let mut ts = Vec::with_capacity(vertex_edges.len());
    for &(na, nb) in vertex_edges {
        let va = nodes[na as usize].eq;
        let vb = nodes[nb as usize].eq;
        let denom = va - vb;
        let (t, interior) = if denom.abs() < 1e-12 {
            (0.5, false)
        } else {
            let raw = va / denom;
            let t = raw.clamp(0.0, 1.0);
            (t, raw > 0.0 && raw < 1.0)
        };
        let pa = node_world(lattice, na);
        let pb = node_world(lattice, nb);
        positions.push(pa + (pb - pa) * t);
        ts.push((t, interior));
    }
    (positions, ts)
}

fn node_world(lattice: &ExtractionGrid, node: u32) -> DVec3 {
    let nx = lattice.dims[0];
    let ny = lattice.dims[1];
    let n = node as usize;
    lattice.node_position(n % nx, (n / nx) % ny, n / (nx * ny))
}

fn hit_world(cam: &OrthoCamera, pix: DVec2, depth: f64) -> DVec3 {
    let ray = cam.sub_pixel_ray(pix.x, pix.y);
    // Ray origins sit on the plane through the world origin, so the view
    // depth equals the ray parameter.
    ray.at(depth)
}

#[allow(clippy::too_many_arguments)]
fn accumulate_pooled(
    pooled: &mut Pooled,
    grid: &DenseGrid,
    cam: &OrthoCamera,
    detail: &RasterDetail,
    target: &RenderTarget,
    aux: &TargetAux,
    weights: &LossWeights,
) {
    let res = cam.resolution as usize;
    for y in 0..res {
        for x in 0..res {
            let idx = y * res + x;
            let da = detail.target.alpha[idx] - target.alpha[idx];
            pooled.mask_sq += da * da;
            pooled.mask_denom += 1.0;
            let Some(hit) = detail.hits[idx] else { continue };
            if !aux.foreground[idx] {
                continue;
            }
            let world = hit_world(cam, DVec2::new(x as f64 + 0.5, y as f64 + 0.5), hit.depth);
            let sample = {
                let stencil = grid.stencil(world);
                let raw = grid.raw_at(&stencil);
                grid.activate(&raw)
            };
            for chn in 0..3 {
                let d = sample.color[chn] - target.rgb[idx][chn];
                pooled.rgb_sq += d * d;
            }
            pooled.rgb_denom += 3.0;
            let class = aux.class[idx] as usize;
            let p_hat = sample.probs[class].clamp(LOG_EPS, 1.0);
            pooled.ce += -weights.class_weight(class) * p_hat.ln();
            pooled.ce_denom += 1.0;
            let n = detail.target.normal[idx];
            let gt_n = target.normal[idx];
            pooled.normal_sum += 1.0 - (n[0] * gt_n[0] + n[1] * gt_n[1] + n[2] * gt_n[2]);
            pooled.depth_sum += (hit.depth - target.depth[idx]).abs();
            pooled.geo_denom += 1.0;
        }
    }
}

fn freeze_dev_cells(values: &[f64], lattice: &ExtractionGrid) -> Vec<Vec<(u32, u32)>> {
    use crate::extract::tables::{CORNER_OFFSETS, EDGE_CORNERS};
    let [nx, ny, nz] = lattice.dims;
    let mut cells = Vec::new();
    for kz in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut nodes = [0u32; 8];
                for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                    nodes[c] = lattice.node_index(i + off[0], j + off[1], kz + off[2]) as u32;
                }
                let mut edges = Vec::new();
                for [a, b] in EDGE_CORNERS {
                    let (na, nb) = (nodes[a], nodes[b]);
                    if (values[na as usize] < 0.0) != (values[nb as usize] < 0.0) {
                        edges.push((na, nb));
                    }
                }
                if !edges.is_empty() {
                    cells.push(edges);
                }
            }
        }
    }
    cells
}

/// Crossing positions on a frozen edge list with the parameter clamped.
fn cell_crossings(
    nodes: &[NodeEval],
    edges: &[(u32, u32)],
    lattice: &ExtractionGrid,
) -> Vec<(DVec3, f64, bool)> {
    edges
        .iter()
        .map(|&(na, nb)| {
            let va = nodes[na as usize].eq;
            let vb = nodes[nb as usize].eq;
            let denom = va - vb;
            let (t, interior) = if denom.abs() < 1e-12 {
                (0.5, false)
            } else {
                let raw = va / denom;
                (raw.clamp(0.0, 1.0), raw > 0.0 && raw < 1.0)
            };
            let pa = node_world(lattice, na);
            let pb = node_world(lattice, nb);
            (pa + (pb - pa) * t, t, interior)
        })
        .collect()
}

fn dev_value(
    nodes: &[NodeEval],
    cells: &[Vec<(u32, u32)>],
    lattice: &ExtractionGrid,
) -> (f64, usize) {
    let mut total = 0.0;
    for edges in cells {
        let crossings = cell_crossings(nodes, edges, lattice);
        let m = crossings.len();
        let centroid =
            crossings.iter().map(|c| c.0).sum::<DVec3>() / m as f64;
        let distances: Vec<f64> = crossings.iter().map(|c| (c.0 - centroid).length()).collect();
        let mean = distances.iter().sum::<f64>() / m as f64;
        total += distances.iter().map(|d| (d - mean).abs()).sum::<f64>() / m as f64;
    }
    (total, cells.len())
}

fn dev_backward(
    nodes: &[NodeEval],
    cells: &[Vec<(u32, u32)>],
    lattice: &ExtractionGrid,
    scale: f64,
    node_grad: &mut [f64],
) {
    for edges in cells {
        let crossings = cell_crossings(nodes, edges, lattice);
        let m = crossings.len();
        let m_f = m as f64;
        let centroid = crossings.iter().map(|c| c.0).sum::<DVec3>() / m_f;
        let distances: Vec<f64> = crossings.iter().map(|c| (c.0 - centroid).length()).collect();
        let mean = distances.iter().sum::<f64>() / m_f;
        let signs: Vec<f64> = distances.iter().map(|d| (d - mean).signum()).collect();
        let sign_mean = signs.iter().sum::<f64>() / m_f;
        // d MAD/dd_j, then through d_j = |centroid − u_j| with centroid a mean.
        let mut u_grads = vec![DVec3::ZERO; m];
        for (j, cross) in crossings.iter().enumerate() {
            let dmad_dd = scale * (signs[j] - sign_mean) / m_f;
            if dmad_dd == 0.0 || distances[j] < 1e-15 {
                continue;
            }
            let unit = (centroid - cross.0) / distances[j];
            // ∂d_j/∂u_e = unit·(1/m − δ_je)
            for (e, ug) in u_grads.iter_mut().enumerate() {
                let coeff = if e == j { 1.0 / m_f - 1.0 } else { 1.0 / m_f };
                *ug += dmad_dd * coeff * unit;
            }
        }
        for (e, &(na, nb)) in edges.iter().enumerate() {
            let (_, _, interior) = crossings[e];
            if !interior {
                continue;
            }
            let va = nodes[na as usize].eq;
            let vb = nodes[nb as usize].eq;
            let denom = va - vb;
            if denom.abs() < 1e-12 {
                continue;
            }
            let dir = node_world(lattice, nb) - node_world(lattice, na);
            let g_dot = u_grads[e].dot(dir);
            node_grad[na as usize] += g_dot * (-vb / (denom * denom));
            node_grad[nb as usize] += g_dot * (va / (denom * denom));
        }
    }
}

/// Value-only stage-C style loss for reporting and tests.
pub fn stage_c_loss_parts(
    grid: &DenseGrid,
    cameras: &[OrthoCamera],
    supervision: &[SupervisionLevel],
    config: &FitConfig,
) -> Result<f64> {
    let mut obj = StageCObjective::prepare(grid, cameras, supervision, config)?;
    obj.eval(grid)
}
