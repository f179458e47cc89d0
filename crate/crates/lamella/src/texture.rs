//! Multi-view color back-projection onto meshes and graph diffusion for
//! vertices no view can see.

use std::collections::HashMap;

use glam::DVec3;

use crate::camera::OrthoCamera;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::render::RenderTarget;

/// Vertices within this view-depth slack of the stack depth buffer count as
/// visible; occlusion by other layers is part of the buffer.
pub const VISIBILITY_EPS: f64 = 1e-3;

/// Per-azimuth projection weights. Views at unknown azimuths weigh zero and
/// participate only in visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewWeightTable {
    entries: Vec<(f64, f64)>,
}

impl Default for ViewWeightTable {
    fn default() -> Self {
        ViewWeightTable {
            entries: vec![
                (0.0, 2.0),
                (45.0, 0.5),
                (90.0, 0.0),
                (180.0, 1.0),
                (270.0, 0.0),
                (315.0, 0.5),
            ],
        }
    }
}

impl ViewWeightTable {
    pub fn weight(&self, azimuth_deg: f64) -> f64 {
        let az = azimuth_deg.rem_euclid(360.0);
        for &(a, w) in &self.entries {
            if (az - a).abs() < 1e-6 {
                return w;
            }
        }
        0.0
    }
}

/// One projection source: the color image plus the layer-stack depth buffer
/// used for occlusion tests.
pub struct ProjectionView<'a> {
    pub camera: &'a OrthoCamera,
    /// Color source (premultiplied RGB + alpha).
    pub colors: &'a RenderTarget,
    /// Rasterized view depth of the full layer stack.
    pub stack_depth: &'a [f64],
    /// Hard pixel coverage of the full layer stack.
    pub stack_covered: &'a [bool],
}

/// Normal- and view-weighted average used per vertex:
/// C(v) = Σ w_i (n·d_i)² c_i / Σ w_i (n·d_i)². Returns `None` when the total
/// weight vanishes.
pub fn weighted_color(samples: &[(f64, f64, [f64; 3])]) -> Option<[f64; 3]> {
    let mut total = 0.0;
    let mut acc = [0.0f64; 3];
    for &(w, ndot, color) in samples {
        let wi = w * ndot * ndot;
        total += wi;
        for c in 0..3 {
            acc[c] += wi * color[c];
        }
    }
    if total <= 0.0 {
        return None;
    }
    Some([acc[0] / total, acc[1] / total, acc[2] / total])
}

/// Colors every vertex visible in at least one view; invisible vertices are
/// left unset (reported through the returned mask).
pub fn backproject_colors(
    mesh: &TriMesh,
    views: &[ProjectionView],
    table: &ViewWeightTable,
) -> Result<(TriMesh, Vec<bool>)> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let normals = mesh.vertex_normals();
    let mut colors = vec![[0.0f64; 3]; mesh.vertices.len()];
    let mut colored = vec![false; mesh.vertices.len()];
    let mut samples: Vec<(f64, f64, [f64; 3])> = Vec::with_capacity(views.len());
    for (vi, (&v, n)) in mesh.vertices.iter().zip(&normals).enumerate() {
        samples.clear();
        for view in views {
            let res = view.camera.resolution as usize;
            let (px, py, depth) = view.camera.project(v);
            let (xi, yi) = (px.floor() as i64, py.floor() as i64);
            if xi < 0 || yi < 0 || xi >= res as i64 || yi >= res as i64 {
                continue;
            }
            let idx = yi as usize * res + xi as usize;
            if !view.stack_covered[idx] || depth > view.stack_depth[idx] + VISIBILITY_EPS {
                continue;
            }
            let d = view.camera.basis().forward;
            let ndot = n.dot(d);
            let w = table.weight(view.camera.azimuth_deg);
            if let Some(c) = sample_bilinear(view.colors, px, py) {
                samples.push((w, ndot, c));
            }
        }
        if let Some(c) = weighted_color(&samples) {
            colors[vi] = c;
            colored[vi] = true;
        }
    }
    let mut out = mesh.clone();
    out.vertex_colors = Some(colors);
    Ok((out, colored))
}

/// Bilinear sample of an unpremultiplied color; `None` in fully transparent
/// regions.
fn sample_bilinear(target: &RenderTarget, px: f64, py: f64) -> Option<[f64; 3]> {
    let res_x = target.width as i64;
    let res_y = target.height as i64;
    let fx = (px - 0.5).clamp(0.0, (res_x - 1) as f64);
    let fy = (py - 0.5).clamp(0.0, (res_y - 1) as f64);
    let x0 = fx.floor() as i64;
    let y0 = fy.floor() as i64;
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let mut rgb = [0.0f64; 3];
    let mut alpha = 0.0f64;
    for (dx, dy, w) in [
        (0, 0, (1.0 - tx) * (1.0 - ty)),
        (1, 0, tx * (1.0 - ty)),
        (0, 1, (1.0 - tx) * ty),
        (1, 1, tx * ty),
    ] {
        let x = (x0 + dx).min(res_x - 1);
        let y = (y0 + dy).min(res_y - 1);
        let idx = (y * res_x + x) as usize;
        for c in 0..3 {
            rgb[c] += w * target.rgb[idx][c];
        }
        alpha += w * target.alpha[idx];
    }
    if alpha < 1e-6 {
        return None;
    }
    Some([rgb[0] / alpha, rgb[1] / alpha, rgb[2] / alpha])
}

/// Outcome of the diffusion fill.
#[derive(Debug, Clone)]
pub struct FillOutcome {
    pub mesh: TriMesh,
    /// Vertices in components without any colored seed; they received the
    /// global mean color.
    pub unreachable: usize,
}

/// Spreads colors over the vertex graph: each round, every uncolored vertex
/// with colored neighbors takes their mean; rounds are synchronous so the
/// result is order-independent. Seeded colors never change. Components with
/// no seed fall back to the global mean color.
pub fn fill_invisible(mesh: &TriMesh, colored: &[bool]) -> Result<FillOutcome> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let colors = mesh
        .vertex_colors
        .as_ref()
        .ok_or_else(|| Error::domain("mesh has no colors to propagate"))?;
    if colored.len() != mesh.vertices.len() {
        return Err(Error::shape(format!(
            "{} flags for {} vertices",
            colored.len(),
            mesh.vertices.len()
        )));
    }
    if !colored.iter().any(|&c| c) {
        return Err(Error::domain("no colored vertices to propagate from"));
    }
    let mut adjacency: HashMap<u32, Vec<u32>> = HashMap::new();
    for f in &mesh.faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
    }
    for list in adjacency.values_mut() {
        list.sort_unstable();
        list.dedup();
    }

    let mut colors = colors.clone();
    let mut done: Vec<bool> = colored.to_vec();
    // Each round colors the uncolored frontier; |V| rounds always suffice on
    // a connected mesh.
    for _ in 0..mesh.vertices.len() {
        let mut next: Vec<(usize, [f64; 3])> = Vec::new();
        for vi in 0..mesh.vertices.len() {
            if done[vi] {
                continue;
            }
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for &nb in adjacency.get(&(vi as u32)).into_iter().flatten() {
                if done[nb as usize] {
                    for c in 0..3 {
                        acc[c] += colors[nb as usize][c];
                    }
                    n += 1.0;
                }
            }
            if n > 0.0 {
                next.push((vi, [acc[0] / n, acc[1] / n, acc[2] / n]));
            }
        }
        if next.is_empty() {
            break;
        }
        for (vi, c) in next {
            colors[vi] = c;
            done[vi] = true;
        }
    }
    // Isolated components never reached a seed: give them the global mean.
    let mut unreachable = 0;
    if done.iter().any(|&d| !d) {
        let mut mean = [0.0f64; 3];
        let mut n = 0.0;
        for (vi, &d) in done.iter().enumerate() {
            if d {
                for c in 0..3 {
                    mean[c] += colors[vi][c];
                }
                n += 1.0;
            }
        }
        for c in &mut mean {
            *c /= n;
        }
        for (vi, d) in done.iter().enumerate() {
            if !d {
                colors[vi] = mean;
                unreachable += 1;
            }
        }
    }
    let mut out = mesh.clone();
    out.vertex_colors = Some(colors);
    Ok(FillOutcome {
        mesh: out,
        unreachable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::SemanticSet;

    #[test]
    fn weight_table_matches_the_capture_rig() {
        let t = ViewWeightTable::default();
        assert_eq!(t.weight(0.0), 2.0);
        assert_eq!(t.weight(45.0), 0.5);
        assert_eq!(t.weight(90.0), 0.0);
        assert_eq!(t.weight(180.0), 1.0);
        assert_eq!(t.weight(-90.0), 0.0); // 270°
        assert_eq!(t.weight(-45.0), 0.5); // 315°
        assert_eq!(t.weight(135.0), 0.0); // unknown azimuth
    }

    #[test]
    fn weighted_average_hand_value() {
        // Front view w=2.0 with n·d=1 on white; 45° view w=0.5 with n·d=√2/2
        // on black.
        let c = weighted_color(&[
            (2.0, 1.0, [1.0; 3]),
            (0.5, std::f64::consts::FRAC_1_SQRT_2, [0.0; 3]),
        ])
        .unwrap();
        let expect = 2.0 / (2.0 + 0.5 * 0.5);
        assert!((c[0] - expect).abs() < 1e-12);
        assert!((expect - 0.888888888888889).abs() < 1e-12);
    }

    #[test]
    fn equal_colors_average_to_themselves() {
        let c = weighted_color(&[
            (2.0, 0.7, [0.25, 0.5, 0.75]),
            (0.5, -0.3, [0.25, 0.5, 0.75]),
            (1.0, 0.9, [0.25, 0.5, 0.75]),
        ])
        .unwrap();
        for (got, want) in c.iter().zip([0.25, 0.5, 0.75]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_visible_view_takes_its_sample() {
        let c = weighted_color(&[(2.0, 0.8, [0.1, 0.6, 0.9])]).unwrap();
        for (got, want) in c.iter().zip([0.1, 0.6, 0.9]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_total_weight_is_invisible() {
        assert!(weighted_color(&[(0.0, 1.0, [1.0; 3])]).is_none());
        assert!(weighted_color(&[]).is_none());
    }

    fn path_mesh(n: usize) -> TriMesh {
        // A triangle strip: vertices along x, a zig-zag row above.
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for i in 0..n {
            vertices.push(DVec3::new(i as f64, 0.0, 0.0));
            vertices.push(DVec3::new(i as f64 + 0.5, 1.0, 0.0));
        }
        for i in 0..n - 1 {
            let a = (2 * i) as u32;
            faces.push([a, a + 2, a + 1]);
            faces.push([a + 1, a + 2, a + 3]);
        }
        let mut m = TriMesh::new(vertices, faces);
        m.semantics = SemanticSet::EMPTY;
        m
    }

    #[test]
    fn fully_colored_input_is_unchanged() {
        let mut mesh = path_mesh(4);
        mesh.vertex_colors = Some(vec![[0.3, 0.4, 0.5]; mesh.vertices.len()]);
        let colored = vec![true; mesh.vertices.len()];
        let out = fill_invisible(&mesh, &colored).unwrap();
        assert_eq!(out.mesh, mesh);
        assert_eq!(out.unreachable, 0);
    }

    #[test]
    fn mean_of_colored_neighbors() {
        // Square of two triangles; three colored corners r, g, b and one
        // uncolored vertex adjacent to all three.
        let mesh = {
            let mut m = TriMesh::new(
                vec![
                    DVec3::new(0.0, 0.0, 0.0),
                    DVec3::new(1.0, 0.0, 0.0),
                    DVec3::new(1.0, 1.0, 0.0),
                    DVec3::new(0.0, 1.0, 0.0),
                ],
                vec![[0, 1, 2], [0, 2, 3]],
            );
            m.vertex_colors = Some(vec![
                [0.0; 3], // uncolored
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ]);
            m
        };
        let colored = vec![false, true, true, true];
        let out = fill_invisible(&mesh, &colored).unwrap();
        let c = out.mesh.vertex_colors.unwrap()[0];
        for ch in c {
            assert!((ch - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_floods_from_single_seed() {
        let mesh = {
            let mut m = path_mesh(10);
            m.vertex_colors = Some(vec![[0.0; 3]; m.vertices.len()]);
            m.vertex_colors.as_mut().unwrap()[0] = [0.9, 0.1, 0.4];
            m
        };
        let mut colored = vec![false; mesh.vertices.len()];
        colored[0] = true;
        let out = fill_invisible(&mesh, &colored).unwrap();
        assert_eq!(out.unreachable, 0);
        for c in out.mesh.vertex_colors.unwrap() {
            assert_eq!(c, [0.9, 0.1, 0.4]);
        }
    }

    #[test]
    fn no_seed_is_an_error_and_island_gets_mean() {
        let mesh = {
            let mut m = path_mesh(3);
            m.vertex_colors = Some(vec![[0.0; 3]; m.vertices.len()]);
            m
        };
        let colored = vec![false; mesh.vertices.len()];
        assert!(fill_invisible(&mesh, &colored).is_err());

        // Two disjoint strips; only one seeded.
        let mut island = TriMesh::merged(&[&path_mesh(3), &path_mesh(3)]);
        island.vertex_colors = Some(vec![[0.0; 3]; island.vertices.len()]);
        island.vertex_colors.as_mut().unwrap()[0] = [0.5, 0.5, 0.0];
        let mut colored = vec![false; island.vertices.len()];
        colored[0] = true;
        let out = fill_invisible(&island, &colored).unwrap();
        assert_eq!(out.unreachable, 6);
        let colors = out.mesh.vertex_colors.unwrap();
        assert_eq!(colors[6], [0.5, 0.5, 0.0]);
    }

    #[test]
    fn seeds_are_preserved_bitwise() {
        let mesh = {
            let mut m = path_mesh(6);
            m.vertex_colors = Some(vec![[0.0; 3]; m.vertices.len()]);
            m.vertex_colors.as_mut().unwrap()[3] = [0.123456789, 0.987654321, 0.5];
            m
        };
        let mut colored = vec![false; mesh.vertices.len()];
        colored[3] = true;
        let out = fill_invisible(&mesh, &colored).unwrap();
        assert_eq!(
            out.mesh.vertex_colors.unwrap()[3],
            [0.123456789, 0.987654321, 0.5]
        );
    }
}
