//! Semantic-equivalent SDF construction and per-layer surface extraction.
//!
//! The equivalent SDF combines the geometry SDF with a semantic margin so
//! that the zero level set bounds exactly the region owned by a chosen label
//! set. Three properties pin the construction down:
//!
//! 1. a positive original SDF stays positive (outside is outside);
//! 2. inside, the sign flips exactly where label dominance flips;
//! 3. on the surface, a non-dominant label is pushed outside.

pub mod deviation;
pub mod marching;
pub mod tables;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FieldMode, FieldSampler};
use crate::mesh::TriMesh;
use crate::semantic::{Probs, SemanticId, SemanticSet};

pub use deviation::{deviation_loss, DualCell};
pub use marching::{marching_cubes, marching_cubes_with_edges, ExtractionGrid};

/// Single-semantic equivalent SDF: max(f, max_{r≠s} p_r − p_s).
pub fn equivalent_sdf_single(f: f64, probs: &Probs, s: SemanticId) -> Result<f64> {
    s.check(probs.k())?;
    let mut other_max = f64::NEG_INFINITY;
    for r in 0..probs.k() {
        if r != s.index() {
            other_max = other_max.max(probs[r]);
        }
    }
    if other_max == f64::NEG_INFINITY {
        // Single-label field: no competing semantics exist.
        other_max = -1.0;
    }
    Ok(f.max(other_max - probs.get(s)))
}

/// Set-valued equivalent SDF: max(f, max_{s∉P} p_s − max_{s∈P} p_s).
///
/// When P is the full label set the complement is empty; its maximum is
/// taken as −1 (the simplex lower bound), which keeps the output equal to
/// the original SDF everywhere.
pub fn equivalent_sdf_set(f: f64, probs: &Probs, kept: SemanticSet) -> Result<f64> {
    kept.check(probs.k())?;
    let kept_max = probs
        .max_over(kept)
        .expect("checked non-empty within 0..K");
    let mut excluded_max = -1.0f64;
    for r in 0..probs.k() {
        if !kept.contains_index(r) {
            excluded_max = excluded_max.max(probs[r]);
        }
    }
    Ok(f.max(excluded_max - kept_max))
}

/// Samples the field on the extraction lattice, applies the set-equivalent
/// SDF nodewise, and extracts the zero level set. The result is tagged with
/// the kept set.
pub fn extract_layer(
    field: &dyn FieldSampler,
    kept: SemanticSet,
    grid: &ExtractionGrid,
) -> Result<TriMesh> {
    let values = equivalent_node_values(field, kept, grid)?;
    let mut mesh = marching_cubes(&values, grid)?;
    mesh.semantics = kept;
    Ok(mesh)
}

/// Equivalent-SDF values at every lattice node, parallel over z-slabs.
pub fn equivalent_node_values(
    field: &dyn FieldSampler,
    kept: SemanticSet,
    grid: &ExtractionGrid,
) -> Result<Vec<f64>> {
    if field.mode() != FieldMode::Sdf {
        return Err(Error::domain(
            "layer extraction needs an SDF-mode field; refit or convert the grid first",
        ));
    }
    kept.check(field.semantic_count())?;
    let [nx, ny, _nz] = grid.dims;
    let mut values = vec![0.0f64; grid.node_count()];
    values
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = grid.node_position(i, j, k);
                    let s = field.sample(p);
                    slab[j * nx + i] = equivalent_sdf_set(s.geom, &s.probs, kept)
                        .expect("kept set validated against field");
                }
            }
        });
    Ok(values)
}

/// Dual cells of the extraction lattice: one per cell with crossings, dual
/// vertex at the centroid of that cell's edge-crossing points.
pub fn dual_cells_from_grid(values: &[f64], grid: &ExtractionGrid) -> Result<Vec<DualCell>> {
    use tables::{CORNER_OFFSETS, EDGE_CORNERS};
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
    let mut cells = Vec::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut vals = [0.0f64; 8];
                let mut pos = [glam::DVec3::ZERO; 8];
                for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                    vals[c] = values[grid.node_index(i + off[0], j + off[1], k + off[2])];
                    pos[c] = grid.node_position(i + off[0], j + off[1], k + off[2]);
                }
                let mut crossings = Vec::new();
                for [a, b] in EDGE_CORNERS {
                    if (vals[a] < 0.0) != (vals[b] < 0.0) {
                        let t = vals[a] / (vals[a] - vals[b]);
                        crossings.push(pos[a] + (pos[b] - pos[a]) * t);
                    }
                }
                if !crossings.is_empty() {
                    cells.push(DualCell::centered(crossings)?);
                }
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::OrthoCamera;
    use crate::render::{rasterize_layers, RasterOptions};
    use crate::scene::make_test_character;
    use crate::semantic::{SEMANTIC_BODY, SEMANTIC_CLOTH, SEMANTIC_HAIR};
    use glam::DVec3;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probs3(a: f64, b: f64, c: f64) -> Probs {
        Probs::new(&[a, b, c]).unwrap()
    }

    #[test]
    fn single_hand_values() {
        // Positive SDF is a hard floor.
        let p = Probs::one_hot(SEMANTIC_BODY, 3);
        assert_eq!(equivalent_sdf_single(0.5, &p, SEMANTIC_BODY).unwrap(), 0.5);
        // Inside with weak dominance: margin takes over.
        let p = probs3(0.6, 0.4, 0.0);
        let v = equivalent_sdf_single(-0.3, &p, SEMANTIC_BODY).unwrap();
        assert!((v - (-0.2)).abs() < 1e-15);
        // On the surface with a non-dominant label: pushed outside.
        let p = probs3(0.3, 0.7, 0.0);
        let v = equivalent_sdf_single(0.0, &p, SEMANTIC_BODY).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        assert!(v > 0.0);
    }

    #[test]
    fn single_rejects_out_of_range_label() {
        let p = Probs::uniform(3);
        assert!(equivalent_sdf_single(0.0, &p, SemanticId(3)).is_err());
    }

    #[test]
    fn set_hand_values() {
        let p = probs3(0.5, 0.3, 0.2);
        let body_cloth = SemanticSet::from_ids(&[SEMANTIC_BODY, SEMANTIC_CLOTH]);
        let v = equivalent_sdf_set(-0.2, &p, body_cloth).unwrap();
        assert!((v - (-0.2)).abs() < 1e-15);
        let v = equivalent_sdf_set(-0.2, &p, SemanticSet::single(SEMANTIC_HAIR)).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn set_rejects_empty() {
        let p = Probs::uniform(3);
        assert!(equivalent_sdf_set(0.0, &p, SemanticSet::EMPTY).is_err());
    }

    #[test]
    fn full_set_reduces_to_plain_sdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let logits: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 8.0 - 4.0).collect();
            let p = Probs::from_logits(&logits);
            let f = rng.gen::<f64>() * 2.0 - 1.0;
            let v = equivalent_sdf_set(f, &p, SemanticSet::all(3)).unwrap();
            assert_eq!(v, f);
        }
    }

    #[test]
    fn singleton_set_is_bitwise_equal_to_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10000 {
            let k = rng.gen_range(2..=4usize);
            let logits: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
            let p = Probs::from_logits(&logits);
            let f = rng.gen::<f64>() * 2.0 - 1.0;
            let s = SemanticId(rng.gen_range(0..k) as u8);
            let a = equivalent_sdf_single(f, &p, s).unwrap();
            let b = equivalent_sdf_set(f, &p, SemanticSet::single(s)).unwrap();
            assert!(a == b, "{a} != {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        // Principle 1: outside stays outside, exactly.
        #[test]
        fn principle_positive_stays_positive(
            f in 1e-12f64..1.0,
            l0 in -6.0f64..6.0, l1 in -6.0f64..6.0, l2 in -6.0f64..6.0,
            s in 0u8..3,
        ) {
            let p = Probs::from_logits(&[l0, l1, l2]);
            let v = equivalent_sdf_single(f, &p, SemanticId(s)).unwrap();
            prop_assert!(v > 0.0);
            prop_assert!(v >= f);
        }

        // Principle 2: inside, the sign follows strict dominance.
        #[test]
        fn principle_sign_follows_dominance(
            f in -1.0f64..-0.5,
            l0 in -6.0f64..6.0, l1 in -6.0f64..6.0, l2 in -6.0f64..6.0,
            s in 0u8..3,
        ) {
            let p = Probs::from_logits(&[l0, l1, l2]);
            let s = SemanticId(s);
            let margin = (0..3).filter(|&r| r != s.index()).map(|r| p[r]).fold(f64::NEG_INFINITY, f64::max) - p.get(s);
            // f deep inside so the margin decides the sign.
            let v = equivalent_sdf_single(f, &p, s).unwrap();
            if margin > 0.0 {
                prop_assert!(v > 0.0);
            } else {
                prop_assert!(v <= 0.0);
                prop_assert_eq!(v, f.max(margin));
            }
        }

        // Principle 3: on the surface a non-dominant label is strictly outside.
        #[test]
        fn principle_surface_non_dominant_positive(
            l0 in -6.0f64..6.0, l1 in -6.0f64..6.0, l2 in -6.0f64..6.0,
        ) {
            let p = Probs::from_logits(&[l0, l1, l2]);
            let top = p.argmax();
            for s in 0..3u8 {
                let s = SemanticId(s);
                let v = equivalent_sdf_single(0.0, &p, s).unwrap();
                if s != top && p.get(s) < p.get(top) {
                    prop_assert!(v > 0.0);
                } else {
                    prop_assert!(v >= 0.0);
                }
            }
        }

        // Nesting: larger kept sets carve larger regions.
        #[test]
        fn nesting_monotone(
            f in -1.0f64..1.0,
            l0 in -6.0f64..6.0, l1 in -6.0f64..6.0, l2 in -6.0f64..6.0,
            bits_p in 1u8..8, extra in 0u8..8,
        ) {
            let p = Probs::from_logits(&[l0, l1, l2]);
            let small = SemanticSet::from_bits(bits_p & 0b111);
            let big = SemanticSet::from_bits((bits_p | extra) & 0b111);
            prop_assume!(!small.is_empty());
            let vs = equivalent_sdf_set(f, &p, small).unwrap();
            let vb = equivalent_sdf_set(f, &p, big).unwrap();
            prop_assert!(vs >= vb, "{vs} < {vb}");
        }
    }

    fn sphere_values(grid: &ExtractionGrid, radius: f64) -> Vec<f64> {
        let [nx, ny, nz] = grid.dims;
        let mut values = vec![0.0; grid.node_count()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values[grid.node_index(i, j, k)] = grid.node_position(i, j, k).length() - radius;
                }
            }
        }
        values
    }

    #[test]
    fn all_positive_grid_gives_empty_mesh() {
        let grid = ExtractionGrid::new([8, 8, 8], [1.0, 1.0, 1.0]).unwrap();
        let values = vec![1.0; grid.node_count()];
        let mesh = marching_cubes(&values, &grid).unwrap();
        assert!(mesh.is_empty());
        assert!(mesh.faces.is_empty());
    }

    #[test]
    fn sphere_vertices_lie_on_the_surface() {
        let grid = ExtractionGrid::new([64, 64, 64], [1.1, 1.1, 1.1]).unwrap();
        let values = sphere_values(&grid, 0.5);
        let mesh = marching_cubes(&values, &grid).unwrap();
        assert!(!mesh.is_empty());
        assert!(mesh.is_watertight());
        assert!(mesh.signed_volume() > 0.0);
        let diag = grid.cell_diagonal();
        for v in &mesh.vertices {
            assert!(
                (v.length() - 0.5).abs() < diag,
                "vertex {v:?} off the sphere by {}",
                (v.length() - 0.5).abs()
            );
        }
        // Volume within a few percent of the analytic ball.
        let ball = 4.0 / 3.0 * std::f64::consts::PI * 0.5f64.powi(3);
        assert!((mesh.signed_volume() - ball).abs() / ball < 0.05);
    }

    #[test]
    fn single_negative_node_gives_small_closed_surface() {
        let grid = ExtractionGrid::new([9, 9, 9], [1.0, 1.0, 1.0]).unwrap();
        let mut values = vec![1.0; grid.node_count()];
        values[grid.node_index(4, 4, 4)] = -1.0;
        let mesh = marching_cubes(&values, &grid).unwrap();
        // One interior node flips eight cells, each contributing one triangle.
        assert_eq!(mesh.faces.len(), 8);
        assert!(mesh.is_watertight());
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn watertight_for_random_primitive_unions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let grid = ExtractionGrid::new([24, 24, 24], [1.0, 1.0, 1.0]).unwrap();
            let centers: Vec<DVec3> = (0..4)
                .map(|_| {
                    DVec3::new(
                        rng.gen::<f64>() * 0.5 - 0.25,
                        rng.gen::<f64>() * 0.5 - 0.25,
                        rng.gen::<f64>() * 0.5 - 0.25,
                    )
                })
                .collect();
            let radii: Vec<f64> = (0..4).map(|_| 0.08 + rng.gen::<f64>() * 0.15).collect();
            let [nx, ny, nz] = grid.dims;
            let mut values = vec![0.0; grid.node_count()];
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = grid.node_position(i, j, k);
                        values[grid.node_index(i, j, k)] = centers
                            .iter()
                            .zip(&radii)
                            .map(|(c, r)| (p - *c).length() - r)
                            .fold(f64::INFINITY, f64::min);
                    }
                }
            }
            let mesh = marching_cubes(&values, &grid).unwrap();
            assert!(mesh.is_watertight(), "union mesh not watertight");
            assert!(mesh.signed_volume() > 0.0);
        }
    }

    #[test]
    fn extract_layers_of_the_test_character() {
        let scene = make_test_character(42, "basic").unwrap();
        let field = scene.field(FieldMode::Sdf);
        let grid = ExtractionGrid::new([72, 72, 108], [0.7, 0.7, 1.05]).unwrap();

        // Full set: closed surface whose silhouette matches the analytic one.
        let full = extract_layer(&field, SemanticSet::all(3), &grid).unwrap();
        assert!(full.is_watertight());
        let cam = OrthoCamera::new(0.0, 0.0, 1.2, 128);
        let raster = rasterize_layers(&[&full], &cam, &RasterOptions::default()).unwrap();
        let coverage = raster.raster_coverage();
        let (mut inter, mut union) = (0usize, 0usize);
        for y in 0..128 {
            for x in 0..128 {
                let ray = cam.pixel_ray(x, y);
                // Exact silhouette oracle: does the ray meet the solid?
                let hit = (0..400).any(|i| {
                    let t = -0.55 + 1.1 * (i as f64 + 0.5) / 400.0;
                    scene.sample(ray.at(t), FieldMode::Sdf).unwrap().geom <= 0.0
                });
                let a = coverage[raster.index(x as usize, y as usize)];
                inter += (a && hit) as usize;
                union += (a || hit) as usize;
            }
        }
        let iou = inter as f64 / union as f64;
        assert!(iou >= 0.95, "full silhouette IoU {iou}");

        // Body only: every vertex close to the analytic body surface.
        let body = extract_layer(&field, SemanticSet::single(SEMANTIC_BODY), &grid).unwrap();
        assert!(!body.is_empty());
        let body_prims: Vec<_> = scene
            .primitives
            .iter()
            .filter(|p| p.semantic == SEMANTIC_BODY.0)
            .collect();
        let tol = 2.0 * grid.cell_diagonal();
        for v in &body.vertices {
            let d = body_prims
                .iter()
                .map(|p| p.sdf(*v))
                .fold(f64::INFINITY, f64::min);
            assert!(d.abs() <= tol, "body vertex {v:?} at distance {d}");
        }
    }

    #[test]
    fn absent_semantic_extracts_empty() {
        // A body-only scene owns no hair anywhere.
        let scene = crate::scene::AnalyticScene {
            primitives: vec![crate::scene::Primitive {
                kind: crate::scene::PrimitiveKind::Sphere { radius: 0.3 },
                center: [0.0; 3],
                rotation: [0.0, 0.0, 0.0, 1.0],
                inflate: 0.0,
                shell: None,
                clip_z_min: None,
                clip_z_max: None,
                semantic: SEMANTIC_BODY.0,
                color: [0.5; 3],
            }],
            beta: crate::scene::DEFAULT_BETA,
            semantic_count: 3,
        };
        let grid = ExtractionGrid::new([32, 32, 32], [1.0, 1.0, 1.0]).unwrap();
        let mesh = extract_layer(
            &scene.field(FieldMode::Sdf),
            SemanticSet::single(SEMANTIC_HAIR),
            &grid,
        )
        .unwrap();
        assert!(mesh.is_empty());
    }

    #[test]
    fn dual_cells_of_flat_interface_are_centered() {
        // A planar zero crossing slices every cell identically: distances from
        // the centroid to the four crossings are equal, deviation is zero.
        let grid = ExtractionGrid::new([6, 6, 6], [1.0, 1.0, 1.0]).unwrap();
        let [nx, ny, nz] = grid.dims;
        let mut values = vec![0.0; grid.node_count()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values[grid.node_index(i, j, k)] = grid.node_position(i, j, k).z + 0.083;
                }
            }
        }
        let cells = dual_cells_from_grid(&values, &grid).unwrap();
        assert!(!cells.is_empty());
        let dev = deviation_loss(&cells).unwrap();
        assert!(dev < 1e-12, "flat interface deviation {dev}");
    }
}
