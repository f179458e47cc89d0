//! Procedural layered characters with exact signed distance, color, and
//! semantic labels at any point. These scenes are the ground-truth oracle the
//! rest of the pipeline is fitted to and evaluated against.

use glam::{DQuat, DVec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldMode, FieldSample, FieldSampler};
use crate::semantic::{Probs, SemanticId, SEMANTIC_BODY, SEMANTIC_CLOTH, SEMANTIC_HAIR};

/// Default width of the logistic SDF→density conversion, in scene units.
/// Sharp but resolvable on a 64³ grid over the unit cube.
pub const DEFAULT_BETA: f64 = 0.005;

/// Primitive shape; sizes are scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveKind {
    Sphere { radius: f64 },
    /// Segment from `-half_height` to `+half_height` along local z, radius r.
    Capsule { half_height: f64, radius: f64 },
    Ellipsoid { semi_axes: [f64; 3] },
    RoundedBox { half_extents: [f64; 3], radius: f64 },
}

/// One solid (or hollow shell) primitive with a rigid pose, semantic label,
/// and flat color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Unit quaternion (x, y, z, w). Identity when omitted.
    #[serde(default = "identity_rotation")]
    pub rotation: [f64; 4],
    /// Uniform outward offset applied to the surface (grows the solid).
    #[serde(default)]
    pub inflate: f64,
    /// When set, the primitive is the hollow shell of half-thickness `h`
    /// around its (inflated) surface instead of a solid.
    #[serde(default)]
    pub shell: Option<f64>,
    /// Optional clip planes in the local frame: the solid is intersected
    /// with `z >= clip_z_min` and `z <= clip_z_max`. Turns closed shells
    /// into open tubes and caps.
    #[serde(default)]
    pub clip_z_min: Option<f64>,
    #[serde(default)]
    pub clip_z_max: Option<f64>,
    pub semantic: u8,
    pub color: [f64; 3],
}

fn identity_rotation() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl Primitive {
    pub fn validate(&self, k: usize) -> Result<()> {
        let positive = |v: f64| v > 0.0;
        let ok = match self.kind {
            PrimitiveKind::Sphere { radius } => positive(radius),
            PrimitiveKind::Capsule {
                half_height,
                radius,
            } => positive(half_height) && positive(radius),
            PrimitiveKind::Ellipsoid { semi_axes } => semi_axes.iter().all(|&a| positive(a)),
            PrimitiveKind::RoundedBox {
                half_extents,
                radius,
            } => half_extents.iter().all(|&a| positive(a)) && radius >= 0.0,
        };
        if !ok {
            return Err(Error::domain("primitive size components must be > 0"));
        }
        if let Some(h) = self.shell {
            if !(h > 0.0) {
                return Err(Error::domain("shell half-thickness must be > 0"));
            }
        }
        SemanticId(self.semantic).check(k)
    }

    /// Exact signed distance from `p` to this primitive.
    pub fn sdf(&self, p: DVec3) -> f64 {
        let rot = DQuat::from_xyzw(
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.rotation[3],
        );
        let local = rot.conjugate() * (p - DVec3::from_array(self.center));
        let base = match self.kind {
            PrimitiveKind::Sphere { radius } => local.length() - radius,
            PrimitiveKind::Capsule {
                half_height,
                radius,
            } => {
                let z = local.z.clamp(-half_height, half_height);
                (local - DVec3::new(0.0, 0.0, z)).length() - radius
            }
            PrimitiveKind::Ellipsoid { semi_axes } => ellipsoid_sdf(semi_axes, local),
            PrimitiveKind::RoundedBox {
                half_extents,
                radius,
            } => {
                let q = local.abs() - DVec3::from_array(half_extents);
                q.max(DVec3::ZERO).length() + q.max_element().min(0.0) - radius
            }
        };
        let inflated = base - self.inflate;
        let mut f = match self.shell {
            Some(h) => inflated.abs() - h,
            None => inflated,
        };
        // Half-space intersections via max: sign and the 1-Lipschitz bound
        // are preserved; distances outside are underestimated near the rim.
        if let Some(zmin) = self.clip_z_min {
            f = f.max(zmin - local.z);
        }
        if let Some(zmax) = self.clip_z_max {
            f = f.max(local.z - zmax);
        }
        f
    }

    pub fn semantic_id(&self) -> SemanticId {
        SemanticId(self.semantic)
    }
}

/// Exact signed distance to an axis-aligned ellipsoid at the origin.
///
/// Nearest-point solve via monotone bisection on the Lagrange parameter,
/// with zero components reduced dimensionally so queries on symmetry planes
/// and axes stay exact.
fn ellipsoid_sdf(semi_axes: [f64; 3], p: DVec3) -> f64 {
    let inside_measure: f64 = (0..3)
        .map(|i| (p[i] / semi_axes[i]) * (p[i] / semi_axes[i]))
        .sum();
    let y = [p.x.abs(), p.y.abs(), p.z.abs()];
    let dist = ellipsoid_nearest_distance(&semi_axes, &y);
    if inside_measure < 1.0 {
        -dist
    } else {
        dist
    }
}

fn ellipsoid_nearest_distance(e: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(e.len(), y.len());
    // Drop zero query components whose nearest point cannot leave the plane:
    // that is every component except possibly the one of the smallest axis.
    let n = e.len();
    if n == 1 {
        return (y[0] - e[0]).abs();
    }
    // Find smallest axis.
    let mut smallest = 0;
    for i in 1..n {
        if e[i] < e[smallest] {
            smallest = i;
        }
    }
    for i in 0..n {
        if y[i] == 0.0 && i != smallest {
            // Reduce: nearest point has zero coordinate here unless this is
            // the smallest axis (handled by the evolute case below).
            let er: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| e[j]).collect();
            let yr: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| y[j]).collect();
            return ellipsoid_nearest_distance(&er, &yr);
        }
    }
    if y[smallest] == 0.0 {
        // Query lies on the plane of the smallest axis; the nearest point may
        // leave that plane when the query is inside the evolute.
        let er: Vec<f64> = (0..n).filter(|&j| j != smallest).map(|j| e[j]).collect();
        let yr: Vec<f64> = (0..n).filter(|&j| j != smallest).map(|j| y[j]).collect();
        let e_min = e[smallest];
        // Candidate A: nearest point stays in the plane (distance to the
        // lower-dimensional ellipsoid boundary plus nothing off-plane).
        // Valid when that in-plane solve lands outside; inside the evolute
        // the true nearest point lifts off the plane: solve with the
        // off-plane coordinate x = e_min·sqrt(1 - Σ(x_r/e_r)²) at t = -e_min².
        let t = -e_min * e_min;
        let mut sum = 0.0;
        let mut feasible = true;
        let mut off_dist2 = 0.0;
        for j in 0..er.len() {
            let denom = t + er[j] * er[j];
            // denom > 0 because e_min is strictly smallest unless axes tie.
            if denom <= 0.0 {
                feasible = false;
                break;
            }
            let xj = er[j] * er[j] * yr[j] / denom;
            let frac = xj / er[j];
            sum += frac * frac;
            let d = xj - yr[j];
            off_dist2 += d * d;
        }
        if feasible && sum < 1.0 {
            let x_off = e_min * (1.0 - sum).sqrt();
            return (off_dist2 + x_off * x_off).sqrt();
        }
        return ellipsoid_nearest_distance(&er, &yr);
    }
    // All components positive: unique root of the monotone Lagrange function.
    let e_min = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let g = |t: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let r = e[i] * y[i] / (t + e[i] * e[i]);
            s += r * r;
        }
        s - 1.0
    };
    let ey_len = (0..n).map(|i| (e[i] * y[i]) * (e[i] * y[i])).sum::<f64>().sqrt();
    let mut lo = -e_min * e_min + e_min * y[..n]
        .iter()
        .zip(e)
        .fold(0.0f64, |acc, (&yi, &ei)| if ei == e_min { acc.max(yi) } else { acc });
    // Guard: g(lo) must be >= 0; widen toward the pole if rounding hurt us.
    if g(lo) < 0.0 {
        lo = -e_min * e_min + 1e-300;
    }
    let mut hi = -e_min * e_min + ey_len;
    while g(hi) > 0.0 {
        hi = -e_min * e_min + 2.0 * (hi + e_min * e_min);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let mut d2 = 0.0;
    for i in 0..n {
        let xi = e[i] * e[i] * y[i] / (t + e[i] * e[i]);
        let d = xi - y[i];
        d2 += d * d;
    }
    d2.sqrt()
}

/// Logistic density profile: ρ = (1/β)·sigmoid(−f/β).
///
/// Strictly decreasing in `f`; approaches 1/β deep inside and 0 far outside.
pub fn density_from_sdf(f: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::domain(format!("beta {beta} must be > 0")));
    }
    Ok(sigmoid(-f / beta) / beta)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A CSG union of semantic-labeled primitives with exact per-point ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    /// Width of the SDF→density conversion.
    pub beta: f64,
    /// Number of semantic categories.
    pub semantic_count: usize,
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::EmptyScene);
        }
        if !(self.beta > 0.0) {
            return Err(Error::domain("beta must be > 0"));
        }
        for prim in &self.primitives {
            prim.validate(self.semantic_count)?;
        }
        Ok(())
    }

    /// Union signed distance and the owning primitive index.
    ///
    /// Ownership goes to the minimal signed distance; ties break to the
    /// lowest primitive index.
    pub fn sdf_and_owner(&self, p: DVec3) -> Result<(f64, usize)> {
        if self.primitives.is_empty() {
            return Err(Error::EmptyScene);
        }
        let mut best = f64::INFINITY;
        let mut owner = 0;
        for (i, prim) in self.primitives.iter().enumerate() {
            let d = prim.sdf(p);
            if d < best {
                best = d;
                owner = i;
            }
        }
        Ok((best, owner))
    }

    /// Ground-truth field sample; semantics are exactly one-hot.
    pub fn sample(&self, p: DVec3, mode: FieldMode) -> Result<FieldSample> {
        let (f, owner) = self.sdf_and_owner(p)?;
        let prim = &self.primitives[owner];
        let geom = match mode {
            FieldMode::Sdf => f,
            FieldMode::Density => density_from_sdf(f, self.beta)?,
        };
        Ok(FieldSample {
            geom,
            color: prim.color,
            probs: Probs::one_hot(prim.semantic_id(), self.semantic_count),
        })
    }

    /// Read-only sampler view in a fixed mode.
    pub fn field(&self, mode: FieldMode) -> SceneField<'_> {
        SceneField { scene: self, mode }
    }
}

/// [`FieldSampler`] view of an [`AnalyticScene`] in a fixed mode.
#[derive(Clone, Copy)]
pub struct SceneField<'a> {
    scene: &'a AnalyticScene,
    mode: FieldMode,
}

impl FieldSampler for SceneField<'_> {
    fn semantic_count(&self) -> usize {
        self.scene.semantic_count
    }

    fn mode(&self) -> FieldMode {
        self.mode
    }

    fn sample(&self, p: DVec3) -> FieldSample {
        // Validity is checked at construction; an empty scene cannot make a field.
        self.scene.sample(p, self.mode).expect("non-empty scene")
    }
}

/// Convenience free function mirroring the sampler contract.
pub fn scene_sample(scene: &AnalyticScene, point: DVec3, mode: FieldMode) -> Result<FieldSample> {
    if !point.is_finite() {
        return Err(Error::domain("sample point must be finite"));
    }
    scene.sample(point, mode)
}

/// Known character presets.
pub const PRESETS: [&str; 3] = ["basic", "skirted", "hooded"];

/// Deterministic three-layer character: solid body (torso capsule + head
/// sphere), an open cloth tube around the torso, and a hair cap over the
/// head. Outer layers keep a strict clearance gap from the body so the layer
/// stack never interpenetrates.
pub fn make_test_character(seed: u64, preset: &str) -> Result<AnalyticScene> {
    if !PRESETS.contains(&preset) {
        return Err(Error::UnknownPreset(preset.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ hash_preset(preset));
    fn jitter(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
        1.0 + scale * (rng.gen::<f64>() * 2.0 - 1.0)
    }

    // Proportions (z up, character faces −y). Everything must stay inside
    // x,y ∈ ±0.345 and z ∈ ±0.52 so the default extraction box covers it.
    let head_r = 0.120 * jitter(&mut rng, 0.04);
    let head_z = if preset == "hooded" { 0.270 } else { 0.300 };
    let torso_r = 0.130 * jitter(&mut rng, 0.04);
    let torso_half = 0.140 * jitter(&mut rng, 0.04);
    let torso_z = head_z - 0.340;

    let body_color = jitter_color([0.86, 0.64, 0.50], &mut rng);
    let cloth_color = jitter_color([0.22, 0.36, 0.76], &mut rng);
    let hair_color = jitter_color([0.36, 0.21, 0.13], &mut rng);
    let cloth_half = 0.024 * jitter(&mut rng, 0.06);
    let hair_half = 0.020 * jitter(&mut rng, 0.06);

    let mut prims = Vec::new();

    // Head.
    prims.push(Primitive {
        kind: PrimitiveKind::Sphere { radius: head_r },
        center: [0.0, 0.0, head_z],
        rotation: identity_rotation(),
        inflate: 0.0,
        shell: None,
        clip_z_min: None,
        clip_z_max: None,
        semantic: SEMANTIC_BODY.0,
        color: body_color,
    });
    // Torso; its top cap overlaps the head so the body is one solid.
    prims.push(Primitive {
        kind: PrimitiveKind::Capsule {
            half_height: torso_half,
            radius: torso_r,
        },
        center: [0.0, 0.0, torso_z],
        rotation: identity_rotation(),
        inflate: 0.0,
        shell: None,
        clip_z_min: None,
        clip_z_max: None,
        semantic: SEMANTIC_BODY.0,
        color: body_color,
    });

    // Cloth: open tube around the inflated torso. The gap keeps it strictly
    // outside the body; clips open the top and bottom so the head and lower
    // torso pass through the holes rather than a closed cap.
    let cloth_gap = 0.024;
    prims.push(Primitive {
        kind: PrimitiveKind::Capsule {
            half_height: torso_half,
            radius: torso_r,
        },
        center: [0.0, 0.0, torso_z],
        rotation: identity_rotation(),
        inflate: cloth_gap + cloth_half,
        shell: Some(cloth_half),
        clip_z_min: Some(-torso_half - 0.030),
        clip_z_max: Some(torso_half),
        semantic: SEMANTIC_CLOTH.0,
        color: cloth_color,
    });
    if preset == "skirted" {
        // Flared open tube around the hips.
        prims.push(Primitive {
            kind: PrimitiveKind::Capsule {
                half_height: 0.060,
                radius: torso_r * 1.20,
            },
            center: [0.0, 0.0, torso_z - 0.150],
            rotation: identity_rotation(),
            inflate: cloth_gap + cloth_half,
            shell: Some(cloth_half),
            clip_z_min: Some(-0.070),
            clip_z_max: Some(0.070),
            semantic: SEMANTIC_CLOTH.0,
            color: cloth_color,
        });
    }

    // Hair: cap-shaped shell around a sphere slightly up and behind the head
    // center, clipped below so the face stays open.
    let hair_offset = DVec3::new(0.0, 0.012, 0.015);
    let hair_gap = 0.018;
    let hair_mid = hair_offset.length() + head_r + hair_gap + hair_half;
    prims.push(Primitive {
        kind: PrimitiveKind::Sphere { radius: hair_mid },
        center: [
            hair_offset.x,
            hair_offset.y,
            head_z + hair_offset.z,
        ],
        rotation: identity_rotation(),
        inflate: 0.0,
        shell: Some(hair_half),
        clip_z_min: Some(-0.040),
        clip_z_max: None,
        semantic: SEMANTIC_HAIR.0,
        color: hair_color,
    });

    if preset == "hooded" {
        // Hood: cloth cap over the hair with its own clearance gap.
        let hair_outer_from_head = hair_offset.length() + hair_mid + hair_half;
        let hood_half = cloth_half * 0.8;
        let hood_gap = 0.014;
        prims.push(Primitive {
            kind: PrimitiveKind::Sphere { radius: head_r },
            center: [0.0, 0.008, head_z],
            rotation: identity_rotation(),
            inflate: hair_outer_from_head - head_r + hood_gap + hood_half,
            shell: Some(hood_half),
            clip_z_min: Some(-0.030),
            clip_z_max: None,
            semantic: SEMANTIC_CLOTH.0,
            color: cloth_color,
        });
    }

    let scene = AnalyticScene {
        primitives: prims,
        beta: DEFAULT_BETA,
        semantic_count: 3,
    };
    scene.validate()?;
    Ok(scene)
}

fn jitter_color(base: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut c = base;
    for ch in &mut c {
        *ch = (*ch + 0.04 * (rng.gen::<f64>() * 2.0 - 1.0)).clamp(0.05, 0.95);
    }
    c
}

fn hash_preset(name: &str) -> u64 {
    // FNV-1a; stable across platforms.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_sphere_scene() -> AnalyticScene {
        AnalyticScene {
            primitives: vec![Primitive {
                kind: PrimitiveKind::Sphere { radius: 1.0 },
                center: [0.0; 3],
                rotation: identity_rotation(),
                inflate: 0.0,
                shell: None,
                clip_z_min: None,
                clip_z_max: None,
                semantic: SEMANTIC_BODY.0,
                color: [1.0, 0.0, 0.0],
            }],
            beta: DEFAULT_BETA,
            semantic_count: 3,
        }
    }

    #[test]
    fn sphere_sdf_hand_value() {
        let scene = unit_sphere_scene();
        let s = scene_sample(&scene, DVec3::new(0.0, 0.0, 2.0), FieldMode::Sdf).unwrap();
        assert!((s.geom - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_primitive_is_one_hot() {
        let scene = unit_sphere_scene();
        let s = scene_sample(&scene, DVec3::ZERO, FieldMode::Sdf).unwrap();
        assert_eq!(s.probs.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(s.color, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn nested_spheres_union_and_ownership() {
        let mut scene = unit_sphere_scene();
        scene.primitives[0].kind = PrimitiveKind::Sphere { radius: 0.5 };
        scene.primitives.push(Primitive {
            kind: PrimitiveKind::Sphere { radius: 0.7 },
            center: [0.0; 3],
            rotation: identity_rotation(),
            inflate: 0.0,
            shell: None,
            clip_z_min: None,
            clip_z_max: None,
            semantic: SEMANTIC_CLOTH.0,
            color: [0.0, 0.0, 1.0],
        });
        let s = scene_sample(&scene, DVec3::new(0.0, 0.0, 0.6), FieldMode::Sdf).unwrap();
        // Union SDF = min(0.1, −0.1) = −0.1 with ownership to the deeper shell.
        assert!((s.geom - (-0.1)).abs() < 1e-12);
        assert_eq!(s.probs.argmax(), SEMANTIC_CLOTH);
        assert_eq!(s.probs.get(SEMANTIC_CLOTH), 1.0);
    }

    #[test]
    fn empty_scene_errors() {
        let scene = AnalyticScene {
            primitives: vec![],
            beta: DEFAULT_BETA,
            semantic_count: 3,
        };
        assert!(scene_sample(&scene, DVec3::ZERO, FieldMode::Sdf).is_err());
    }

    #[test]
    fn density_hand_values() {
        assert!((density_from_sdf(0.0, 0.01).unwrap() - 50.0).abs() < 1e-9);
        assert!(density_from_sdf(10.0 * 0.01, 0.01).unwrap() < 0.005);
        let d = density_from_sdf(-0.05, 0.01).unwrap();
        assert!((d - 99.33).abs() < 0.01);
    }

    #[test]
    fn density_rejects_bad_beta() {
        assert!(density_from_sdf(0.0, 0.0).is_err());
        assert!(density_from_sdf(0.0, -1.0).is_err());
    }

    #[test]
    fn density_strictly_decreasing() {
        // Strict within a few β of the surface; saturates to 1/β and 0 beyond.
        let beta = 0.01;
        let mut prev = f64::INFINITY;
        for i in -80..=80 {
            let d = density_from_sdf(i as f64 * 0.001, beta).unwrap();
            assert!(d < prev, "not strictly decreasing at f = {}", i as f64 * 0.001);
            prev = d;
        }
        assert!((density_from_sdf(-1.0, beta).unwrap() - 1.0 / beta).abs() < 1e-9);
        assert!(density_from_sdf(1.0, beta).unwrap() < 1e-9);
    }

    #[test]
    fn presets_are_deterministic() {
        for preset in PRESETS {
            let a = make_test_character(42, preset).unwrap();
            let b = make_test_character(42, preset).unwrap();
            assert_eq!(a, b);
            let c = make_test_character(43, preset).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn unknown_preset_errors() {
        assert!(matches!(
            make_test_character(42, "cyborg"),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn presets_fit_extraction_box() {
        // The whole character must be strictly inside x,y ∈ ±0.35, z ∈ ±0.525
        // so the default extraction grid closes every surface.
        for preset in PRESETS {
            for seed in [0, 1, 42, 999] {
                let scene = make_test_character(seed, preset).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                for _ in 0..4000 {
                    let u: f64 = rng.gen();
                    let v: f64 = rng.gen();
                    let w: f64 = rng.gen();
                    // Points on the box boundary.
                    let mut p = DVec3::new(u - 0.5, v - 0.5, (w - 0.5) * 1.05) * 0.7;
                    match (u * 6.0) as usize % 6 {
                        0 => p.x = -0.35,
                        1 => p.x = 0.35,
                        2 => p.y = -0.35,
                        3 => p.y = 0.35,
                        4 => p.z = -0.525,
                        _ => p.z = 0.525,
                    }
                    let f = scene.sample(p, FieldMode::Sdf).unwrap().geom;
                    assert!(f > 0.005, "{preset}/{seed}: boundary point {p:?} too close ({f})");
                }
            }
        }
    }

    #[test]
    fn presets_cover_all_semantics() {
        for preset in PRESETS {
            let scene = make_test_character(42, preset).unwrap();
            for sem in 0..3u8 {
                assert!(
                    scene.primitives.iter().any(|p| p.semantic == sem),
                    "{preset} missing semantic {sem}"
                );
            }
        }
    }

    #[test]
    fn outer_layers_keep_clearance_from_body() {
        // Dense sampling oracle: walk the body surface; every cloth/hair
        // primitive must stay strictly positive there.
        let scene = make_test_character(42, "basic").unwrap();
        let body: Vec<&Primitive> = scene
            .primitives
            .iter()
            .filter(|p| p.semantic == SEMANTIC_BODY.0)
            .collect();
        let outer: Vec<&Primitive> = scene
            .primitives
            .iter()
            .filter(|p| p.semantic != SEMANTIC_BODY.0)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for _ in 0..80000 {
            let p = DVec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() * 1.05 - 0.525,
            );
            let body_sdf = body.iter().map(|b| b.sdf(p)).fold(f64::INFINITY, f64::min);
            if body_sdf.abs() > 0.02 {
                continue;
            }
            // Project onto the body surface along the SDF gradient (central diff).
            let h = 1e-5;
            let grad = DVec3::new(
                body.iter().map(|b| b.sdf(p + DVec3::X * h)).fold(f64::INFINITY, f64::min)
                    - body.iter().map(|b| b.sdf(p - DVec3::X * h)).fold(f64::INFINITY, f64::min),
                body.iter().map(|b| b.sdf(p + DVec3::Y * h)).fold(f64::INFINITY, f64::min)
                    - body.iter().map(|b| b.sdf(p - DVec3::Y * h)).fold(f64::INFINITY, f64::min),
                body.iter().map(|b| b.sdf(p + DVec3::Z * h)).fold(f64::INFINITY, f64::min)
                    - body.iter().map(|b| b.sdf(p - DVec3::Z * h)).fold(f64::INFINITY, f64::min),
            )
            .normalize();
            let surf = p - grad * body_sdf;
            for o in &outer {
                assert!(
                    o.sdf(surf) > 1e-4,
                    "outer primitive touches body surface at {surf:?}"
                );
            }
            checked += 1;
        }
        assert!(checked > 500, "oracle sampled too few surface points");
    }

    #[test]
    fn ellipsoid_distance_matches_parametric_oracle() {
        let semi = [0.31, 0.17, 0.09];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let p = DVec3::new(
                (rng.gen::<f64>() - 0.5) * 0.9,
                (rng.gen::<f64>() - 0.5) * 0.9,
                (rng.gen::<f64>() - 0.5) * 0.9,
            );
            let d = ellipsoid_sdf(semi, p);
            // Brute-force surface sampling oracle.
            let mut best = f64::INFINITY;
            let n = 400;
            for i in 0..n {
                for j in 0..n / 2 {
                    let theta = std::f64::consts::TAU * i as f64 / n as f64;
                    let phi = std::f64::consts::PI * (j as f64 + 0.5) / (n / 2) as f64;
                    let q = DVec3::new(
                        semi[0] * phi.sin() * theta.cos(),
                        semi[1] * phi.sin() * theta.sin(),
                        semi[2] * phi.cos(),
                    );
                    best = best.min((q - p).length());
                }
            }
            assert!(
                (d.abs() - best).abs() < 2e-3,
                "sdf {d} vs oracle {best} at {p:?}"
            );
        }
        // On-axis and center queries are exact.
        assert!((ellipsoid_sdf(semi, DVec3::ZERO) + semi[2]).abs() < 1e-9);
        assert!((ellipsoid_sdf(semi, DVec3::new(0.0, 0.0, 0.5)) - (0.5 - semi[2])).abs() < 1e-9);
        assert!((ellipsoid_sdf(semi, DVec3::new(0.5, 0.0, 0.0)) - (0.5 - semi[0])).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Union of exact SDFs stays 1-Lipschitz within tolerance.
        #[test]
        fn scene_sdf_is_lipschitz(seed in 0u64..1000) {
            let scene = make_test_character(seed, "basic").unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let a = DVec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                let b = DVec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                let fa = scene.sample(a, FieldMode::Sdf).unwrap().geom;
                let fb = scene.sample(b, FieldMode::Sdf).unwrap().geom;
                let lhs = (fa - fb).abs();
                let rhs = (a - b).length() * 1.01 + 1e-9;
                prop_assert!(lhs <= rhs, "|{fa} - {fb}| > 1.01*{}", (a - b).length());
            }
        }

        // Ground-truth semantics are exactly one-hot everywhere.
        #[test]
        fn scene_probs_always_one_hot(seed in 0u64..1000, x in -0.5f64..0.5, y in -0.5f64..0.5, z in -0.5f64..0.5) {
            let scene = make_test_character(seed, "skirted").unwrap();
            let s = scene.sample(DVec3::new(x, y, z), FieldMode::Sdf).unwrap();
            let ones = s.probs.as_slice().iter().filter(|&&v| v == 1.0).count();
            let zeros = s.probs.as_slice().iter().filter(|&&v| v == 0.0).count();
            prop_assert_eq!(ones, 1);
            prop_assert_eq!(zeros, s.probs.k() - 1);
        }
    }

    #[test]
    fn density_along_rays_is_continuous() {
        // Finite differences along random rays never exceed the analytic
        // slope bound (1/β²)·(max sigmoid slope)·step with unit SDF slope.
        let scene = make_test_character(42, "basic").unwrap();
        let beta = scene.beta;
        let step = 1e-4;
        let bound = (1.0 / (beta * beta)) * 0.25 * step * 1.02 + 1e-9;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let origin = DVec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            );
            let dir = DVec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalize();
            let mut prev = scene.sample(origin, FieldMode::Density).unwrap().geom;
            for i in 1..50 {
                let cur = scene
                    .sample(origin + dir * (step * i as f64), FieldMode::Density)
                    .unwrap()
                    .geom;
                assert!(
                    (cur - prev).abs() <= bound,
                    "density jump {} exceeds bound {bound}",
                    (cur - prev).abs()
                );
                prev = cur;
            }
        }
    }
}
