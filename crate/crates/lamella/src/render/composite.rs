//! Alpha compositing along rays: plain, single-semantic, and
//! semantic-set-filtered variants.
//!
//! All variants share the same accumulation pattern. Plain compositing uses
//! opacity α_i; the single-semantic variant attenuates transmittance by the
//! sample's probability of that semantic; the filtered variant attenuates by
//! the total probability mass of the kept set, so everything outside the set
//! is rendered as transparent.

use crate::error::Result;
use crate::field::{alpha_from_density, RaySamples};
use crate::semantic::{SemanticId, SemanticSet, MAX_SEMANTICS};

/// Opacities α_i = 1 − exp(−σ_i δ_i) for a density-mode ray.
pub fn ray_alphas(samples: &RaySamples) -> Result<Vec<f64>> {
    samples
        .samples()
        .iter()
        .zip(samples.deltas())
        .map(|(s, &d)| alpha_from_density(s.geom, d))
        .collect()
}

/// Plain color compositing: Ĉ = Σ T_i α_i c_i with T_i = Π_{j<i}(1 − α_j)
/// and alpha = 1 − Π(1 − α_i).
pub fn composite_color(samples: &RaySamples) -> Result<([f64; 3], f64)> {
    let alphas = ray_alphas(samples)?;
    let mut rgb = [0.0f64; 3];
    let mut transmittance = 1.0f64;
    for (s, &a) in samples.samples().iter().zip(&alphas) {
        let w = transmittance * a;
        for ch in 0..3 {
            rgb[ch] += w * s.color[ch];
        }
        transmittance *= 1.0 - a;
    }
    Ok((rgb, 1.0 - transmittance))
}

/// Per-sample transmittances under semantic `s`:
/// T_{s,i} = Π_{j<i}(1 − α_j p_{s,j}).
///
/// A sample with p_s = 0 is fully transparent under `s` and leaves later
/// transmittances bit-identical to deleting the sample.
pub fn semantic_transmittances(samples: &RaySamples, s: SemanticId) -> Result<Vec<f64>> {
    let alphas = ray_alphas(samples)?;
    let mut out = Vec::with_capacity(alphas.len());
    let mut t = 1.0f64;
    for (smp, &a) in samples.samples().iter().zip(&alphas) {
        out.push(t);
        t *= 1.0 - a * smp.probs.get(s);
    }
    Ok(out)
}

/// Single-semantic compositing: Ĉ_s = Σ T_{s,i} p_{s,i} α_i c_i and
/// alpha_s = Σ T_{s,i} p_{s,i} α_i.
pub fn composite_semantic_color(samples: &RaySamples, s: SemanticId) -> Result<([f64; 3], f64)> {
    if let Some(first) = samples.samples().first() {
        s.check(first.probs.k())?;
    }
    let alphas = ray_alphas(samples)?;
    let mut rgb = [0.0f64; 3];
    let mut alpha = 0.0f64;
    let mut t = 1.0f64;
    for (smp, &a) in samples.samples().iter().zip(&alphas) {
        let e = a * smp.probs.get(s);
        let w = t * e;
        for ch in 0..3 {
            rgb[ch] += w * smp.color[ch];
        }
        alpha += w;
        t *= 1.0 - e;
    }
    Ok((rgb, alpha))
}

/// Unfiltered semantic map: Ŝ = Σ T_i p_i α_i with plain transmittance.
pub fn composite_semantic_map(samples: &RaySamples) -> Result<Vec<f64>> {
    let alphas = ray_alphas(samples)?;
    let k = samples.samples().first().map_or(0, |s| s.probs.k());
    let mut map = vec![0.0f64; k];
    let mut t = 1.0f64;
    for (smp, &a) in samples.samples().iter().zip(&alphas) {
        let w = t * a;
        for (ch, m) in map.iter_mut().enumerate() {
            *m += w * smp.probs[ch];
        }
        t *= 1.0 - a;
    }
    Ok(map)
}

/// Filtered compositing under a kept set P:
/// Ĉ_P = Σ T_{P,i} α_i c_i q_i, Ŝ_P = Σ T_{P,i} α_i p_i q_i,
/// alpha_P = Σ T_{P,i} α_i q_i, with q_i = Σ_{s∈P} p_{s,i} and
/// T_{P,i} = Π_{j<i}(1 − α_j q_j).
pub fn composite_filtered(
    samples: &RaySamples,
    kept: SemanticSet,
) -> Result<([f64; 3], Vec<f64>, f64)> {
    let k = samples.samples().first().map_or(MAX_SEMANTICS, |s| s.probs.k());
    kept.check(k)?;
    let alphas = ray_alphas(samples)?;
    let mut rgb = [0.0f64; 3];
    let mut map = vec![0.0f64; k];
    let mut alpha = 0.0f64;
    let mut t = 1.0f64;
    for (smp, &a) in samples.samples().iter().zip(&alphas) {
        let q = smp.probs.mass(kept);
        let e = a * q;
        let w = t * e;
        for ch in 0..3 {
            rgb[ch] += w * smp.color[ch];
        }
        for (ch, m) in map.iter_mut().enumerate() {
            *m += w * smp.probs[ch];
        }
        alpha += w;
        t *= 1.0 - e;
    }
    Ok((rgb, map, alpha))
}
