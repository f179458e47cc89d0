//! Hand-written reverse-mode differentiation through the compositing
//! equations, from pixel losses back to raw grid parameters.
//!
//! Determinism contract: the forward pass writes disjoint per-pixel slots;
//! the backward scatter accumulates into a fixed number of chunk buffers
//! (one per contiguous ray range) that are reduced in chunk order, so runs
//! are bit-identical regardless of thread count.

use glam::DVec3;
use rayon::prelude::*;

use crate::camera::OrthoCamera;
use crate::field::{FieldMode, FieldSampler};
use crate::fit::grid::{softplus, softplus_prime, DenseGrid, Stencil, MAX_CHANNELS};
use crate::render::view::DOMAIN_PAD;
use crate::render::RenderTarget;
use crate::scene::sigmoid;
use crate::semantic::{SemanticSet, MAX_SEMANTICS};

/// Transmittance floor shared by both passes so they visit identical samples.
const T_CUTOFF: f64 = 1e-12;

/// Fixed chunk count for gradient accumulation.
const GRAD_CHUNKS: usize = 8;

/// Precomputed pixel rays for a set of cameras (view-major, row-major).
pub(crate) struct RaySet {
    pub res: usize,
    pub views: usize,
    pub rays: Vec<RayTask>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RayTask {
    origin: DVec3,
    dir: DVec3,
    t0: f64,
    t1: f64,
    hit: bool,
}

pub(crate) fn build_rays(cameras: &[OrthoCamera]) -> RaySet {
    let res = cameras[0].resolution as usize;
    let lo = DVec3::splat(-0.5 - DOMAIN_PAD);
    let hi = DVec3::splat(0.5 + DOMAIN_PAD);
    let mut rays = Vec::with_capacity(cameras.len() * res * res);
    for cam in cameras {
        debug_assert_eq!(cam.resolution as usize, res);
        for y in 0..res {
            for x in 0..res {
                let ray = cam.pixel_ray(x as u32, y as u32);
                match ray.clip_to_box(lo, hi) {
                    Some((t0, t1)) => rays.push(RayTask {
                        origin: ray.origin,
                        dir: ray.dir,
                        t0: t0.max(cam.near),
                        t1: t1.min(cam.far),
                        hit: true,
                    }),
                    None => rays.push(RayTask {
                        origin: ray.origin,
                        dir: ray.dir,
                        t0: 0.0,
                        t1: 0.0,
                        hit: false,
                    }),
                }
            }
        }
    }
    RaySet {
        res,
        views: cameras.len(),
        rays,
    }
}

/// Per-pixel render outputs of one supervision level.
pub(crate) struct LevelOutputs {
    pub res: usize,
    pub views: usize,
    pub k: usize,
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub sem: Vec<f64>,
}

impl LevelOutputs {
    /// View of the outputs as per-view render targets (depth/normal empty).
    pub fn to_targets(&self) -> Vec<RenderTarget> {
        let n = self.res * self.res;
        (0..self.views)
            .map(|v| {
                let mut t = RenderTarget::zeros(self.res, self.res, self.k);
                t.rgb.copy_from_slice(&self.rgb[v * n..(v + 1) * n]);
                t.alpha.copy_from_slice(&self.alpha[v * n..(v + 1) * n]);
                t.semantic
                    .copy_from_slice(&self.sem[v * n * self.k..(v + 1) * n * self.k]);
                t
            })
            .collect()
    }
}

/// Per-pixel loss gradients flowing back into a level's render outputs.
pub(crate) struct PixelGrads {
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub sem: Vec<f64>,
}

impl PixelGrads {
    pub fn zeros(pixels: usize, k: usize) -> Self {
        PixelGrads {
            rgb: vec![[0.0; 3]; pixels],
            alpha: vec![0.0; pixels],
            sem: vec![0.0; pixels * k],
        }
    }
}

struct SampleRec {
    stencil: Stencil,
    raw0: f64,
    alpha: f64,
    color: [f64; 3],
    probs: [f64; MAX_SEMANTICS],
    q: f64,
    e: f64,
    /// Transmittance before this sample.
    trans: f64,
    delta: f64,
}

/// Marches one ray, optionally recording per-sample state. Both passes run
/// this exact arithmetic.
#[allow(clippy::too_many_arguments)]
fn march_ray(
    grid: &DenseGrid,
    ray: &RayTask,
    kept: Option<SemanticSet>,
    n_samples: usize,
    k: usize,
    rgb: &mut [f64; 3],
    alpha: &mut f64,
    sem: &mut [f64],
    mut record: Option<&mut Vec<SampleRec>>,
) {
    if !ray.hit || !(ray.t1 > ray.t0) {
        return;
    }
    let dt = (ray.t1 - ray.t0) / n_samples as f64;
    let mut trans = 1.0f64;
    for i in 0..n_samples {
        if trans < T_CUTOFF {
            break;
        }
        let t = ray.t0 + (i as f64 + 0.5) * dt;
        let p = ray.origin + ray.dir * t;
        let stencil = grid.stencil(p);
        let raw = grid.raw_at(&stencil);
        let sigma = softplus(raw[0]);
        let a = -(-sigma * dt).exp_m1();
        let mut probs = [0.0f64; MAX_SEMANTICS];
        softmax_into(&raw[4..4 + k], &mut probs);
        let q = match kept {
            Some(set) => {
                let mut m = 0.0;
                for (c, pr) in probs.iter().enumerate().take(k) {
                    if set.contains_index(c) {
                        m += pr;
                    }
                }
                m
            }
            None => 1.0,
        };
        let color = [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])];
        let e = a * q;
        let w = trans * e;
        for ch in 0..3 {
            rgb[ch] += w * color[ch];
        }
        for ch in 0..k {
            sem[ch] += w * probs[ch];
        }
        *alpha += w;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(SampleRec {
                stencil,
                raw0: raw[0],
                alpha: a,
                color,
                probs,
                q,
                e,
                trans,
                delta: dt,
            });
        }
        trans *= 1.0 - e;
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64; MAX_SEMANTICS]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (i, &l) in logits.iter().enumerate() {
        let e = (l - max).exp();
        out[i] = e;
        sum += e;
    }
    for v in out.iter_mut().take(logits.len()) {
        *v /= sum;
    }
}

/// Forward render of one level over all rays, parallel over pixel ranges.
pub(crate) fn forward_level(
    grid: &DenseGrid,
    rays: &RaySet,
    kept: Option<SemanticSet>,
    n_samples: usize,
) -> LevelOutputs {
    let k = grid.semantic_count();
    let pixels = rays.rays.len();
    let mut out = LevelOutputs {
        res: rays.res,
        views: rays.views,
        k,
        rgb: vec![[0.0; 3]; pixels],
        alpha: vec![0.0; pixels],
        sem: vec![0.0; pixels * k],
    };
    let sem_chunks: Vec<&mut [f64]> = out.sem.chunks_mut(k).collect();
    out.rgb
        .par_iter_mut()
        .zip(out.alpha.par_iter_mut())
        .zip(sem_chunks)
        .zip(&rays.rays)
        .for_each(|(((rgb, alpha), sem), ray)| {
            march_ray(grid, ray, kept, n_samples, k, rgb, alpha, sem, None);
        });
    out
}

/// Backward pass: scatters parameter gradients for one level into `grad`,
/// scaled by the per-pixel loss gradients.
pub(crate) fn backward_level(
    grid: &DenseGrid,
    rays: &RaySet,
    kept: Option<SemanticSet>,
    n_samples: usize,
    pixel_grads: &PixelGrads,
    grad: &mut [f64],
    pool: &mut ChunkPool,
) {
    assert_eq!(grid.mode(), FieldMode::Density, "volume fitting is density-mode");
    let k = grid.semantic_count();
    let ch = grid.channels();
    let params = grid.parameter_count();
    pool.reset(params);
    let n_rays = rays.rays.len();
    let chunk_len = n_rays.div_ceil(GRAD_CHUNKS);

    pool.buffers
        .par_iter_mut()
        .enumerate()
        .for_each(|(chunk, buf)| {
            let start = chunk * chunk_len;
            let end = ((chunk + 1) * chunk_len).min(n_rays);
            let mut records: Vec<SampleRec> = Vec::with_capacity(n_samples);
            let mut g = vec![0.0f64; n_samples];
            for ri in start..end {
                let ray = &rays.rays[ri];
                if !ray.hit {
                    continue;
                }
                let d_rgb = pixel_grads.rgb[ri];
                let d_alpha = pixel_grads.alpha[ri];
                let d_sem = &pixel_grads.sem[ri * k..(ri + 1) * k];
                if d_rgb == [0.0; 3]
                    && d_alpha == 0.0
                    && d_sem.iter().all(|&v| v == 0.0)
                {
                    continue;
                }
                records.clear();
                let mut rgb = [0.0; 3];
                let mut alpha = 0.0;
                let mut sem = vec![0.0; k];
                march_ray(
                    grid,
                    ray,
                    kept,
                    n_samples,
                    k,
                    &mut rgb,
                    &mut alpha,
                    &mut sem,
                    Some(&mut records),
                );
                let n = records.len();
                if n == 0 {
                    continue;
                }
                // Per-sample linear-functional coefficients.
                for (i, rec) in records.iter().enumerate() {
                    let mut gi = d_alpha;
                    for chn in 0..3 {
                        gi += d_rgb[chn] * rec.color[chn];
                    }
                    for (chn, ds) in d_sem.iter().enumerate() {
                        gi += ds * rec.probs[chn];
                    }
                    g[i] = gi;
                }
                // Suffix accumulator: G_i collects the occlusion effect of
                // sample i on everything behind it, without dividing by
                // (1 − e), so saturated samples stay finite.
                let mut suffix = 0.0f64;
                for i in (0..n).rev() {
                    let rec = &records[i];
                    let de = rec.trans * (g[i] - suffix);
                    let w = rec.trans * rec.e;
                    // Color channels.
                    let mut raw_grad = [0.0f64; MAX_CHANNELS];
                    for chn in 0..3 {
                        let dc = d_rgb[chn] * w;
                        raw_grad[1 + chn] = dc * rec.color[chn] * (1.0 - rec.color[chn]);
                    }
                    // Probabilities: semantic-map path plus the kept-mass path.
                    let mut dp = [0.0f64; MAX_SEMANTICS];
                    for (chn, ds) in d_sem.iter().enumerate() {
                        dp[chn] = ds * w;
                    }
                    if let Some(set) = kept {
                        let da_q = de * rec.alpha;
                        for (chn, dpv) in dp.iter_mut().enumerate().take(k) {
                            if set.contains_index(chn) {
                                *dpv += da_q;
                            }
                        }
                    }
                    let mut dot = 0.0;
                    for chn in 0..k {
                        dot += dp[chn] * rec.probs[chn];
                    }
                    for chn in 0..k {
                        raw_grad[4 + chn] = rec.probs[chn] * (dp[chn] - dot);
                    }
                    // Geometry: dα/dσ = δ(1−α), then softplus.
                    let d_a = de * rec.q;
                    let d_sigma = d_a * rec.delta * (1.0 - rec.alpha);
                    raw_grad[0] = d_sigma * softplus_prime(rec.raw0);
                    // Scatter through the trilinear stencil.
                    for corner in 0..8 {
                        let wgt = rec.stencil.weights[corner];
                        if wgt == 0.0 {
                            continue;
                        }
                        let base = rec.stencil.nodes[corner] as usize * ch;
                        for (c, rg) in raw_grad.iter().enumerate().take(ch) {
                            if *rg != 0.0 {
                                buf[base + c] += wgt * rg;
                            }
                        }
                    }
                    suffix = rec.e * g[i] + (1.0 - rec.e) * suffix;
                }
            }
        });

    // Fixed-order reduction: every parameter sums its chunks 0..GRAD_CHUNKS.
    let buffers = &pool.buffers;
    grad.par_chunks_mut(16384)
        .enumerate()
        .for_each(|(block, out)| {
            let base = block * 16384;
            for buf in buffers {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += buf[base + i];
                }
            }
        });
}

/// Reusable chunk gradient buffers.
pub(crate) struct ChunkPool {
    buffers: Vec<Vec<f64>>,
}

impl ChunkPool {
    pub fn new() -> Self {
        ChunkPool {
            buffers: Vec::new(),
        }
    }

    fn reset(&mut self, params: usize) {
        if self.buffers.len() != GRAD_CHUNKS || self.buffers[0].len() != params {
            self.buffers = (0..GRAD_CHUNKS).map(|_| vec![0.0; params]).collect();
        } else {
            self.buffers.par_iter_mut().for_each(|b| b.fill(0.0));
        }
    }
}
