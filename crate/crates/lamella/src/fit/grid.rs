//! Trilinearly interpolated voxel field with geometry, color, and semantic
//! logit channels. The desk-scale differentiable scene representation.

use glam::DVec3;

use crate::error::{Error, Result};
use crate::field::{FieldMode, FieldSample, FieldSampler};
use crate::scene::sigmoid;
use crate::semantic::{Probs, MAX_SEMANTICS};

/// Upper bound on raw channels: geometry + RGB + logits.
pub const MAX_CHANNELS: usize = 4 + MAX_SEMANTICS;

/// Magnitude bound for the density→SDF conversion.
pub const SDF_CLAMP: f64 = 0.1;

/// Dense parameter grid over the unit cube centered at the origin.
///
/// Raw node channels are `[geom, r, g, b, logit_0..logit_{K-1}]`. Densities
/// are parameterized through softplus so they stay non-negative, colors
/// through a sigmoid so they stay in [0,1], and probabilities are the softmax
/// of interpolated logits, which keeps every sampled point on the simplex by
/// construction. In SDF mode the geometry channel is the signed distance
/// itself.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    dims: [usize; 3],
    semantic_count: usize,
    mode: FieldMode,
    data: Vec<f64>,
}

/// Interpolation stencil: the 8 node ids around a point and their weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [u32; 8],
    pub weights: [f64; 8],
}

impl DenseGrid {
    pub fn new(dims: [usize; 3], semantic_count: usize) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::domain("grid needs >= 2 nodes per axis"));
        }
        if semantic_count == 0 || semantic_count > MAX_SEMANTICS {
            return Err(Error::domain("semantic count out of range"));
        }
        let channels = 4 + semantic_count;
        let mut grid = DenseGrid {
            dims,
            semantic_count,
            mode: FieldMode::Density,
            data: vec![0.0; dims[0] * dims[1] * dims[2] * channels],
        };
        // Softplus(-0.4) ≈ 0.5: a faint uniform fog that lets first gradients
        // reach every cell; colors start mid-gray, logits uniform.
        for node in 0..grid.node_count() {
            grid.data[node * channels] = -0.4;
        }
        Ok(grid)
    }

    pub fn from_parts(
        dims: [usize; 3],
        semantic_count: usize,
        mode: FieldMode,
        data: Vec<f64>,
    ) -> Result<Self> {
        let channels = 4 + semantic_count;
        if data.len() != dims[0] * dims[1] * dims[2] * channels {
            return Err(Error::shape(format!(
                "{} values for {}x{}x{} x{} channels",
                data.len(),
                dims[0],
                dims[1],
                dims[2],
                channels
            )));
        }
        if dims.iter().any(|&d| d < 2) || semantic_count == 0 || semantic_count > MAX_SEMANTICS {
            return Err(Error::domain("bad grid dimensions"));
        }
        Ok(DenseGrid {
            dims,
            semantic_count,
            mode,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        4 + self.semantic_count
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn parameter_count(&self) -> usize {
        self.data.len()
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn set_mode(&mut self, mode: FieldMode) {
        self.mode = mode;
    }

    /// Node id in x-fastest order.
    pub fn node_id(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> DVec3 {
        DVec3::new(
            i as f64 / (self.dims[0] - 1) as f64 - 0.5,
            j as f64 / (self.dims[1] - 1) as f64 - 0.5,
            k as f64 / (self.dims[2] - 1) as f64 - 0.5,
        )
    }

    /// Interpolation stencil at a point (clamped into the unit cube).
    pub fn stencil(&self, p: DVec3) -> Stencil {
        let mut nodes = [0u32; 8];
        let mut weights = [0.0f64; 8];
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..3 {
            let n = self.dims[axis];
            let u = ((p[axis] + 0.5) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
            let cell = (u.floor() as usize).min(n - 2);
            base[axis] = cell;
            frac[axis] = u - cell as f64;
        }
        for corner in 0..8 {
            let dx = corner & 1;
            let dy = (corner >> 1) & 1;
            let dz = (corner >> 2) & 1;
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            nodes[corner] =
                self.node_id(base[0] + dx, base[1] + dy, base[2] + dz) as u32;
            weights[corner] = wx * wy * wz;
        }
        Stencil { nodes, weights }
    }

    /// Raw interpolated channel values at a stencil.
    pub fn raw_at(&self, stencil: &Stencil) -> [f64; MAX_CHANNELS] {
        let ch = self.channels();
        let mut out = [0.0f64; MAX_CHANNELS];
        for corner in 0..8 {
            let base = stencil.nodes[corner] as usize * ch;
            let w = stencil.weights[corner];
            for c in 0..ch {
                out[c] += w * self.data[base + c];
            }
        }
        out
    }

    /// Activated sample from raw interpolated channels.
    pub fn activate(&self, raw: &[f64; MAX_CHANNELS]) -> FieldSample {
        let geom = match self.mode {
            FieldMode::Density => softplus(raw[0]),
            FieldMode::Sdf => raw[0],
        };
        let color = [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])];
        let probs = Probs::from_logits(&raw[4..4 + self.semantic_count]);
        FieldSample { geom, color, probs }
    }

    /// Converts the geometry channel from density to signed distance via the
    /// logistic inverse f = −β·logit(βσ), clamped to ±[`SDF_CLAMP`].
    pub fn convert_to_sdf(&mut self, beta: f64) -> Result<()> {
        if self.mode == FieldMode::Sdf {
            return Ok(());
        }
        if !(beta > 0.0) {
            return Err(Error::domain("beta must be > 0"));
        }
        let ch = self.channels();
        for node in 0..self.node_count() {
            let sigma = softplus(self.data[node * ch]);
            let u = (beta * sigma).clamp(1e-9, 1.0 - 1e-9);
            let f = -beta * (u / (1.0 - u)).ln();
            self.data[node * ch] = f.clamp(-SDF_CLAMP, SDF_CLAMP);
        }
        self.mode = FieldMode::Sdf;
        Ok(())
    }
}

impl FieldSampler for DenseGrid {
    fn semantic_count(&self) -> usize {
        self.semantic_count
    }

    fn mode(&self) -> FieldMode {
        self.mode
    }

    fn sample(&self, p: DVec3) -> FieldSample {
        let stencil = self.stencil(p);
        let raw = self.raw_at(&stencil);
        self.activate(&raw)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// d softplus / dx.
pub(crate) fn softplus_prime(x: f64) -> f64 {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencil_weights_sum_to_one_and_interpolate_linearly() {
        let grid = DenseGrid::new([4, 5, 6], 3).unwrap();
        for p in [
            DVec3::ZERO,
            DVec3::new(0.49, -0.32, 0.1),
            DVec3::new(-0.5, -0.5, -0.5),
            DVec3::new(0.5, 0.5, 0.5),
            DVec3::new(0.9, 0.0, 0.0), // outside: clamped
        ] {
            let s = grid.stencil(p);
            let sum: f64 = s.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trilinear_reproduces_linear_fields() {
        let mut grid = DenseGrid::new([5, 5, 5], 3).unwrap();
        let ch = grid.channels();
        // Write a linear function into the geometry channel.
        for k in 0..5 {
            for j in 0..5 {
                for i in 0..5 {
                    let p = grid.node_position(i, j, k);
                    let id = grid.node_id(i, j, k);
                    grid.raw_data_mut()[id * ch] = 0.3 * p.x - 0.7 * p.y + 0.2 * p.z + 0.05;
                }
            }
        }
        grid.set_mode(FieldMode::Sdf);
        for p in [
            DVec3::new(0.13, -0.27, 0.31),
            DVec3::new(-0.42, 0.11, -0.05),
        ] {
            let got = grid.sample(p).geom;
            let want = 0.3 * p.x - 0.7 * p.y + 0.2 * p.z + 0.05;
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn probs_are_simplex_everywhere() {
        let mut grid = DenseGrid::new([3, 3, 3], 3).unwrap();
        // Scramble logits.
        for (i, v) in grid.raw_data_mut().iter_mut().enumerate() {
            *v = ((i * 2654435761) % 1000) as f64 / 250.0 - 2.0;
        }
        for &p in &[
            DVec3::ZERO,
            DVec3::new(0.2, 0.3, -0.4),
            DVec3::new(-0.15, 0.45, 0.05),
        ] {
            let s = grid.sample(p);
            let sum: f64 = s.probs.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(s.geom >= 0.0, "density mode must stay non-negative");
        }
    }

    #[test]
    fn sdf_conversion_inverts_the_density_profile() {
        let beta = 0.005;
        let mut grid = DenseGrid::new([3, 3, 3], 3).unwrap();
        let ch = grid.channels();
        // Set a density corresponding to a known signed distance.
        let f_true = 0.0123f64;
        let sigma = crate::scene::density_from_sdf(f_true, beta).unwrap();
        // softplus-inverse
        let raw = (sigma.exp_m1()).ln();
        for node in 0..grid.node_count() {
            grid.raw_data_mut()[node * ch] = raw;
        }
        grid.convert_to_sdf(beta).unwrap();
        assert_eq!(grid.mode(), FieldMode::Sdf);
        let f = grid.sample(DVec3::ZERO).geom;
        assert!((f - f_true).abs() < 1e-6, "recovered {f} vs {f_true}");
    }

    #[test]
    fn conversion_clamps_far_field() {
        let mut grid = DenseGrid::new([3, 3, 3], 3).unwrap();
        // Default init is a faint fog: far outside any surface.
        grid.convert_to_sdf(0.005).unwrap();
        let f = grid.sample(DVec3::ZERO).geom;
        assert!(f <= SDF_CLAMP && f >= -SDF_CLAMP);
    }
}
