//! Per-view render buffers.

use crate::error::{Error, Result};

/// Buffers produced by a render: premultiplied RGB, coverage, per-semantic
/// maps, view depth, and camera-space normals. Depth and normals are zero
/// wherever coverage is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTarget {
    pub width: usize,
    pub height: usize,
    pub semantic_count: usize,
    /// Premultiplied by alpha, row-major.
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    /// Row-major, `semantic_count` channels per pixel.
    pub semantic: Vec<f64>,
    /// View depth along the camera forward axis, measured from the plane
    /// through the origin.
    pub depth: Vec<f64>,
    /// Unit camera-space normals (x right, y up, z toward the viewer).
    pub normal: Vec<[f64; 3]>,
}

impl RenderTarget {
    pub fn zeros(width: usize, height: usize, semantic_count: usize) -> Self {
        let n = width * height;
        RenderTarget {
            width,
            height,
            semantic_count,
            rgb: vec![[0.0; 3]; n],
            alpha: vec![0.0; n],
            semantic: vec![0.0; n * semantic_count],
            depth: vec![0.0; n],
            normal: vec![[0.0; 3]; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn semantic_at(&self, pixel: usize) -> &[f64] {
        &self.semantic[pixel * self.semantic_count..(pixel + 1) * self.semantic_count]
    }

    pub fn same_shape(&self, other: &RenderTarget) -> Result<()> {
        if self.width != other.width
            || self.height != other.height
            || self.semantic_count != other.semantic_count
        {
            return Err(Error::shape(format!(
                "render targets {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.semantic_count, other.width, other.height, other.semantic_count
            )));
        }
        Ok(())
    }

    /// Binary mask at the given coverage threshold.
    pub fn hard_mask(&self, threshold: f64) -> Vec<bool> {
        self.alpha.iter().map(|&a| a > threshold).collect()
    }

    /// Binary mask of rasterized pixel-center coverage. Hard hits carry
    /// alpha exactly 1; the soft skirt stays strictly below it.
    pub fn raster_coverage(&self) -> Vec<bool> {
        self.alpha.iter().map(|&a| a >= 1.0).collect()
    }

    /// Buffer invariants: semantic channel sums bounded by alpha, unit
    /// normals and nonzero depth only under coverage.
    pub fn check_invariants(&self) -> Result<()> {
        for p in 0..self.pixel_count() {
            let sum: f64 = self.semantic_at(p).iter().sum();
            if sum > self.alpha[p] + 1e-5 {
                return Err(Error::domain(format!(
                    "pixel {p}: semantic sum {sum} exceeds alpha {}",
                    self.alpha[p]
                )));
            }
            let n = self.normal[p];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if self.alpha[p] == 0.0 {
                if len != 0.0 || self.depth[p] != 0.0 {
                    return Err(Error::domain(format!(
                        "pixel {p}: depth/normal nonzero where alpha is zero"
                    )));
                }
            } else if len > 0.0 && (len - 1.0).abs() > 1e-6 {
                return Err(Error::domain(format!("pixel {p}: normal length {len}")));
            }
        }
        Ok(())
    }
}
