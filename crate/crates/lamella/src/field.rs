//! Field samples, ray sample sequences, and the sampler abstraction shared by
//! analytic scenes and fitted grids.

use glam::DVec3;

use crate::error::{Error, Result};
use crate::semantic::Probs;

/// How the scalar geometry channel of a field is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldMode {
    /// Geometry is a volume density σ ≥ 0.
    Density,
    /// Geometry is a signed distance, negative inside.
    Sdf,
}

/// One field evaluation: geometry scalar, color, and semantic probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    /// Density σ ≥ 0 in density mode, signed distance in SDF mode.
    pub geom: f64,
    /// Linear RGB in [0,1].
    pub color: [f64; 3],
    /// Probability simplex over the scene's semantic labels.
    pub probs: Probs,
}

impl FieldSample {
    pub fn new(geom: f64, color: [f64; 3], probs: Probs, mode: FieldMode) -> Result<Self> {
        if mode == FieldMode::Density && geom < 0.0 {
            return Err(Error::domain(format!("density {geom} must be >= 0")));
        }
        if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::domain(format!("color {color:?} not in [0,1]")));
        }
        Ok(FieldSample { geom, color, probs })
    }
}

/// Opacity of one segment: α = 1 − exp(−σδ).
///
/// Monotone increasing in both arguments, in [0,1) for finite inputs.
pub fn alpha_from_density(sigma: f64, delta: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::domain(format!("density {sigma} must be >= 0")));
    }
    if !(delta > 0.0) {
        return Err(Error::domain(format!("delta {delta} must be > 0")));
    }
    Ok(-(-sigma * delta).exp_m1())
}

/// Samples along one ray: strictly increasing positions, positive segment
/// lengths, one [`FieldSample`] per position.
#[derive(Debug, Clone)]
pub struct RaySamples {
    positions: Vec<f64>,
    deltas: Vec<f64>,
    samples: Vec<FieldSample>,
}

impl RaySamples {
    pub fn new(positions: Vec<f64>, deltas: Vec<f64>, samples: Vec<FieldSample>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::domain("ray needs at least one sample"));
        }
        if positions.len() != deltas.len() || positions.len() != samples.len() {
            return Err(Error::shape(format!(
                "positions {} / deltas {} / samples {}",
                positions.len(),
                deltas.len(),
                samples.len()
            )));
        }
        for w in positions.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::domain("positions must be strictly increasing"));
            }
        }
        if deltas.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::domain("deltas must be > 0"));
        }
        Ok(RaySamples {
            positions,
            deltas,
            samples,
        })
    }

    /// Uniform positions over `[t0, t1)` with the segment length as delta.
    pub fn uniform(t0: f64, t1: f64, samples: Vec<FieldSample>) -> Result<Self> {
        let n = samples.len();
        if n == 0 || !(t1 > t0) {
            return Err(Error::domain("uniform ray needs n >= 1 and t1 > t0"));
        }
        let dt = (t1 - t0) / n as f64;
        let positions = (0..n).map(|i| t0 + (i as f64 + 0.5) * dt).collect();
        let deltas = vec![dt; n];
        RaySamples::new(positions, deltas, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn samples(&self) -> &[FieldSample] {
        &self.samples
    }

    /// Copy with the sample at `index` removed.
    pub fn without(&self, index: usize) -> RaySamples {
        let mut positions = self.positions.clone();
        let mut deltas = self.deltas.clone();
        let mut samples = self.samples.clone();
        positions.remove(index);
        deltas.remove(index);
        samples.remove(index);
        RaySamples {
            positions,
            deltas,
            samples,
        }
    }
}

/// A queryable semantic field. Implementations must be read-only during a
/// render so pixel work can proceed in parallel.
pub trait FieldSampler: Sync {
    fn semantic_count(&self) -> usize;
    fn mode(&self) -> FieldMode;
    fn sample(&self, p: DVec3) -> FieldSample;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::{Probs, SEMANTIC_BODY};
    use proptest::prelude::*;

    #[test]
    fn alpha_hand_values() {
        // Vacuum is transparent.
        assert_eq!(alpha_from_density(0.0, 0.1).unwrap(), 0.0);
        // Opaque limit.
        assert!((alpha_from_density(1e9, 0.1).unwrap() - 1.0).abs() < 1e-12);
        // Hand evaluation: 1 − e⁻¹.
        let a = alpha_from_density(1.0, 1.0).unwrap();
        assert!((a - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((a - 0.6321).abs() < 1e-4);
    }

    #[test]
    fn alpha_domain_errors() {
        assert!(alpha_from_density(-0.1, 0.1).is_err());
        assert!(alpha_from_density(1.0, 0.0).is_err());
        assert!(alpha_from_density(1.0, -1.0).is_err());
    }

    #[test]
    fn ray_samples_validation() {
        let probs = Probs::one_hot(SEMANTIC_BODY, 3);
        let s = FieldSample::new(1.0, [0.5; 3], probs, FieldMode::Density).unwrap();
        assert!(RaySamples::new(vec![0.0, 0.1], vec![0.1, 0.1], vec![s, s]).is_ok());
        // Non-increasing positions rejected.
        assert!(RaySamples::new(vec![0.1, 0.1], vec![0.1, 0.1], vec![s, s]).is_err());
        // Non-positive delta rejected.
        assert!(RaySamples::new(vec![0.0, 0.1], vec![0.1, 0.0], vec![s, s]).is_err());
        assert!(RaySamples::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn sample_invariants() {
        let probs = Probs::one_hot(SEMANTIC_BODY, 3);
        assert!(FieldSample::new(-1.0, [0.0; 3], probs, FieldMode::Density).is_err());
        assert!(FieldSample::new(-1.0, [0.0; 3], probs, FieldMode::Sdf).is_ok());
        assert!(FieldSample::new(1.0, [1.5, 0.0, 0.0], probs, FieldMode::Density).is_err());
    }

    proptest! {
        // α ∈ [0,1) for all finite valid inputs (saturating to 1.0 only when
        // σδ exceeds f64 resolution), monotone in both arguments.
        #[test]
        fn alpha_in_unit_interval(sigma in 0.0f64..1e4, delta in 1e-6f64..10.0) {
            let a = alpha_from_density(sigma, delta).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            if sigma * delta < 30.0 {
                prop_assert!(a < 1.0);
            }
            let a2 = alpha_from_density(sigma + 1.0, delta).unwrap();
            let a3 = alpha_from_density(sigma, delta + 0.5).unwrap();
            prop_assert!(a2 >= a);
            prop_assert!(a3 >= a);
        }
    }
}
