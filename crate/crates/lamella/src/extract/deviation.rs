//! Dual-vertex deviation: spread of the distances from each dual vertex to
//! its surrounding edge crossings. Zero when every crossing is equidistant.

use glam::DVec3;

use crate::error::{Error, Result};

/// One extraction cell's dual vertex and the edge crossings around it.
#[derive(Debug, Clone)]
pub struct DualCell {
    pub dual_vertex: DVec3,
    pub crossings: Vec<DVec3>,
}

impl DualCell {
    /// Dual vertex at the centroid of the crossings.
    pub fn centered(crossings: Vec<DVec3>) -> Result<Self> {
        if crossings.is_empty() {
            return Err(Error::domain("dual cell needs at least one crossing"));
        }
        let dual_vertex = crossings.iter().copied().sum::<DVec3>() / crossings.len() as f64;
        Ok(DualCell {
            dual_vertex,
            crossings,
        })
    }
}

/// Mean absolute deviation of a sample set.
fn mad(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).abs()).sum::<f64>() / values.len() as f64
}

/// Sum over cells of the MAD of dual-vertex-to-crossing distances.
/// An empty cell list contributes zero.
pub fn deviation_loss(cells: &[DualCell]) -> Result<f64> {
    let mut total = 0.0;
    for cell in cells {
        if cell.crossings.is_empty() {
            return Err(Error::domain("dual cell needs at least one crossing"));
        }
        let distances: Vec<f64> = cell
            .crossings
            .iter()
            .map(|u| (*u - cell.dual_vertex).length())
            .collect();
        total += mad(&distances);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_crossings_have_zero_deviation() {
        let crossings = vec![
            DVec3::new(1.0, 0.0, 0.0),
            DVec3::new(-1.0, 0.0, 0.0),
            DVec3::new(0.0, 1.0, 0.0),
            DVec3::new(0.0, -1.0, 0.0),
        ];
        let cell = DualCell {
            dual_vertex: DVec3::ZERO,
            crossings,
        };
        assert_eq!(deviation_loss(&[cell]).unwrap(), 0.0);
    }

    #[test]
    fn distances_one_and_three_give_mad_one() {
        let cell = DualCell {
            dual_vertex: DVec3::ZERO,
            crossings: vec![DVec3::new(1.0, 0.0, 0.0), DVec3::new(-3.0, 0.0, 0.0)],
        };
        assert!((deviation_loss(&[cell]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cells_sum() {
        let make = || DualCell {
            dual_vertex: DVec3::ZERO,
            crossings: vec![DVec3::new(1.0, 0.0, 0.0), DVec3::new(-3.0, 0.0, 0.0)],
        };
        assert!((deviation_loss(&[make(), make()]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_list_is_zero_and_empty_cell_errors() {
        assert_eq!(deviation_loss(&[]).unwrap(), 0.0);
        let bad = DualCell {
            dual_vertex: DVec3::ZERO,
            crossings: vec![],
        };
        assert!(deviation_loss(&[bad]).is_err());
        assert!(DualCell::centered(vec![]).is_err());
    }
}
