//! Uniform grid-bucket index for nearest-neighbor queries over point sets.
//!
//! Queries are deterministic: candidate cells are scanned in a fixed order and
//! ties break to the lowest point index.

use glam::DVec3;

/// Grid-bucket nearest-neighbor index over a fixed point set.
pub struct PointIndex {
    points: Vec<DVec3>,
    origin: DVec3,
    cell: f64,
    dims: [i64; 3],
    /// CSR layout: bucket i holds point ids `entries[starts[i]..starts[i+1]]`.
    starts: Vec<u32>,
    entries: Vec<u32>,
}

impl PointIndex {
    pub fn build(points: &[DVec3]) -> PointIndex {
        assert!(!points.is_empty(), "cannot index an empty point set");
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = min.min(*p);
            max = max.max(*p);
        }
        let extent = (max - min).max_element().max(1e-9);
        // Aim for a handful of points per bucket.
        let target = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = (extent / target).max(1e-9);
        let dims = [
            (((max.x - min.x) / cell).floor() as i64 + 1).max(1),
            (((max.y - min.y) / cell).floor() as i64 + 1).max(1),
            (((max.z - min.z) / cell).floor() as i64 + 1).max(1),
        ];
        let bucket_count = (dims[0] * dims[1] * dims[2]) as usize;
        let bucket_of = |p: &DVec3| -> usize {
            let ix = (((p.x - min.x) / cell).floor() as i64).clamp(0, dims[0] - 1);
            let iy = (((p.y - min.y) / cell).floor() as i64).clamp(0, dims[1] - 1);
            let iz = (((p.z - min.z) / cell).floor() as i64).clamp(0, dims[2] - 1);
            ((iz * dims[1] + iy) * dims[0] + ix) as usize
        };
        let mut counts = vec![0u32; bucket_count + 1];
        for p in points {
            counts[bucket_of(p) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut cursor = starts.clone();
        let mut entries = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let b = bucket_of(p);
            entries[cursor[b] as usize] = i as u32;
            cursor[b] += 1;
        }
        PointIndex {
            points: points.to_vec(),
            origin: min,
            cell,
            dims,
            starts,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> DVec3 {
        self.points[id]
    }

    fn cell_coords(&self, p: DVec3) -> [i64; 3] {
        [
            ((p.x - self.origin.x) / self.cell).floor() as i64,
            ((p.y - self.origin.y) / self.cell).floor() as i64,
            ((p.z - self.origin.z) / self.cell).floor() as i64,
        ]
    }

    /// Index and squared distance of the nearest point; ties break to the
    /// lowest index.
    pub fn nearest(&self, query: DVec3) -> (usize, f64) {
        let c = self.cell_coords(query);
        let mut best = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        let mut ring = 0i64;
        loop {
            // Once a candidate exists, stop when the next ring cannot beat it.
            if best != usize::MAX {
                let safe = (ring - 1).max(0) as f64 * self.cell;
                if best_d2 <= safe * safe {
                    break;
                }
            }
            let mut any_cell = false;
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (x, y, z) = (c[0] + dx, c[1] + dy, c[2] + dz);
                        if x < 0 || y < 0 || z < 0 || x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
                            continue;
                        }
                        any_cell = true;
                        let b = ((z * self.dims[1] + y) * self.dims[0] + x) as usize;
                        for &id in &self.entries[self.starts[b] as usize..self.starts[b + 1] as usize] {
                            let d2 = (self.points[id as usize] - query).length_squared();
                            if d2 < best_d2 || (d2 == best_d2 && (id as usize) < best) {
                                best_d2 = d2;
                                best = id as usize;
                            }
                        }
                    }
                }
            }
            // Degenerate guard: the query may be far outside the indexed bounds.
            if !any_cell && best != usize::MAX {
                break;
            }
            if !any_cell && ring > self.dims[0] + self.dims[1] + self.dims[2] {
                // Entire grid scanned; fall back to brute force.
                for (i, p) in self.points.iter().enumerate() {
                    let d2 = (*p - query).length_squared();
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = i;
                    }
                }
                break;
            }
            ring += 1;
        }
        (best, best_d2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<DVec3> = (0..500)
            .map(|_| DVec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let index = PointIndex::build(&points);
        for _ in 0..300 {
            let q = DVec3::new(
                rng.gen::<f64>() * 2.0 - 0.5,
                rng.gen::<f64>() * 2.0 - 0.5,
                rng.gen::<f64>() * 2.0 - 0.5,
            );
            let (id, d2) = index.nearest(q);
            let (bid, bd2) = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (*p - q).length_squared()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(id, bid);
            assert!((d2 - bd2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_point_and_far_queries() {
        let index = PointIndex::build(&[DVec3::ZERO]);
        let (id, d2) = index.nearest(DVec3::new(100.0, 0.0, 0.0));
        assert_eq!(id, 0);
        assert!((d2 - 10000.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_degenerate_bounds() {
        let points: Vec<DVec3> = (0..10).map(|i| DVec3::new(i as f64, 0.0, 0.0)).collect();
        let index = PointIndex::build(&points);
        let (id, _) = index.nearest(DVec3::new(3.4, 5.0, -2.0));
        assert_eq!(id, 3);
    }
}
