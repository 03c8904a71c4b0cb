use glam::DVec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FieldError, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: DVec3,
    pub max: DVec3,
}

impl Bounds {
    pub fn new(min: DVec3, max: DVec3) -> Self {
        Self { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Self::new(DVec3::splat(-half), DVec3::splat(half))
    }

    pub fn extent(&self) -> DVec3 {
        self.max - self.min
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min.cmplt(self.max).all()
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::cube(0.5)
    }
}

/// Signed field samples on a regular lattice of nodes, x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: [usize; 3],
    pub bounds: Bounds,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Node spacing per axis.
    pub fn cell_size(&self) -> DVec3 {
        let r = self.resolution;
        self.bounds.extent()
            / DVec3::new((r[0] - 1) as f64, (r[1] - 1) as f64, (r[2] - 1) as f64)
    }

    #[inline]
    pub fn node_position(&self, i: usize, j: usize, k: usize) -> DVec3 {
        node_position(&self.bounds, self.resolution, i, j, k)
    }

    /// Thresholded view: `true` where the stored value is `<= 0`.
    pub fn occupancy(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v <= 0.0).collect()
    }
}

#[inline]
fn node_position(b: &Bounds, r: [usize; 3], i: usize, j: usize, k: usize) -> DVec3 {
    let t = DVec3::new(
        i as f64 / (r[0] - 1) as f64,
        j as f64 / (r[1] - 1) as f64,
        k as f64 / (r[2] - 1) as f64,
    );
    b.min + t * b.extent()
}

/// Samples the field at every lattice node. Slabs along z are evaluated in
/// parallel; each node is independent so the result matches a sequential scan.
pub fn sample_grid(
    field: &ScalarField,
    resolution: [usize; 3],
    bounds: Bounds,
) -> Result<OccupancyGrid, FieldError> {
    if resolution.iter().any(|&r| r < 2) {
        return Err(FieldError::Resolution(resolution));
    }
    if !bounds.is_valid() {
        return Err(FieldError::Bounds);
    }
    let [nx, ny, nz] = resolution;
    let mut values = vec![0.0; nx * ny * nz];
    values
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    slab[i + nx * j] = field.eval(node_position(&bounds, resolution, i, j, k));
                }
            }
        });
    Ok(OccupancyGrid {
        resolution,
        bounds,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field() {
        let g = sample_grid(&ScalarField::Constant { value: -1.0 }, [2; 3], Bounds::default())
            .unwrap();
        assert_eq!(g.values, vec![-1.0; 8]);
    }

    #[test]
    fn sphere_samples() {
        let g = sample_grid(&ScalarField::sphere(0.4), [3; 3], Bounds::default()).unwrap();
        assert!((g.value(1, 1, 1) + 0.4).abs() < 1e-15);
        assert!((g.value(0, 0, 0) - (0.75f64.sqrt() - 0.4)).abs() < 1e-15);
        assert!((g.value(2, 2, 0) - (0.75f64.sqrt() - 0.4)).abs() < 1e-15);
        assert_eq!(g.occupancy().iter().filter(|&&o| o).count(), 1);
    }

    #[test]
    fn rejects_low_resolution_and_bad_bounds() {
        let f = ScalarField::sphere(0.4);
        assert!(matches!(
            sample_grid(&f, [1, 4, 4], Bounds::default()),
            Err(FieldError::Resolution(_))
        ));
        let flat = Bounds::new(DVec3::ZERO, DVec3::new(1.0, 0.0, 1.0));
        assert!(matches!(sample_grid(&f, [4; 3], flat), Err(FieldError::Bounds)));
    }

    #[test]
    fn parallel_matches_sequential() {
        let f = ScalarField::sphere(0.3).displaced(0.05, 5.0, 11);
        let g = sample_grid(&f, [9, 7, 5], Bounds::default()).unwrap();
        for k in 0..5 {
            for j in 0..7 {
                for i in 0..9 {
                    assert_eq!(g.value(i, j, k), f.eval(g.node_position(i, j, k)));
                }
            }
        }
    }
}
