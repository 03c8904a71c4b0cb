//! Coarse-shape frontend: analytic SDFs, lattice sampling, marching cubes,
//! unit-cube normalization and area-uniform surface sampling.

mod grid;
mod marching_cubes;
mod mc_table;
mod sdf;

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::TriangleMesh;

pub use grid::{sample_grid, Bounds, OccupancyGrid};
pub use marching_cubes::marching_cubes;
pub use sdf::{lattice_value, occupancy_at, value_noise, ScalarField, FAR};

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("grid resolution must be at least 2 per axis, got {0:?}")]
    Resolution([usize; 3]),
    #[error("grid bounds must be finite with min < max on every axis")]
    Bounds,
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("mesh has zero extent")]
    ZeroExtent,
    #[error("mesh has zero surface area")]
    ZeroArea,
    #[error("invalid scene: {0}")]
    Scene(#[from] serde_json::Error),
}

/// Declarative scene consumed by the `extract` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub field: ScalarField,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub resolution: Option<usize>,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self, FieldError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Samples the scene and extracts its zero level set.
    pub fn extract(&self, resolution: usize) -> Result<TriangleMesh, FieldError> {
        let grid = sample_grid(&self.field, [resolution; 3], self.bounds)?;
        Ok(marching_cubes(&grid, 0.0))
    }
}

/// Maps original coordinates to normalized ones: `p * scale + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCubeTransform {
    pub scale: f64,
    pub translation: DVec3,
}

impl UnitCubeTransform {
    pub fn apply(&self, p: DVec3) -> DVec3 {
        p * self.scale + self.translation
    }

    pub fn invert(&self, p: DVec3) -> DVec3 {
        (p - self.translation) / self.scale
    }
}

/// Uniformly rescales and recenters a mesh so its bounding box is centered at
/// the origin with longest side exactly 1.
pub fn normalize_to_unit_cube(
    mesh: &TriangleMesh,
) -> Result<(TriangleMesh, UnitCubeTransform), FieldError> {
    let (lo, hi) = mesh.bounds().ok_or(FieldError::EmptyMesh)?;
    let longest = (hi - lo).max_element();
    if longest <= 0.0 || !longest.is_finite() {
        return Err(FieldError::ZeroExtent);
    }
    let scale = 1.0 / longest;
    let translation = -(lo + hi) * 0.5 * scale;
    let t = UnitCubeTransform { scale, translation };
    let out = TriangleMesh {
        vertices: mesh.vertices.iter().map(|&v| t.apply(v)).collect(),
        faces: mesh.faces.clone(),
    };
    Ok((out, t))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<DVec3>,
    pub normals: Vec<DVec3>,
    /// Face each sample was drawn from.
    pub faces: Vec<usize>,
}

/// Draws `n` points area-uniformly: a face is picked with probability
/// proportional to its area, then a point uniformly inside it. Each sample
/// carries the normal of its face.
pub fn sample_surface(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<SurfaceSamples, FieldError> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(FieldError::ZeroArea);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SurfaceSamples {
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        faces: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let f = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let [a, b, c] = mesh.corners(f);
        out.points.push(a + (b - a) * u + (c - a) * v);
        out.normals.push(mesh.face_cross(f).normalize_or_zero());
        out.faces.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn normalize_box() {
        let mesh = shapes::cuboid(DVec3::new(2.0, 1.0, 1.0), DVec3::new(2.0, 1.0, 1.0));
        let (out, t) = normalize_to_unit_cube(&mesh).unwrap();
        assert_eq!(t.scale, 0.25);
        let (lo, hi) = out.bounds().unwrap();
        assert!((lo - DVec3::new(-0.5, -0.25, -0.25)).length() < 1e-12);
        assert!((hi - DVec3::new(0.5, 0.25, 0.25)).length() < 1e-12);
        assert!((t.invert(out.vertices[3]) - mesh.vertices[3]).length() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mesh = shapes::icosphere(3.0, 1).translated(DVec3::new(1.0, -2.0, 0.5));
        let (once, _) = normalize_to_unit_cube(&mesh).unwrap();
        let (twice, t) = normalize_to_unit_cube(&once).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.translation.length() < 1e-12);
        for (a, b) in once.vertices.iter().zip(&twice.vertices) {
            assert!((*a - *b).length() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let point = TriangleMesh {
            vertices: vec![DVec3::ONE],
            faces: vec![],
        };
        assert!(matches!(normalize_to_unit_cube(&point), Err(FieldError::ZeroExtent)));
        assert!(matches!(
            normalize_to_unit_cube(&TriangleMesh::empty()),
            Err(FieldError::EmptyMesh)
        ));
    }

    #[test]
    fn samples_on_single_triangle() {
        let tri = TriangleMesh::new(
            vec![DVec3::ZERO, DVec3::new(1.0, 0.0, 0.5), DVec3::new(0.0, 1.0, 0.25)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let n = tri.face_normal(0).unwrap();
        let s = sample_surface(&tri, 1000, 3).unwrap();
        assert_eq!(s.points.len(), 1000);
        for (p, pn) in s.points.iter().zip(&s.normals) {
            assert!(n.dot(*p).abs() < 1e-9);
            assert!((*pn - n).length() < 1e-12);
        }
        assert_eq!(s, sample_surface(&tri, 1000, 3).unwrap());
    }

    #[test]
    fn area_proportional_split() {
        // Areas 1 and 3; expected share 25% with sigma = sqrt(p(1-p)/n) ~ 0.14%.
        let mesh = TriangleMesh::new(
            vec![
                DVec3::ZERO,
                DVec3::new(2.0, 0.0, 0.0),
                DVec3::new(0.0, 1.0, 0.0),
                DVec3::new(10.0, 0.0, 0.0),
                DVec3::new(12.0, 0.0, 0.0),
                DVec3::new(10.0, 3.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 100_000;
        let s = sample_surface(&mesh, n, 17).unwrap();
        let first = s.faces.iter().filter(|&&f| f == 0).count() as f64 / n as f64;
        assert!((first - 0.25).abs() < 0.015, "{first}");
    }

    #[test]
    fn zero_samples_and_zero_area() {
        let s = sample_surface(&shapes::tetrahedron(), 0, 1).unwrap();
        assert!(s.points.is_empty() && s.normals.is_empty());
        let flat = TriangleMesh::new(
            vec![DVec3::ZERO, DVec3::X, DVec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(sample_surface(&flat, 10, 1), Err(FieldError::ZeroArea)));
    }

    #[test]
    fn scene_parses_with_defaults() {
        let scene = Scene::from_json(r#"{"field":{"type":"sphere","radius":0.4}}"#).unwrap();
        assert_eq!(scene.bounds, Bounds::default());
        let m = scene.extract(24).unwrap();
        assert!(!m.is_empty());
        assert!(Scene::from_json("{").is_err());
    }
}
