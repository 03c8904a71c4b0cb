//! Indexed triangle meshes: adjacency, normals, manifold checks and OBJ I/O.
//!
//! The canonical representation is a vertex array plus a face list of index
//! triples. Faces wind counter-clockwise when seen from outside, so the
//! right-handed cross product of a face's edges points outward. Adjacency is
//! derived on demand and never stored on the mesh itself, because remeshing
//! rewrites connectivity wholesale.

mod obj;

use std::collections::BTreeMap;

use glam::DVec3;
use serde::{Deserialize, Serialize};

pub use obj::{load_obj, save_obj};

/// Faces whose area falls below this threshold are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Normal returned for vertices whose incident faces have no usable area.
pub const FALLBACK_NORMAL: DVec3 = DVec3::Z;

pub type Face = [usize; 3];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {index}, but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} repeats vertex {index}")]
    RepeatedIndex { face: usize, index: usize },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<DVec3>,
    pub faces: Vec<Face>,
}

impl TriangleMesh {
    /// Builds a mesh and checks the index and finiteness invariants.
    pub fn new(vertices: Vec<DVec3>, faces: Vec<Face>) -> Result<Self, MeshError> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(MeshError::NonFinite(i));
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &idx in f {
                if idx >= n {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: idx,
                        vertex_count: n,
                    });
                }
            }
            if f[0] == f[1] || f[0] == f[2] {
                return Err(MeshError::RepeatedIndex { face: fi, index: f[0] });
            }
            if f[1] == f[2] {
                return Err(MeshError::RepeatedIndex { face: fi, index: f[1] });
            }
        }
        Ok(())
    }

    /// Corner positions of face `f`.
    #[inline]
    pub fn corners(&self, f: usize) -> [DVec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal; its length is twice the face area.
    #[inline]
    pub fn face_cross(&self, f: usize) -> DVec3 {
        let [a, b, c] = self.corners(f);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).length()
    }

    /// Unit face normal, or `None` for degenerate faces.
    pub fn face_normal(&self, f: usize) -> Option<DVec3> {
        let c = self.face_cross(f);
        let len = c.length();
        (0.5 * len >= DEGENERATE_AREA).then(|| c / len)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounds of the vertex set, `None` when there are no vertices.
    pub fn bounds(&self) -> Option<(DVec3, DVec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        )
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = unique_edges(&self.faces);
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| self.vertices[a].distance(self.vertices[b]))
            .sum();
        total / edges.len() as f64
    }

    /// Signed enclosed volume (positive for outward-oriented closed meshes).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(self.vertices[b].cross(self.vertices[c])) / 6.0
            })
            .sum()
    }

    pub fn translated(&self, offset: DVec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v + offset).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Unordered edge key with the smaller index first.
#[inline]
pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn unique_edges(faces: &[Face]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|&[a, b, c]| [edge_key(a, b), edge_key(b, c), edge_key(c, a)])
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshAdjacency {
    /// Sorted, deduplicated neighbor lists.
    pub neighbors: Vec<Vec<usize>>,
    /// Incident faces per vertex, ascending.
    pub vertex_faces: Vec<Vec<usize>>,
    /// Faces adjacent to each unordered edge, ascending.
    pub edge_faces: BTreeMap<(usize, usize), Vec<usize>>,
}

impl MeshAdjacency {
    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_faces.len()
    }

    pub fn faces_of_edge(&self, a: usize, b: usize) -> &[usize] {
        self.edge_faces
            .get(&edge_key(a, b))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// 1-ring expansion of a vertex set.
    pub fn dilate(&self, selected: &[bool]) -> Vec<bool> {
        let mut out = selected.to_vec();
        for (i, &s) in selected.iter().enumerate() {
            if s {
                for &j in &self.neighbors[i] {
                    out[j] = true;
                }
            }
        }
        out
    }
}

pub fn build_adjacency(mesh: &TriangleMesh) -> Result<MeshAdjacency, MeshError> {
    mesh.validate()?;
    let n = mesh.vertices.len();
    let mut neighbors = vec![Vec::new(); n];
    let mut vertex_faces = vec![Vec::new(); n];
    let mut edge_faces: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (fi, &[a, b, c]) in mesh.faces.iter().enumerate() {
        for (u, v) in [(a, b), (b, c), (c, a)] {
            neighbors[u].push(v);
            neighbors[v].push(u);
            edge_faces.entry(edge_key(u, v)).or_default().push(fi);
        }
        vertex_faces[a].push(fi);
        vertex_faces[b].push(fi);
        vertex_faces[c].push(fi);
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    Ok(MeshAdjacency {
        neighbors,
        vertex_faces,
        edge_faces,
    })
}

/// Area-weighted vertex normals.
///
/// Degenerate faces contribute nothing; a vertex whose star has no area gets
/// [`FALLBACK_NORMAL`].
pub fn vertex_normals(mesh: &TriangleMesh) -> Vec<DVec3> {
    let mut acc = vertex_normal_sums(mesh);
    for n in &mut acc {
        *n = normalize_or_fallback(*n);
    }
    acc
}

/// Unnormalized per-vertex sums of face cross products (degenerate faces skipped).
pub(crate) fn vertex_normal_sums(mesh: &TriangleMesh) -> Vec<DVec3> {
    let mut acc = vec![DVec3::ZERO; mesh.vertices.len()];
    for (fi, &[a, b, c]) in mesh.faces.iter().enumerate() {
        let cross = mesh.face_cross(fi);
        if 0.5 * cross.length() < DEGENERATE_AREA {
            continue;
        }
        acc[a] += cross;
        acc[b] += cross;
        acc[c] += cross;
    }
    acc
}

pub(crate) fn normalize_or_fallback(v: DVec3) -> DVec3 {
    let len = v.length();
    if len > 0.0 && len.is_finite() {
        v / len
    } else {
        FALLBACK_NORMAL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub closed: bool,
    /// Edges without exactly two adjacent faces.
    pub edge_violations: usize,
    pub boundary_edges: usize,
    /// Edges with three or more adjacent faces.
    pub nonmanifold_edges: usize,
    pub isolated_vertices: usize,
    pub euler_characteristic: i64,
}

pub fn validate_manifold(mesh: &TriangleMesh) -> ManifoldReport {
    let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut used = vec![false; mesh.vertices.len()];
    for &[a, b, c] in &mesh.faces {
        for (u, v) in [(a, b), (b, c), (c, a)] {
            *edge_count.entry(edge_key(u, v)).or_default() += 1;
        }
        used[a] = true;
        used[b] = true;
        used[c] = true;
    }
    let boundary_edges = edge_count.values().filter(|&&c| c == 1).count();
    let nonmanifold_edges = edge_count.values().filter(|&&c| c > 2).count();
    let edge_violations = boundary_edges + nonmanifold_edges;
    ManifoldReport {
        closed: edge_violations == 0 && !mesh.faces.is_empty(),
        edge_violations,
        boundary_edges,
        nonmanifold_edges,
        isolated_vertices: used.iter().filter(|&&u| !u).count(),
        euler_characteristic: mesh.vertices.len() as i64 - edge_count.len() as i64
            + mesh.faces.len() as i64,
    }
}

/// Primitive meshes used throughout tests and examples.
pub mod shapes {
    use super::*;

    pub fn tetrahedron() -> TriangleMesh {
        let s = 1.0 / 3f64.sqrt();
        TriangleMesh {
            vertices: vec![
                DVec3::new(s, s, s),
                DVec3::new(s, -s, -s),
                DVec3::new(-s, s, -s),
                DVec3::new(-s, -s, s),
            ],
            faces: vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
        }
    }

    /// Axis-aligned box centered at `center` with outward winding.
    pub fn cuboid(center: DVec3, half: DVec3) -> TriangleMesh {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            vertices.push(center + DVec3::new(sx, sy, sz) * half);
        }
        let quads = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        let faces = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriangleMesh { vertices, faces }
    }

    /// Icosphere with `subdivisions` rounds of 1-to-4 splitting, projected onto
    /// a sphere of the given radius.
    pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<DVec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| DVec3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<Face> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            let mut mid = |a: usize, b: usize, vertices: &mut Vec<DVec3>| {
                *midpoint.entry(edge_key(a, b)).or_insert_with(|| {
                    vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                    vertices.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for &[a, b, c] in &faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        for v in &mut vertices {
            *v *= radius;
        }
        TriangleMesh { vertices, faces }
    }

    /// Flat `n`×`n` grid of quads in the z=0 plane spanning `[-half, half]²`,
    /// facing +z.
    pub fn grid_patch(n: usize, half: f64) -> TriangleMesh {
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                let x = -half + 2.0 * half * i as f64 / n as f64;
                let y = -half + 2.0 * half * j as f64 / n as f64;
                vertices.push(DVec3::new(x, y, 0.0));
            }
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut faces = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        TriangleMesh { vertices, faces }
    }
}

#[cfg(test)]
mod tests {
    use super::shapes::*;
    use super::*;

    fn single_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![DVec3::ZERO, DVec3::X, DVec3::Y],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn adjacency_of_single_triangle() {
        let adj = build_adjacency(&single_triangle()).unwrap();
        assert_eq!(adj.neighbors[0], vec![1, 2]);
        assert_eq!(adj.edge_count(), 3);
        assert!(adj.edge_faces.values().all(|f| f.len() == 1));
    }

    #[test]
    fn adjacency_of_tetrahedron() {
        let adj = build_adjacency(&tetrahedron()).unwrap();
        assert!(adj.neighbors.iter().all(|n| n.len() == 3));
        assert!(adj.edge_faces.values().all(|f| f.len() == 2));
        for (i, ns) in adj.neighbors.iter().enumerate() {
            for &j in ns {
                assert!(adj.neighbors[j].contains(&i));
            }
        }
    }

    #[test]
    fn adjacency_of_two_triangles() {
        let mesh = TriangleMesh::new(
            vec![DVec3::ZERO, DVec3::X, DVec3::Y, DVec3::new(1.0, 1.0, 0.0)],
            vec![[0, 1, 2], [2, 1, 3]],
        )
        .unwrap();
        let adj = build_adjacency(&mesh).unwrap();
        assert_eq!(adj.faces_of_edge(1, 2), &[0, 1]);
        assert_eq!(adj.faces_of_edge(0, 1).len(), 1);
        assert_eq!(adj.faces_of_edge(3, 2).len(), 1);
    }

    #[test]
    fn adjacency_rejects_bad_index() {
        let mesh = TriangleMesh {
            vertices: vec![DVec3::ZERO, DVec3::X, DVec3::Y],
            faces: vec![[0, 1, 5]],
        };
        assert!(matches!(
            build_adjacency(&mesh),
            Err(MeshError::IndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn new_rejects_repeated_index_and_nan() {
        assert!(matches!(
            TriangleMesh::new(vec![DVec3::ZERO, DVec3::X], vec![[0, 1, 1]]),
            Err(MeshError::RepeatedIndex { .. })
        ));
        assert!(matches!(
            TriangleMesh::new(vec![DVec3::new(f64::NAN, 0.0, 0.0)], vec![]),
            Err(MeshError::NonFinite(0))
        ));
    }

    #[test]
    fn planar_quad_normals_point_up() {
        let quad = grid_patch(1, 0.5);
        for n in vertex_normals(&quad) {
            assert!((n - DVec3::Z).length() < 1e-12);
        }
    }

    #[test]
    fn icosphere_normals_match_radial_direction() {
        // Deviation halves per subdivision level: 0.024, 0.012, 0.0059 at 2, 3, 4.
        let sphere = icosphere(1.0, 4);
        for (v, n) in sphere.vertices.iter().zip(vertex_normals(&sphere)) {
            assert!((n - v.normalize()).length() < 1e-2);
            assert!((n.length() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tetrahedron_normals_point_outward() {
        let tet = tetrahedron();
        let centroid = tet.vertices.iter().copied().sum::<DVec3>() / 4.0;
        for (v, n) in tet.vertices.iter().zip(vertex_normals(&tet)) {
            assert!(n.dot(*v - centroid) > 0.0);
        }
    }

    #[test]
    fn degenerate_star_uses_fallback() {
        let mesh = TriangleMesh::new(
            vec![DVec3::ZERO, DVec3::X, DVec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(vertex_normals(&mesh).iter().all(|&n| n == FALLBACK_NORMAL));
    }

    #[test]
    fn manifold_reports() {
        let tet = validate_manifold(&tetrahedron());
        assert!(tet.closed);
        assert_eq!(tet.euler_characteristic, 2);

        let tri = validate_manifold(&single_triangle());
        assert!(!tri.closed);
        assert_eq!(tri.boundary_edges, 3);
        assert_eq!(tri.edge_violations, 3);

        for k in 0..=3 {
            let r = validate_manifold(&icosphere(1.0, k));
            assert!(r.closed, "k = {k}");
            assert_eq!(r.euler_characteristic, 2);
            assert_eq!(r.isolated_vertices, 0);
        }
    }

    #[test]
    fn cuboid_is_closed_and_outward() {
        let cube = cuboid(DVec3::ZERO, DVec3::splat(0.5));
        assert!(validate_manifold(&cube).closed);
        assert!((cube.signed_volume() - 1.0).abs() < 1e-12);
        assert!(icosphere(1.0, 1).signed_volume() > 0.0);
    }
}
