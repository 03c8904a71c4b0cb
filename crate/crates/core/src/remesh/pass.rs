use std::collections::BTreeSet;

use glam::DVec3;

use super::{OptimizerState, RemeshError, RemeshParams};
use crate::mesh::{edge_key, validate_manifold, TriangleMesh, DEGENERATE_AREA};

const INTERIOR_VALENCE: i64 = 6;
const BOUNDARY_VALENCE: i64 = 4;

/// What a single [`remesh_pass`] did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RemeshStats {
    pub splits: usize,
    pub collapses: usize,
    pub flips: usize,
}

impl RemeshStats {
    pub fn changed(&self) -> bool {
        self.splits + self.collapses + self.flips > 0
    }
}

/// Mutable mesh with per-vertex incident face lists. Dead faces and vertices
/// stay in place until [`Work::finish`] compacts them away.
struct Work {
    pos: Vec<DVec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vfaces: Vec<Vec<usize>>,
    vert_alive: Vec<bool>,
    state: OptimizerState,
}

impl Work {
    fn new(mesh: &TriangleMesh, state: &OptimizerState) -> Self {
        let mut vfaces = vec![Vec::new(); mesh.vertices.len()];
        for (fi, f) in mesh.faces.iter().enumerate() {
            for &v in f {
                vfaces[v].push(fi);
            }
        }
        Self {
            pos: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            vfaces,
            vert_alive: vec![true; mesh.vertices.len()],
            state: state.clone(),
        }
    }

    fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.vfaces[a]
            .iter()
            .copied()
            .filter(|&f| self.faces[f].contains(&b))
            .collect()
    }

    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        self.vfaces[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect()
    }

    fn is_boundary(&self, v: usize) -> bool {
        self.neighbors(v)
            .into_iter()
            .any(|u| self.edge_faces(v, u).len() == 1)
    }

    fn target_valence(&self, v: usize) -> i64 {
        if self.is_boundary(v) {
            BOUNDARY_VALENCE
        } else {
            INTERIOR_VALENCE
        }
    }

    fn mobile(&self, v: usize) -> bool {
        self.state.mobility[v] > 0.0
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, &alive)| alive)
            .flat_map(|(&[a, b, c], _)| [edge_key(a, b), edge_key(b, c), edge_key(c, a)])
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn length(&self, (a, b): (usize, usize)) -> f64 {
        self.pos[a].distance(self.pos[b])
    }

    fn cross(&self, f: [usize; 3]) -> DVec3 {
        (self.pos[f[1]] - self.pos[f[0]]).cross(self.pos[f[2]] - self.pos[f[0]])
    }

    /// Face `f` rotated so that it starts with the directed edge `a -> b`.
    fn oriented(&self, f: usize, a: usize, b: usize) -> Option<[usize; 3]> {
        let t = self.faces[f];
        (0..3)
            .map(|k| [t[k], t[(k + 1) % 3], t[(k + 2) % 3]])
            .find(|r| r[0] == a && r[1] == b)
    }

    fn add_face(&mut self, f: [usize; 3]) -> usize {
        let id = self.faces.len();
        self.faces.push(f);
        self.face_alive.push(true);
        for v in f {
            self.vfaces[v].push(id);
        }
        id
    }

    fn split(&mut self, a: usize, b: usize) {
        let m = self.pos.len();
        self.pos.push(0.5 * (self.pos[a] + self.pos[b]));
        self.vert_alive.push(true);
        self.vfaces.push(Vec::new());
        self.state.push_average(a, b);
        for f in self.edge_faces(a, b) {
            let [x, y, z] = self
                .oriented(f, a, b)
                .or_else(|| self.oriented(f, b, a))
                .expect("face contains the edge");
            self.faces[f] = [x, m, z];
            self.vfaces[y].retain(|&g| g != f);
            self.vfaces[m].push(f);
            self.add_face([m, y, z]);
        }
    }

    /// Checks and performs the collapse of `a`-`b` into `a` at the midpoint.
    fn try_collapse(&mut self, a: usize, b: usize) -> bool {
        if !(self.mobile(a) && self.mobile(b)) || self.is_boundary(a) || self.is_boundary(b) {
            return false;
        }
        let shared = self.edge_faces(a, b);
        if shared.len() != 2 {
            return false;
        }
        let opposite: BTreeSet<usize> = shared
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&v| v != a && v != b)
            .collect();
        if opposite.len() != 2 {
            return false;
        }
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        // Link condition: the only common neighbors are the two opposite vertices.
        if na.intersection(&nb).copied().collect::<BTreeSet<_>>() != opposite {
            return false;
        }
        if na.len() + nb.len() < 3 + 4 || opposite.iter().any(|&c| self.neighbors(c).len() <= 3) {
            return false;
        }
        let mid = 0.5 * (self.pos[a] + self.pos[b]);
        let mut touched: Vec<usize> = self.vfaces[a].iter().chain(&self.vfaces[b]).copied().collect();
        touched.sort_unstable();
        touched.dedup();
        touched.retain(|f| !shared.contains(f));
        for &f in &touched {
            let before = self.cross(self.faces[f]);
            let moved = self.faces[f].map(|v| if v == a || v == b { usize::MAX } else { v });
            let p = |v: usize| if v == usize::MAX { mid } else { self.pos[v] };
            let after = (p(moved[1]) - p(moved[0])).cross(p(moved[2]) - p(moved[0]));
            if 0.5 * after.length() < DEGENERATE_AREA || after.dot(before) <= 0.0 {
                return false;
            }
        }

        for &f in &shared {
            self.face_alive[f] = false;
            for v in self.faces[f] {
                self.vfaces[v].retain(|&g| g != f);
            }
        }
        for f in std::mem::take(&mut self.vfaces[b]) {
            for v in &mut self.faces[f] {
                if *v == b {
                    *v = a;
                }
            }
            self.vfaces[a].push(f);
        }
        self.vert_alive[b] = false;
        self.pos[a] = mid;
        self.state.merge_into(a, b);
        true
    }

    /// Flips `a`-`b` to the other diagonal when that strictly lowers the
    /// squared valence deviation of the four vertices involved.
    fn try_flip(&mut self, a: usize, b: usize) -> bool {
        let shared = self.edge_faces(a, b);
        if shared.len() != 2 {
            return false;
        }
        let (f1, f2) = if self.oriented(shared[0], a, b).is_some() {
            (shared[0], shared[1])
        } else {
            (shared[1], shared[0])
        };
        let (Some([_, _, c]), Some([_, _, d])) = (self.oriented(f1, a, b), self.oriented(f2, b, a))
        else {
            return false;
        };
        if c == d || ![a, b, c, d].iter().all(|&v| self.mobile(v)) {
            return false;
        }
        let val = [a, b, c, d].map(|v| self.neighbors(v).len() as i64);
        if val[0] <= 3 || val[1] <= 3 || self.neighbors(c).contains(&d) {
            return false;
        }
        let target = [a, b, c, d].map(|v| self.target_valence(v));
        let dev = |delta: [i64; 4]| -> i64 {
            (0..4).map(|k| (val[k] + delta[k] - target[k]).pow(2)).sum()
        };
        if dev([-1, -1, 1, 1]) >= dev([0; 4]) {
            return false;
        }
        let (n1, n2) = (self.cross([a, d, c]), self.cross([d, b, c]));
        let old = self.cross([a, b, c]) + self.cross([b, a, d]);
        if 0.5 * n1.length() < DEGENERATE_AREA
            || 0.5 * n2.length() < DEGENERATE_AREA
            || n1.dot(n2) <= 0.0
            || n1.dot(old) <= 0.0
            || n2.dot(old) <= 0.0
        {
            return false;
        }
        self.faces[f1] = [a, d, c];
        self.faces[f2] = [d, b, c];
        self.vfaces[a].retain(|&g| g != f2);
        self.vfaces[b].retain(|&g| g != f1);
        self.vfaces[c].push(f2);
        self.vfaces[d].push(f1);
        true
    }

    fn finish(self) -> (TriangleMesh, OptimizerState) {
        let keep: Vec<usize> = (0..self.pos.len()).filter(|&v| self.vert_alive[v]).collect();
        let mut remap = vec![usize::MAX; self.pos.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let faces = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, &alive)| alive)
            .map(|(f, _)| f.map(|v| remap[v]))
            .collect();
        let mesh = TriangleMesh {
            vertices: keep.iter().map(|&v| self.pos[v]).collect(),
            faces,
        };
        (mesh, self.state.select(&keep))
    }
}

/// One connectivity pass: split long edges, collapse short ones, then flip
/// edges toward regular valence.
///
/// * Every edge longer than `split_factor * l_target` at the start of the
///   pass is split at its midpoint.
/// * Edges shorter than `collapse_factor * l_target` are collapsed to their
///   midpoint, shortest first, when the link condition holds, no incident
///   face turns over or degenerates, and both endpoints are interior.
/// * Interior edges are flipped when the summed squared deviation from
///   valence 6 (4 on the boundary) strictly decreases.
///
/// Vertices with zero mobility are never moved and no operation touches
/// them. New vertices get the averaged state of their edge endpoints.
pub fn remesh_pass(
    mesh: &TriangleMesh,
    state: &OptimizerState,
    params: &RemeshParams,
) -> Result<(TriangleMesh, OptimizerState, RemeshStats), RemeshError> {
    params.validate()?;
    mesh.validate()?;
    state.check_aligned(mesh.vertices.len())?;
    let report = validate_manifold(mesh);
    if report.nonmanifold_edges > 0 {
        return Err(RemeshError::NonManifold(format!(
            "{} edges have more than two faces",
            report.nonmanifold_edges
        )));
    }

    let mut work = Work::new(mesh, state);
    let mut stats = RemeshStats::default();

    let split_len = params.split_factor * params.l_target;
    let long: Vec<(usize, usize)> = work
        .edges()
        .into_iter()
        .filter(|&e| work.length(e) > split_len)
        .collect();
    for (a, b) in long {
        if work.mobile(a) && work.mobile(b) {
            work.split(a, b);
            stats.splits += 1;
        }
    }

    let collapse_len = params.collapse_factor * params.l_target;
    let mut short: Vec<(f64, (usize, usize))> = work
        .edges()
        .into_iter()
        .map(|e| (work.length(e), e))
        .filter(|&(l, _)| l < collapse_len)
        .collect();
    short.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    for (_, (a, b)) in short {
        if !(work.vert_alive[a] && work.vert_alive[b]) || work.edge_faces(a, b).is_empty() {
            continue;
        }
        if work.length((a, b)) < collapse_len && work.try_collapse(a, b) {
            stats.collapses += 1;
        }
    }

    for (a, b) in work.edges() {
        if work.try_flip(a, b) {
            stats.flips += 1;
        }
    }

    let (mesh, state) = work.finish();
    Ok((mesh, state, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(l: f64) -> RemeshParams {
        RemeshParams {
            l_target: l,
            ..RemeshParams::default()
        }
    }

    fn valences(mesh: &TriangleMesh) -> Vec<usize> {
        crate::mesh::build_adjacency(mesh)
            .unwrap()
            .neighbors
            .iter()
            .map(Vec::len)
            .collect()
    }

    #[test]
    fn tetrahedron_is_preserved() {
        let tet = shapes::tetrahedron();
        let s = OptimizerState::new(&tet);
        let (out, state, stats) = remesh_pass(&tet, &s, &params(100.0)).unwrap();
        assert_eq!(out, tet);
        assert_eq!(state, s);
        assert!(!stats.changed());
    }

    #[test]
    fn icosphere_refines_under_small_target() {
        let sphere = shapes::icosphere(1.0, 2);
        let edges = crate::mesh::build_adjacency(&sphere).unwrap().edge_count();
        let s = OptimizerState::new(&sphere);
        let (out, state, stats) =
            remesh_pass(&sphere, &s, &params(0.5 * sphere.mean_edge_length())).unwrap();
        assert_eq!(stats.splits, edges);
        assert!(out.vertices.len() > sphere.vertices.len());
        let r = validate_manifold(&out);
        assert!(r.closed);
        assert_eq!(r.euler_characteristic, 2);
        state.check_aligned(out.vertices.len()).unwrap();
    }

    #[test]
    fn flip_restores_regular_valence() {
        // A regular lattice has interior valence 6. Flipping one interior
        // diagonal produces the (7, 7, 5, 5) configuration.
        let n = 6;
        let h = 1.0 / n as f64;
        let mut grid = shapes::grid_patch(n, 0.5);
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let (a, b) = (idx(3, 3), idx(4, 4));
        let f1 = grid.faces.iter().position(|f| *f == [a, idx(4, 3), b]).unwrap();
        let f2 = grid.faces.iter().position(|f| *f == [a, b, idx(3, 4)]).unwrap();
        let (c, d) = (idx(4, 3), idx(3, 4));
        grid.faces[f1] = [a, c, d];
        grid.faces[f2] = [c, b, d];
        let v = valences(&grid);
        assert_eq!([v[a], v[b], v[c], v[d]], [5, 5, 7, 7]);

        let s = OptimizerState::new(&grid);
        let (out, _, stats) = remesh_pass(&grid, &s, &params(1.15 * h)).unwrap();
        assert_eq!(stats, RemeshStats { splits: 0, collapses: 0, flips: 1 });
        let v = valences(&out);
        assert_eq!([v[a], v[b], v[c], v[d]], [6, 6, 6, 6]);
        assert_eq!(out.vertices, grid.vertices);
    }

    #[test]
    fn stable_mesh_is_a_fixed_point() {
        let sphere = shapes::icosphere(1.0, 3);
        let s = OptimizerState::new(&sphere);
        let (out, state, stats) = remesh_pass(&sphere, &s, &params(sphere.mean_edge_length())).unwrap();
        assert!(!stats.changed());
        assert_eq!(out, sphere);
        assert_eq!(state, s);
    }

    #[test]
    fn frozen_vertices_are_untouched() {
        let sphere = shapes::icosphere(1.0, 2);
        let mut s = OptimizerState::new(&sphere);
        for (m, v) in s.mobility.iter_mut().zip(&sphere.vertices) {
            if v.x < 0.0 {
                *m = 0.0;
            }
        }
        let (out, state, stats) =
            remesh_pass(&sphere, &s, &params(0.4 * sphere.mean_edge_length())).unwrap();
        assert!(stats.splits > 0);
        for v in sphere.vertices.iter().filter(|v| v.x < 0.0) {
            assert!(out.vertices.contains(v));
        }
        state.check_aligned(out.vertices.len()).unwrap();
    }

    #[test]
    fn rejects_nonmanifold_input() {
        let mesh = TriangleMesh::new(
            vec![DVec3::ZERO, DVec3::X, DVec3::Y, DVec3::Z, DVec3::NEG_Y],
            vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]],
        )
        .unwrap();
        let s = OptimizerState::new(&mesh);
        assert!(matches!(
            remesh_pass(&mesh, &s, &params(0.5)),
            Err(RemeshError::NonManifold(_))
        ));
    }

    #[test]
    fn randomized_passes_keep_topology() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let mut mesh = shapes::icosphere(1.0, 1 + rng.random_range(0..2));
            for v in &mut mesh.vertices {
                *v *= 1.0 + rng.random_range(-0.15..0.15);
            }
            let mut state = OptimizerState::new(&mesh);
            for _ in 0..3 {
                let l = mesh.mean_edge_length() * rng.random_range(0.3..2.0);
                let (m, s, _) = remesh_pass(&mesh, &state, &params(l)).unwrap();
                let r = validate_manifold(&m);
                assert!(r.closed && r.euler_characteristic == 2);
                s.check_aligned(m.vertices.len()).unwrap();
                (mesh, state) = (m, s);
            }
        }
    }
}
