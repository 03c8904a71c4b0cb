use glam::{DVec2, DVec3};

use super::camera::{Basis, Projected};
use super::{Camera, NormalMap, Projection, RenderError};
use crate::mesh::{normalize_or_fallback, vertex_normal_sums, TriangleMesh, DEGENERATE_AREA};

const NO_FACE: u32 = u32::MAX;
const NEAR: f64 = 1e-6;

/// Per-pixel visibility: the front-most front-facing triangle at each pixel
/// center and the screen-space barycentric weights of the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragments {
    pub width: u32,
    pub height: u32,
    face: Vec<u32>,
    bary: Vec<[f64; 3]>,
    depth: Vec<f64>,
}

impl Fragments {
    pub fn face(&self, pixel: usize) -> Option<usize> {
        let f = self.face[pixel];
        (f != NO_FACE).then_some(f as usize)
    }

    pub fn barycentric(&self, pixel: usize) -> [f64; 3] {
        self.bary[pixel]
    }

    /// View depth of the visible surface, `f64::INFINITY` where uncovered.
    pub fn depth(&self, pixel: usize) -> f64 {
        self.depth[pixel]
    }

    pub fn covered(&self, pixel: usize) -> bool {
        self.face[pixel] != NO_FACE
    }

    /// World position of the visible surface sample at `pixel`.
    pub fn surface_point(&self, mesh: &TriangleMesh, pixel: usize) -> Option<DVec3> {
        let f = self.face(pixel)?;
        let [a, b, c] = mesh.corners(f);
        let w = self.bary[pixel];
        Some(a * w[0] + b * w[1] + c * w[2])
    }
}

/// Smooth vertex normals together with the unnormalized sums they came from,
/// which the backward pass needs.
#[derive(Debug, Clone)]
pub struct VertexNormals {
    sums: Vec<DVec3>,
    pub normals: Vec<DVec3>,
}

impl VertexNormals {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let sums = vertex_normal_sums(mesh);
        let normals = sums.iter().map(|&s| normalize_or_fallback(s)).collect();
        Self { sums, normals }
    }

    /// Chains gradients with respect to the unit vertex normals back to the
    /// vertex positions, adding into `d_positions`.
    pub fn backward(&self, mesh: &TriangleMesh, d_normals: &[DVec3], d_positions: &mut [DVec3]) {
        let d_sums: Vec<DVec3> = self
            .sums
            .iter()
            .zip(&self.normals)
            .zip(d_normals)
            .map(|((&s, &n), &g)| {
                let len = s.length();
                if len > 0.0 && len.is_finite() {
                    (g - n * n.dot(g)) / len
                } else {
                    DVec3::ZERO
                }
            })
            .collect();
        for (fi, &[i0, i1, i2]) in mesh.faces.iter().enumerate() {
            let [p0, p1, p2] = mesh.corners(fi);
            let (e1, e2) = (p1 - p0, p2 - p0);
            if 0.5 * e1.cross(e2).length() < DEGENERATE_AREA {
                continue;
            }
            let g = d_sums[i0] + d_sums[i1] + d_sums[i2];
            let d_e1 = e2.cross(g);
            let d_e2 = g.cross(e1);
            d_positions[i1] += d_e1;
            d_positions[i2] += d_e2;
            d_positions[i0] -= d_e1 + d_e2;
        }
    }
}

#[inline]
fn cross2(a: DVec2, b: DVec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Edge function of the directed edge `u -> v` at `p`, evaluated in a fixed
/// vertex order so that the two triangles sharing an edge see exactly
/// negated values.
#[inline]
fn edge_function(u: usize, v: usize, qu: DVec2, qv: DVec2, p: DVec2) -> f64 {
    if u < v {
        cross2(qv - qu, p - qu)
    } else {
        -cross2(qu - qv, p - qv)
    }
}

/// Tie rule for samples exactly on an edge. `d` is the edge direction with
/// the interior on its positive side; exactly one of `d` and `-d` owns the
/// edge, so shared edges are neither skipped nor drawn twice.
#[inline]
fn owns_edge(d: DVec2) -> bool {
    d.y < 0.0 || (d.y == 0.0 && d.x > 0.0)
}

fn project_all(mesh: &TriangleMesh, camera: &Camera, basis: &Basis) -> Vec<Projected> {
    mesh.vertices
        .iter()
        .map(|&p| camera.project_with(basis, p))
        .collect()
}

/// Z-buffered rasterization at pixel centers with back-face culling.
///
/// Front faces are the ones whose outward normal points toward the camera.
/// Depth ties keep the lower face index.
pub fn rasterize(mesh: &TriangleMesh, camera: &Camera) -> Fragments {
    let basis = camera.basis();
    let proj = project_all(mesh, camera, &basis);
    rasterize_projected(mesh, camera, &proj)
}

fn rasterize_projected(mesh: &TriangleMesh, camera: &Camera, proj: &[Projected]) -> Fragments {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut frags = Fragments {
        width: camera.width,
        height: camera.height,
        face: vec![NO_FACE; w * h],
        bary: vec![[0.0; 3]; w * h],
        depth: vec![f64::INFINITY; w * h],
    };
    let perspective = matches!(camera.projection, Projection::Perspective { .. });

    for (fi, &face) in mesh.faces.iter().enumerate() {
        let pr = [proj[face[0]], proj[face[1]], proj[face[2]]];
        if pr.iter().any(|p| p.depth <= NEAR) {
            continue;
        }
        let q = [pr[0].screen, pr[1].screen, pr[2].screen];
        let area = cross2(q[1] - q[0], q[2] - q[0]);
        // Screen rows grow downward, so outward-facing triangles have negative area.
        if !(area < 0.0) {
            continue;
        }
        let lo = q[0].min(q[1]).min(q[2]);
        let hi = q[0].max(q[1]).max(q[2]);
        let x0 = ((lo.x - 0.5).ceil().max(0.0)) as usize;
        let y0 = ((lo.y - 0.5).ceil().max(0.0)) as usize;
        let x1 = (hi.x - 0.5).floor().min(w as f64 - 1.0);
        let y1 = (hi.y - 0.5).floor().min(h as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        // Edge k is opposite corner k, running from corner k+1 to corner k+2.
        let dirs = [
            -(q[2] - q[1]),
            -(q[0] - q[2]),
            -(q[1] - q[0]),
        ];
        let owned = [owns_edge(dirs[0]), owns_edge(dirs[1]), owns_edge(dirs[2])];
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut c = [0.0; 3];
                let mut inside = true;
                for k in 0..3 {
                    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                    c[k] = -edge_function(face[a], face[b], q[a], q[b], p);
                    if c[k] < 0.0 || (c[k] == 0.0 && !owned[k]) {
                        inside = false;
                        break;
                    }
                }
                if !inside {
                    continue;
                }
                let total = c[0] + c[1] + c[2];
                let b = [c[0] / total, c[1] / total, c[2] / total];
                let depth = if perspective {
                    1.0 / (b[0] / pr[0].depth + b[1] / pr[1].depth + b[2] / pr[2].depth)
                } else {
                    b[0] * pr[0].depth + b[1] * pr[1].depth + b[2] * pr[2].depth
                };
                let idx = y * w + x;
                if depth < frags.depth[idx] {
                    frags.depth[idx] = depth;
                    frags.face[idx] = fi as u32;
                    frags.bary[idx] = b;
                }
            }
        }
    }
    frags
}

/// Interpolates smooth vertex normals at every covered pixel and rotates
/// them into camera space.
pub fn shade_normals(
    mesh: &TriangleMesh,
    normals: &VertexNormals,
    camera: &Camera,
    frags: &Fragments,
) -> NormalMap {
    let basis = camera.basis();
    let mut map = NormalMap::empty(camera.width, camera.height);
    for idx in 0..map.len() {
        let Some(f) = frags.face(idx) else { continue };
        let [i0, i1, i2] = mesh.faces[f];
        let b = frags.bary[idx];
        let s = normals.normals[i0] * b[0] + normals.normals[i1] * b[1] + normals.normals[i2] * b[2];
        let n = basis.to_camera_dir(s);
        let len = n.length();
        map.coverage[idx] = true;
        map.normals[idx] = if len > 0.0 { n / len } else { DVec3::Z };
    }
    map
}

/// Renders camera-space smooth normals. An empty mesh yields an all-uncovered
/// map.
pub fn render_normals(mesh: &TriangleMesh, camera: &Camera) -> NormalMap {
    let normals = VertexNormals::new(mesh);
    let frags = rasterize(mesh, camera);
    shade_normals(mesh, &normals, camera, &frags)
}

/// Backward pass of [`shade_normals`] for one view with the pixel-to-face
/// assignment in `frags` held fixed.
///
/// Gradients with respect to the unit vertex normals go to `d_normals` (pass
/// them through [`VertexNormals::backward`] afterwards); gradients flowing
/// through the barycentric weights, i.e. the projected vertex positions, go
/// straight to `d_positions`.
pub fn accumulate_view_gradient(
    mesh: &TriangleMesh,
    normals: &VertexNormals,
    camera: &Camera,
    frags: &Fragments,
    pixel_gradient: &[DVec3],
    d_normals: &mut [DVec3],
    d_positions: &mut [DVec3],
) -> Result<(), RenderError> {
    if pixel_gradient.len() != camera.pixel_count()
        || frags.width != camera.width
        || frags.height != camera.height
    {
        return Err(RenderError::DimensionMismatch {
            expected: camera.pixel_count(),
            actual: pixel_gradient.len(),
        });
    }
    let basis = camera.basis();
    let w = camera.width as usize;
    for (idx, &g) in pixel_gradient.iter().enumerate() {
        if g == DVec3::ZERO {
            continue;
        }
        let Some(f) = frags.face(idx) else { continue };
        let face = mesh.faces[f];
        let b = frags.bary[idx];
        let nv = [
            normals.normals[face[0]],
            normals.normals[face[1]],
            normals.normals[face[2]],
        ];
        let s = nv[0] * b[0] + nv[1] * b[1] + nv[2] * b[2];
        let len = s.length();
        if !(len > 0.0) {
            continue;
        }
        let n = basis.to_camera_dir(s) / len;
        let d_m = (g - n * n.dot(g)) / len;
        let d_s = basis.from_camera_dir(d_m);
        for k in 0..3 {
            d_normals[face[k]] += d_s * b[k];
        }

        // Barycentric weights b_k = C_k / A of the projected corners.
        let d_b = [nv[0].dot(d_s), nv[1].dot(d_s), nv[2].dot(d_s)];
        let pr = [
            camera.project_with(&basis, mesh.vertices[face[0]]),
            camera.project_with(&basis, mesh.vertices[face[1]]),
            camera.project_with(&basis, mesh.vertices[face[2]]),
        ];
        let q = [pr[0].screen, pr[1].screen, pr[2].screen];
        let p = DVec2::new((idx % w) as f64 + 0.5, (idx / w) as f64 + 0.5);
        let area = cross2(q[1] - q[0], q[2] - q[0]);
        let perp = |u: DVec2, v: DVec2| DVec2::new(u.y - v.y, v.x - u.x);
        // d C_k / d q_j for the two corners each C_k depends on.
        let d_c = [
            [DVec2::ZERO, perp(q[2], p), perp(p, q[1])],
            [perp(p, q[2]), DVec2::ZERO, perp(q[0], p)],
            [perp(q[1], p), perp(p, q[0]), DVec2::ZERO],
        ];
        let d_area = [perp(q[1], q[2]), perp(q[2], q[0]), perp(q[0], q[1])];
        let weighted = d_b[0] * b[0] + d_b[1] * b[1] + d_b[2] * b[2];
        for j in 0..3 {
            let d_q = (d_c[0][j] * d_b[0] + d_c[1][j] * d_b[1] + d_c[2][j] * d_b[2]
                - d_area[j] * weighted)
                / area;
            d_positions[face[j]] += pr[j].d_screen_x * d_q.x + pr[j].d_screen_y * d_q.y;
        }
    }
    Ok(())
}

/// Gradient of a pixel loss with respect to vertex positions for one view.
///
/// `pixel_gradient` holds dL/dn per pixel in camera space. Visibility is
/// treated as constant: there is no silhouette or occlusion gradient.
pub fn backward_normals(
    mesh: &TriangleMesh,
    camera: &Camera,
    pixel_gradient: &[DVec3],
) -> Result<Vec<DVec3>, RenderError> {
    let normals = VertexNormals::new(mesh);
    let frags = rasterize(mesh, camera);
    let mut d_normals = vec![DVec3::ZERO; mesh.vertices.len()];
    let mut d_positions = vec![DVec3::ZERO; mesh.vertices.len()];
    accumulate_view_gradient(
        mesh,
        &normals,
        camera,
        &frags,
        pixel_gradient,
        &mut d_normals,
        &mut d_positions,
    )?;
    normals.backward(mesh, &d_normals, &mut d_positions);
    Ok(d_positions)
}

/// Finds the pixel each visible vertex lands in.
///
/// A vertex is visible when it projects inside the image onto a covered pixel
/// and its depth is within `tolerance` of the front-most surface there. The
/// surface depth is taken from the plane of the covering triangle at the
/// vertex's exact screen position, so vertices are not hidden by their own
/// neighborhood on sloped surfaces.
pub fn visible_vertices(
    mesh: &TriangleMesh,
    camera: &Camera,
    frags: &Fragments,
    tolerance: f64,
) -> Vec<Option<usize>> {
    let basis = camera.basis();
    let perspective = matches!(camera.projection, Projection::Perspective { .. });
    let (w, h) = (camera.width as f64, camera.height as f64);
    let proj = project_all(mesh, camera, &basis);
    proj.iter()
        .map(|pr| {
            let s = pr.screen;
            if !(s.x >= 0.0 && s.y >= 0.0 && s.x < w && s.y < h) || pr.depth <= NEAR {
                return None;
            }
            let idx = s.y as usize * camera.width as usize + s.x as usize;
            let f = frags.face(idx)?;
            let c = mesh.faces[f].map(|i| proj[i]);
            let area = cross2(c[1].screen - c[0].screen, c[2].screen - c[0].screen);
            let b = [
                cross2(c[2].screen - c[1].screen, s - c[1].screen) / area,
                cross2(c[0].screen - c[2].screen, s - c[2].screen) / area,
                cross2(c[1].screen - c[0].screen, s - c[0].screen) / area,
            ];
            let surface = if perspective {
                1.0 / (b[0] / c[0].depth + b[1] / c[1].depth + b[2] / c[2].depth)
            } else {
                b[0] * c[0].depth + b[1] * c[1].depth + b[2] * c[2].depth
            };
            (pr.depth <= surface + tolerance).then_some(idx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use crate::render::{camera_from_orbit, Projection};

    fn cam(az: f64, el: f64, res: u32) -> Camera {
        camera_from_orbit(az, el, 2.0, Projection::default(), (res, res)).unwrap()
    }

    #[test]
    fn facing_quad_renders_flat_normals() {
        let quad = shapes::grid_patch(1, 1.0);
        let map = render_normals(&quad, &cam(0.0, 0.0, 32));
        assert_eq!(map.covered_count(), 32 * 32);
        for n in &map.normals {
            assert!((*n - DVec3::Z).length() < 1e-6);
        }
    }

    #[test]
    fn back_faces_are_culled() {
        let quad = shapes::grid_patch(1, 1.0);
        let map = render_normals(&quad, &cam(180.0, 0.0, 16));
        assert_eq!(map.covered_count(), 0);
    }

    #[test]
    fn empty_mesh_has_no_coverage() {
        let map = render_normals(&TriangleMesh::empty(), &cam(0.0, 0.0, 16));
        assert_eq!(map.covered_count(), 0);
        assert!(map.check_invariants(1e-6));
    }

    #[test]
    fn sphere_center_faces_camera() {
        let sphere = shapes::icosphere(0.4, 3);
        for (az, el) in [(0.0, 0.0), (37.0, 21.0), (200.0, -45.0)] {
            let map = render_normals(&sphere, &cam(az, el, 64));
            assert!(map.check_invariants(1e-6));
            // Pixel (32, 32) samples half a pixel off the sphere center.
            let c = cam(az, el, 64);
            let frags = rasterize(&sphere, &c);
            let center = 32 * 64 + 32;
            assert!(map.coverage[center]);
            let p = frags.surface_point(&sphere, center).unwrap();
            let expected = c.world_to_camera_dir(p.normalize());
            assert!((map.normals[center] - expected).length() < 1e-2);
        }
    }

    #[test]
    fn odd_resolution_center_pixel_sees_plus_z() {
        let sphere = shapes::icosphere(0.4, 4);
        for (az, el) in [(0.0, 0.0), (37.0, 21.0), (200.0, -45.0)] {
            let map = render_normals(&sphere, &cam(az, el, 65));
            let n = map.normals[32 * 65 + 32];
            assert!((n - DVec3::Z).length() < 2e-2, "{n}");
        }
    }

    #[test]
    fn shared_edges_are_watertight() {
        // A fan of thin triangles sharing a vertex: every pixel center inside
        // the hexagon is drawn exactly once.
        let n = 17;
        let mut vertices = vec![DVec3::ZERO];
        for i in 0..n {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            vertices.push(DVec3::new(0.55 * a.cos(), 0.55 * a.sin(), 0.0));
        }
        let faces = (0..n).map(|i| [0, 1 + i, 1 + (i + 1) % n]).collect();
        let fan = TriangleMesh::new(vertices, faces).unwrap();
        let camera = cam(0.0, 0.0, 48);
        let basis = camera.basis();
        let proj = project_all(&fan, &camera, &basis);
        let frags = rasterize_projected(&fan, &camera, &proj);
        for y in 0..48 {
            for x in 0..48 {
                let p = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut hits = 0;
                let mut strictly_inside = false;
                for f in &fan.faces {
                    let q: Vec<DVec2> = f.iter().map(|&i| proj[i].screen).collect();
                    let c: Vec<f64> = (0..3)
                        .map(|k| -cross2(q[(k + 2) % 3] - q[(k + 1) % 3], p - q[(k + 1) % 3]))
                        .collect();
                    if c.iter().all(|&v| v > 1e-9) {
                        strictly_inside = true;
                    }
                    if c.iter().all(|&v| v >= -1e-9) {
                        hits += 1;
                    }
                }
                let covered = frags.covered(y * 48 + x);
                if strictly_inside {
                    assert!(covered, "gap at ({x}, {y})");
                }
                if hits == 0 {
                    assert!(!covered, "spurious coverage at ({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let sphere = shapes::icosphere(0.4, 2);
        let c = cam(12.0, 5.0, 40);
        assert_eq!(render_normals(&sphere, &c), render_normals(&sphere, &c));
    }

    #[test]
    fn zero_gradient_gives_zero() {
        let sphere = shapes::icosphere(0.4, 1);
        let c = cam(0.0, 0.0, 16);
        let g = backward_normals(&sphere, &c, &vec![DVec3::ZERO; 256]).unwrap();
        assert!(g.iter().all(|v| *v == DVec3::ZERO));
        assert!(matches!(
            backward_normals(&sphere, &c, &vec![DVec3::ZERO; 10]),
            Err(RenderError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_quad_interior_gradient_ignores_in_plane_translation() {
        // Flat geometry has constant normals, so the only gradient is the
        // out-of-plane tilt; nothing pushes the quad sideways.
        let quad = shapes::grid_patch(2, 1.0);
        let c = cam(0.0, 0.0, 16);
        let g = vec![DVec3::new(0.3, -0.2, 0.1); 256];
        let grad = backward_normals(&quad, &c, &g).unwrap();
        let total: DVec3 = grad.iter().copied().sum();
        assert!(total.x.abs() < 1e-9 && total.y.abs() < 1e-9, "{total}");
        let shifted = quad.translated(DVec3::new(0.01, -0.02, 0.0));
        let grad2 = backward_normals(&shifted, &c, &g).unwrap();
        let total2: DVec3 = grad2.iter().copied().sum();
        assert!(total2.x.abs() < 1e-9 && total2.y.abs() < 1e-9);
    }

    #[test]
    fn backward_is_linear_in_pixel_gradient() {
        let sphere = shapes::icosphere(0.4, 2);
        let c = cam(25.0, 10.0, 24);
        let n = c.pixel_count();
        let g1: Vec<DVec3> = (0..n).map(|i| DVec3::new((i % 7) as f64 - 3.0, 1.0, 0.5)).collect();
        let g2: Vec<DVec3> = (0..n).map(|i| DVec3::new(0.2, (i % 5) as f64, -1.0)).collect();
        let sum: Vec<DVec3> = g1.iter().zip(&g2).map(|(a, b)| *a + *b).collect();
        let a = backward_normals(&sphere, &c, &g1).unwrap();
        let b = backward_normals(&sphere, &c, &g2).unwrap();
        let s = backward_normals(&sphere, &c, &sum).unwrap();
        for i in 0..a.len() {
            assert!((a[i] + b[i] - s[i]).length() <= 1e-9 * (1.0 + s[i].length()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_for_a_linear_functional() {
        // L = sum_p <g_p, n_p> is smooth in the vertex positions as long as
        // no pixel changes triangle, which holds for tiny steps away from
        // edges.
        for proj in [Projection::default(), Projection::Perspective { fov_y_deg: 45.0 }] {
            let mesh = shapes::icosphere(0.45, 1);
            let c = camera_from_orbit(20.0, 15.0, 2.0, proj, (24, 24)).unwrap();
            let g: Vec<DVec3> = (0..c.pixel_count())
                .map(|i| DVec3::new(((i * 7) % 5) as f64 - 2.0, ((i * 3) % 4) as f64 - 1.5, 1.0))
                .collect();
            let loss = |m: &TriangleMesh| -> f64 {
                render_normals(m, &c)
                    .normals
                    .iter()
                    .zip(&g)
                    .map(|(n, gp)| n.dot(*gp))
                    .sum()
            };
            let analytic = backward_normals(&mesh, &c, &g).unwrap();
            let base = rasterize(&mesh, &c);
            let h = 1e-7;
            let mut checked = 0;
            for v in 0..mesh.vertices.len() {
                for axis in 0..3 {
                    let mut plus = mesh.clone();
                    plus.vertices[v][axis] += h;
                    let mut minus = mesh.clone();
                    minus.vertices[v][axis] -= h;
                    if rasterize(&plus, &c).face != base.face || rasterize(&minus, &c).face != base.face {
                        continue;
                    }
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let a = analytic[v][axis];
                    assert!((fd - a).abs() <= 1e-4 * (1.0 + a.abs()), "v{v} axis {axis}: {a} vs {fd}");
                    checked += 1;
                }
            }
            assert!(checked > 60);
        }
    }

    #[test]
    fn visibility_respects_occlusion() {
        let sphere = shapes::icosphere(0.4, 3);
        let c = cam(0.0, 0.0, 64);
        let frags = rasterize(&sphere, &c);
        let vis = visible_vertices(&sphere, &c, &frags, 1e-3);
        for (v, seen) in sphere.vertices.iter().zip(&vis) {
            if v.z > 0.1 {
                assert!(seen.is_some(), "{v} {:?}", c.project(*v));
            }
            if v.z < -0.05 {
                assert!(seen.is_none());
            }
        }
    }
}
