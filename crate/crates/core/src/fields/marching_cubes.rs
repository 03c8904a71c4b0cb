use std::collections::HashMap;

use glam::DVec3;

use super::mc_table::TRIANGLE_TABLE;
use super::OccupancyGrid;
use crate::mesh::TriangleMesh;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set. Nodes with `value <= iso` are inside.
///
/// Vertices are shared between neighbouring cells (one per crossed lattice
/// edge), so an iso-surface that stays clear of the bounds comes out closed.
/// Faces wind counter-clockwise seen from the outside (increasing values).
pub fn marching_cubes(grid: &OccupancyGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.resolution;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // Lattice edge (lower node index, axis) -> vertex id.
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut values = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    values[c] = grid.value(i + off[0], j + off[1], k + off[2]);
                    if values[c] <= iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                let mut t = 0;
                while t + 2 < row.len() && row[t] >= 0 {
                    let mut tri = [0usize; 3];
                    for (slot, &e) in tri.iter_mut().zip(&row[t..t + 3]) {
                        let [c0, c1] = EDGES[e as usize];
                        let (a, b) = (CORNERS[c0], CORNERS[c1]);
                        let axis = (0..3).find(|&d| a[d] != b[d]).expect("edge spans one axis");
                        let lo = if a[axis] < b[axis] { a } else { b };
                        let key = (grid.index(i + lo[0], j + lo[1], k + lo[2]), axis);
                        *slot = *edge_vertex.entry(key).or_insert_with(|| {
                            let pa = grid.node_position(i + a[0], j + a[1], k + a[2]);
                            let pb = grid.node_position(i + b[0], j + b[1], k + b[2]);
                            vertices.push(interpolate(pa, pb, values[c0], values[c1], iso));
                            vertices.len() - 1
                        });
                    }
                    // The table winds triangles clockwise for this corner layout.
                    faces.push([tri[0], tri[2], tri[1]]);
                    t += 3;
                }
            }
        }
    }
    TriangleMesh { vertices, faces }
}

fn interpolate(pa: DVec3, pb: DVec3, va: f64, vb: f64, iso: f64) -> DVec3 {
    let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
    pa + (pb - pa) * t
}
