use glam::{DVec2, DVec3};
use rayon::prelude::*;

use super::MetricsError;
use crate::mesh::{validate_manifold, TriangleMesh};

/// Tie-avoidance offset of the rays, as a fraction of a cell.
const JITTER: f64 = 1e-6;

/// Inside/outside labels for the voxel centers of a `res`³ grid over
/// `[min, max]`, x fastest. A voxel is inside when a ray from its center
/// toward +x crosses the surface an odd number of times.
pub fn voxelize(mesh: &TriangleMesh, min: DVec3, max: DVec3, res: usize) -> Vec<bool> {
    let cell = (max - min) / res as f64;
    let center = |i: usize, a: usize| min[a] + (i as f64 + 0.5) * cell[a];
    let jitter = DVec2::new(JITTER * cell.y, 0.7 * JITTER * cell.z);

    // Bucket triangles by the (y, z) rows their projection may cover.
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); res * res];
    for (f, &[a, b, c]) in mesh.faces.iter().enumerate() {
        let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        let lo = pa.min(pb).min(pc);
        let hi = pa.max(pb).max(pc);
        let range = |axis: usize| {
            let first = ((lo[axis] - min[axis]) / cell[axis] - 0.5).floor().max(0.0) as usize;
            let last = ((hi[axis] - min[axis]) / cell[axis] - 0.5).ceil().min(res as f64 - 1.0);
            (first, last)
        };
        let ((y0, y1), (z0, z1)) = (range(1), range(2));
        if y1 < 0.0 || z1 < 0.0 {
            continue;
        }
        for k in z0..=z1 as usize {
            for j in y0..=y1 as usize {
                rows[k * res + j].push(f);
            }
        }
    }

    let mut out = vec![false; res * res * res];
    out.par_chunks_mut(res).enumerate().for_each(|(row, voxels)| {
        let (j, k) = (row % res, row / res);
        let q = DVec2::new(center(j, 1), center(k, 2)) + jitter;
        let mut hits: Vec<f64> = rows[row]
            .iter()
            .filter_map(|&f| {
                let [a, b, c] = mesh.corners(f);
                let (a2, b2, c2) = (DVec2::new(a.y, a.z), DVec2::new(b.y, b.z), DVec2::new(c.y, c.z));
                let area = (b2 - a2).perp_dot(c2 - a2);
                if area == 0.0 {
                    return None;
                }
                let w0 = (c2 - b2).perp_dot(q - b2) / area;
                let w1 = (a2 - c2).perp_dot(q - c2) / area;
                let w2 = 1.0 - w0 - w1;
                (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0).then_some(w0 * a.x + w1 * b.x + w2 * c.x)
            })
            .collect();
        hits.sort_by(f64::total_cmp);
        // Walk voxels left to right, counting crossings still ahead.
        let mut passed = 0;
        for (i, v) in voxels.iter_mut().enumerate() {
            let x = center(i, 0);
            while passed < hits.len() && hits[passed] <= x {
                passed += 1;
            }
            *v = (hits.len() - passed) % 2 == 1;
        }
    });
    out
}

/// Intersection over union of the voxelized interiors of two closed meshes
/// on a shared grid over their union bounding box, padded by 5%.
pub fn volume_iou(a: &TriangleMesh, b: &TriangleMesh, res: usize) -> Result<f64, MetricsError> {
    if res == 0 {
        return Err(MetricsError::GridResolution);
    }
    for (m, name) in [(a, "a"), (b, "b")] {
        if !validate_manifold(m).closed {
            return Err(MetricsError::NotClosed(name));
        }
    }
    let (Some((alo, ahi)), Some((blo, bhi))) = (a.bounds(), b.bounds()) else {
        return Ok(0.0);
    };
    let (lo, hi) = (alo.min(blo), ahi.max(bhi));
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let va = voxelize(a, lo, hi, res);
    let vb = voxelize(b, lo, hi, res);
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in va.iter().zip(&vb) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}
