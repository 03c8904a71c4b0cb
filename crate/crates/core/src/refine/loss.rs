use glam::DVec3;

use super::RefineError;
use crate::render::{NormalMap, PixelMask};

/// Masked L1 normal loss for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewLoss {
    /// Mean over active pixels of the per-pixel L1 distance.
    pub loss: f64,
    /// dL/dn for every pixel of the rendered map.
    pub gradient: Vec<DVec3>,
    pub active_pixels: usize,
    /// Pixels covered in exactly one of the two maps, over pixels covered in
    /// either.
    pub coverage_mismatch: f64,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 distance between rendered and target normals, averaged over pixels
/// covered in both maps and selected by `mask`. Pixels where coverage
/// disagrees contribute nothing; the renderer has no silhouette gradient to
/// act on them.
pub fn normal_loss(
    rendered: &NormalMap,
    target: &NormalMap,
    mask: Option<&PixelMask>,
) -> Result<ViewLoss, RefineError> {
    if !target.same_size(rendered.width, rendered.height) {
        return Err(RefineError::Resolution(format!(
            "target is {}x{}, render is {}x{}",
            target.width, target.height, rendered.width, rendered.height
        )));
    }
    if let Some(m) = mask {
        if m.width != rendered.width || m.height != rendered.height {
            return Err(RefineError::Resolution(format!(
                "mask is {}x{}, render is {}x{}",
                m.width, m.height, rendered.width, rendered.height
            )));
        }
    }
    let n = rendered.len();
    let selected = |i: usize| mask.is_none_or(|m| m.data[i]);
    let (mut either, mut one) = (0usize, 0usize);
    let mut active = Vec::new();
    for i in 0..n {
        let (r, t) = (rendered.coverage[i], target.coverage[i]);
        if r || t {
            either += 1;
        }
        if r != t {
            one += 1;
        }
        if r && t && selected(i) {
            active.push(i);
        }
    }
    let mut gradient = vec![DVec3::ZERO; n];
    let mut loss = 0.0;
    if !active.is_empty() {
        let inv = 1.0 / active.len() as f64;
        for &i in &active {
            let d = rendered.normals[i] - target.normals[i];
            loss += d.x.abs() + d.y.abs() + d.z.abs();
            gradient[i] = DVec3::new(sign(d.x), sign(d.y), sign(d.z)) * inv;
        }
        loss *= inv;
    }
    Ok(ViewLoss {
        loss,
        gradient,
        active_pixels: active.len(),
        coverage_mismatch: if either == 0 { 0.0 } else { one as f64 / either as f64 },
    })
}
