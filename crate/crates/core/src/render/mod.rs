//! Differentiable software rasterizer for camera-space normal maps.
//!
//! The forward pass z-buffers front faces at pixel centers and interpolates
//! smooth (area-weighted) vertex normals. The backward pass returns dL/dV
//! through normal interpolation, renormalization, the camera rotation, the
//! projected barycentric weights and the vertex-normal computation itself,
//! while treating visibility as constant.

mod camera;
mod normal_map;
mod raster;

pub use camera::{
    camera_from_orbit, orbit_ring, orthogonal_view_set, Camera, Projection, DEFAULT_HALF_HEIGHT,
    DEFAULT_RADIUS, DEFAULT_RESOLUTION,
};
pub use normal_map::{NormalMap, PixelMask};
pub use raster::{
    accumulate_view_gradient, backward_normals, rasterize, render_normals, shade_normals,
    visible_vertices, Fragments, VertexNormals,
};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pixel buffer has {actual} entries, camera expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("png: {0}")]
    Png(String),
}
