//! The sphere-to-bumpy-sphere scene used by the CLI demo, the service's demo
//! sessions, the examples and the detail-recovery acceptance check.

use crate::fields::{FieldError, Scene, ScalarField};
use crate::mesh::TriangleMesh;
use crate::refine::RefineConfig;
use crate::render::{orbit_ring, Camera, Projection, RenderError};

pub const SPHERE_RADIUS: f64 = 0.4;
pub const COARSE_RESOLUTION: usize = 48;
pub const TARGET_RESOLUTION: usize = 128;
pub const NOISE_AMPLITUDE: f64 = 0.03;
pub const NOISE_FREQUENCY: f64 = 8.0;
pub const NOISE_SEED: u64 = 7;
pub const VIEW_COUNT: usize = 8;
pub const VIEW_ELEVATION: f64 = 30.0;
pub const VIEW_RESOLUTION: u32 = 128;

#[derive(Debug, Clone)]
pub struct DetailScene {
    pub coarse: TriangleMesh,
    pub target: TriangleMesh,
}

pub fn coarse_field() -> ScalarField {
    ScalarField::sphere(SPHERE_RADIUS)
}

pub fn target_field() -> ScalarField {
    ScalarField::sphere(SPHERE_RADIUS).displaced(NOISE_AMPLITUDE, NOISE_FREQUENCY, NOISE_SEED)
}

fn extract(field: ScalarField, resolution: usize) -> Result<TriangleMesh, FieldError> {
    Scene {
        field,
        bounds: Default::default(),
        resolution: None,
    }
    .extract(resolution)
}

/// Marching-cubes coarse sphere and the noise-displaced target.
pub fn detail_scene() -> Result<DetailScene, FieldError> {
    Ok(DetailScene {
        coarse: extract(coarse_field(), COARSE_RESOLUTION)?,
        target: extract(target_field(), TARGET_RESOLUTION)?,
    })
}

/// Eight orthographic orbit views alternating between ±30° elevation.
pub fn detail_cameras(resolution: u32) -> Result<Vec<Camera>, RenderError> {
    orbit_ring(
        VIEW_COUNT,
        VIEW_ELEVATION,
        crate::render::DEFAULT_RADIUS,
        Projection::default(),
        (resolution, resolution),
    )
}

/// Schedule tuned for the detail scene: smaller, decaying steps and a fixed
/// remeshing target length.
pub fn detail_config() -> RefineConfig {
    RefineConfig {
        steps: 500,
        learning_rate: 0.002,
        lr_final_factor: 0.1,
        length_decay: 1.0,
        ..RefineConfig::default()
    }
}
