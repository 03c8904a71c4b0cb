use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use super::RenderError;

/// Defaults shared by the CLI, the service and the examples.
pub const DEFAULT_RADIUS: f64 = 2.0;
pub const DEFAULT_HALF_HEIGHT: f64 = 0.6;
pub const DEFAULT_RESOLUTION: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Orthographic { half_height: f64 },
    Perspective { fov_y_deg: f64 },
}

impl Default for Projection {
    fn default() -> Self {
        Self::Orthographic {
            half_height: DEFAULT_HALF_HEIGHT,
        }
    }
}

/// Pinhole or orthographic camera.
///
/// Camera space is right-handed with x to the right, y up and z pointing
/// back toward the viewer, so a surface facing the camera has normal
/// `(0, 0, 1)`. Pixel rows run top to bottom and pixel `(i, j)` is sampled at
/// its center `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: DVec3,
    pub target: DVec3,
    pub up: DVec3,
    pub projection: Projection,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Basis {
    pub right: DVec3,
    pub up: DVec3,
    /// Unit view direction, from the camera toward the target.
    pub forward: DVec3,
}

impl Basis {
    #[inline]
    pub fn to_camera_dir(&self, v: DVec3) -> DVec3 {
        DVec3::new(v.dot(self.right), v.dot(self.up), -v.dot(self.forward))
    }

    #[inline]
    pub fn from_camera_dir(&self, v: DVec3) -> DVec3 {
        self.right * v.x + self.up * v.y - self.forward * v.z
    }
}

/// Screen position of a projected point together with the 2x3 Jacobian
/// (one row per pixel axis) of the screen position with respect to the world
/// position.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Projected {
    pub screen: DVec2,
    pub depth: f64,
    pub d_screen_x: DVec3,
    pub d_screen_y: DVec3,
}

impl Camera {
    pub fn new(
        position: DVec3,
        target: DVec3,
        up: DVec3,
        projection: Projection,
        width: u32,
        height: u32,
    ) -> Result<Self, RenderError> {
        let cam = Self {
            position,
            target,
            up,
            projection,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |msg: &str| Err(RenderError::InvalidCamera(msg.to_string()));
        if !(self.position.is_finite() && self.target.is_finite() && self.up.is_finite()) {
            return bad("non-finite camera vector");
        }
        let view = self.target - self.position;
        if view.length() < 1e-12 {
            return bad("position coincides with target");
        }
        if view.normalize().cross(self.up).length() < 1e-9 {
            return bad("up vector is parallel to the view direction");
        }
        if self.width < 8 || self.height < 8 {
            return bad("resolution must be at least 8x8");
        }
        match self.projection {
            Projection::Orthographic { half_height } if !(half_height > 0.0) => {
                bad("orthographic half-height must be positive")
            }
            Projection::Perspective { fov_y_deg } if !(fov_y_deg > 0.0 && fov_y_deg < 180.0) => {
                bad("perspective field of view must be in (0, 180) degrees")
            }
            _ => Ok(()),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub(crate) fn basis(&self) -> Basis {
        let forward = (self.target - self.position).normalize();
        let right = forward.cross(self.up).normalize();
        let up = right.cross(forward);
        Basis { right, up, forward }
    }

    /// World-space direction from the camera toward the scene.
    pub fn view_direction(&self) -> DVec3 {
        (self.target - self.position).normalize()
    }

    /// Rotates a world-space direction into camera space.
    pub fn world_to_camera_dir(&self, v: DVec3) -> DVec3 {
        self.basis().to_camera_dir(v)
    }

    pub(crate) fn project_with(&self, basis: &Basis, p: DVec3) -> Projected {
        let w = self.width as f64;
        let h = self.height as f64;
        let aspect = w / h;
        let rel = p - self.position;
        let x = rel.dot(basis.right);
        let y = rel.dot(basis.up);
        let depth = rel.dot(basis.forward);
        match self.projection {
            Projection::Orthographic { half_height } => {
                // screen_x = (x / (hh * aspect) + 1) * w / 2, screen_y = (1 - y / hh) * h / 2
                let kx = w / (2.0 * half_height * aspect);
                let ky = h / (2.0 * half_height);
                Projected {
                    screen: DVec2::new(x * kx + 0.5 * w, 0.5 * h - y * ky),
                    depth,
                    d_screen_x: basis.right * kx,
                    d_screen_y: -basis.up * ky,
                }
            }
            Projection::Perspective { fov_y_deg } => {
                let t = (0.5 * fov_y_deg.to_radians()).tan();
                let kx = w / (2.0 * t * aspect);
                let ky = h / (2.0 * t);
                let inv = 1.0 / depth;
                Projected {
                    screen: DVec2::new(x * inv * kx + 0.5 * w, 0.5 * h - y * inv * ky),
                    depth,
                    d_screen_x: (basis.right * inv - basis.forward * (x * inv * inv)) * kx,
                    d_screen_y: -(basis.up * inv - basis.forward * (y * inv * inv)) * ky,
                }
            }
        }
    }

    /// Screen coordinates (pixels) and view depth of a world point.
    pub fn project(&self, p: DVec3) -> (DVec2, f64) {
        let pr = self.project_with(&self.basis(), p);
        (pr.screen, pr.depth)
    }
}

/// Camera on a sphere around the origin looking at it with +y up.
///
/// Position is `radius * (cos e sin a, sin e, cos e cos a)`; azimuth 0 and
/// elevation 0 sit on +z looking down -z.
pub fn camera_from_orbit(
    azimuth_deg: f64,
    elevation_deg: f64,
    radius: f64,
    projection: Projection,
    resolution: (u32, u32),
) -> Result<Camera, RenderError> {
    if !(radius > 0.0) {
        return Err(RenderError::InvalidCamera("orbit radius must be positive".into()));
    }
    if !(elevation_deg.abs() < 90.0) {
        return Err(RenderError::InvalidCamera(
            "orbit elevation must be strictly between -90 and 90 degrees".into(),
        ));
    }
    let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let position = radius * DVec3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos());
    Camera::new(
        position,
        DVec3::ZERO,
        DVec3::Y,
        projection,
        resolution.0,
        resolution.1,
    )
}

/// Four views at azimuths 0, 90, 180 and 270 degrees, elevation 0.
pub fn orthogonal_view_set(
    radius: f64,
    projection: Projection,
    resolution: (u32, u32),
) -> Result<[Camera; 4], RenderError> {
    Ok([
        camera_from_orbit(0.0, 0.0, radius, projection, resolution)?,
        camera_from_orbit(90.0, 0.0, radius, projection, resolution)?,
        camera_from_orbit(180.0, 0.0, radius, projection, resolution)?,
        camera_from_orbit(270.0, 0.0, radius, projection, resolution)?,
    ])
}

/// `count` views evenly spaced in azimuth, alternating between `+elevation`
/// and `-elevation` so both poles are observed.
pub fn orbit_ring(
    count: usize,
    elevation_deg: f64,
    radius: f64,
    projection: Projection,
    resolution: (u32, u32),
) -> Result<Vec<Camera>, RenderError> {
    (0..count)
        .map(|i| {
            let az = 360.0 * i as f64 / count as f64;
            let el = if i % 2 == 0 { elevation_deg } else { -elevation_deg };
            camera_from_orbit(az, el, radius, projection, resolution)
        })
        .collect()
}
