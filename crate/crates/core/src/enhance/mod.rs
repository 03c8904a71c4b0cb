//! Normal-map enhancers: the stage that turns a rendered coarse normal map
//! into a detailed target. Built in are a mesh-backed oracle, a seeded
//! procedural detailer and an HTTP client for an external backend.
//!
//! Every enhancer keeps the input's coverage and, when given an inpaint
//! mask, returns unmasked pixels exactly as they came in.

mod remote;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::fields::value_noise;
use crate::mesh::TriangleMesh;
use crate::render::{render_normals, Camera, NormalMap, PixelMask, RenderError};

pub use remote::{EnhanceRequestBody, EnhanceResponseBody, RemoteEnhancer, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT};

#[derive(Debug, thiserror::Error)]
pub enum EnhanceError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("the oracle enhancer needs the camera that rendered the input")]
    MissingCamera,
    #[error("mask is {mask_w}x{mask_h} but the normal map is {map_w}x{map_h}")]
    MaskSize {
        mask_w: u32,
        mask_h: u32,
        map_w: u32,
        map_h: u32,
    },
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("backend returned {status}: {body}")]
    Backend { status: u16, body: String },
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceParams {
    /// Guidance weight for a diffusion backend. Carried through, unused by
    /// the built-in enhancers.
    pub cfg_scale: f64,
    /// Adherence to the input image, in [0, 1].
    pub control_scale: f64,
    pub prompt: String,
    pub seed: u64,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self {
            cfg_scale: 20.0,
            control_scale: 0.8,
            prompt: String::new(),
            seed: 0,
        }
    }
}

impl EnhanceParams {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        if !(0.0..=1.0).contains(&self.control_scale) {
            return Err(EnhanceError::Params(format!(
                "control_scale must be in [0, 1], got {}",
                self.control_scale
            )));
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(EnhanceError::Params(format!(
                "cfg_scale must be non-negative, got {}",
                self.cfg_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EnhanceRequest<'a> {
    pub rendered: &'a NormalMap,
    /// Camera that produced `rendered`, for enhancers that need geometry.
    pub camera: Option<&'a Camera>,
    pub params: &'a EnhanceParams,
    /// Pixels to repaint; `None` repaints everything.
    pub mask: Option<&'a PixelMask>,
}

impl<'a> EnhanceRequest<'a> {
    pub fn new(rendered: &'a NormalMap, params: &'a EnhanceParams) -> Self {
        Self {
            rendered,
            camera: None,
            params,
            mask: None,
        }
    }

    pub fn with_camera(mut self, camera: &'a Camera) -> Self {
        self.camera = Some(camera);
        self
    }

    pub fn with_mask(mut self, mask: &'a PixelMask) -> Self {
        self.mask = Some(mask);
        self
    }

    fn check(&self) -> Result<(), EnhanceError> {
        self.params.validate()?;
        if let Some(m) = self.mask {
            if m.width != self.rendered.width || m.height != self.rendered.height {
                return Err(EnhanceError::MaskSize {
                    mask_w: m.width,
                    mask_h: m.height,
                    map_w: self.rendered.width,
                    map_h: self.rendered.height,
                });
            }
        }
        Ok(())
    }
}

pub trait NormalEnhancer: Send + Sync {
    fn name(&self) -> &'static str;
    fn enhance(&self, request: &EnhanceRequest<'_>) -> Result<NormalMap, EnhanceError>;
}

/// Copies `enhanced` into `input` on covered pixels selected by `mask`.
/// Coverage always comes from `input`.
pub fn splice(input: &NormalMap, enhanced: &NormalMap, mask: Option<&PixelMask>) -> NormalMap {
    let mut out = input.clone();
    for i in 0..out.len() {
        let selected = mask.is_none_or(|m| m.data[i]);
        if selected && input.coverage[i] && enhanced.coverage[i] {
            out.normals[i] = enhanced.normals[i];
        }
    }
    out
}

/// Test oracle standing in for a diffusion model: the "enhanced" normals are
/// the render of a known detailed mesh from the same camera.
#[derive(Debug, Clone)]
pub struct OracleEnhancer {
    pub target: TriangleMesh,
}

impl OracleEnhancer {
    pub fn new(target: TriangleMesh) -> Self {
        Self { target }
    }
}

impl NormalEnhancer for OracleEnhancer {
    fn name(&self) -> &'static str {
        "oracle"
    }

    /// Where the target does not cover an input pixel the input normal is
    /// kept, so coverage is unchanged.
    fn enhance(&self, request: &EnhanceRequest<'_>) -> Result<NormalMap, EnhanceError> {
        request.check()?;
        let camera = request.camera.ok_or(EnhanceError::MissingCamera)?;
        let map = render_normals(&self.target, camera);
        if !map.same_size(request.rendered.width, request.rendered.height) {
            return Err(EnhanceError::Params(format!(
                "camera renders {}x{} but the input is {}x{}",
                map.width, map.height, request.rendered.width, request.rendered.height
            )));
        }
        Ok(splice(request.rendered, &map, request.mask))
    }
}

/// Seeded detail hallucination: covered normals are tilted by a smooth
/// image-space noise field of strength `amplitude * (1 - control_scale * damping)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProceduralEnhancer {
    pub amplitude: f64,
    /// Noise frequency in cycles across the image.
    pub frequency: f64,
    pub seed: u64,
    /// How strongly `control_scale` suppresses the perturbation.
    pub damping: f64,
}

impl Default for ProceduralEnhancer {
    fn default() -> Self {
        Self {
            amplitude: 0.2,
            frequency: 24.0,
            seed: 0,
            damping: 1.0,
        }
    }
}

impl NormalEnhancer for ProceduralEnhancer {
    fn name(&self) -> &'static str {
        "procedural"
    }

    fn enhance(&self, request: &EnhanceRequest<'_>) -> Result<NormalMap, EnhanceError> {
        request.check()?;
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(EnhanceError::Params(format!("amplitude must be non-negative, got {}", self.amplitude)));
        }
        let strength = self.amplitude * (1.0 - request.params.control_scale * self.damping);
        let input = request.rendered;
        if strength == 0.0 {
            return Ok(input.clone());
        }
        let seed = self.seed ^ request.params.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let (w, h) = (input.width as usize, input.height as usize);
        let scale = self.frequency / w.max(h) as f64;
        let mut out = input.clone();
        for i in 0..input.len() {
            if !input.coverage[i] || !request.mask.is_none_or(|m| m.data[i]) {
                continue;
            }
            let n = input.normals[i];
            let p = DVec3::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5, 0.0) * scale;
            let t = DVec3::new(
                value_noise(p, seed),
                value_noise(p + DVec3::new(0.0, 0.0, 17.3), seed),
                value_noise(p + DVec3::new(0.0, 0.0, 41.9), seed),
            );
            let tangent = t - n * n.dot(t);
            out.normals[i] = (n + tangent * strength).normalize_or(n);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use crate::render::{camera_from_orbit, Projection};

    fn setup() -> (TriangleMesh, Camera, NormalMap) {
        let mesh = shapes::icosphere(0.4, 3);
        let cam = camera_from_orbit(30.0, 10.0, 2.0, Projection::default(), (48, 48)).unwrap();
        let map = render_normals(&mesh, &cam);
        (mesh, cam, map)
    }

    #[test]
    fn self_oracle_is_identity() {
        let (mesh, cam, map) = setup();
        let params = EnhanceParams::default();
        let out = OracleEnhancer::new(mesh)
            .enhance(&EnhanceRequest::new(&map, &params).with_camera(&cam))
            .unwrap();
        assert_eq!(out, map);
        assert_eq!(out.quantized(), map.quantized());
    }

    #[test]
    fn oracle_returns_target_render_and_needs_camera() {
        let (_, cam, map) = setup();
        let target = shapes::icosphere(0.38, 4);
        let params = EnhanceParams::default();
        let oracle = OracleEnhancer::new(target.clone());
        assert!(matches!(
            oracle.enhance(&EnhanceRequest::new(&map, &params)),
            Err(EnhanceError::MissingCamera)
        ));
        let out = oracle.enhance(&EnhanceRequest::new(&map, &params).with_camera(&cam)).unwrap();
        let expected = render_normals(&target, &cam);
        assert_eq!(out.coverage, map.coverage);
        for i in 0..out.len() {
            if map.coverage[i] && expected.coverage[i] {
                assert_eq!(out.normals[i], expected.normals[i]);
            }
        }
        let off = PixelMask::filled(48, 48, false);
        assert_eq!(
            oracle.enhance(&EnhanceRequest::new(&map, &params).with_camera(&cam).with_mask(&off)).unwrap(),
            map
        );
    }

    #[test]
    fn procedural_knobs() {
        let (_, _, map) = setup();
        let params = EnhanceParams::default();
        let zero = ProceduralEnhancer { amplitude: 0.0, ..Default::default() };
        assert_eq!(zero.enhance(&EnhanceRequest::new(&map, &params)).unwrap(), map);
        let full = EnhanceParams { control_scale: 1.0, ..Default::default() };
        let p = ProceduralEnhancer::default();
        assert_eq!(p.enhance(&EnhanceRequest::new(&map, &full)).unwrap(), map);

        let p = ProceduralEnhancer { amplitude: 0.2, seed: 5, ..Default::default() };
        let a = p.enhance(&EnhanceRequest::new(&map, &params)).unwrap();
        let b = p.enhance(&EnhanceRequest::new(&map, &params)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, map);
        assert!(a.check_invariants(1e-9));
        assert_eq!(a.coverage, map.coverage);
    }

    #[test]
    fn procedural_respects_mask() {
        let (_, _, map) = setup();
        let params = EnhanceParams::default();
        let mask = PixelMask::from_fn(48, 48, |x, y| x > y);
        let out = ProceduralEnhancer::default()
            .enhance(&EnhanceRequest::new(&map, &params).with_mask(&mask))
            .unwrap();
        for i in 0..map.len() {
            if !mask.data[i] {
                assert_eq!(out.normals[i], map.normals[i]);
            }
        }
        let wrong = PixelMask::filled(8, 8, true);
        assert!(matches!(
            ProceduralEnhancer::default().enhance(&EnhanceRequest::new(&map, &params).with_mask(&wrong)),
            Err(EnhanceError::MaskSize { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(EnhanceParams { control_scale: 1.5, ..Default::default() }.validate().is_err());
        assert!(EnhanceParams { cfg_scale: -1.0, ..Default::default() }.validate().is_err());
        let p: EnhanceParams = serde_json::from_str("{}").unwrap();
        assert_eq!(p, EnhanceParams::default());
    }
}
