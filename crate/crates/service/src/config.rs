use std::time::Duration;

use normalforge::enhance::{EnhanceParams, ProceduralEnhancer, RemoteEnhancer, DEFAULT_MAX_IN_FLIGHT};
use normalforge::metrics::{DEFAULT_GRID_RES, DEFAULT_SAMPLES};
use normalforge::refine::RefineConfig;
use serde::{Deserialize, Serialize};

/// Contents of the `--config` JSON file. Every section and field is optional.
///
/// ```json
/// { "refine": { "steps": 200, "lambda": 0.3 },
///   "enhance": { "prompt": "weathered stone", "control_scale": 0.7 },
///   "remote": { "endpoint": "http://localhost:7860" } }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub refine: RefineConfig,
    pub enhance: EnhanceParams,
    pub procedural: ProceduralEnhancer,
    pub remote: RemoteSettings,
    pub metrics: MetricsSettings,
    pub service: ServiceSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            timeout_secs: 120.0,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl RemoteSettings {
    pub fn enhancer(&self) -> Option<RemoteEnhancer> {
        let endpoint = self.endpoint.as_deref()?;
        Some(RemoteEnhancer::with_max_in_flight(
            endpoint,
            Duration::from_secs_f64(self.timeout_secs.max(0.001)),
            self.max_in_flight,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSettings {
    pub samples: usize,
    pub grid_res: usize,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            grid_res: DEFAULT_GRID_RES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub bind: String,
    /// Mesh snapshots kept per session.
    pub history: usize,
    /// Rendered views cached per session.
    pub view_cache: usize,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            history: 10,
            view_cache: 32,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// `--seed` overrides every seeded component at once.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.refine.seed = seed;
        self.enhance.seed = seed;
        self.procedural.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.refine.seed
    }
}
