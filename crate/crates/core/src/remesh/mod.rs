//! Per-vertex adaptive optimizer, relative Laplacian smoothing and
//! continuous remeshing (edge split, collapse and flip).

mod pass;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::mesh::{MeshAdjacency, MeshError, TriangleMesh};

pub use pass::{remesh_pass, RemeshStats};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RemeshError {
    #[error("expected {expected} per-vertex values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite gradient at vertex {vertex}")]
    NonFiniteGradient { vertex: usize },
    #[error("laplacian strength must lie in [0, 1], got {0}")]
    Lambda(f64),
    #[error("invalid remesh parameters: {0}")]
    Params(String),
    #[error("remeshing needs a manifold mesh: {0}")]
    NonManifold(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Per-vertex optimizer state. Every array is indexed by vertex and is
/// remapped together with the mesh by [`remesh_pass`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m1: Vec<DVec3>,
    /// Second moment of the gradient magnitude (one scalar per vertex).
    pub m2: Vec<f64>,
    /// Relative speed in [0, 1].
    pub speed: Vec<f64>,
    /// Anchor positions the Laplacian term smooths displacements against.
    pub x_init: Vec<DVec3>,
    /// How much a vertex may move: 1 free, 0 frozen. Frozen vertices are
    /// never moved by updates or by remeshing.
    pub mobility: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let n = mesh.vertices.len();
        Self {
            m1: vec![DVec3::ZERO; n],
            m2: vec![0.0; n],
            speed: vec![0.0; n],
            x_init: mesh.vertices.clone(),
            mobility: vec![1.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.x_init.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_init.is_empty()
    }

    pub fn check_aligned(&self, vertex_count: usize) -> Result<(), RemeshError> {
        for len in [
            self.m1.len(),
            self.m2.len(),
            self.speed.len(),
            self.x_init.len(),
            self.mobility.len(),
        ] {
            if len != vertex_count {
                return Err(RemeshError::LengthMismatch {
                    expected: vertex_count,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// State of a vertex created between `a` and `b`.
    pub(crate) fn push_average(&mut self, a: usize, b: usize) {
        self.m1.push(0.5 * (self.m1[a] + self.m1[b]));
        self.m2.push(0.5 * (self.m2[a] + self.m2[b]));
        self.speed.push(0.5 * (self.speed[a] + self.speed[b]));
        self.x_init.push(0.5 * (self.x_init[a] + self.x_init[b]));
        self.mobility.push(self.mobility[a].min(self.mobility[b]));
    }

    pub(crate) fn merge_into(&mut self, keep: usize, gone: usize) {
        self.m1[keep] = 0.5 * (self.m1[keep] + self.m1[gone]);
        self.m2[keep] = 0.5 * (self.m2[keep] + self.m2[gone]);
        self.speed[keep] = 0.5 * (self.speed[keep] + self.speed[gone]);
        self.x_init[keep] = 0.5 * (self.x_init[keep] + self.x_init[gone]);
        self.mobility[keep] = self.mobility[keep].min(self.mobility[gone]);
    }

    pub(crate) fn select(&self, keep: &[usize]) -> Self {
        Self {
            m1: keep.iter().map(|&i| self.m1[i]).collect(),
            m2: keep.iter().map(|&i| self.m2[i]).collect(),
            speed: keep.iter().map(|&i| self.speed[i]).collect(),
            x_init: keep.iter().map(|&i| self.x_init[i]).collect(),
            mobility: keep.iter().map(|&i| self.mobility[i]).collect(),
            step: self.step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Returns the proposed displacement per
/// vertex and refreshes the relative speed `|m̂1| / (√m̂2 + ε)`, clipped to 1.
pub fn adam_step(
    state: &mut OptimizerState,
    gradients: &[DVec3],
    params: &AdamParams,
) -> Result<Vec<DVec3>, RemeshError> {
    state.check_aligned(gradients.len())?;
    if let Some(vertex) = gradients.iter().position(|g| !g.is_finite()) {
        return Err(RemeshError::NonFiniteGradient { vertex });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - params.beta1.powi(t);
    let c2 = 1.0 - params.beta2.powi(t);
    let mut proposal = Vec::with_capacity(gradients.len());
    for (i, &g) in gradients.iter().enumerate() {
        state.m1[i] = params.beta1 * state.m1[i] + (1.0 - params.beta1) * g;
        state.m2[i] = params.beta2 * state.m2[i] + (1.0 - params.beta2) * g.length_squared();
        let m1_hat = state.m1[i] / c1;
        let denom = (state.m2[i] / c2).sqrt() + params.epsilon;
        state.speed[i] = (m1_hat.length() / denom).min(1.0);
        proposal.push(-params.learning_rate * m1_hat / denom);
    }
    Ok(proposal)
}

/// Umbrella operator: neighbor average minus self. Isolated vertices map to 0.
pub fn laplacian_apply(
    adjacency: &MeshAdjacency,
    field: &[DVec3],
) -> Result<Vec<DVec3>, RemeshError> {
    if adjacency.vertex_count() != field.len() {
        return Err(RemeshError::LengthMismatch {
            expected: adjacency.vertex_count(),
            actual: field.len(),
        });
    }
    Ok(adjacency
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return DVec3::ZERO;
            }
            let sum: DVec3 = nb.iter().map(|&j| field[j]).sum();
            sum / nb.len() as f64 - field[i]
        })
        .collect())
}

/// Relaxes the displacement `d = x - x_init` toward its neighborhood average
/// with per-vertex strength `λ·v`: returns `x_init + d + λ·v·(W d)`.
pub fn relative_laplacian_update(
    x: &[DVec3],
    x_init: &[DVec3],
    lambda: f64,
    speed: &[f64],
    adjacency: &MeshAdjacency,
) -> Result<Vec<DVec3>, RemeshError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RemeshError::Lambda(lambda));
    }
    for len in [x_init.len(), speed.len()] {
        if len != x.len() {
            return Err(RemeshError::LengthMismatch {
                expected: x.len(),
                actual: len,
            });
        }
    }
    let d: Vec<DVec3> = x.iter().zip(x_init).map(|(a, b)| *a - *b).collect();
    let wd = laplacian_apply(adjacency, &d)?;
    Ok((0..x.len())
        .map(|i| {
            let k = lambda * speed[i];
            if k == 0.0 {
                x[i]
            } else {
                x_init[i] + d[i] + k * wd[i]
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemeshParams {
    /// Target edge length in object units. Zero or negative means "derive
    /// from the input mesh" where a caller supports it.
    pub l_target: f64,
    pub split_factor: f64,
    pub collapse_factor: f64,
    /// Optimization steps between connectivity passes; 0 disables remeshing.
    pub interval: usize,
}

impl Default for RemeshParams {
    fn default() -> Self {
        Self {
            l_target: 0.0,
            split_factor: 4.0 / 3.0,
            collapse_factor: 4.0 / 5.0,
            interval: 10,
        }
    }
}

impl RemeshParams {
    pub fn validate(&self) -> Result<(), RemeshError> {
        if !(self.l_target > 0.0 && self.l_target.is_finite()) {
            return Err(RemeshError::Params(format!(
                "l_target must be positive, got {}",
                self.l_target
            )));
        }
        if !(0.0 < self.collapse_factor && self.collapse_factor < 1.0 && 1.0 < self.split_factor)
        {
            return Err(RemeshError::Params(format!(
                "need 0 < collapse_factor < 1 < split_factor, got {} and {}",
                self.collapse_factor, self.split_factor
            )));
        }
        Ok(())
    }
}
