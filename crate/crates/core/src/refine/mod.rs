//! Multi-view normal-supervised mesh refinement.
//!
//! Each step renders every view, takes the masked L1 loss against the target
//! normals, backpropagates to the vertices, applies an Adam step followed by
//! relative Laplacian smoothing, and every few steps remeshes.

mod loss;

use std::time::Instant;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::mesh::{build_adjacency, validate_manifold, MeshError, TriangleMesh};
use crate::remesh::{
    adam_step, relative_laplacian_update, remesh_pass, AdamParams, OptimizerState, RemeshError,
    RemeshParams,
};
use crate::render::{
    accumulate_view_gradient, rasterize, shade_normals, visible_vertices, Camera, NormalMap,
    PixelMask, RenderError, VertexNormals,
};

pub use loss::{normal_loss, ViewLoss};

/// Mobility of vertices in the 1-ring band around a local edit.
pub const BAND_MOBILITY: f64 = 0.5;
/// Depth tolerance for deciding that a vertex is seen by a view.
pub const VISIBILITY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("at least one view target is required")]
    NoTargets,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("resolution mismatch: {0}")]
    Resolution(String),
    #[error("view {view}: {message}")]
    View { view: usize, message: String },
    #[error("empty edit region")]
    EmptyEditRegion,
    #[error("cannot refine an empty mesh")]
    EmptyMesh,
    #[error("step {step}: {source}")]
    Step { step: usize, source: RemeshError },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// One supervised view: the camera, the normals it should see and an
/// optional edit mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTarget {
    pub camera: Camera,
    pub target: NormalMap,
    pub mask: Option<PixelMask>,
    pub weight: f64,
}

impl ViewTarget {
    pub fn new(camera: Camera, target: NormalMap) -> Self {
        Self {
            camera,
            target,
            mask: None,
            weight: 1.0,
        }
    }

    pub fn with_mask(mut self, mask: PixelMask) -> Self {
        self.mask = Some(mask);
        self
    }

    fn validate(&self, view: usize) -> Result<(), RefineError> {
        let err = |message: String| Err(RefineError::View { view, message });
        if let Err(e) = self.camera.validate() {
            return err(e.to_string());
        }
        let (w, h) = (self.camera.width, self.camera.height);
        if !self.target.same_size(w, h) || self.target.coverage.len() != self.camera.pixel_count() {
            return err(format!(
                "target normal map is {}x{} but the camera renders {w}x{h}",
                self.target.width, self.target.height
            ));
        }
        if let Some(m) = &self.mask {
            if m.width != w || m.height != h || m.data.len() != self.camera.pixel_count() {
                return err(format!("mask is {}x{} but the camera renders {w}x{h}", m.width, m.height));
            }
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return err(format!("loss weight must be non-negative, got {}", self.weight));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// The learning rate decays geometrically to `learning_rate * lr_final_factor`
    /// at the last step. 1 keeps it constant.
    pub lr_final_factor: f64,
    /// Laplacian strength λ.
    pub lambda: f64,
    /// `remesh.l_target <= 0` derives the target from the coarse mesh as
    /// `mean edge length * target_length_factor`.
    pub remesh: RemeshParams,
    pub target_length_factor: f64,
    /// Multiplier applied to `l_target` after every remesh pass.
    pub length_decay: f64,
    /// Lower bound on `l_target` as a fraction of its initial value.
    pub length_floor: f64,
    pub local: bool,
    /// Stop once the best loss improved by less than this over the last
    /// `convergence_window` steps. 0 disables the check.
    pub convergence_tolerance: f64,
    pub convergence_window: usize,
    /// Steps between mesh snapshots handed to the progress sink.
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.01,
            lr_final_factor: 1.0,
            lambda: 0.3,
            remesh: RemeshParams::default(),
            target_length_factor: 0.5,
            length_decay: 0.97,
            length_floor: 0.25,
            local: false,
            convergence_tolerance: 0.0,
            convergence_window: 50,
            snapshot_every: 25,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: String| Err(RefineError::Config(m));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.lr_final_factor > 0.0 && self.lr_final_factor <= 1.0) {
            return bad(format!("lr_final_factor must be in (0, 1], got {}", self.lr_final_factor));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if !(self.length_decay > 0.0 && self.length_decay <= 1.0)
            || !(self.length_floor > 0.0 && self.length_floor <= 1.0)
            || !(self.target_length_factor > 0.0)
        {
            return bad("edge length schedule factors must be positive and at most 1".into());
        }
        Ok(())
    }

    fn learning_rate_at(&self, step: usize) -> f64 {
        if self.lr_final_factor == 1.0 || self.steps <= 1 {
            return self.learning_rate;
        }
        let t = (step - 1) as f64 / (self.steps - 1) as f64;
        self.learning_rate * self.lr_final_factor.powf(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Optimizing,
    Remeshing,
    Done,
    Error,
    Cancelled,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Error | Phase::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub step: usize,
    pub loss: f64,
    pub per_view: Vec<f64>,
    pub vertex_count: usize,
    pub phase: Phase,
}

/// Receives progress from a running refinement and can ask it to stop.
pub trait ProgressSink {
    fn event(&mut self, _event: &ProgressEvent) {}
    fn snapshot(&mut self, _step: usize, _mesh: &TriangleMesh) {}
    fn cancelled(&self) -> bool {
        false
    }
}

/// Sink that ignores everything.
pub struct NoProgress;

impl ProgressSink for NoProgress {}

impl<F: FnMut(&ProgressEvent)> ProgressSink for F {
    fn event(&mut self, event: &ProgressEvent) {
        self(event)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StepsExhausted,
    Converged,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    /// Loss of the mesh entering each executed step.
    pub losses: Vec<f64>,
    /// Loss of the returned mesh.
    pub final_loss: f64,
    pub per_view_final: Vec<f64>,
    pub coverage_mismatch: Vec<f64>,
    pub vertex_counts: Vec<usize>,
    pub face_counts: Vec<usize>,
    /// Step whose input mesh was returned, or `losses.len() + 1` for the mesh
    /// left after the last step.
    pub returned_step: usize,
    pub remesh_passes: usize,
    pub wall_clock_secs: f64,
    pub termination: Termination,
}

struct Evaluation {
    total: f64,
    per_view: Vec<f64>,
    mismatch: Vec<f64>,
    views: Vec<(crate::render::Fragments, ViewLoss)>,
}

fn evaluate(
    mesh: &TriangleMesh,
    normals: &VertexNormals,
    targets: &[ViewTarget],
) -> Result<Evaluation, RefineError> {
    let mut eval = Evaluation {
        total: 0.0,
        per_view: Vec::with_capacity(targets.len()),
        mismatch: Vec::with_capacity(targets.len()),
        views: Vec::with_capacity(targets.len()),
    };
    for t in targets {
        let frags = rasterize(mesh, &t.camera);
        let map = shade_normals(mesh, normals, &t.camera, &frags);
        let l = normal_loss(&map, &t.target, t.mask.as_ref())?;
        eval.total += t.weight * l.loss;
        eval.per_view.push(l.loss);
        eval.mismatch.push(l.coverage_mismatch);
        eval.views.push((frags, l));
    }
    Ok(eval)
}

/// Gradient of the weighted multi-view loss with respect to the vertices.
fn gradient(
    mesh: &TriangleMesh,
    normals: &VertexNormals,
    targets: &[ViewTarget],
    eval: &Evaluation,
) -> Result<Vec<DVec3>, RefineError> {
    let n = mesh.vertices.len();
    let mut d_normals = vec![DVec3::ZERO; n];
    let mut d_positions = vec![DVec3::ZERO; n];
    for (t, (frags, l)) in targets.iter().zip(&eval.views) {
        if t.weight == 0.0 || l.active_pixels == 0 {
            continue;
        }
        let scaled: Vec<DVec3>;
        let g = if t.weight == 1.0 {
            &l.gradient
        } else {
            scaled = l.gradient.iter().map(|g| *g * t.weight).collect();
            &scaled
        };
        accumulate_view_gradient(mesh, normals, &t.camera, frags, g, &mut d_normals, &mut d_positions)?;
    }
    normals.backward(mesh, &d_normals, &mut d_positions);
    Ok(d_positions)
}

fn check_inputs(
    mesh: &TriangleMesh,
    targets: &[ViewTarget],
    config: &RefineConfig,
) -> Result<(), RefineError> {
    config.validate()?;
    mesh.validate()?;
    if mesh.faces.is_empty() {
        return Err(RefineError::EmptyMesh);
    }
    if targets.is_empty() {
        return Err(RefineError::NoTargets);
    }
    for (i, t) in targets.iter().enumerate() {
        t.validate(i)?;
    }
    Ok(())
}

/// Refines every vertex of `coarse` against all targets. Masks, if present,
/// only restrict which pixels enter the loss.
pub fn refine_global(
    coarse: &TriangleMesh,
    targets: &[ViewTarget],
    config: &RefineConfig,
    sink: &mut dyn ProgressSink,
) -> Result<(TriangleMesh, RefineReport), RefineError> {
    check_inputs(coarse, targets, config)?;
    run(coarse, OptimizerState::new(coarse), targets, config, sink)
}

/// Refines only the part of `mesh` its views' masks select.
///
/// A vertex is active when it is visible in some view and lands on a masked
/// pixel there. Active vertices move freely, their 1-ring moves at half
/// strength and every other vertex keeps its exact input coordinates.
pub fn refine_local(
    mesh: &TriangleMesh,
    targets: &[ViewTarget],
    config: &RefineConfig,
    sink: &mut dyn ProgressSink,
) -> Result<(TriangleMesh, RefineReport), RefineError> {
    check_inputs(mesh, targets, config)?;
    let mut masks = Vec::with_capacity(targets.len());
    for (view, t) in targets.iter().enumerate() {
        match &t.mask {
            Some(m) => masks.push(m),
            None => {
                return Err(RefineError::View {
                    view,
                    message: "local refinement needs a mask for every view".into(),
                })
            }
        }
    }
    if masks.iter().all(|m| !m.any()) {
        return Err(RefineError::EmptyEditRegion);
    }
    if masks.iter().all(|m| m.all()) {
        return refine_global(mesh, targets, config, sink);
    }
    let active = active_vertices(mesh, targets);
    if !active.iter().any(|&a| a) {
        return Err(RefineError::EmptyEditRegion);
    }
    let adjacency = build_adjacency(mesh)?;
    let band = adjacency.dilate(&active);
    let mut state = OptimizerState::new(mesh);
    for (i, m) in state.mobility.iter_mut().enumerate() {
        *m = if active[i] {
            1.0
        } else if band[i] {
            BAND_MOBILITY
        } else {
            0.0
        };
    }
    run(mesh, state, targets, config, sink)
}

/// Vertices that some view sees on a masked pixel.
pub fn active_vertices(mesh: &TriangleMesh, targets: &[ViewTarget]) -> Vec<bool> {
    let mut active = vec![false; mesh.vertices.len()];
    for t in targets {
        let Some(mask) = &t.mask else { continue };
        let frags = rasterize(mesh, &t.camera);
        for (v, px) in visible_vertices(mesh, &t.camera, &frags, VISIBILITY_TOLERANCE)
            .into_iter()
            .enumerate()
        {
            if px.is_some_and(|i| mask.data[i]) {
                active[v] = true;
            }
        }
    }
    active
}

fn run(
    coarse: &TriangleMesh,
    mut state: OptimizerState,
    targets: &[ViewTarget],
    config: &RefineConfig,
    sink: &mut dyn ProgressSink,
) -> Result<(TriangleMesh, RefineReport), RefineError> {
    let started = Instant::now();
    if !validate_manifold(coarse).closed {
        log::warn!("refining a mesh that is not closed");
    }
    let adam = |step: usize| AdamParams {
        learning_rate: config.learning_rate_at(step),
        ..AdamParams::default()
    };
    let mut remesh = config.remesh;
    if !(remesh.l_target > 0.0) {
        remesh.l_target = coarse.mean_edge_length() * config.target_length_factor;
    }
    let l_floor = remesh.l_target * config.length_floor;

    let mut mesh = coarse.clone();
    let mut adjacency = build_adjacency(&mesh)?;
    let mut report = RefineReport {
        losses: Vec::new(),
        final_loss: f64::INFINITY,
        per_view_final: Vec::new(),
        coverage_mismatch: Vec::new(),
        vertex_counts: Vec::new(),
        face_counts: Vec::new(),
        returned_step: 1,
        remesh_passes: 0,
        wall_clock_secs: 0.0,
        termination: Termination::StepsExhausted,
    };
    let mut best: Option<(f64, usize, TriangleMesh, Vec<f64>, Vec<f64>)> = None;

    for step in 1..=config.steps {
        if sink.cancelled() {
            report.termination = Termination::Cancelled;
            break;
        }
        let normals = VertexNormals::new(&mesh);
        let eval = evaluate(&mesh, &normals, targets)?;
        if !eval.total.is_finite() {
            return Err(RefineError::Step {
                step,
                source: RemeshError::NonFiniteGradient { vertex: 0 },
            });
        }
        report.losses.push(eval.total);
        report.vertex_counts.push(mesh.vertices.len());
        report.face_counts.push(mesh.faces.len());
        if best.as_ref().is_none_or(|b| eval.total < b.0) {
            best = Some((eval.total, step, mesh.clone(), eval.per_view.clone(), eval.mismatch.clone()));
        }
        if config.snapshot_every > 0 && (step - 1) % config.snapshot_every == 0 {
            sink.snapshot(step, &mesh);
        }

        let grad = gradient(&mesh, &normals, targets, &eval)?;
        let proposal = adam_step(&mut state, &grad, &adam(step)).map_err(|source| RefineError::Step { step, source })?;
        let mut x = mesh.vertices.clone();
        for ((p, d), m) in x.iter_mut().zip(&proposal).zip(&state.mobility) {
            if *m > 0.0 {
                *p += *d * *m;
            }
        }
        let speed: Vec<f64> = state.speed.iter().zip(&state.mobility).map(|(v, m)| v * m).collect();
        mesh.vertices = relative_laplacian_update(&x, &state.x_init, config.lambda, &speed, &adjacency)
            .map_err(|source| RefineError::Step { step, source })?;

        let remeshing = remesh.interval > 0 && step % remesh.interval == 0 && step < config.steps;
        if remeshing {
            let (m, s, _) = remesh_pass(&mesh, &state, &remesh).map_err(|source| RefineError::Step { step, source })?;
            mesh = m;
            state = s;
            adjacency = build_adjacency(&mesh)?;
            report.remesh_passes += 1;
            remesh.l_target = (remesh.l_target * config.length_decay).max(l_floor);
        }
        sink.event(&ProgressEvent {
            step,
            loss: eval.total,
            per_view: eval.per_view,
            vertex_count: mesh.vertices.len(),
            phase: if remeshing { Phase::Remeshing } else { Phase::Optimizing },
        });

        let w = config.convergence_window;
        if config.convergence_tolerance > 0.0 && w > 0 && report.losses.len() > w {
            let n = report.losses.len();
            let before = report.losses[..n - w].iter().copied().fold(f64::INFINITY, f64::min);
            let now = report.losses.iter().copied().fold(f64::INFINITY, f64::min);
            if before - now < config.convergence_tolerance {
                report.termination = Termination::Converged;
                break;
            }
        }
    }

    // Return best: the final mesh competes with the best mesh seen so far.
    let normals = VertexNormals::new(&mesh);
    let last = evaluate(&mesh, &normals, targets)?;
    let final_step = report.losses.len() + 1;
    let (loss, returned_step, out, per_view, mismatch) = match best {
        Some(b) if b.0 <= last.total => b,
        _ => (last.total, final_step, mesh, last.per_view, last.mismatch),
    };
    report.final_loss = loss;
    report.returned_step = returned_step;
    report.per_view_final = per_view;
    report.coverage_mismatch = mismatch;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    sink.event(&ProgressEvent {
        step: final_step,
        loss,
        per_view: report.per_view_final.clone(),
        vertex_count: out.vertices.len(),
        phase: if report.termination == Termination::Cancelled {
            Phase::Cancelled
        } else {
            Phase::Done
        },
    });
    Ok((out, report))
}
