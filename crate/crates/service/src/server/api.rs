use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use normalforge::demo::{detail_scene, DetailScene};
use normalforge::enhance::{EnhanceParams, EnhanceRequest, NormalEnhancer, OracleEnhancer, ProceduralEnhancer};
use normalforge::mesh::{load_obj, save_obj, TriangleMesh};
use normalforge::metrics::{evaluate, MetricReport};
use normalforge::refine::{RefineConfig, ViewTarget};
use normalforge::render::{camera_from_orbit, render_normals, Camera, NormalMap, PixelMask, Projection, RenderError};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;
use uuid::Uuid;

use super::{AppState, ApiError, Job, JobEvent, SessionSummary};

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: Uuid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatedJob {
    pub job_id: Uuid,
}

/// Orbit camera parameters. `fov` switches to a perspective camera with that
/// vertical field of view in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewQuery {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub width: u32,
    pub height: u32,
    pub fov: Option<f64>,
}

impl Default for ViewQuery {
    fn default() -> Self {
        Self {
            azimuth: 0.0,
            elevation: 0.0,
            radius: 2.0,
            width: 256,
            height: 256,
            fov: None,
        }
    }
}

impl ViewQuery {
    pub fn camera(&self) -> Result<Camera, RenderError> {
        let projection = match self.fov {
            Some(fov_y_deg) => Projection::Perspective { fov_y_deg },
            None => Projection::default(),
        };
        let cam = camera_from_orbit(self.azimuth, self.elevation, self.radius, projection, (self.width, self.height))?;
        cam.validate()?;
        Ok(cam)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnhancerKind {
    Oracle,
    #[default]
    Procedural,
    Remote,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceBody {
    pub view: ViewQuery,
    pub enhancer: EnhancerKind,
    /// Falls back to the service configuration.
    pub params: Option<EnhanceParams>,
    pub mask_png_base64: Option<String>,
    /// Session whose current mesh the oracle renders instead of this
    /// session's reference mesh.
    pub target_session: Option<Uuid>,
    pub procedural: Option<ProceduralEnhancer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnhanceReply {
    pub normal_png_base64: String,
    pub camera: Camera,
    pub enhancer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetBody {
    pub camera: Camera,
    pub normal_png_base64: String,
    #[serde(default)]
    pub mask_png_base64: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineBody {
    /// Falls back to the service configuration.
    #[serde(default)]
    pub config: Option<RefineConfig>,
    pub targets: Vec<TargetBody>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MetricsQuery {
    pub against: Uuid,
    pub samples: Option<usize>,
    pub grid_res: Option<usize>,
    pub seed: Option<u64>,
}

fn demo() -> Result<&'static DetailScene, ApiError> {
    static SCENE: OnceLock<DetailScene> = OnceLock::new();
    if let Some(s) = SCENE.get() {
        return Ok(s);
    }
    let scene = detail_scene().map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(SCENE.get_or_init(|| scene))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

/// An empty body starts a session on the demo scene: the coarse sphere, with
/// the bumpy target as the oracle's reference.
pub async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<CreatedSession>)> {
    let (mesh, reference) = blocking(move || {
        if body.iter().all(u8::is_ascii_whitespace) {
            let scene = demo()?;
            return Ok((scene.coarse.clone(), Some(scene.target.clone())));
        }
        let mesh = load_obj(&body).map_err(ApiError::bad)?;
        if mesh.is_empty() {
            return Err(ApiError::BadRequest("mesh has no faces".into()));
        }
        Ok((mesh, None))
    })
    .await?;
    let id = state.create_session(mesh, reference);
    log::info!("session {id} created");
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id: id })))
}

pub async fn session_summary(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>) -> ApiResult<Json<SessionSummary>> {
    Ok(Json(state.with_session(id, |s| s.summary())?))
}

pub async fn get_mesh(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>) -> ApiResult<Response> {
    let mesh = state.with_session(id, |s| s.current.clone())?;
    let obj = blocking(move || Ok(save_obj(&mesh))).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], obj).into_response())
}

pub async fn get_view(
    State(state): State<Arc<AppState>>,
    Path(id): Path<Uuid>,
    Query(view): Query<ViewQuery>,
) -> ApiResult<Response> {
    let key = format!("{view:?}");
    let (cached, mesh, generation) = state.with_session(id, |s| (s.cached_view(&key), s.current.clone(), s.generation))?;
    if let Some(bytes) = cached {
        return Ok(png(bytes.to_vec()));
    }
    let camera = view.camera().map_err(ApiError::bad)?;
    let bytes = blocking(move || {
        render_normals(&mesh, &camera)
            .to_png()
            .map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await?;
    let bytes = Arc::new(bytes);
    let _ = state.with_session(id, |s| s.cache_view(generation, key, bytes.clone()));
    Ok(png(bytes.to_vec()))
}

pub async fn enhance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<Uuid>,
    Json(body): Json<EnhanceBody>,
) -> ApiResult<Json<EnhanceReply>> {
    let (mesh, reference) = state.with_session(id, |s| (s.current.clone(), s.reference.clone()))?;
    let reference = match body.target_session {
        Some(other) => Some(state.with_session(other, |s| s.current.clone())?),
        None => reference,
    };
    let camera = body.view.camera().map_err(ApiError::bad)?;
    let params = body.params.clone().unwrap_or_else(|| state.config.enhance.clone());
    let enhancer: Box<dyn NormalEnhancer> = match body.enhancer {
        EnhancerKind::Procedural => Box::new(body.procedural.unwrap_or(state.config.procedural)),
        EnhancerKind::Oracle => {
            let target = reference.ok_or_else(|| {
                ApiError::BadRequest("the oracle needs a reference mesh: use a demo session or pass target_session".into())
            })?;
            Box::new(OracleEnhancer::new(TriangleMesh::clone(&target)))
        }
        EnhancerKind::Remote => Box::new(
            state
                .remote
                .clone()
                .ok_or_else(|| ApiError::BadRequest("no remote enhancer endpoint is configured".into()))?,
        ),
    };
    let mask = body
        .mask_png_base64
        .as_deref()
        .map(PixelMask::from_base64_png)
        .transpose()
        .map_err(|e| ApiError::BadRequest(format!("mask: {e}")))?;
    let reply = blocking(move || {
        let rendered = render_normals(&mesh, &camera);
        let mut request = EnhanceRequest::new(&rendered, &params).with_camera(&camera);
        if let Some(m) = &mask {
            request = request.with_mask(m);
        }
        let out = enhancer.enhance(&request)?;
        Ok(EnhanceReply {
            normal_png_base64: out.to_base64_png().map_err(|e| ApiError::Internal(e.to_string()))?,
            camera,
            enhancer: enhancer.name().into(),
        })
    })
    .await?;
    Ok(Json(reply))
}

fn decode_target(i: usize, t: TargetBody) -> ApiResult<ViewTarget> {
    let bad = |m: String| ApiError::BadRequest(format!("target {i}: {m}"));
    t.camera.validate().map_err(|e| bad(e.to_string()))?;
    let normals = NormalMap::from_base64_png(&t.normal_png_base64).map_err(|e| bad(format!("normal map: {e}")))?;
    if !normals.same_size(t.camera.width, t.camera.height) {
        return Err(bad(format!(
            "normal map is {}x{} but the camera renders {}x{}",
            normals.width, normals.height, t.camera.width, t.camera.height
        )));
    }
    let target = ViewTarget::new(t.camera, normals);
    Ok(match t.mask_png_base64 {
        Some(m) => {
            let mask = PixelMask::from_base64_png(&m).map_err(|e| bad(format!("mask: {e}")))?;
            if mask.width != t.camera.width || mask.height != t.camera.height {
                return Err(bad(format!("mask is {}x{}", mask.width, mask.height)));
            }
            target.with_mask(mask)
        }
        None => target,
    })
}

pub async fn refine(
    State(state): State<Arc<AppState>>,
    Path(id): Path<Uuid>,
    Json(body): Json<RefineBody>,
) -> ApiResult<(StatusCode, Json<CreatedJob>)> {
    state.with_session(id, |_| ())?;
    if body.targets.is_empty() {
        return Err(ApiError::BadRequest("at least one target is required".into()));
    }
    let config = body.config.unwrap_or_else(|| state.config.refine.clone());
    config.validate().map_err(ApiError::bad)?;
    let targets = blocking(move || body.targets.into_iter().enumerate().map(|(i, t)| decode_target(i, t)).collect()).await?;
    let job_id = state.start_job(id, targets, config)?;
    Ok((StatusCode::ACCEPTED, Json(CreatedJob { job_id })))
}

pub async fn metrics(
    State(state): State<Arc<AppState>>,
    Path(id): Path<Uuid>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Json<MetricReport>> {
    let a = state.with_session(id, |s| s.current.clone())?;
    let b = state.with_session(q.against, |s| s.current.clone())?;
    let defaults = state.config.metrics;
    let seed = q.seed.unwrap_or(state.config.seed());
    let report = blocking(move || {
        evaluate(
            &a,
            &b,
            q.samples.unwrap_or(defaults.samples),
            q.grid_res.unwrap_or(defaults.grid_res),
            seed,
        )
        .map_err(ApiError::bad)
    })
    .await?;
    Ok(Json(report))
}

pub async fn job_status(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>) -> ApiResult<Json<super::JobStatus>> {
    Ok(Json(state.job(id)?.status()))
}

pub async fn job_mask(State(state): State<Arc<AppState>>, Path((id, view)): Path<(Uuid, usize)>) -> ApiResult<Response> {
    let job = state.job(id)?;
    let mask = job
        .masks
        .get(view)
        .and_then(Option::as_ref)
        .ok_or_else(|| ApiError::NotFound(format!("mask of view {view} in job {id}")))?;
    Ok(png(mask.to_png().map_err(|e| ApiError::Internal(e.to_string()))?))
}

/// Always 202: cancelling a finished job is a no-op.
pub async fn cancel(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>) -> ApiResult<(StatusCode, Json<CreatedJob>)> {
    let job = state.job(id)?;
    job.request_cancel();
    Ok((StatusCode::ACCEPTED, Json(CreatedJob { job_id: id })))
}

pub async fn stream(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>, Path(id): Path<Uuid>) -> ApiResult<Response> {
    let job = state.job(id)?;
    Ok(ws.on_upgrade(move |socket| stream_job(socket, job)))
}

/// Sends events past `last`. `None` when the client is gone, `Some(true)`
/// once the terminal event went out.
async fn send_events(socket: &mut WebSocket, events: Vec<JobEvent>, last: &mut Option<usize>) -> Option<bool> {
    for e in events {
        if last.is_some_and(|l| e.event.step <= l) {
            continue;
        }
        *last = Some(e.event.step);
        let text = serde_json::to_string(&e).ok()?;
        socket.send(Message::Text(text.into())).await.ok()?;
        if e.event.phase.is_terminal() {
            return Some(true);
        }
    }
    Some(false)
}

/// Replays stored events, then forwards live ones, ending after the
/// terminal event.
async fn stream_job(mut socket: WebSocket, job: Arc<Job>) {
    let (mut pending, mut rx) = job.subscribe();
    let mut last = None;
    while let Some(false) = send_events(&mut socket, std::mem::take(&mut pending), &mut last).await {
        match rx.recv().await {
            Ok(e) => pending.push(e),
            Err(RecvError::Lagged(_)) => pending = job.events_after(last),
            Err(RecvError::Closed) => break,
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
