//! Session-based HTTP/WebSocket service. Sessions live in memory only and
//! are gone after a restart.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/sessions` | OBJ text, or empty for the demo scene | 201 `{session_id}` |
//! | GET | `/sessions/{id}` | | session summary |
//! | GET | `/sessions/{id}/mesh` | | OBJ of the latest snapshot |
//! | GET | `/sessions/{id}/views` | `azimuth, elevation, radius, width, height, fov?` | 16-bit normal PNG |
//! | POST | `/sessions/{id}/enhance` | `{view, enhancer, params, mask_png_base64?, target_session?}` | `{normal_png_base64, camera}` |
//! | POST | `/sessions/{id}/refine` | `{config, targets: [{camera, normal_png_base64, mask_png_base64?}]}` | 202 `{job_id}` or 409 |
//! | GET | `/sessions/{id}/metrics` | `against, samples?, grid_res?, seed?` | `MetricReport` |
//! | GET | `/jobs/{id}` | | job status and final report |
//! | GET | `/jobs/{id}/masks/{view}` | | submitted mask as PNG |
//! | WS | `/jobs/{id}/stream` | | `JobEvent` JSON frames |
//! | POST | `/jobs/{id}/cancel` | | 202 |

mod api;
mod error;
mod job;
mod session;

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::routing::{get, post};
use axum::Router;
use normalforge::enhance::RemoteEnhancer;
use normalforge::mesh::TriangleMesh;
use normalforge::refine::{refine_global, refine_local, Phase, ProgressEvent, ProgressSink, RefineConfig, ViewTarget};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use uuid::Uuid;

use crate::config::Config;

pub use api::{CreatedJob, CreatedSession, EnhanceBody, EnhanceReply, EnhancerKind, RefineBody, TargetBody, ViewQuery};
pub use error::ApiError;
pub use job::{Job, JobEvent, JobStatus};
pub use session::{Session, SessionSummary};

pub struct AppState {
    pub config: Config,
    remote: Option<RemoteEnhancer>,
    sessions: Mutex<HashMap<Uuid, Session>>,
    jobs: Mutex<HashMap<Uuid, Arc<Job>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl AppState {
    pub fn new(config: Config) -> Arc<Self> {
        Arc::new(Self {
            remote: config.remote.enhancer(),
            config,
            sessions: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            workers: Mutex::new(Vec::new()),
        })
    }

    pub fn create_session(&self, mesh: TriangleMesh, reference: Option<TriangleMesh>) -> Uuid {
        let s = &self.config.service;
        let session = Session::new(mesh, reference, s.history, s.view_cache);
        let id = session.id;
        self.sessions.lock().unwrap().insert(id, session);
        id
    }

    /// Runs `f` on the session under the lock.
    pub fn with_session<T>(&self, id: Uuid, f: impl FnOnce(&mut Session) -> T) -> Result<T, ApiError> {
        let mut sessions = self.sessions.lock().unwrap();
        let s = sessions.get_mut(&id).ok_or_else(|| ApiError::NotFound(format!("session {id}")))?;
        Ok(f(s))
    }

    pub fn job(&self, id: Uuid) -> Result<Arc<Job>, ApiError> {
        self.jobs
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("job {id}")))
    }

    /// Starts a refinement of the session's current mesh, or fails with 409
    /// while another job is active.
    pub fn start_job(
        self: &Arc<Self>,
        session: Uuid,
        targets: Vec<ViewTarget>,
        config: RefineConfig,
    ) -> Result<Uuid, ApiError> {
        let masks = targets.iter().map(|t| t.mask.clone()).collect();
        let job = Arc::new(Job::new(session, masks));
        let mesh = self.with_session(session, |s| {
            if let Some(active) = s.active_job {
                return Err(ApiError::Conflict(format!("session {session} already runs job {active}")));
            }
            s.active_job = Some(job.id);
            Ok(s.current.clone())
        })??;
        self.jobs.lock().unwrap().insert(job.id, job.clone());
        let state = self.clone();
        let worker = job.clone();
        let handle = tokio::task::spawn_blocking(move || state.run_job(worker, &mesh, targets, config));
        let mut workers = self.workers.lock().unwrap();
        workers.retain(|h| !h.is_finished());
        workers.push(handle);
        Ok(job.id)
    }

    fn run_job(self: Arc<Self>, job: Arc<Job>, mesh: &TriangleMesh, targets: Vec<ViewTarget>, config: RefineConfig) {
        log::info!("job {} started on session {}", job.id, job.session);
        let local = config.local && targets.iter().all(|t| t.mask.is_some());
        let mut sink = JobSink {
            state: &self,
            job: &job,
            terminal: None,
        };
        let result = if local {
            refine_local(mesh, &targets, &config, &mut sink)
        } else {
            refine_global(mesh, &targets, &config, &mut sink)
        };
        let terminal = sink.terminal.take();
        // The final mesh is published and the session freed before the
        // terminal event goes out, so clients reacting to it see both.
        match result {
            Ok((refined, report)) => {
                let _ = self.with_session(job.session, |s| {
                    s.publish(Arc::new(refined));
                    s.active_job = None;
                });
                job.set_report(report);
                let event = terminal.unwrap_or_else(|| {
                    job::terminal_event(job.last_step() + 1, f64::NAN, mesh.vertices.len(), Phase::Done)
                });
                log::info!("job {} finished: {:?} at step {}", job.id, event.phase, event.step);
                job.publish(event, None);
            }
            Err(e) => {
                log::warn!("job {} failed: {e}", job.id);
                let _ = self.with_session(job.session, |s| s.active_job = None);
                let event = job::terminal_event(job.last_step() + 1, f64::NAN, 0, Phase::Error);
                job.publish(event, Some(e.to_string()));
            }
        }
    }

    fn publish_snapshot(&self, session: Uuid, mesh: &TriangleMesh) {
        let _ = self.with_session(session, |s| s.publish(Arc::new(mesh.clone())));
    }

    /// Asks every job to stop and waits until all have published their
    /// terminal event.
    pub async fn shutdown_jobs(&self) {
        for job in self.jobs.lock().unwrap().values() {
            job.request_cancel();
        }
        let workers = std::mem::take(&mut *self.workers.lock().unwrap());
        for w in workers {
            let _ = w.await;
        }
    }
}

struct JobSink<'a> {
    state: &'a AppState,
    job: &'a Job,
    terminal: Option<ProgressEvent>,
}

impl ProgressSink for JobSink<'_> {
    fn event(&mut self, event: &ProgressEvent) {
        if event.phase.is_terminal() {
            self.terminal = Some(event.clone());
        } else {
            self.job.publish(event.clone(), None);
        }
    }

    fn snapshot(&mut self, step: usize, mesh: &TriangleMesh) {
        // Step 1 sees the unchanged input.
        if step > 1 {
            self.state.publish_snapshot(self.job.session, mesh);
        }
    }

    fn cancelled(&self) -> bool {
        self.job.cancel_requested()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::session_summary))
        .route("/sessions/{id}/mesh", get(api::get_mesh))
        .route("/sessions/{id}/views", get(api::get_view))
        .route("/sessions/{id}/enhance", post(api::enhance))
        .route("/sessions/{id}/refine", post(api::refine))
        .route("/sessions/{id}/metrics", get(api::metrics))
        .route("/jobs/{id}", get(api::job_status))
        .route("/jobs/{id}/masks/{view}", get(api::job_mask))
        .route("/jobs/{id}/stream", get(api::stream))
        .route("/jobs/{id}/cancel", post(api::cancel))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then cancels running jobs and waits for
/// them to wind down.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let jobs = state.clone();
    // Cancelling first lets open job streams reach their terminal event, so
    // the graceful shutdown below does not hang on them.
    tokio::spawn(async move {
        shutdown.await;
        log::info!("shutting down: cancelling jobs");
        jobs.shutdown_jobs().await;
        let _ = stop_tx.send(());
    });
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async move {
            let _ = stop_rx.await;
        })
        .await?;
    state.shutdown_jobs().await;
    Ok(())
}
