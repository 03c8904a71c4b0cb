//! `normalforge` command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 bad input data, 4 internal or
//! backend failure. Failures also print `{"error": ..., "kind": ...}` on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use normalforge::demo::{detail_cameras, detail_config, detail_scene, VIEW_RESOLUTION};
use normalforge::enhance::{EnhanceError, EnhanceRequest, NormalEnhancer, OracleEnhancer};
use normalforge::fields::{FieldError, Scene};
use normalforge::mesh::{load_obj, save_obj, validate_manifold, MeshError, TriangleMesh};
use normalforge::metrics::{evaluate, MetricsError};
use normalforge::refine::{refine_global, refine_local, ProgressEvent, RefineError, RefineReport, ViewTarget};
use normalforge::render::{orbit_ring, render_normals, Projection, RenderError, DEFAULT_RADIUS};
use serde_json::json;

use crate::config::Config;
use crate::server::{self, AppState};
use crate::views::{read_view_dir, write_view, ViewDirError, ViewFile};

const DEFAULT_EXTRACT_RESOLUTION: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "normalforge", version, about = "Normal-supervised mesh refinement")]
pub struct Cli {
    /// JSON configuration file (sections: refine, enhance, procedural, remote, metrics, service).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnhancerArg {
    Oracle,
    Procedural,
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the zero level set of a JSON scene as an OBJ mesh.
    Extract {
        scene: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Lattice nodes per axis; defaults to the scene's value, then 64.
        #[arg(short, long)]
        resolution: Option<usize>,
    },
    /// Render orbit views of a mesh into a view directory.
    Render {
        mesh: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
        elevation: f64,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        #[arg(long, default_value_t = 256)]
        resolution: u32,
        /// Vertical field of view in degrees; orthographic when omitted.
        #[arg(long)]
        fov: Option<f64>,
    },
    /// Enhance every normal map of a view directory. Masks restrict the repaint.
    Enhance {
        views: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = EnhancerArg::Procedural)]
        enhancer: EnhancerArg,
        /// Detailed mesh rendered by the oracle enhancer.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        cfg_scale: Option<f64>,
        #[arg(long)]
        control_scale: Option<f64>,
        /// Remote backend base URL; overrides the config file.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Refine a coarse mesh against the normal maps of a view directory.
    Refine {
        coarse: PathBuf,
        targets: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Report path; defaults to the output with a `.report.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Chamfer distance and volume IoU between two meshes, as JSON.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        grid_res: Option<usize>,
    },
    /// Run the sphere-to-bumpy-sphere scene end to end.
    Demo {
        #[arg(short, long, default_value = "demo-out")]
        output: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value_t = EnhancerArg::Oracle)]
        enhancer: EnhancerArg,
    },
    /// Run the HTTP/WebSocket service.
    Serve {
        /// Address to bind; overrides the config file.
        #[arg(long)]
        bind: Option<String>,
        /// Create a demo session at startup and log its id.
        #[arg(long)]
        demo: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Data,
    Internal,
}

impl FailureKind {
    pub fn exit_code(self) -> u8 {
        match self {
            FailureKind::Data => 3,
            FailureKind::Internal => 4,
        }
    }
}

/// Input problems exit with 3; failures of the machinery itself with 4.
pub fn classify(err: &anyhow::Error) -> FailureKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<EnhanceError>() {
            return match e {
                EnhanceError::Transport(_) | EnhanceError::Protocol(_) | EnhanceError::Backend { .. } => {
                    FailureKind::Internal
                }
                _ => FailureKind::Data,
            };
        }
        if let Some(e) = cause.downcast_ref::<RefineError>() {
            return match e {
                RefineError::Step { .. } => FailureKind::Internal,
                _ => FailureKind::Data,
            };
        }
        if cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<MeshError>()
            || cause.is::<FieldError>()
            || cause.is::<RenderError>()
            || cause.is::<MetricsError>()
            || cause.is::<ViewDirError>()
            || cause.is::<DataError>()
        {
            return FailureKind::Data;
        }
    }
    FailureKind::Internal
}

/// Marks a plain message as an input problem.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DataError(pub String);

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = classify(&err);
            let label = if kind == FailureKind::Data { "data" } else { "internal" };
            eprintln!("{}", json!({ "error": format!("{err:#}"), "kind": label }));
            ExitCode::from(kind.exit_code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Config::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => Config::default(),
    };
    Ok(match cli.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    })
}

fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_obj(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Extract { scene, output, resolution } => extract(&scene, &output, resolution),
        Command::Render {
            mesh,
            output,
            views,
            elevation,
            radius,
            resolution,
            fov,
        } => {
            let mesh = read_mesh(&mesh)?;
            let projection = fov.map_or(Projection::default(), |fov_y_deg| Projection::Perspective { fov_y_deg });
            let cameras = orbit_ring(views, elevation, radius, projection, (resolution, resolution))?;
            for (i, camera) in cameras.into_iter().enumerate() {
                let normals = render_normals(&mesh, &camera);
                let name = format!("view_{i:02}");
                write_view(&output, &ViewFile { name, camera, normals, mask: None })?;
            }
            log::info!("wrote {views} views to {}", output.display());
            Ok(())
        }
        Command::Enhance {
            views,
            output,
            enhancer,
            target,
            prompt,
            cfg_scale,
            control_scale,
            endpoint,
        } => {
            let mut config = config;
            if let Some(p) = prompt {
                config.enhance.prompt = p;
            }
            if let Some(c) = cfg_scale {
                config.enhance.cfg_scale = c;
            }
            if let Some(c) = control_scale {
                config.enhance.control_scale = c;
            }
            if endpoint.is_some() {
                config.remote.endpoint = endpoint;
            }
            let enhancer = build_enhancer(enhancer, target.as_deref(), &config)?;
            for view in read_view_dir(&views)? {
                let mut request = EnhanceRequest::new(&view.normals, &config.enhance).with_camera(&view.camera);
                if let Some(m) = &view.mask {
                    request = request.with_mask(m);
                }
                let normals = enhancer
                    .enhance(&request)
                    .with_context(|| format!("enhancing view {}", view.name))?;
                write_view(&output, &ViewFile { normals, ..view })?;
            }
            Ok(())
        }
        Command::Refine {
            coarse,
            targets,
            output,
            report,
            steps,
        } => {
            let mut refine_config = config.refine.clone();
            if let Some(s) = steps {
                refine_config.steps = s;
            }
            let mesh = read_mesh(&coarse)?;
            let views: Vec<ViewTarget> = read_view_dir(&targets)?.into_iter().map(ViewFile::into_target).collect();
            let local = refine_config.local && views.iter().any(|v| v.mask.is_some());
            let mut sink = log_progress(refine_config.steps);
            let (refined, rep) = if local {
                refine_local(&mesh, &views, &refine_config, &mut sink)?
            } else {
                refine_global(&mesh, &views, &refine_config, &mut sink)?
            };
            write_file(&output, &save_obj(&refined))?;
            let report_path = report.unwrap_or_else(|| output.with_extension("report.json"));
            write_file(&report_path, &serde_json::to_vec_pretty(&rep)?)?;
            print_json(&summary(&rep))
        }
        Command::Metrics { a, b, samples, grid_res } => {
            let (a, b) = (read_mesh(&a)?, read_mesh(&b)?);
            let report = evaluate(
                &a,
                &b,
                samples.unwrap_or(config.metrics.samples),
                grid_res.unwrap_or(config.metrics.grid_res),
                config.seed(),
            )?;
            print_json(&report)
        }
        Command::Demo { output, steps, enhancer } => {
            let mut refine_config = if cli.config.is_some() { config.refine.clone() } else { detail_config() };
            if let Some(s) = steps {
                refine_config.steps = s;
            }
            if let Some(seed) = cli.seed {
                refine_config.seed = seed;
            }
            demo(&output, &config, refine_config, enhancer)
        }
        Command::Serve { bind, demo } => serve(config, bind, demo),
    }
}

fn extract(scene_path: &Path, output: &Path, resolution: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(scene_path).with_context(|| format!("reading {}", scene_path.display()))?;
    let scene = Scene::from_json(&text).with_context(|| format!("parsing {}", scene_path.display()))?;
    let res = resolution.or(scene.resolution).unwrap_or(DEFAULT_EXTRACT_RESOLUTION);
    let mesh = scene.extract(res)?;
    if mesh.faces.is_empty() {
        log::warn!("empty surface: the scene has no zero crossing inside its bounds");
    }
    write_file(output, &save_obj(&mesh))?;
    let report = validate_manifold(&mesh);
    print_json(&json!({
        "vertices": mesh.vertices.len(),
        "faces": mesh.faces.len(),
        "manifold": report,
    }))
}

fn build_enhancer(kind: EnhancerArg, target: Option<&Path>, config: &Config) -> Result<Box<dyn NormalEnhancer>> {
    Ok(match kind {
        EnhancerArg::Procedural => Box::new(config.procedural),
        EnhancerArg::Oracle => {
            let Some(path) = target else {
                bail!(DataError("the oracle enhancer needs --target <mesh.obj>".into()));
            };
            Box::new(OracleEnhancer::new(read_mesh(path)?))
        }
        EnhancerArg::Remote => match config.remote.enhancer() {
            Some(r) => Box::new(r),
            None => bail!(DataError("the remote enhancer needs --endpoint or remote.endpoint in the config".into())),
        },
    })
}

fn log_progress(total: usize) -> impl FnMut(&ProgressEvent) {
    let every = (total / 20).max(1);
    move |e: &ProgressEvent| {
        if e.step % every == 0 || e.phase.is_terminal() {
            log::info!("step {:>4}  loss {:.6}  vertices {}  {:?}", e.step, e.loss, e.vertex_count, e.phase);
        }
    }
}

fn summary(r: &RefineReport) -> serde_json::Value {
    json!({
        "final_loss": r.final_loss,
        "initial_loss": r.losses.first(),
        "returned_step": r.returned_step,
        "steps_run": r.losses.len(),
        "remesh_passes": r.remesh_passes,
        "termination": r.termination,
        "wall_clock_secs": r.wall_clock_secs,
    })
}

fn demo(output: &Path, config: &Config, refine_config: normalforge::refine::RefineConfig, kind: EnhancerArg) -> Result<()> {
    let started = Instant::now();
    let scene = detail_scene()?;
    let enhancer = match kind {
        EnhancerArg::Oracle => Box::new(OracleEnhancer::new(scene.target.clone())) as Box<dyn NormalEnhancer>,
        other => build_enhancer(other, None, config)?,
    };
    let mut targets = Vec::new();
    for camera in detail_cameras(VIEW_RESOLUTION)? {
        let rendered = render_normals(&scene.coarse, &camera);
        let request = EnhanceRequest::new(&rendered, &config.enhance).with_camera(&camera);
        targets.push(ViewTarget::new(camera, enhancer.enhance(&request)?));
    }
    let (refined, report) = refine_global(&scene.coarse, &targets, &refine_config, &mut log_progress(refine_config.steps))?;
    let (samples, grid_res, seed) = (config.metrics.samples, config.metrics.grid_res, config.seed());
    let before = evaluate(&scene.coarse, &scene.target, samples, grid_res, seed)?;
    let after = evaluate(&refined, &scene.target, samples, grid_res, seed)?;
    write_file(&output.join("coarse.obj"), &save_obj(&scene.coarse))?;
    write_file(&output.join("target.obj"), &save_obj(&scene.target))?;
    write_file(&output.join("refined.obj"), &save_obj(&refined))?;
    write_file(&output.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    let result = json!({
        "enhancer": enhancer.name(),
        "chamfer_coarse": before.chamfer,
        "chamfer_refined": after.chamfer,
        "chamfer_reduction": 1.0 - after.chamfer / before.chamfer,
        "iou_coarse": before.volume_iou,
        "iou_refined": after.volume_iou,
        "refine": summary(&report),
        "total_secs": started.elapsed().as_secs_f64(),
    });
    write_file(&output.join("metrics.json"), &serde_json::to_vec_pretty(&result)?)?;
    print_json(&result)
}

fn serve(config: Config, bind: Option<String>, demo: bool) -> Result<()> {
    let addr = bind.unwrap_or_else(|| config.service.bind.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        let state = AppState::new(config);
        if demo {
            let scene = tokio::task::spawn_blocking(detail_scene).await??;
            let id = state.create_session(scene.coarse, Some(scene.target));
            log::info!("demo session {id}");
        }
        server::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        log::info!("stopped");
        Ok(())
    })
}
