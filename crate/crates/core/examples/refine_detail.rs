//! Recover surface detail: refine a smooth sphere against normal maps of a
//! bumpy one and report Chamfer distance before and after.
//! Usage: `refine_detail [steps]` (release build recommended).

use normalforge::demo::{detail_cameras, detail_config, detail_scene, VIEW_RESOLUTION};
use normalforge::metrics::chamfer_distance;
use normalforge::refine::{refine_global, Phase, ProgressEvent, ViewTarget};
use normalforge::render::render_normals;

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let scene = detail_scene()?;
    let targets: Vec<ViewTarget> = detail_cameras(VIEW_RESOLUTION)?
        .into_iter()
        .map(|c| {
            let map = render_normals(&scene.target, &c);
            ViewTarget::new(c, map)
        })
        .collect();
    let config = normalforge::refine::RefineConfig {
        steps,
        ..detail_config()
    };

    let mut progress = |e: &ProgressEvent| {
        if e.step % 25 == 0 || e.phase == Phase::Done {
            println!("step {:4}  loss {:.4}  vertices {}", e.step, e.loss, e.vertex_count);
        }
    };
    let (refined, report) = refine_global(&scene.coarse, &targets, &config, &mut progress)?;

    let before = chamfer_distance(&scene.coarse, &scene.target, 50_000, 0)?;
    let after = chamfer_distance(&refined, &scene.target, 50_000, 0)?;
    println!(
        "chamfer {before:.5} -> {after:.5}, returned step {}, {:.1}s",
        report.returned_step, report.wall_clock_secs
    );
    Ok(())
}
