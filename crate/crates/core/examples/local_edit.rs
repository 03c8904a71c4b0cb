//! Masked refinement: only the part of the mesh under the masks moves.

use normalforge::demo::{detail_cameras, detail_config, detail_scene};
use normalforge::refine::{active_vertices, refine_local, NoProgress, RefineConfig, ViewTarget};
use normalforge::render::{render_normals, PixelMask};

fn main() -> anyhow::Result<()> {
    let scene = detail_scene()?;
    let res = 96;
    let targets: Vec<ViewTarget> = detail_cameras(res)?
        .into_iter()
        .take(2)
        .map(|c| {
            let map = render_normals(&scene.target, &c);
            // A disc in the middle of each image.
            let r = res as f64 / 6.0;
            let c0 = res as f64 / 2.0;
            let mask = PixelMask::from_fn(res, res, |x, y| (x as f64 - c0).hypot(y as f64 - c0) < r);
            ViewTarget::new(c, map).with_mask(mask)
        })
        .collect();
    let active = active_vertices(&scene.coarse, &targets);
    println!(
        "{} of {} vertices under a mask",
        active.iter().filter(|&&a| a).count(),
        active.len()
    );

    let config = RefineConfig {
        steps: 100,
        ..detail_config()
    };
    let (refined, report) = refine_local(&scene.coarse, &targets, &config, &mut NoProgress)?;
    // Frozen vertices keep their exact coordinates, whatever the remesher did
    // elsewhere, so count how many input positions survive bit for bit.
    let kept: std::collections::HashSet<[u64; 3]> =
        refined.vertices.iter().map(|v| v.to_array().map(f64::to_bits)).collect();
    let untouched = scene
        .coarse
        .vertices
        .iter()
        .filter(|v| kept.contains(&v.to_array().map(f64::to_bits)))
        .count();
    println!(
        "loss {:.4} -> {:.4}; {untouched} input vertices unchanged",
        report.losses[0], report.final_loss
    );
    Ok(())
}
