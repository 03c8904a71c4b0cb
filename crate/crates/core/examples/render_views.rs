//! Render camera-space normal maps of an icosphere from a ring of cameras and
//! save them as PNGs.

use normalforge::mesh::shapes;
use normalforge::render::{orbit_ring, render_normals, Projection};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "views".into());
    std::fs::create_dir_all(&dir)?;
    let mesh = shapes::icosphere(0.4, 3);
    let cams = orbit_ring(6, 20.0, 2.0, Projection::default(), (128, 128))?;
    for (i, cam) in cams.iter().enumerate() {
        let map = render_normals(&mesh, cam);
        let path = format!("{dir}/view_{i:02}.png");
        std::fs::write(&path, map.to_png()?)?;
        println!("{path}: {} covered pixels", map.covered_count());
    }
    Ok(())
}
