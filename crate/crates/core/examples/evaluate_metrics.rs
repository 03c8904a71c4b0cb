//! Chamfer distance and volume IoU between two simple shapes.

use glam::DVec3;
use normalforge::mesh::shapes;
use normalforge::metrics::evaluate;

fn main() -> anyhow::Result<()> {
    let a = shapes::cuboid(DVec3::ZERO, DVec3::splat(0.25));
    let b = shapes::cuboid(DVec3::new(0.25, 0.0, 0.0), DVec3::splat(0.25));
    let report = evaluate(&a, &b, 100_000, 64, 0)?;
    println!("cube vs half-shifted cube: {}", serde_json::to_string(&report)?);

    let s = shapes::icosphere(0.4, 3);
    let t = shapes::icosphere(0.42, 3);
    let report = evaluate(&s, &t, 100_000, 64, 0)?;
    println!("sphere r=0.40 vs r=0.42:   {}", serde_json::to_string(&report)?);
    Ok(())
}
