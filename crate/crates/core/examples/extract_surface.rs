//! Sample a displaced sphere on a lattice, extract its surface and write it
//! as OBJ. Usage: `extract_surface [out.obj] [resolution]`.

use normalforge::fields::{Bounds, ScalarField, Scene};
use normalforge::mesh::{save_obj, validate_manifold};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "bumpy_sphere.obj".into());
    let res: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(64);

    let scene = Scene {
        field: ScalarField::sphere(0.4).displaced(0.03, 8.0, 7),
        bounds: Bounds::cube(0.5),
        resolution: None,
    };
    let mesh = scene.extract(res)?;
    let report = validate_manifold(&mesh);
    println!(
        "{} vertices, {} faces, closed={}, euler={}",
        mesh.vertices.len(),
        mesh.faces.len(),
        report.closed,
        report.euler_characteristic
    );
    std::fs::write(&out, save_obj(&mesh))?;
    println!("wrote {out}");
    Ok(())
}
