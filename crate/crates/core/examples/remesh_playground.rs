//! Repeated remesh passes on a coarse icosphere toward a finer target edge
//! length, printing what each pass did.

use normalforge::mesh::{shapes, validate_manifold};
use normalforge::remesh::{remesh_pass, OptimizerState, RemeshParams};

fn main() -> anyhow::Result<()> {
    let mut mesh = shapes::icosphere(0.4, 1);
    let mut state = OptimizerState::new(&mesh);
    let params = RemeshParams {
        l_target: mesh.mean_edge_length() * 0.3,
        ..RemeshParams::default()
    };
    println!("l_target {:.4}, start with {} vertices", params.l_target, mesh.vertices.len());
    for pass in 1..=8 {
        let (m, s, stats) = remesh_pass(&mesh, &state, &params)?;
        let report = validate_manifold(&m);
        println!(
            "pass {pass}: {:4} splits {:4} collapses {:4} flips -> {} vertices, mean edge {:.4}, closed={}",
            stats.splits,
            stats.collapses,
            stats.flips,
            m.vertices.len(),
            m.mean_edge_length(),
            report.closed
        );
        let done = !stats.changed();
        (mesh, state) = (m, s);
        if done {
            break;
        }
    }
    Ok(())
}
