//! Run the oracle and procedural enhancers on a rendered view and write the
//! three maps side by side as PNGs. Pass `--remote URL` to also call an
//! enhancement service.

use normalforge::enhance::{
    EnhanceParams, EnhanceRequest, NormalEnhancer, OracleEnhancer, ProceduralEnhancer, RemoteEnhancer,
    DEFAULT_TIMEOUT,
};
use normalforge::mesh::shapes;
use normalforge::render::{camera_from_orbit, render_normals, Projection};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let remote = args.iter().position(|a| a == "--remote").and_then(|i| args.get(i + 1));

    let coarse = shapes::icosphere(0.4, 2);
    let cam = camera_from_orbit(30.0, 15.0, 2.0, Projection::default(), (128, 128))?;
    let rendered = render_normals(&coarse, &cam);
    std::fs::write("enhance_input.png", rendered.to_png()?)?;

    let params = EnhanceParams::default();
    let request = EnhanceRequest::new(&rendered, &params).with_camera(&cam);
    let mut enhancers: Vec<Box<dyn NormalEnhancer>> = vec![
        Box::new(OracleEnhancer::new(shapes::icosphere(0.4, 5))),
        Box::new(ProceduralEnhancer::default()),
    ];
    if let Some(url) = remote {
        enhancers.push(Box::new(RemoteEnhancer::new(url, DEFAULT_TIMEOUT)));
    }
    for e in &enhancers {
        let out = e.enhance(&request)?;
        let path = format!("enhance_{}.png", e.name());
        std::fs::write(&path, out.to_png()?)?;
        println!("{path}");
    }
    Ok(())
}
