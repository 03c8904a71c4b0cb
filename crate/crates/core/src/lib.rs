pub mod demo;
pub mod enhance;
pub mod fields;
pub mod mesh;
pub mod metrics;
pub mod refine;
pub mod remesh;
pub mod render;
