//! Command-line tools and the HTTP/WebSocket service around `normalforge`.

pub mod cli;
pub mod config;
pub mod server;
pub mod views;
