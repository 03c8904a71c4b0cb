#![allow(dead_code)]

use std::net::SocketAddr;
use std::thread::JoinHandle;

use normalforge_service::config::Config;
use normalforge_service::server::{serve, AppState, JobEvent};
use serde_json::Value;

/// The service on an ephemeral port, on its own runtime thread.
pub struct TestServer {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(config: Config) -> Self {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                serve(listener, AppState::new(config), async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
            });
        });
        Self {
            addr: addr_rx.recv().unwrap(),
            stop: Some(stop),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Graceful shutdown; returns once running jobs have wound down.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            t.join().unwrap();
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(std::time::Duration::from_secs(300)))
        .build()
        .into()
}

pub fn json_of(mut resp: ureq::http::Response<ureq::Body>) -> (u16, Value) {
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

pub fn get_json(url: &str) -> (u16, Value) {
    json_of(agent().get(url).call().unwrap())
}

pub fn post_json(url: &str, body: &Value) -> (u16, Value) {
    json_of(agent().post(url).send_json(body).unwrap())
}

pub fn post_bytes(url: &str, body: &[u8]) -> (u16, Value) {
    json_of(agent().post(url).send(body).unwrap())
}

pub fn get_bytes(url: &str) -> (u16, Vec<u8>) {
    let mut resp = agent().get(url).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().with_config().limit(1 << 30).read_to_vec().unwrap())
}

/// Every frame of a job stream until the server closes it.
pub fn read_stream(addr: SocketAddr, job: &str) -> Vec<JobEvent> {
    let (mut socket, _) = tungstenite::connect(format!("ws://{addr}/jobs/{job}/stream")).unwrap();
    let mut events = Vec::new();
    loop {
        match socket.read() {
            Ok(tungstenite::Message::Text(t)) => events.push(serde_json::from_str(&t).unwrap()),
            Ok(tungstenite::Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    events
}
