use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{splice, EnhanceError, EnhanceRequest, NormalEnhancer};
use crate::render::NormalMap;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 2;

/// JSON body of `POST /enhance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceRequestBody {
    pub width: u32,
    pub height: u32,
    pub normal_png_base64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_png_base64: Option<String>,
    pub cfg_scale: f64,
    pub control_scale: f64,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceResponseBody {
    pub normal_png_base64: String,
}

/// Counting semaphore bounding concurrent requests to one endpoint.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Client for an external enhancement service speaking the JSON protocol of
/// [`EnhanceRequestBody`] / [`EnhanceResponseBody`].
#[derive(Debug, Clone)]
pub struct RemoteEnhancer {
    url: String,
    agent: ureq::Agent,
    slots: Arc<Slots>,
}

impl RemoteEnhancer {
    /// `endpoint` is the service base URL; requests go to `{endpoint}/enhance`.
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        Self::with_max_in_flight(endpoint, timeout, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_max_in_flight(endpoint: &str, timeout: Duration, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            url: format!("{}/enhance", endpoint.trim_end_matches('/')),
            agent,
            slots: Arc::new(Slots {
                free: Mutex::new(max_in_flight.max(1)),
                cv: Condvar::new(),
            }),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn call(&self, body: &EnhanceRequestBody) -> Result<EnhanceResponseBody, EnhanceError> {
        let _permit = self.slots.acquire();
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| EnhanceError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            let body: String = text.chars().take(200).collect();
            return Err(EnhanceError::Backend { status, body });
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| EnhanceError::Protocol(format!("invalid response body: {e}")))
    }
}

impl NormalEnhancer for RemoteEnhancer {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn enhance(&self, request: &EnhanceRequest<'_>) -> Result<NormalMap, EnhanceError> {
        request.check()?;
        let input = request.rendered;
        let body = EnhanceRequestBody {
            width: input.width,
            height: input.height,
            normal_png_base64: input.to_base64_png()?,
            mask_png_base64: request.mask.map(|m| m.to_base64_png()).transpose()?,
            cfg_scale: request.params.cfg_scale,
            control_scale: request.params.control_scale,
            prompt: request.params.prompt.clone(),
            seed: request.params.seed,
        };
        let reply = self.call(&body)?;
        let map = NormalMap::from_base64_png(&reply.normal_png_base64)
            .map_err(|e| EnhanceError::Protocol(e.to_string()))?;
        if !map.same_size(input.width, input.height) {
            return Err(EnhanceError::Protocol(format!(
                "backend returned {}x{} for a {}x{} request",
                map.width, map.height, input.width, input.height
            )));
        }
        if map.normals.iter().any(|n| !n.is_finite()) {
            return Err(EnhanceError::Protocol("non-finite normals in response".into()));
        }
        let mut map = map;
        // Zero vectors cannot be renormalized; those pixels keep the input.
        for i in 0..map.len() {
            if map.normals[i].length_squared() == 0.0 {
                map.coverage[i] = false;
            }
        }
        Ok(splice(input, &map.renormalized(), request.mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhance::EnhanceParams;
    use crate::mesh::shapes;
    use crate::render::{camera_from_orbit, render_normals, PixelMask, Projection};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// One-connection-at-a-time HTTP server answering every request with
    /// `respond(request_body)`.
    fn serve(respond: fn(EnhanceRequestBody) -> (u16, String)) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let (status, text) = respond(serde_json::from_slice(&body).unwrap());
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        format!("http://{addr}")
    }

    fn input() -> NormalMap {
        let cam = camera_from_orbit(0.0, 20.0, 2.0, Projection::default(), (24, 24)).unwrap();
        render_normals(&shapes::icosphere(0.4, 2), &cam).quantized()
    }

    #[test]
    fn echo_backend_round_trips() {
        let url = serve(|req| {
            (200, serde_json::to_string(&EnhanceResponseBody { normal_png_base64: req.normal_png_base64 }).unwrap())
        });
        let map = input();
        let params = EnhanceParams::default();
        let out = RemoteEnhancer::new(&url, Duration::from_secs(10))
            .enhance(&EnhanceRequest::new(&map, &params))
            .unwrap();
        assert_eq!(out.coverage, map.coverage);
        for (a, b) in out.normals.iter().zip(&map.normals) {
            assert!((*a - *b).length() < 1e-4);
        }
        let mask = PixelMask::from_fn(24, 24, |x, _| x < 5);
        let out = RemoteEnhancer::new(&url, Duration::from_secs(10))
            .enhance(&EnhanceRequest::new(&map, &params).with_mask(&mask))
            .unwrap();
        for i in 0..map.len() {
            if !mask.data[i] {
                assert_eq!(out.normals[i], map.normals[i]);
            }
        }
    }

    #[test]
    fn wrong_resolution_is_a_protocol_error() {
        let url = serve(|_| {
            let small = NormalMap::empty(8, 8).to_base64_png().unwrap();
            (200, serde_json::to_string(&EnhanceResponseBody { normal_png_base64: small }).unwrap())
        });
        let map = input();
        let params = EnhanceParams::default();
        let err = RemoteEnhancer::new(&url, Duration::from_secs(10))
            .enhance(&EnhanceRequest::new(&map, &params))
            .unwrap_err();
        assert!(matches!(err, EnhanceError::Protocol(_)), "{err}");
    }

    #[test]
    fn backend_failure_carries_status_and_body() {
        let url = serve(|_| (500, "model exploded".into()));
        let map = input();
        let params = EnhanceParams::default();
        match RemoteEnhancer::new(&url, Duration::from_secs(10)).enhance(&EnhanceRequest::new(&map, &params)) {
            Err(EnhanceError::Backend { status, body }) => {
                assert_eq!(status, 500);
                assert!(body.contains("exploded"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let map = input();
        let params = EnhanceParams::default();
        let start = std::time::Instant::now();
        let err = RemoteEnhancer::new("http://127.0.0.1:1", Duration::from_secs(5))
            .enhance(&EnhanceRequest::new(&map, &params))
            .unwrap_err();
        assert!(matches!(err, EnhanceError::Transport(_)), "{err}");
        assert!(start.elapsed() < Duration::from_secs(6));
    }
}
