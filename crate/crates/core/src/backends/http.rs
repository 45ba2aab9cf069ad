use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tracing::debug;

use super::mock::MockBackend;
use super::protocol::{Endpoint, ErrorBody, ErrorDetail};
use super::Transport;
use crate::error::{Error, Result};

/// JSON over HTTP with a per-request timeout and optional bearer token.
pub struct HttpTransport {
    agent: ureq::Agent,
    base: String,
    bearer: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout_secs: u64, bearer: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(timeout_secs.max(1)))
            .build();
        Self {
            agent,
            base: base_url.trim_end_matches('/').to_string(),
            bearer,
        }
    }
}

impl Transport for HttpTransport {
    fn post(&self, endpoint: Endpoint, body: &[u8]) -> Result<Vec<u8>> {
        let url = format!("{}{}", self.base, endpoint.path());
        let mut req = self.agent.post(&url).set("Content-Type", "application/json");
        if let Some(token) = &self.bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let read = |resp: ureq::Response| -> Result<Vec<u8>> {
            let mut out = Vec::new();
            resp.into_reader()
                .read_to_end(&mut out)
                .map_err(|e| Error::Transport {
                    endpoint: endpoint.to_string(),
                    message: e.to_string(),
                })?;
            Ok(out)
        };
        match req.send_bytes(body) {
            Ok(resp) => read(resp),
            Err(ureq::Error::Status(status, resp)) => Err(Error::Status {
                endpoint: endpoint.to_string(),
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(Error::Transport {
                endpoint: endpoint.to_string(),
                message: t.to_string(),
            }),
        }
    }
}

/// Serves a [`MockBackend`] on a local port. Dropping the server stops it.
pub struct MockHttpServer {
    server: Arc<tiny_http::Server>,
    backend: Arc<MockBackend>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl MockHttpServer {
    pub fn start(backend: Arc<MockBackend>, addr: &str, workers: usize, bearer: Option<String>) -> Result<Self> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config("mock server is not bound to an IP socket".into()))?;
        let server = Arc::new(server);
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = server.clone();
                let backend = backend.clone();
                let bearer = bearer.clone();
                thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        serve(&backend, bearer.as_deref(), req);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            backend,
            workers,
            addr,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn backend(&self) -> &Arc<MockBackend> {
        &self.backend
    }

    /// Blocks until the server is shut down from another thread or killed.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockHttpServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_header() -> tiny_http::Header {
    tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header")
}

fn error_body(code: &str, message: &str) -> Vec<u8> {
    serde_json::to_vec(&ErrorBody {
        error: ErrorDetail {
            code: code.into(),
            message: message.into(),
        },
    })
    .unwrap_or_default()
}

fn serve(backend: &MockBackend, bearer: Option<&str>, mut req: tiny_http::Request) {
    let path = req.url().split('?').next().unwrap_or_default().to_string();
    let method = req.method().clone();
    debug!(%method, %path, "mock request");
    let (status, body) = if let Some(token) = bearer.filter(|_| path != "/healthz") {
        let expected = format!("Bearer {token}");
        let authorized = req
            .headers()
            .iter()
            .any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected);
        if authorized {
            route(backend, &method, &path, &mut req)
        } else {
            (401, error_body("unauthorized", "missing or wrong bearer token"))
        }
    } else {
        route(backend, &method, &path, &mut req)
    };
    let resp = tiny_http::Response::from_data(body)
        .with_status_code(status)
        .with_header(json_header());
    let _ = req.respond(resp);
}

fn route(backend: &MockBackend, method: &tiny_http::Method, path: &str, req: &mut tiny_http::Request) -> (u16, Vec<u8>) {
    match (method, path) {
        (tiny_http::Method::Get, "/healthz") => (200, br#"{"status":"ok"}"#.to_vec()),
        (tiny_http::Method::Post, p) => match Endpoint::from_path(p) {
            Some(endpoint) => {
                let mut body = Vec::new();
                if let Err(e) = req.as_reader().read_to_end(&mut body) {
                    return (400, error_body("bad_request", &e.to_string()));
                }
                backend.handle(endpoint, &body)
            }
            None => (404, error_body("not_found", p)),
        },
        _ => (405, error_body("method_not_allowed", path)),
    }
}
