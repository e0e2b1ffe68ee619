//! Minimal HTTP moderation endpoint over an immutable model snapshot.
//!
//! `POST /v1/check` with `{"text": "..."}` returns the structured verdict;
//! `GET /v1/health` reports liveness and the parameter count. Requests over
//! the size cap get 413, malformed bodies 400. Worker threads share the
//! model read-only.

use std::io::Read;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;
use tiny_http::{Header, Method, Response, Server};

use glassguard_core::net::predict;
use glassguard_core::{Error, GuardrailModel, Result, Vocabulary};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: String,
    pub request_cap_bytes: usize,
    pub threads: usize,
    pub threshold: f64,
    pub verbose: bool,
}

struct Context {
    model: GuardrailModel,
    vocab: Vocabulary,
    options: ServeOptions,
    param_count: usize,
}

pub struct RunningServer {
    pub addr: std::net::SocketAddr,
    shutdown: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for handle in self.handles.drain(..) {
            let _ = handle.join();
        }
    }
}

/// Binds and spawns worker threads; returns immediately.
pub fn start(model: GuardrailModel, vocab: Vocabulary, options: ServeOptions) -> Result<RunningServer> {
    let param_count = model.count_params();
    let server = Server::http(&options.bind)
        .map_err(|e| Error::Client(format!("bind {}: {e}", options.bind)))?;
    let addr = match server.server_addr() {
        tiny_http::ListenAddr::IP(addr) => addr,
        #[allow(unreachable_patterns)]
        _ => return Err(Error::Client("unsupported listen address".to_string())),
    };
    let server = Arc::new(server);
    let context = Arc::new(Context {
        model,
        vocab,
        options,
        param_count,
    });
    let shutdown = Arc::new(AtomicBool::new(false));
    let mut handles = Vec::new();
    for _ in 0..context.options.threads.max(1) {
        let server = Arc::clone(&server);
        let context = Arc::clone(&context);
        let shutdown = Arc::clone(&shutdown);
        handles.push(std::thread::spawn(move || loop {
            if shutdown.load(Ordering::SeqCst) {
                break;
            }
            match server.recv_timeout(Duration::from_millis(100)) {
                Ok(Some(request)) => handle(request, &context),
                Ok(None) => continue,
                Err(_) => break,
            }
        }));
    }
    Ok(RunningServer {
        addr,
        shutdown,
        handles,
    })
}

/// Runs until the process is killed.
pub fn run_blocking(model: GuardrailModel, vocab: Vocabulary, options: ServeOptions) -> Result<()> {
    let running = start(model, vocab, options)?;
    eprintln!("listening on http://{}", running.addr);
    for handle in running.handles {
        let _ = handle.join();
    }
    Ok(())
}

#[derive(Deserialize)]
struct CheckBody {
    text: Option<String>,
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
    Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn handle(mut request: tiny_http::Request, context: &Context) {
    let method = request.method().clone();
    let url = request.url().to_string();
    let response = match (&method, url.as_str()) {
        (Method::Get, "/v1/health") => json_response(
            200,
            format!(
                "{{\"status\":\"ok\",\"model_params\":{}}}",
                context.param_count
            ),
        ),
        (Method::Post, "/v1/check") => check(&mut request, context),
        _ => json_response(404, "{\"error\":\"not found\"}".to_string()),
    };
    let _ = request.respond(response);
}

fn check(request: &mut tiny_http::Request, context: &Context) -> Response<std::io::Cursor<Vec<u8>>> {
    let cap = context.options.request_cap_bytes;
    if request.body_length().is_some_and(|len| len > cap) {
        return json_response(413, "{\"error\":\"request too large\"}".to_string());
    }
    let mut body = Vec::new();
    let mut reader = request.as_reader().take(cap as u64 + 1);
    if reader.read_to_end(&mut body).is_err() {
        return json_response(400, "{\"error\":\"unreadable body\"}".to_string());
    }
    if body.len() > cap {
        return json_response(413, "{\"error\":\"request too large\"}".to_string());
    }
    let parsed: std::result::Result<CheckBody, _> = serde_json::from_slice(&body);
    let text = match parsed {
        Ok(CheckBody { text: Some(t) }) => t,
        Ok(CheckBody { text: None }) => {
            return json_response(400, "{\"error\":\"empty text\"}".to_string())
        }
        Err(_) => return json_response(400, "{\"error\":\"malformed json\"}".to_string()),
    };
    if text.trim().is_empty() {
        return json_response(400, "{\"error\":\"empty text\"}".to_string());
    }
    match predict(&context.model, &text, &context.vocab, context.options.threshold) {
        Ok(verdict) => {
            let payload = if context.options.verbose {
                serde_json::to_string(&verdict)
            } else {
                serde_json::to_string(&verdict.concise())
            };
            match payload {
                Ok(json) => json_response(200, json),
                Err(e) => json_response(500, format!("{{\"error\":\"{e}\"}}")),
            }
        }
        Err(e) => json_response(400, format!("{{\"error\":\"{}\"}}", e.to_string().replace('"', "'"))),
    }
}
