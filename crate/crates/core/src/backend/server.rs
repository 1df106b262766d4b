use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Deserialize;
use serde_json::json;
use tiny_http::{Header, Method, Response, Server};

use super::LanguageModel;
use crate::dist::TokenId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct ServerOptions {
    /// Answer the first `n` requests with 503, to exercise client retries.
    pub fail_first: usize,
}

/// Running protocol server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Deserialize)]
struct NextBody {
    tokens: Vec<TokenId>,
}

#[derive(Deserialize)]
struct ScoreBody {
    context: Vec<TokenId>,
    continuation: Vec<TokenId>,
}

/// Serves `model` over the JSON logit protocol on `addr` (e.g. `127.0.0.1:0`).
pub fn serve(model: Arc<dyn LanguageModel>, addr: &str, opts: ServerOptions) -> Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| Error::Backend(format!("bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Backend("server is not bound to an IP address".into()))?;
    let server = Arc::new(server);
    let worker = Arc::clone(&server);
    let failures = AtomicUsize::new(opts.fail_first);
    let thread = std::thread::spawn(move || {
        for mut req in worker.incoming_requests() {
            let overloaded = failures
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok();
            let (status, body) = if overloaded {
                (503, json!({"error": "overloaded"}))
            } else {
                let mut body = String::new();
                match req.as_reader().read_to_string(&mut body) {
                    Ok(_) => handle(model.as_ref(), req.method(), req.url(), &body),
                    Err(e) => (400, json!({ "error": e.to_string() })),
                }
            };
            let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
            let resp = Response::from_string(body.to_string())
                .with_status_code(status)
                .with_header(header);
            let _ = req.respond(resp);
        }
    });
    Ok(ServerHandle { addr: bound, server, thread: Some(thread) })
}

fn handle(model: &dyn LanguageModel, method: &Method, url: &str, body: &str) -> (u16, serde_json::Value) {
    match route(model, method, url, body) {
        Ok(v) => (200, v),
        Err(Error::Backend(msg)) => (503, json!({ "error": msg })),
        Err(e) => (400, json!({ "error": e.to_string() })),
    }
}

fn route(model: &dyn LanguageModel, method: &Method, url: &str, body: &str) -> Result<serde_json::Value> {
    match (method, url) {
        (Method::Get, "/v1/info") => Ok(serde_json::to_value(model.info())?),
        (Method::Post, "/v1/next_logprobs") => {
            let b: NextBody = serde_json::from_str(body)?;
            let lp = model.next_logprobs(&b.tokens)?;
            Ok(json!({ "logprobs": finite_or_null(lp.values()) }))
        }
        (Method::Post, "/v1/score") => {
            let b: ScoreBody = serde_json::from_str(body)?;
            let per = model.score_tokens(&b.context, &b.continuation)?;
            let total: f64 = per.iter().sum();
            Ok(json!({ "logprob": finite_or_null(&[total])[0], "per_token": finite_or_null(&per) }))
        }
        _ => Err(Error::invalid(format!("no route for {method} {url}"))),
    }
}

fn finite_or_null(values: &[f64]) -> Vec<Option<f64>> {
    values.iter().map(|v| if v.is_finite() { Some(*v) } else { None }).collect()
}
