//! Chat-completion endpoint answering as the synthetic judge.
//!
//! Incoming prompts are matched against a known query set by prompt hash,
//! which identifies the case, label and value; the answer is the synthetic
//! judge's outcome for that row, so the network path reproduces
//! [`simulate_outputs`](fairaudit_core::synth_judge::simulate_outputs).

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Router;
use fairaudit_core::promptgen::{prompt_hash, QuerySpec};
use fairaudit_core::synth_judge::{response_body, SynthConfig};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockOptions {
    /// Answer the first `n` requests for each prompt with HTTP 503.
    pub fail_first: u32,
    /// Reply with this content to every recognized prompt.
    pub fixed_body: Option<String>,
}

#[derive(Deserialize)]
struct ChatRequest {
    model: String,
    messages: Vec<ChatMessage>,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

struct Shared {
    cfg: SynthConfig,
    opts: MockOptions,
    index: HashMap<String, (String, String, String)>,
    attempts: Mutex<HashMap<String, u32>>,
    requests: AtomicUsize,
    log: Mutex<Vec<String>>,
}

/// Running mock endpoint; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Chat-completions URL to configure clients with.
    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Requests received so far, including rejected ones.
    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Prompt hashes of well-formed requests in arrival order.
    pub fn request_log(&self) -> Vec<String> {
        self.shared.log.lock().expect("log lock").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn handle(State(shared): State<Arc<Shared>>, body: Bytes) -> Response {
    shared.requests.fetch_add(1, Ordering::SeqCst);
    let req: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("malformed request: {e}")).into_response(),
    };
    let Some(prompt) = req.messages.last().map(|m| m.content.as_str()) else {
        return (StatusCode::BAD_REQUEST, "no messages").into_response();
    };
    let hash = prompt_hash(prompt);
    shared.log.lock().expect("log lock").push(hash.clone());
    {
        let mut attempts = shared.attempts.lock().expect("attempt lock");
        let seen = attempts.entry(hash.clone()).or_insert(0);
        *seen += 1;
        if *seen <= shared.opts.fail_first {
            return (StatusCode::SERVICE_UNAVAILABLE, "scheduled failure").into_response();
        }
    }
    let content = match shared.index.get(&hash) {
        Some((case, label, value)) => match &shared.opts.fixed_body {
            Some(fixed) => fixed.clone(),
            None => response_body(&shared.cfg.outcome(&req.model, case, label, value)),
        },
        None => json!({
            "guilty": false,
            "imprisonment_months": 0,
            "life_imprisonment": false,
            "death_penalty": false,
            "diagnostic": "unrecognized prompt",
        })
        .to_string(),
    };
    axum::Json(json!({
        "id": format!("mock-{}", &hash[..12]),
        "object": "chat.completion",
        "model": req.model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    }))
    .into_response()
}

/// Starts the mock on `bind` (e.g. `127.0.0.1:0`) in a background thread.
pub fn serve_mock(
    cfg: SynthConfig,
    queries: &[QuerySpec],
    bind: &str,
    opts: MockOptions,
) -> std::io::Result<MockServer> {
    let listener = std::net::TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        cfg,
        opts,
        index: queries
            .iter()
            .map(|q| (q.prompt_hash.clone(), (q.case_id.clone(), q.label_name.clone(), q.value_name.clone())))
            .collect(),
        attempts: Mutex::new(HashMap::new()),
        requests: AtomicUsize::new(0),
        log: Mutex::new(Vec::new()),
    });
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (tx, rx) = oneshot::channel();
    let app = Router::new().fallback(handle).with_state(shared.clone());
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with runtime");
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(MockServer {
        addr,
        shared,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
