//! In-process mock endpoints for chat completions and scoring.
#![allow(dead_code)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

pub mod oracle;
pub mod workspace;

#[derive(Clone, Debug)]
pub enum Reply {
    Text(String),
    Score(f64),
    Status(u16),
    /// 200 with a body that is not the expected JSON.
    Garbage,
    /// Sleep this long before answering with the text.
    Slow(Duration, String),
}

type ChatFn = dyn Fn(&str, usize) -> Reply + Send + Sync;
type ScoreFn = dyn Fn(&str, &str, Option<&str>) -> Reply + Send + Sync;

struct Shared {
    chat: Box<ChatFn>,
    score: Box<ScoreFn>,
    delay: Duration,
    calls: AtomicUsize,
    chat_calls: AtomicUsize,
    score_calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    prompts: Mutex<Vec<String>>,
    auth: Mutex<Vec<Option<String>>>,
}

pub struct MockServer {
    pub url: String,
    shared: Arc<Shared>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    /// Chat completions at `{url}/v1/chat/completions`, scoring at
    /// `{url}/score`.
    pub fn start(
        chat: impl Fn(&str, usize) -> Reply + Send + Sync + 'static,
        score: impl Fn(&str, &str, Option<&str>) -> Reply + Send + Sync + 'static,
        delay: Duration,
    ) -> Self {
        let shared = Arc::new(Shared {
            chat: Box::new(chat),
            score: Box::new(score),
            delay,
            calls: AtomicUsize::new(0),
            chat_calls: AtomicUsize::new(0),
            score_calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
            auth: Mutex::new(Vec::new()),
        });
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let state = shared.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let app = Router::new()
                    .route("/v1/chat/completions", post(chat_handler))
                    .route("/score", post(score_handler))
                    .with_state(state);
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            url: format!("http://{addr}"),
            shared,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn chat(chat: impl Fn(&str, usize) -> Reply + Send + Sync + 'static) -> Self {
        Self::start(chat, |_, _, _| Reply::Status(404), Duration::ZERO)
    }

    pub fn scorer(score: impl Fn(&str, &str, Option<&str>) -> Reply + Send + Sync + 'static) -> Self {
        Self::start(|_, _| Reply::Status(404), score, Duration::ZERO)
    }

    pub fn base_url(&self) -> String {
        format!("{}/v1", self.url)
    }

    pub fn calls(&self) -> usize {
        self.shared.calls.load(Ordering::SeqCst)
    }

    pub fn chat_calls(&self) -> usize {
        self.shared.chat_calls.load(Ordering::SeqCst)
    }

    pub fn score_calls(&self) -> usize {
        self.shared.score_calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.shared.prompts.lock().unwrap().clone()
    }

    pub fn auth_headers(&self) -> Vec<Option<String>> {
        self.shared.auth.lock().unwrap().clone()
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

struct InFlight<'a>(&'a Shared);

impl<'a> InFlight<'a> {
    fn enter(shared: &'a Shared) -> Self {
        let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        shared.peak.fetch_max(now, Ordering::SeqCst);
        InFlight(shared)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn respond(reply: Reply, ok: impl FnOnce(String) -> Value) -> Response {
    match reply {
        Reply::Text(t) => Json(ok(t)).into_response(),
        Reply::Slow(d, t) => {
            tokio::time::sleep(d).await;
            Json(ok(t)).into_response()
        }
        Reply::Score(s) => Json(json!({ "score": s })).into_response(),
        Reply::Status(code) => (StatusCode::from_u16(code).unwrap(), "mock failure").into_response(),
        Reply::Garbage => (StatusCode::OK, "<html>not json</html>").into_response(),
    }
}

async fn chat_handler(
    State(shared): State<Arc<Shared>>,
    headers: axum::http::HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    let n = shared.calls.fetch_add(1, Ordering::SeqCst);
    shared.chat_calls.fetch_add(1, Ordering::SeqCst);
    let _guard = InFlight::enter(&shared);
    let prompt = body
        .pointer("/messages/0/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    shared.prompts.lock().unwrap().push(prompt.clone());
    shared.auth.lock().unwrap().push(
        headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    );
    if !shared.delay.is_zero() {
        tokio::time::sleep(shared.delay).await;
    }
    let reply = (shared.chat)(&prompt, n);
    respond(reply, |text| {
        json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]})
    })
    .await
}

async fn score_handler(State(shared): State<Arc<Shared>>, Json(body): Json<Value>) -> Response {
    shared.calls.fetch_add(1, Ordering::SeqCst);
    shared.score_calls.fetch_add(1, Ordering::SeqCst);
    let _guard = InFlight::enter(&shared);
    let field = |k: &str| body.get(k).and_then(Value::as_str).map(str::to_string);
    let reply = (shared.score)(
        &field("source").unwrap_or_default(),
        &field("hypothesis").unwrap_or_default(),
        field("reference").as_deref(),
    );
    respond(reply, |t| json!({ "score": t })).await
}

/// Text after `{label}: ` on the first line that starts with it.
pub fn line_value<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    let prefix = format!("{label}: ");
    prompt.lines().find_map(|l| l.strip_prefix(prefix.as_str()))
}

pub fn is_refine_prompt(prompt: &str) -> bool {
    prompt.lines().any(|l| l.starts_with("Intermediate "))
}

/// Intermediate text of a default refine prompt.
pub fn intermediate_of(prompt: &str, tgt_name: &str) -> Option<String> {
    line_value(prompt, &format!("Intermediate {tgt_name} translation")).map(str::to_string)
}

/// A synthetic parallel corpus: German sources and English references,
/// with ids `{stem}:{line}` as the loader assigns them.
pub struct Corpus {
    pub sources: Vec<String>,
    pub references: Vec<String>,
}

const WORDS: [&str; 24] = [
    "the", "quiet", "river", "runs", "past", "an", "old", "mill", "where", "children", "play",
    "every", "summer", "evening", "while", "their", "parents", "watch", "from", "a", "bench",
    "near", "green", "bridge",
];

impl Corpus {
    pub fn synthetic(n: usize) -> Self {
        let mut sources = Vec::new();
        let mut references = Vec::new();
        for i in 0..n {
            let len = 6 + i % 7;
            let words: Vec<&str> = (0..len).map(|k| WORDS[(i * 7 + k * 5) % WORDS.len()]).collect();
            references.push(format!("{} number {i} .", words.join(" ")));
            sources.push(format!("Quelle Satz Nummer {i} mit {len} Wörtern"));
        }
        Self { sources, references }
    }

    pub fn tsv(&self) -> String {
        self.sources
            .iter()
            .zip(&self.references)
            .map(|(s, r)| format!("{s}\t{r}\n"))
            .collect()
    }

    pub fn lookup(&self) -> HashMap<String, String> {
        self.sources.iter().cloned().zip(self.references.iter().cloned()).collect()
    }
}

/// Deterministic imperfect translation: every third item is exact, the
/// others lose or swap words.
pub fn degrade(reference: &str, i: usize) -> String {
    let mut words: Vec<&str> = reference.split(' ').collect();
    match i % 3 {
        0 => {}
        1 => {
            words.remove(1);
        }
        _ => {
            words.swap(0, 2);
            words.truncate(words.len() - 2);
        }
    }
    words.join(" ")
}

/// Item number from a synthetic source sentence.
pub fn item_index(source: &str) -> usize {
    source
        .split_whitespace()
        .nth(3)
        .and_then(|n| n.parse().ok())
        .expect("synthetic source")
}
