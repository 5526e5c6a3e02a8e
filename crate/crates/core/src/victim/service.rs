//! HTTP/1.1 JSON service exposing the victim behind a query budget.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use tokio::sync::oneshot;

use super::protocol::{
    BudgetStatus, ErrorBody, ModelInfo, RepresentationRequest, RepresentationResponse, BUDGET_PATH,
    INFO_PATH, REPRESENTATIONS_PATH,
};
use super::{ChargeOutcome, QueryLedger, VictimModel};
use crate::corpus::{LengthLimits, MAX_CLIP_SECONDS, SAMPLE_RATE};
use crate::error::{Error, Result};

const BODY_LIMIT_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Longest accepted clip, in seconds.
    pub max_clip_s: f64,
    /// Layers clients may request; empty means every layer.
    pub allowed_layers: BTreeSet<usize>,
    /// Accepted requests are written here as JSON lines on shutdown.
    pub ledger_log: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_clip_s: MAX_CLIP_SECONDS,
            allowed_layers: BTreeSet::new(),
            ledger_log: None,
        }
    }
}

struct AppState {
    model: Arc<VictimModel>,
    ledger: Mutex<QueryLedger>,
    config: ServiceConfig,
    max_samples: usize,
}

fn json<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("wire types serialize");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn malformed(detail: impl Into<String>) -> Response {
    json(StatusCode::BAD_REQUEST, &ErrorBody::malformed(detail))
}

async fn representations(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: RepresentationRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return malformed(e.to_string()),
    };
    if req.sample_rate != SAMPLE_RATE {
        return malformed(format!("sample_rate must be {SAMPLE_RATE}"));
    }
    if req.layers.is_empty() {
        return malformed("no layers requested");
    }
    let layers: BTreeSet<usize> = req.layers.iter().copied().collect();
    let num_layers = state.model.num_layers();
    if let Some(bad) = layers.iter().find(|&&n| {
        n == 0
            || n > num_layers
            || (!state.config.allowed_layers.is_empty() && !state.config.allowed_layers.contains(&n))
    }) {
        return malformed(format!("layer {bad} is not available"));
    }
    if req.samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
        return malformed("samples must be finite values in [-1, 1]");
    }
    if req.samples.len() < state.model.config().frame_len {
        return malformed("clip shorter than one frame");
    }
    if req.samples.len() > state.max_samples {
        return json(
            StatusCode::PAYLOAD_TOO_LARGE,
            &ErrorBody::clip_too_long(state.config.max_clip_s),
        );
    }

    let duration_s = req.samples.len() as f64 / f64::from(req.sample_rate);
    let remaining = {
        let mut ledger = state.ledger.lock().expect("ledger lock");
        match ledger.charge(&req.clip_id, duration_s) {
            Ok(ChargeOutcome::Accepted) => ledger.remaining_s(),
            Ok(ChargeOutcome::Refused) => {
                return json(StatusCode::FORBIDDEN, &ErrorBody::budget_exhausted())
            }
            Err(e) => return malformed(e.to_string()),
        }
    };

    let model = Arc::clone(&state.model);
    let result = tokio::task::spawn_blocking(move || {
        let samples: Vec<f64> = req.samples.iter().map(|&s| f64::from(s)).collect();
        model
            .forward(&samples, &layers)
            .map(|reps| RepresentationResponse::encode(&req.clip_id, &reps, remaining))
    })
    .await;
    match result {
        Ok(Ok(resp)) => json(StatusCode::OK, &resp),
        Ok(Err(e)) => malformed(e.to_string()),
        Err(e) => json(
            StatusCode::INTERNAL_SERVER_ERROR,
            &ErrorBody {
                error: "internal".into(),
                max_seconds: None,
                detail: Some(e.to_string()),
            },
        ),
    }
}

async fn budget(State(state): State<Arc<AppState>>) -> Response {
    let ledger = state.ledger.lock().expect("ledger lock");
    json(
        StatusCode::OK,
        &BudgetStatus {
            limit_s: ledger.limit_s,
            spent_s: ledger.spent_s(),
            request_count: ledger.request_count(),
        },
    )
}

async fn info(State(state): State<Arc<AppState>>) -> Response {
    let c = state.model.config();
    json(
        StatusCode::OK,
        &ModelInfo {
            num_layers: c.num_layers,
            dim: c.dim,
            frame_len: c.frame_len,
            hop: c.hop,
        },
    )
}

fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route(REPRESENTATIONS_PATH, post(representations))
        .route(BUDGET_PATH, get(budget))
        .route(INFO_PATH, get(info))
        .layer(DefaultBodyLimit::max(BODY_LIMIT_BYTES))
        .with_state(state)
}

/// A running victim service on a background thread.
pub struct VictimService {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl VictimService {
    /// Binds `bind` (use port 0 for an ephemeral port) and starts serving.
    pub fn spawn(
        model: Arc<VictimModel>,
        ledger: QueryLedger,
        config: ServiceConfig,
        bind: &str,
    ) -> Result<Self> {
        let std_listener = std::net::TcpListener::bind(bind).map_err(|e| Error::io(bind, e))?;
        std_listener
            .set_nonblocking(true)
            .map_err(|e| Error::io(bind, e))?;
        let addr = std_listener.local_addr().map_err(|e| Error::io(bind, e))?;
        let state = new_state(model, ledger, config);
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(Arc::clone(&state));
        let thread = std::thread::Builder::new()
            .name("victim-service".into())
            .spawn(move || {
                let rt = tokio::runtime::Builder::new_multi_thread()
                    .worker_threads(2)
                    .enable_all()
                    .build()?;
                rt.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(std_listener)?;
                    axum::serve(listener, app)
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await
                })
            })
            .map_err(|e| Error::io(bind, e))?;
        log::info!("victim service listening on {addr}");
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn ledger_snapshot(&self) -> QueryLedger {
        self.state.ledger.lock().expect("ledger lock").clone()
    }

    /// Stops serving, writes the ledger log if configured, and returns the ledger.
    pub fn shutdown(mut self) -> Result<QueryLedger> {
        self.stop()?;
        let ledger = self.ledger_snapshot();
        if let Some(path) = &self.state.config.ledger_log {
            write_ledger_log(path, &ledger)?;
        }
        Ok(ledger)
    }

    fn stop(&mut self) -> Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            thread
                .join()
                .map_err(|_| Error::Numeric("victim service thread panicked".into()))?
                .map_err(|e| Error::io(self.addr.to_string(), e))?;
        }
        Ok(())
    }
}

impl Drop for VictimService {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

fn new_state(model: Arc<VictimModel>, ledger: QueryLedger, config: ServiceConfig) -> Arc<AppState> {
    let max_samples = LengthLimits {
        max_len_s: config.max_clip_s,
        min_len_s: 0.0,
    }
    .max_samples(SAMPLE_RATE);
    Arc::new(AppState {
        model,
        ledger: Mutex::new(ledger),
        config,
        max_samples,
    })
}

async fn shutdown_signal() {
    let interrupt = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = interrupt => {}
        _ = terminate => {}
    }
}

/// Serves in the foreground until SIGINT or SIGTERM, then writes the ledger log.
pub fn serve_until_signal(
    model: Arc<VictimModel>,
    ledger: QueryLedger,
    config: ServiceConfig,
    bind: &str,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<QueryLedger> {
    let state = new_state(model, ledger, config);
    let app = router(Arc::clone(&state));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io(bind, e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| Error::io(bind, e))?;
        let addr = listener.local_addr().map_err(|e| Error::io(bind, e))?;
        on_ready(addr);
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(|e| Error::io(bind, e))
    })?;
    let ledger = state.ledger.lock().expect("ledger lock").clone();
    if let Some(path) = &state.config.ledger_log {
        write_ledger_log(path, &ledger)?;
    }
    Ok(ledger)
}

/// One JSON line per accepted request.
pub fn write_ledger_log(path: &Path, ledger: &QueryLedger) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for entry in ledger.entries() {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
