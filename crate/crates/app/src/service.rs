//! HTTP front end: `POST /embed` returns a protected PNG, `POST /verify`
//! returns a detection report as JSON. Models are loaded once and shared
//! read-only; the only mutable state is the append-only request log.

use std::fs::{File, OpenOptions};
use std::future::Future;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use faceprotect::features::StubExtractor;
use faceprotect::image::RgbImage;
use faceprotect::pipeline::Models;
use faceprotect::verify::detect;
use faceprotect::Error;
use serde_json::json;
use tokio::net::TcpListener;

use crate::commands::load_models;
use crate::config::ServeSection;

const MAX_UPLOAD: usize = 32 * 1024 * 1024;

pub struct AppState {
    models: Result<Arc<Models>, String>,
    tau: f64,
    log: Option<Mutex<File>>,
}

impl AppState {
    pub fn new(models: Result<Models, String>, tau: f64, request_log: Option<&Path>) -> std::io::Result<Self> {
        let log = match request_log {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        };
        Ok(Self {
            models: models.map(Arc::new),
            tau,
            log,
        })
    }

    /// Load the configured checkpoints. A load failure is kept and reported as
    /// 503 on every request rather than preventing startup.
    pub fn from_config(sec: &ServeSection) -> std::io::Result<Self> {
        let models = load_models(&sec.godwgm, &sec.wvs).map_err(|e| e.message);
        if let Err(e) = &models {
            tracing::error!("checkpoints not loaded: {e}");
        }
        Self::new(models, sec.tau, sec.request_log.as_deref())
    }

    fn record(&self, endpoint: &str, status: StatusCode, started: Instant, extra: serde_json::Value) {
        let Some(log) = &self.log else { return };
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let line = json!({
            "ts": ts,
            "endpoint": endpoint,
            "status": status.as_u16(),
            "elapsed_ms": started.elapsed().as_secs_f64() * 1e3,
            "detail": extra,
        });
        let mut f = log.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(f, "{line}") {
            tracing::warn!("request log write failed: {e}");
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/embed", post(embed))
        .route("/verify", post(verify))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Serve until `shutdown` resolves, finishing in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NoFaceFound(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::InvalidImage(_) | Error::Codec(_) | Error::ShapeMismatch(_) | Error::ImageTooSmall { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match &state.models {
        Ok(m) => Json(json!({ "status": "ok", "godwgm_id": m.godwgm_id, "wvs_id": m.wvs_id })).into_response(),
        Err(e) => ApiError(StatusCode::SERVICE_UNAVAILABLE, e.clone()).into_response(),
    }
}

/// Accept either a multipart upload (first part with data) or a raw image body.
async fn read_image(req: Request) -> Result<RgbImage, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let bad = |m: String| ApiError(StatusCode::BAD_REQUEST, m);
    let bytes = if is_multipart {
        let mut mp = Multipart::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?;
        let mut found = None;
        while let Some(field) = mp.next_field().await.map_err(|e| bad(e.body_text()))? {
            let data = field.bytes().await.map_err(|e| bad(e.body_text()))?;
            if !data.is_empty() {
                found = Some(data);
                break;
            }
        }
        found.ok_or_else(|| bad("multipart body has no image part".into()))?
    } else {
        Bytes::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?
    };
    if bytes.is_empty() {
        return Err(bad("empty image".into()));
    }
    RgbImage::decode(&bytes).map_err(|e| bad(e.to_string()))
}

fn models(state: &AppState) -> Result<Arc<Models>, ApiError> {
    state
        .models
        .clone()
        .map_err(|e| ApiError(StatusCode::SERVICE_UNAVAILABLE, format!("checkpoints not loaded: {e}")))
}

async fn embed(State(state): State<Arc<AppState>>, req: Request) -> Response {
    let started = Instant::now();
    let result = async {
        let models = models(&state)?;
        let img = read_image(req).await?;
        let embedded = tokio::task::spawn_blocking(move || models.embed(&img, &StubExtractor))
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
        let png = embedded.mixed.encode_png()?;
        Ok::<_, ApiError>((png, embedded.record))
    }
    .await;
    match result {
        Ok((png, record)) => {
            state.record("/embed", StatusCode::OK, started, json!({ "mixed_hash": record.mixed_hash }));
            let mut resp = (StatusCode::OK, png).into_response();
            let h = resp.headers_mut();
            h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
            let sidecar = serde_json::to_string(&record).expect("record serialises");
            if let Ok(v) = HeaderValue::from_str(&sidecar) {
                h.insert("x-faceprotect-embed", v);
            }
            resp
        }
        Err(e) => {
            state.record("/embed", e.0, started, json!({ "error": e.1 }));
            e.into_response()
        }
    }
}

async fn verify(State(state): State<Arc<AppState>>, req: Request) -> Response {
    let started = Instant::now();
    let tau = state.tau;
    let result = async {
        let models = models(&state)?;
        let img = read_image(req).await?;
        let report = tokio::task::spawn_blocking(move || detect(&img, &models, &StubExtractor, tau))
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
        Ok::<_, ApiError>(report)
    }
    .await;
    match result {
        Ok(report) => {
            state.record(
                "/verify",
                StatusCode::OK,
                started,
                json!({ "label": report.verdict.label, "score": report.verdict.score }),
            );
            (StatusCode::OK, Json(report)).into_response()
        }
        Err(e) => {
            state.record("/verify", e.0, started, json!({ "error": e.1 }));
            e.into_response()
        }
    }
}
