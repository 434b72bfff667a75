//! Read-only HTTP view of a layers directory.
//!
//! Every response depends only on its URL, so clients and proxies may cache it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use layered_dr::compositor::{compose, preset_table, BlendParams};
use layered_dr::io::{png_color, png_gray, read_layers, LayerIndex, LayerStats};
use layered_dr::LayerSet;

const CACHE_CONTROL: &str = "public, max-age=3600";

struct Shared {
    dir: PathBuf,
    index: LayerIndex,
}

type AppState = Arc<Shared>;

/// Error response carrying a JSON `{"error": ...}` body.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<layered_dr::Error> for ApiError {
    fn from(e: layered_dr::Error) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

fn cached(content_type: &'static str, body: Vec<u8>) -> Response {
    (
        [(header::CONTENT_TYPE, content_type), (header::CACHE_CONTROL, CACHE_CONTROL)],
        body,
    )
        .into_response()
}

fn cached_json<T: Serialize>(value: &T) -> Response {
    ([(header::CACHE_CONTROL, CACHE_CONTROL)], Json(value)).into_response()
}

/// Router over the layers written by `synthesize` into `dir`.
pub fn app(dir: &Path) -> layered_dr::Result<Router> {
    let index = LayerIndex::load(dir)?;
    let state = Arc::new(Shared {
        dir: dir.to_path_buf(),
        index,
    });
    Ok(Router::new()
        .route("/api/frames", get(frames))
        .route("/api/frames/{i}/layer/{kind}", get(layer))
        .route("/api/frames/{i}/compose", get(composite))
        .route("/api/frames/{i}/metrics", get(metrics))
        .route("/api/presets", get(presets))
        .with_state(state))
}

async fn frames(State(s): State<AppState>) -> Response {
    let ids: Vec<usize> = s.index.frames.iter().map(|f| f.index).collect();
    cached_json(&ids)
}

async fn load_frame(s: AppState, i: usize) -> Result<LayerSet, ApiError> {
    if s.index.frame(i).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no frame {i}")));
    }
    tokio::task::spawn_blocking(move || {
        let frame = s.index.frame(i).expect("checked above");
        read_layers(&s.dir, &s.index, frame)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(ApiError::from)
}

async fn layer(State(s): State<AppState>, UrlPath((i, kind)): UrlPath<(usize, String)>) -> Result<Response, ApiError> {
    if !matches!(kind.as_str(), "fg" | "bg" | "mask" | "xray") {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("unknown layer {kind:?}; expected fg, bg, mask or xray"),
        ));
    }
    let layers = load_frame(s, i).await?;
    let png = match kind.as_str() {
        "fg" => png_color(&layers.fg_color),
        "bg" => png_color(&layers.bg_color),
        "mask" => png_gray(&layered_dr::io::mask_to_gray(&layers.mask)),
        _ => png_gray(&layers.xray),
    };
    Ok(cached("image/png", png))
}

#[derive(Debug, Deserialize)]
struct Weights {
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    delta: Option<f64>,
}

impl Weights {
    fn params(&self) -> Result<BlendParams, ApiError> {
        let get = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("missing query parameter {name}")))
        };
        let (a, b, g, d) = (
            get(self.alpha, "alpha")?,
            get(self.beta, "beta")?,
            get(self.gamma, "gamma")?,
            get(self.delta, "delta")?,
        );
        BlendParams::new(a, b, g, d).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
    }
}

async fn composite(
    State(s): State<AppState>,
    UrlPath(i): UrlPath<usize>,
    query: Result<Query<Weights>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(weights) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    let params = weights.params()?;
    let layers = load_frame(s, i).await?;
    let png = tokio::task::spawn_blocking(move || compose(&layers, &params).map(|img| png_color(&img)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(cached("image/png", png))
}

#[derive(Serialize)]
struct FrameMetrics {
    frame: usize,
    #[serde(flatten)]
    stats: LayerStats,
}

async fn metrics(State(s): State<AppState>, UrlPath(i): UrlPath<usize>) -> Result<Response, ApiError> {
    let frame = s
        .index
        .frame(i)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no frame {i}")))?;
    Ok(cached_json(&FrameMetrics {
        frame: i,
        stats: frame.stats,
    }))
}

#[derive(Serialize)]
struct PresetEntry {
    name: String,
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
}

async fn presets() -> Response {
    let table: Vec<PresetEntry> = preset_table()
        .into_iter()
        .map(|p| {
            let [alpha, beta, gamma, delta] = p.params.as_array();
            PresetEntry {
                name: p.name,
                alpha,
                beta,
                gamma,
                delta,
            }
        })
        .collect();
    cached_json(&table)
}
