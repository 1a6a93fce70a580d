//! HTTP routes. Every handler reads the shared immutable store; decoding
//! allocates its own buffers, so requests never share mutable state.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use dci_core::pgm;
use dci_latent::vade::{decode_checked, linspace};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use crate::store::{ArtifactStore, ModelEntry};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Params = Query<HashMap<String, String>>;

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str) -> ApiResult<Option<T>> {
    match q.get(name) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("query parameter `{name}` is malformed: {raw:?}"))),
    }
}

fn required<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str) -> ApiResult<T> {
    param(q, name)?.ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{name}`")))
}

fn model(store: &ArtifactStore, k: usize) -> ApiResult<&ModelEntry> {
    store
        .model(k)
        .ok_or_else(|| ApiError::not_found(format!("no model for k={k}; available {:?}", store.meta.k_values)))
}

/// An 80x80 field as a PGM file and as little-endian `f32` values, both base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub width: usize,
    pub height: usize,
    pub pgm: String,
    pub grid: String,
}

impl ImagePayload {
    pub fn new(width: usize, height: usize, values: &[f64]) -> Self {
        Self {
            width,
            height,
            pgm: B64.encode(pgm::encode_pgm(width, height, values)),
            grid: B64.encode(pgm::encode_f32(values)),
        }
    }
}

async fn dataset(State(store): State<Arc<ArtifactStore>>) -> Json<serde_json::Value> {
    Json(json!({
        "grid": store.meta.grid,
        "count": store.dataset.len(),
        "entries": store.dataset,
    }))
}

async fn alternative(State(store): State<Arc<ArtifactStore>>, Path(name): Path<String>, Query(q): Params) -> ApiResult<Response> {
    let (id, ext) = match name.rsplit_once('.') {
        Some((id, ext @ ("pgm" | "json"))) => (id, ext),
        _ => (name.as_str(), "json"),
    };
    let entry = store
        .alternative(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown alternative `{id}`")))?;
    let variant = q.get("field").map(String::as_str).unwrap_or("binary");
    if !matches!(variant, "binary" | "raw") {
        return Err(ApiError::bad_request(format!("field must be `binary` or `raw`, got {variant:?}")));
    }
    if ext == "pgm" {
        let rel = if variant == "raw" { &entry.raw_pgm } else { &entry.binary_pgm };
        let bytes = store.read(rel).map_err(|e| ApiError::internal(e.to_string()))?;
        return Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response());
    }
    let (w, h) = (store.meta.grid.width, store.meta.grid.height);
    let raw = store.read_field(&entry.raw_f32).map_err(|e| ApiError::internal(e.to_string()))?;
    let binary = store.read_field(&entry.binary_f32).map_err(|e| ApiError::internal(e.to_string()))?;
    let criteria = store.criteria.rows.iter().find(|r| r.id == entry.id);
    let clusters: HashMap<String, usize> = store
        .models
        .values()
        .filter_map(|m| {
            m.embeddings
                .iter()
                .find(|e| e.alternative_id == entry.id)
                .map(|e| (m.k.to_string(), e.hard_label))
        })
        .collect();
    Ok(Json(json!({
        "entry": entry,
        "criteria": criteria,
        "clusters": clusters,
        "raw": ImagePayload::new(w, h, &raw),
        "binary": ImagePayload::new(w, h, &binary),
    }))
    .into_response())
}

async fn criteria(State(store): State<Arc<ArtifactStore>>) -> Json<serde_json::Value> {
    Json(serde_json::to_value(&store.criteria).unwrap_or_default())
}

async fn clusters(State(store): State<Arc<ArtifactStore>>, Query(q): Params) -> ApiResult<Json<serde_json::Value>> {
    let k: usize = required(&q, "k")?;
    let m = model(&store, k)?;
    let groups: Vec<serde_json::Value> = (1..=k)
        .map(|label| {
            let members: Vec<&str> = m
                .embeddings
                .iter()
                .filter(|e| e.hard_label == label)
                .map(|e| e.alternative_id.as_str())
                .collect();
            json!({ "label": label, "weight": m.prior.weights[label - 1], "members": members })
        })
        .collect();
    Ok(Json(json!({ "k": k, "clusters": groups, "embeddings": m.embeddings })))
}

async fn representatives(State(store): State<Arc<ArtifactStore>>, Query(q): Params) -> ApiResult<Json<serde_json::Value>> {
    let k: usize = required(&q, "k")?;
    let m = model(&store, k)?;
    let mut reps = Vec::with_capacity(k);
    for c in 1..=k {
        let bytes = store
            .read(&crate::bundle::representative_path(k, c))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        reps.push(json!({
            "cluster": c,
            "z": m.prior.means[c - 1],
            "pgm": B64.encode(bytes),
        }));
    }
    Ok(Json(json!({ "k": k, "representatives": reps })))
}

async fn traversal(State(store): State<Arc<ArtifactStore>>, Query(q): Params) -> ApiResult<Json<serde_json::Value>> {
    let k: usize = required(&q, "k")?;
    let cluster: usize = required(&q, "cluster")?;
    let dim: usize = required(&q, "dim")?;
    let steps: usize = param(&q, "steps")?.unwrap_or(store.meta.traversal_steps);
    let m = model(&store, k)?;
    if cluster == 0 || cluster > k {
        return Err(ApiError::not_found(format!("cluster {cluster} outside 1..={k}")));
    }
    let d = m.network.latent_dim;
    if dim == 0 || dim > d {
        return Err(ApiError::bad_request(format!("dim {dim} outside 1..={d}")));
    }
    if !(2..=101).contains(&steps) {
        return Err(ApiError::bad_request("steps must lie in 2..=101"));
    }
    let [lo, hi] = store.meta.traversal_range;
    let store2 = store.clone();
    let frames = tokio::task::spawn_blocking(move || {
        let m = store2.model(k).expect("checked above");
        let (w, h) = (store2.meta.grid.width, store2.meta.grid.height);
        let base = &m.prior.means[cluster - 1];
        linspace((lo, hi), steps)
            .into_iter()
            .map(|v| {
                let mut z = base.clone();
                z[dim - 1] = v;
                let field = m.network.decode_one(&z);
                json!({ "value": v, "image": ImagePayload::new(w, h, &field) })
            })
            .collect::<Vec<_>>()
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(json!({ "k": k, "cluster": cluster, "dim": dim, "frames": frames })))
}

async fn tree(State(store): State<Arc<ArtifactStore>>, Query(q): Params) -> ApiResult<Json<serde_json::Value>> {
    let k: usize = required(&q, "k")?;
    let m = model(&store, k)?;
    Ok(Json(json!({ "k": k, "tree": m.tree, "text": m.tree_text })))
}

#[derive(Debug, Deserialize)]
pub struct DecodeRequest {
    pub k: usize,
    pub z: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
struct DecodeResponse {
    k: usize,
    z: Vec<f64>,
    image: ImagePayload,
}

async fn decode(State(store): State<Arc<ArtifactStore>>, body: Result<Json<DecodeRequest>, axum::extract::rejection::JsonRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let m = model(&store, req.k)?;
    // JSON has no NaN/Infinity literals; `null` is how a non-finite entry arrives
    let z: Vec<f64> = req
        .z
        .iter()
        .map(|v| v.filter(|x| x.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| ApiError::bad_request("z has a non-finite entry"))?;
    if z.len() != m.network.latent_dim {
        return Err(ApiError::bad_request(format!(
            "z has length {}, model dimension is {}",
            z.len(),
            m.network.latent_dim
        )));
    }
    let k = req.k;
    let store2 = store.clone();
    let resp = tokio::task::spawn_blocking(move || -> ApiResult<DecodeResponse> {
        let m = store2.model(k).expect("checked above");
        let field = decode_checked(&m.network, &z).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let (w, h) = (store2.meta.grid.width, store2.meta.grid.height);
        Ok(DecodeResponse {
            k,
            image: ImagePayload::new(w, h, &field),
            z,
        })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(serde_json::to_value(resp).unwrap_or_default()))
}

async fn meta(State(store): State<Arc<ArtifactStore>>) -> Json<serde_json::Value> {
    let m = &store.meta;
    Json(json!({
        "format_version": m.format_version,
        "tool_version": m.tool_version,
        "server_version": env!("CARGO_PKG_VERSION"),
        "grid": m.grid,
        "n_alternatives": m.n_alternatives,
        "latent_dim": m.latent_dim,
        "k_values": m.k_values,
        "seed": m.seed,
        "traversal_range": m.traversal_range,
        "traversal_steps": m.traversal_steps,
        "config": m.config,
        "seeds": store.models.values().map(|e| (e.k.to_string(), e.companion.seed)).collect::<HashMap<_, _>>(),
    }))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(store: Arc<ArtifactStore>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Router::new()
        .route("/api/dataset", get(dataset))
        .route("/api/alternatives/{name}", get(alternative))
        .route("/api/criteria", get(criteria))
        .route("/api/clusters", get(clusters))
        .route("/api/representatives", get(representatives))
        .route("/api/traversal", get(traversal))
        .route("/api/tree", get(tree))
        .route("/api/decode", post(decode))
        .route("/api/meta", get(meta))
        .fallback(fallback)
        .layer(cors)
        .with_state(store)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(store: ArtifactStore, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} on http://{}", store.root.display(), listener.local_addr()?);
    axum::serve(listener, router(Arc::new(store))).await
}
