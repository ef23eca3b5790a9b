//! Read-only HTTP facade over a calibration pack.
//!
//! `GET /pack` returns the pack file byte for byte, `POST /calibrate` converts
//! a MaxN count to an abundance estimate and `POST /predict-ratio` evaluates a
//! paired-mode ratio regression. Responses depend only on the pack and the
//! request.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::header::{CONTENT_TYPE, ETAG, IF_NONE_MATCH};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gearcalib::calibration::{apply_calibration, sha256_hex, ErrorRow};
use gearcalib::ratio::predict_pooled_ratio;
use gearcalib::{Camera, CalibrationPack};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot read pack {path}: {source}")]
    ReadPack { path: PathBuf, source: std::io::Error },
    #[error("invalid pack: {0}")]
    InvalidPack(#[from] gearcalib::Error),
    #[error("invalid CORS origin `{0}`")]
    Origin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub pack_path: PathBuf,
    pub bind: String,
    pub port: u16,
    pub cors_allowlist: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { pack_path: PathBuf::from("pack.json"), bind: "127.0.0.1".into(), port: 8080, cors_allowlist: Vec::new() }
    }
}

/// Loaded pack plus the exact bytes it was parsed from.
#[derive(Debug)]
pub struct PackState {
    pub pack: CalibrationPack,
    pub bytes: Bytes,
    pub etag: String,
}

impl PackState {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, ServiceError> {
        let text = String::from_utf8(bytes).map_err(|e| gearcalib::Error::Schema(e.to_string()))?;
        let pack = CalibrationPack::from_json(&text)?;
        let etag = format!("\"{}\"", sha256_hex(text.as_bytes()));
        Ok(PackState { pack, bytes: Bytes::from(text), etag })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ServiceError> {
        let bytes = std::fs::read(path).map_err(|source| ServiceError::ReadPack { path: path.to_path_buf(), source })?;
        Self::from_bytes(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateRequest {
    pub camera: String,
    pub maxn: i64,
    /// Restricts the error context to one reef type.
    #[serde(default)]
    pub reef_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateResponse {
    pub camera: Camera,
    pub maxn: i64,
    pub estimate: f64,
    pub approx_se: f64,
    pub calibration_error_context: Vec<ErrorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRatioRequest {
    pub camera: String,
    pub maxn: i64,
    pub camratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioFlags {
    pub out_of_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRatioResponse {
    pub camera: Camera,
    pub r_hat: f64,
    pub pred_se: f64,
    pub flags: RatioFlags,
    pub caveat: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

fn bad_request(msg: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: msg.into() })).into_response()
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed request: {e}")))
}

fn parse_camera(code: &str) -> Result<Camera, Response> {
    code.parse::<Camera>().map_err(|e| bad_request(e.to_string()))
}

async fn get_pack(State(state): State<Arc<PackState>>, headers: HeaderMap) -> Response {
    let etag = HeaderValue::from_str(&state.etag).expect("hex etag");
    if headers.get(IF_NONE_MATCH).is_some_and(|v| v == etag) {
        return (StatusCode::NOT_MODIFIED, [(ETAG, etag)]).into_response();
    }
    (StatusCode::OK, [(CONTENT_TYPE, HeaderValue::from_static("application/json")), (ETAG, etag)], state.bytes.clone())
        .into_response()
}

/// Pure request handler behind `POST /calibrate`.
pub fn calibrate(pack: &CalibrationPack, req: &CalibrateRequest) -> Result<CalibrateResponse, String> {
    let camera: Camera = req.camera.parse().map_err(|e: gearcalib::Error| e.to_string())?;
    let est = apply_calibration(pack, camera, req.maxn).map_err(|e| e.to_string())?;
    let entry = pack.camera(camera).map_err(|e| e.to_string())?;
    let calibration_error_context = entry
        .error_table
        .iter()
        .filter(|r| req.reef_type.as_ref().is_none_or(|t| &r.reef_type == t))
        .cloned()
        .collect();
    Ok(CalibrateResponse { camera, maxn: req.maxn, estimate: est.estimate, approx_se: est.approx_se, calibration_error_context })
}

/// Pure request handler behind `POST /predict-ratio`.
pub fn predict_ratio(pack: &CalibrationPack, req: &PredictRatioRequest) -> Result<PredictRatioResponse, String> {
    let camera: Camera = req.camera.parse().map_err(|e: gearcalib::Error| e.to_string())?;
    if req.maxn < 0 {
        return Err(format!("maxn must be non-negative, got {}", req.maxn));
    }
    let model = pack.paired_model(camera).map_err(|e| e.to_string())?;
    let p = predict_pooled_ratio(model, req.maxn as u64, req.camratio).map_err(|e| e.to_string())?;
    Ok(PredictRatioResponse {
        camera,
        r_hat: p.r_hat,
        pred_se: p.pred_se,
        flags: RatioFlags { out_of_range: p.out_of_range },
        caveat: p.caveat,
    })
}

async fn post_calibrate(State(state): State<Arc<PackState>>, body: Bytes) -> Response {
    let req: CalibrateRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    if let Err(resp) = parse_camera(&req.camera) {
        return resp;
    }
    match calibrate(&state.pack, &req) {
        Ok(out) => Json(out).into_response(),
        Err(msg) => bad_request(msg),
    }
}

async fn post_predict_ratio(State(state): State<Arc<PackState>>, body: Bytes) -> Response {
    let req: PredictRatioRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match predict_ratio(&state.pack, &req) {
        Ok(out) => Json(out).into_response(),
        Err(msg) => bad_request(msg),
    }
}

async fn health() -> &'static str {
    "ok"
}

/// Router over a loaded pack. Origins in `cors_allowlist` may call the
/// service from a browser; with an empty list no CORS headers are sent.
pub fn router(state: Arc<PackState>, cors_allowlist: &[String]) -> Result<Router, ServiceError> {
    let app = Router::new()
        .route("/pack", get(get_pack))
        .route("/calibrate", post(post_calibrate))
        .route("/predict-ratio", post(post_predict_ratio))
        .route("/health", get(health))
        .with_state(state);
    if cors_allowlist.is_empty() {
        return Ok(app);
    }
    let origins = cors_allowlist
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::Origin(o.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([CONTENT_TYPE])
        .expose_headers([ETAG]);
    Ok(app.layer(cors))
}

/// Loads and validates the pack, then serves until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(PackState::load(&config.pack_path)?);
    let app = router(state, &config.cors_allowlist)?;
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving {} on http://{}", config.pack_path.display(), listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
