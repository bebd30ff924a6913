//! HTTP facade over the measurement pipeline for an interactive console.
//!
//! Routes:
//!
//! * `POST /sessions` (multipart: `manifest`, optional `paired_manifest`,
//!   and one file part per frame, matched by file name)
//! * `GET /sessions/{id}`
//! * `GET /sessions/{id}/frames/{w}` (PNG)
//! * `POST /sessions/{id}/amm` (`{"scanline": ..., "v_count": ...}`)
//! * `POST /sessions/{id}/measure` (`{"scanline": ..., "detector_id": ...}`)
//!
//! Sessions live in memory and expire after an idle TTL.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use lvamm::amm::{synthesize_amm, EchoClip, Scanline};
use lvamm::detector::{DetectorError, DetectorRegistry};
use lvamm::formats::{
    amm_png, assemble_clip, coordinate_convention, decode_png, frame_png, ClipManifest, Phase,
};
use lvamm::pipeline::{measure_clip, pair_reports, ClipInfo, MeasurementReport, PipelineConfig};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub pipeline: PipelineConfig,
    /// Idle time after which a session is dropped.
    pub session_ttl: Duration,
    pub max_upload_bytes: usize,
    /// Origin allowed by CORS; `"*"` allows any. `None` disables CORS headers.
    pub allow_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            session_ttl: Duration::from_secs(30 * 60),
            max_upload_bytes: 256 * 1024 * 1024,
            allow_origin: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            error,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<lvamm::Error> for ApiError {
    fn from(e: lvamm::Error) -> Self {
        use lvamm::amm::AmmError as A;
        let message = e.to_string();
        let (status, kind) = match e.root() {
            lvamm::Error::Amm(A::DegenerateScanline { .. } | A::OutOfFrame { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_scanline")
            }
            lvamm::Error::Detector(DetectorError::UnknownDetector(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "unknown_detector")
            }
            lvamm::Error::Detector(DetectorError::NoEdgesFound { .. }) => {
                (StatusCode::CONFLICT, "no_edges_found")
            }
            r if r.is_input_error() => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
            _ => (StatusCode::CONFLICT, "measurement_failed"),
        };
        Self::new(status, kind, message)
    }
}

fn json_rejection(r: JsonRejection) -> ApiError {
    let status = match r.status() {
        StatusCode::UNPROCESSABLE_ENTITY => StatusCode::UNPROCESSABLE_ENTITY,
        s if s == StatusCode::PAYLOAD_TOO_LARGE => s,
        _ => StatusCode::BAD_REQUEST,
    };
    ApiError::new(status, "bad_request", r.body_text())
}

struct LoadedClip {
    manifest: ClipManifest,
    clip: EchoClip,
}

#[derive(Default)]
struct SessionState {
    last_scanline: Option<Scanline>,
    last_report: Option<MeasurementReport>,
}

struct Session {
    id: String,
    created_at_unix_s: u64,
    primary: LoadedClip,
    paired: Option<LoadedClip>,
    // Serializes work within a session; clip data above is read freely.
    state: tokio::sync::Mutex<SessionState>,
    last_access: Mutex<Instant>,
}

impl Session {
    fn touch(&self) {
        *self.last_access.lock().expect("access clock") = Instant::now();
    }
}

pub struct AppState {
    cfg: ServiceConfig,
    registry: DetectorRegistry,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Result<Self, lvamm::Error> {
        Ok(Self {
            registry: cfg.pipeline.registry()?,
            cfg,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    /// Drop sessions idle for longer than the TTL; returns how many went.
    pub fn purge_expired(&self) -> usize {
        let ttl = self.cfg.session_ttl;
        let mut map = self.sessions.write().expect("session map");
        let before = map.len();
        map.retain(|_, s| s.last_access.lock().expect("access clock").elapsed() <= ttl);
        before - map.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map").len()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.purge_expired();
        let s = self
            .sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session '{id}'")))?;
        s.touch();
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: String,
    pub phase: Phase,
    /// Frames in the clip window.
    pub w_count: usize,
    pub width: usize,
    pub height: usize,
    /// Anchor position within the clip window (`w_count / 2`).
    pub anchor_index: usize,
    /// Anchor position within the uploaded frame list.
    pub source_anchor_index: usize,
    pub source_frame_count: usize,
    pub spacing_cm_per_px: f64,
    pub frame_interval_s: f64,
}

impl ClipMeta {
    fn of(c: &LoadedClip) -> Self {
        let size = c.clip.size();
        Self {
            id: c.manifest.id.clone(),
            phase: c.manifest.phase,
            w_count: c.clip.w_count(),
            width: size.width,
            height: size.height,
            anchor_index: c.clip.anchor_index,
            source_anchor_index: c.manifest.anchor_index,
            source_frame_count: c.manifest.frame_files.len(),
            spacing_cm_per_px: c.clip.spacing_cm_per_px,
            frame_interval_s: c.clip.frame_interval_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub created_at_unix_s: u64,
    pub coordinate_convention: String,
    pub clip: ClipMeta,
    pub paired: Option<ClipMeta>,
    pub detectors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub info: SessionInfo,
    pub last_scanline: Option<Scanline>,
    pub last_report: Option<MeasurementReport>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmmRequest {
    pub scanline: Scanline,
    pub v_count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathMeta {
    pub p_start: lvamm::Point,
    pub p_end: lvamm::Point,
    /// Distance between consecutive samples.
    pub spacing_px: f64,
    pub spacing_cm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmmResponse {
    pub coordinate_convention: String,
    pub v_count: usize,
    pub w_count: usize,
    pub anchor_column: usize,
    pub path: PathMeta,
    pub png_base64: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureRequest {
    pub scanline: Scanline,
    pub detector_id: Option<String>,
}

fn info_of(state: &AppState, s: &Session) -> SessionInfo {
    SessionInfo {
        session_id: s.id.clone(),
        created_at_unix_s: s.created_at_unix_s,
        coordinate_convention: coordinate_convention(),
        clip: ClipMeta::of(&s.primary),
        paired: s.paired.as_ref().map(ClipMeta::of),
        detectors: state.registry.ids().map(String::from).collect(),
    }
}

fn file_key(name: &str) -> &str {
    name.rsplit(['/', '\\']).next().unwrap_or(name)
}

fn build_clip(
    manifest_json: &[u8],
    files: &HashMap<String, Vec<u8>>,
    w_count: usize,
) -> Result<LoadedClip, ApiError> {
    let manifest: ClipManifest = serde_json::from_slice(manifest_json)
        .map_err(|e| ApiError::bad_request(format!("malformed manifest: {e}")))?;
    manifest
        .check()
        .map_err(|e| ApiError::bad_request(format!("malformed manifest: {e}")))?;
    let frames = manifest
        .frame_files
        .iter()
        .map(|name| {
            let bytes = files
                .get(name.as_str())
                .or_else(|| files.get(file_key(name)))
                .ok_or_else(|| ApiError::bad_request(format!("missing frame file {name}")))?;
            decode_png(bytes, name).map_err(|e| ApiError::bad_request(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let clip = assemble_clip(&manifest, frames, w_count)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(LoadedClip { manifest, clip })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    mut form: Multipart,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    state.purge_expired();
    let upload_err = |e: axum::extract::multipart::MultipartError| {
        let status = e.status();
        let kind = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "payload_too_large"
        } else {
            "bad_request"
        };
        ApiError::new(status, kind, e.body_text())
    };
    let mut manifest = None;
    let mut paired = None;
    let mut files = HashMap::new();
    while let Some(field) = form.next_field().await.map_err(upload_err)? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(upload_err)?.to_vec();
        match (name.as_str(), file_name) {
            ("manifest", _) => manifest = Some(bytes),
            ("paired_manifest", _) => paired = Some(bytes),
            (_, Some(f)) => {
                files.insert(f, bytes);
            }
            (other, None) => {
                return Err(ApiError::bad_request(format!(
                    "unexpected form field '{other}' without a file name"
                )))
            }
        }
    }
    let manifest = manifest.ok_or_else(|| ApiError::bad_request("missing 'manifest' part"))?;
    let w_count = state.cfg.pipeline.w_count;
    let primary = build_clip(&manifest, &files, w_count)?;
    let paired = paired
        .map(|m| build_clip(&m, &files, w_count))
        .transpose()?;
    if let Some(p) = &paired {
        if p.manifest.phase == primary.manifest.phase {
            return Err(ApiError::bad_request(
                "paired manifest must have the opposite phase (one ED, one ES)",
            ));
        }
    }
    let session = Arc::new(Session {
        id: uuid::Uuid::new_v4().simple().to_string(),
        created_at_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        primary,
        paired,
        state: tokio::sync::Mutex::new(SessionState::default()),
        last_access: Mutex::new(Instant::now()),
    });
    let info = info_of(&state, &session);
    state
        .sessions
        .write()
        .expect("session map")
        .insert(session.id.clone(), session);
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let s = state.session(&id)?;
    let st = s.state.lock().await;
    Ok(Json(SessionView {
        info: info_of(&state, &s),
        last_scanline: st.last_scanline,
        last_report: st.last_report.clone(),
    }))
}

async fn get_frame(
    State(state): State<Arc<AppState>>,
    Path((id, w)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let s = state.session(&id)?;
    let frames = &s.primary.clip.frames;
    let frame = w
        .parse::<usize>()
        .ok()
        .and_then(|w| frames.get(w))
        .ok_or_else(|| {
            ApiError::not_found(format!("frame {w} outside clip of {} frames", frames.len()))
        })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], frame_png(frame)).into_response())
}

async fn post_amm(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<AmmRequest>, JsonRejection>,
) -> Result<Json<AmmResponse>, ApiError> {
    let Json(req) = body.map_err(json_rejection)?;
    let s = state.session(&id)?;
    let mut st = s.state.lock().await;
    let v_count = req.v_count.unwrap_or(state.cfg.pipeline.v_count);
    let clip = &s.primary.clip;
    let amm = synthesize_amm(clip, &req.scanline, v_count)
        .map_err(|e| ApiError::from(lvamm::Error::from(e)))?;
    st.last_scanline = Some(req.scanline);
    Ok(Json(AmmResponse {
        coordinate_convention: coordinate_convention(),
        v_count: amm.v_count(),
        w_count: amm.w_count(),
        anchor_column: amm.anchor_column,
        path: PathMeta {
            p_start: amm.path.start(),
            p_end: amm.path.end(),
            spacing_px: amm.path.spacing,
            spacing_cm: amm.path.spacing * clip.spacing_cm_per_px,
        },
        png_base64: base64::engine::general_purpose::STANDARD.encode(amm_png(&amm)),
    }))
}

fn run_measure(
    state: &AppState,
    s: &Session,
    sl: &Scanline,
    detector_id: &str,
) -> Result<MeasurementReport, lvamm::Error> {
    let det = state.registry.resolve(detector_id)?;
    let cfg = &state.cfg.pipeline;
    let one = |c: &LoadedClip| {
        let info = ClipInfo {
            id: c.manifest.id.clone(),
            phase: c.manifest.phase,
        };
        measure_clip(&c.clip, &info, sl, det, cfg).map(|m| m.report)
    };
    let primary = one(&s.primary)?;
    match &s.paired {
        Some(p) => pair_reports(primary, one(p)?),
        None => Ok(primary),
    }
}

async fn post_measure(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<MeasureRequest>, JsonRejection>,
) -> Result<Json<MeasurementReport>, ApiError> {
    let Json(req) = body.map_err(json_rejection)?;
    let s = state.session(&id)?;
    let mut st = s.state.lock().await;
    let detector_id = req
        .detector_id
        .unwrap_or_else(|| lvamm::detector::BASELINE_ID.to_string());
    let (state2, s2, sl) = (state.clone(), s.clone(), req.scanline);
    let report = tokio::task::spawn_blocking(move || run_measure(&state2, &s2, &sl, &detector_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    st.last_scanline = Some(req.scanline);
    st.last_report = Some(report.clone());
    Ok(Json(report))
}

fn cors_layer(origin: &str) -> Result<CorsLayer, String> {
    let allow = if origin == "*" {
        AllowOrigin::any()
    } else {
        AllowOrigin::exact(
            HeaderValue::from_str(origin).map_err(|e| format!("bad origin '{origin}': {e}"))?,
        )
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]))
}

pub fn router(state: Arc<AppState>) -> Result<Router, String> {
    let limit = state.cfg.max_upload_bytes;
    let cors = state.cfg.allow_origin.as_deref().map(cors_layer).transpose()?;
    let mut app = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/frames/{w}", get(get_frame))
        .route("/sessions/{id}/amm", post(post_amm))
        .route("/sessions/{id}/measure", post(post_measure))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    if let Some(c) = cors {
        app = app.layer(c);
    }
    Ok(app)
}

/// Bind and serve until Ctrl-C, evicting idle sessions once a minute.
pub async fn serve(addr: SocketAddr, cfg: ServiceConfig) -> std::io::Result<()> {
    let invalid = |e: String| std::io::Error::new(std::io::ErrorKind::InvalidInput, e);
    let state = Arc::new(AppState::new(cfg).map_err(|e| invalid(e.to_string()))?);
    let app = router(state.clone()).map_err(invalid)?;
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.purge_expired();
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_key_strips_directories() {
        assert_eq!(file_key("frames/frame_0001.png"), "frame_0001.png");
        assert_eq!(file_key("a\\b.png"), "b.png");
        assert_eq!(file_key("c.png"), "c.png");
    }

    #[test]
    fn error_statuses() {
        let e: ApiError = lvamm::Error::from(lvamm::amm::AmmError::DegenerateScanline {
            x: 1.0,
            y: 1.0,
        })
        .with_clip("c")
        .into();
        assert_eq!(e.status, StatusCode::UNPROCESSABLE_ENTITY);
        let e: ApiError = lvamm::Error::from(DetectorError::NoEdgesFound { found: 0 }).into();
        assert_eq!((e.status, e.error), (StatusCode::CONFLICT, "no_edges_found"));
        let e: ApiError = lvamm::Error::from(DetectorError::UnknownDetector("x".into())).into();
        assert_eq!(e.status, StatusCode::UNPROCESSABLE_ENTITY);
    }

    #[test]
    fn cors_origin_parsing() {
        assert!(cors_layer("*").is_ok());
        assert!(cors_layer("http://localhost:5173").is_ok());
        assert!(cors_layer("bad\norigin").is_err());
    }
}
