//! HTTP and WebSocket front end for interactive rendering.
//!
//! * `GET /healthz` answers `ok`.
//! * `GET /info` returns scene metadata and server limits as JSON, or a
//!   `no_scene` error when nothing is loaded.
//! * `/stream` upgrades to a WebSocket. Clients send JSON [`ViewRequest`]s;
//!   every rendered frame is answered by a JSON [`FrameMeta`] text message
//!   followed by a binary message: a 16-byte [`FrameHeader`] and raw 8-bit
//!   RGB pixels, row-major, top row first.
//!
//! Each session keeps its own projection cache, so requests that differ
//! only in time reuse the camera stage. A newer request that arrives
//! before rendering of an older one has started replaces it.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Semaphore};

use d4gs::camera::CameraModel;
use d4gs::image_io::encode_rgb8;
use d4gs::render::{render_cached, RenderOptions};
use d4gs::synthetic::{CAMERA_RADIUS, FOV_Y_DEG};
use d4gs::{ProjectionCache, ProjectionMode, Scene4D};

pub const MAGIC: [u8; 4] = *b"D4GS";
pub const HEADER_LEN: usize = 16;
/// 8-bit RGB pixels.
pub const FORMAT_RGB8: u16 = 1;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub max_width: u32,
    pub max_height: u32,
    /// Frames rendered at the same time across all sessions.
    pub workers: usize,
    /// Served at `/` when set.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_width: 1024,
            max_height: 1024,
            workers: 1,
            static_dir: None,
        }
    }
}

/// Client message on `/stream`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRequest {
    /// Echoed back in the frame metadata.
    #[serde(default)]
    pub request_id: Option<u64>,
    /// Camera-to-world rotation `(w, x, y, z)`.
    pub rotation: [f64; 4],
    /// Camera center in world coordinates.
    pub position: [f64; 3],
    pub fov_y_deg: f64,
    pub t0: f64,
    #[serde(default)]
    pub mode: Mode,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Exact,
    Fast,
}

impl From<Mode> for ProjectionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => ProjectionMode::Exact,
            Mode::Fast => ProjectionMode::Fast,
        }
    }
}

impl ViewRequest {
    pub fn camera(&self) -> d4gs::Result<CameraModel> {
        CameraModel::from_pose(self.rotation, self.position, self.fov_y_deg, self.width, self.height)
    }
}

/// Metadata sent as a text message right before each binary frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    #[serde(rename = "type")]
    pub kind: String,
    pub frame_id: u32,
    pub request_id: Option<u64>,
    pub width: u32,
    pub height: u32,
    pub t0: f64,
    pub t0_clamped: bool,
    pub mode: Mode,
    pub render_ms: f64,
    pub n_visible: usize,
    pub cache_hit: bool,
}

/// Structured error, sent as a text message or an HTTP body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub code: String,
    pub message: String,
}

impl ErrorMessage {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            kind: "error".into(),
            code: code.into(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub frame_id: u32,
    pub width: u16,
    pub height: u16,
    pub format: u16,
}

impl FrameHeader {
    /// `"D4GS"`, then little-endian u32 id, u16 width, u16 height, u16
    /// format and two zero bytes.
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.frame_id.to_le_bytes());
        out[8..10].copy_from_slice(&self.width.to_le_bytes());
        out[10..12].copy_from_slice(&self.height.to_le_bytes());
        out[12..14].copy_from_slice(&self.format.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < HEADER_LEN || bytes[0..4] != MAGIC {
            return None;
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        Some(Self {
            frame_id: u32::from_le_bytes(bytes[4..8].try_into().ok()?),
            width: u16_at(8),
            height: u16_at(10),
            format: u16_at(12),
        })
    }
}

/// Scene metadata returned by `/info`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Info {
    pub n_gaussians: usize,
    pub sh_degree: u8,
    pub duration_seconds: f64,
    pub background: [f64; 3],
    pub initial_pose: InitialPose,
    pub limits: Limits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialPose {
    pub rotation: [f64; 4],
    pub position: [f64; 3],
    pub fov_y_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub max_width: u32,
    pub max_height: u32,
    pub workers: usize,
    /// Working memory of one in-flight frame at the maximum size, estimated
    /// from buffer and per-primitive state sizes.
    pub bytes_per_concurrent_frame: usize,
}

struct AppState {
    scene: Option<Arc<Scene4D>>,
    config: ServerConfig,
    workers: Arc<Semaphore>,
}

/// Camera on the synthetic camera ring facing the origin.
pub fn initial_camera(width: u32, height: u32) -> CameraModel {
    CameraModel::look_at(
        nalgebra::Vector3::new(0.0, -0.3 * CAMERA_RADIUS, -CAMERA_RADIUS),
        nalgebra::Vector3::zeros(),
        nalgebra::Vector3::new(0.0, -1.0, 0.0),
        FOV_Y_DEG,
        width,
        height,
    )
}

fn info(state: &AppState) -> Option<Info> {
    let scene = state.scene.as_ref()?;
    let cam = initial_camera(state.config.max_width, state.config.max_height);
    let (rotation, position) = cam.pose();
    let pixels = state.config.max_width as usize * state.config.max_height as usize;
    // color, flow, depth, alpha planes in f64 plus 8-bit output
    let buffers = pixels * (3 + 2 + 1 + 1) * 8 + pixels * 3;
    let per_primitive = std::mem::size_of::<d4gs::ScreenGaussian>() + 2 * std::mem::size_of::<u32>();
    Some(Info {
        n_gaussians: scene.len(),
        sh_degree: scene.sh_degree,
        duration_seconds: scene.duration_seconds,
        background: scene.background.into(),
        initial_pose: InitialPose {
            rotation,
            position,
            fov_y_deg: FOV_Y_DEG,
        },
        limits: Limits {
            max_width: state.config.max_width,
            max_height: state.config.max_height,
            workers: state.config.workers,
            bytes_per_concurrent_frame: buffers + per_primitive * scene.len(),
        },
    })
}

async fn get_info(State(state): State<Arc<AppState>>) -> Response {
    match info(&state) {
        Some(i) => Json(i).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(ErrorMessage::new("no_scene", "no scene loaded")),
        )
            .into_response(),
    }
}

async fn healthz() -> &'static str {
    "ok"
}

async fn stream(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, state))
}

/// Outcome of validating one request.
enum Prepared {
    Frame {
        req: ViewRequest,
        cam: CameraModel,
        t0: f64,
        clamped: bool,
    },
    Error(ErrorMessage),
}

fn prepare(text: &str, config: &ServerConfig) -> Prepared {
    let req: ViewRequest = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => return Prepared::Error(ErrorMessage::new("protocol", format!("malformed request: {e}"))),
    };
    if req.width == 0 || req.height == 0 || req.width > config.max_width || req.height > config.max_height {
        return Prepared::Error(ErrorMessage::new(
            "too_large",
            format!(
                "requested {}x{}, limit is {}x{}",
                req.width, req.height, config.max_width, config.max_height
            ),
        ));
    }
    if !req.t0.is_finite() {
        return Prepared::Error(ErrorMessage::new("protocol", "t0 must be finite"));
    }
    let t0 = req.t0.clamp(0.0, 1.0);
    let clamped = t0 != req.t0;
    match req.camera() {
        Ok(cam) => Prepared::Frame { req, cam, t0, clamped },
        Err(e) => Prepared::Error(ErrorMessage::new("bad_camera", e.to_string())),
    }
}

fn text(value: &impl Serialize) -> Message {
    Message::Text(serde_json::to_string(value).expect("serializable").into())
}

async fn session(socket: WebSocket, state: Arc<AppState>) {
    use futures::{SinkExt, StreamExt};
    let (mut sink, mut incoming) = socket.split();
    // latest-wins slot between the reader and the render loop
    let (tx, mut rx) = watch::channel::<Option<String>>(None);
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = incoming.next().await {
            match msg {
                Message::Text(t) => {
                    if tx.send(Some(t.to_string())).is_err() {
                        break;
                    }
                }
                Message::Binary(_) => {
                    let _ = tx.send(Some(String::new()));
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    });

    let mut cache = ProjectionCache::new();
    let mut frame_id: u32 = 0;
    while rx.changed().await.is_ok() {
        let Some(raw) = rx.borrow_and_update().clone() else { continue };
        let scene = match &state.scene {
            Some(s) => s.clone(),
            None => {
                if sink.send(text(&ErrorMessage::new("no_scene", "no scene loaded"))).await.is_err() {
                    break;
                }
                continue;
            }
        };
        let (req, cam, t0, clamped) = match prepare(&raw, &state.config) {
            Prepared::Frame { req, cam, t0, clamped } => (req, cam, t0, clamped),
            Prepared::Error(e) => {
                if sink.send(text(&e)).await.is_err() {
                    break;
                }
                continue;
            }
        };
        let permit = state.workers.clone().acquire_owned().await.expect("semaphore open");
        let opts = RenderOptions::with_mode(req.mode.into());
        let moved_cache = std::mem::take(&mut cache);
        let job = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            let mut cache = moved_cache;
            let start = Instant::now();
            let pass = render_cached(&scene, &cam, t0, &mut cache, &opts);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            (cache, pass.map(|p| (encode_rgb8(&p.buffers.color), p.num_visible(), p.cache_hit)), ms)
        });
        let (returned, result, render_ms) = match job.await {
            Ok(r) => r,
            Err(_) => break,
        };
        cache = returned;
        let (pixels, n_visible, cache_hit) = match result {
            Ok(r) => r,
            Err(e) => {
                if sink.send(text(&ErrorMessage::new("render_failed", e.to_string()))).await.is_err() {
                    break;
                }
                continue;
            }
        };
        frame_id = frame_id.wrapping_add(1);
        let meta = FrameMeta {
            kind: "frame".into(),
            frame_id,
            request_id: req.request_id,
            width: req.width,
            height: req.height,
            t0,
            t0_clamped: clamped,
            mode: req.mode,
            render_ms,
            n_visible,
            cache_hit,
        };
        let header = FrameHeader {
            frame_id,
            width: req.width as u16,
            height: req.height as u16,
            format: FORMAT_RGB8,
        };
        let mut payload = Vec::with_capacity(HEADER_LEN + pixels.len());
        payload.extend_from_slice(&header.encode());
        payload.extend_from_slice(&pixels);
        if sink.send(text(&meta)).await.is_err() || sink.send(Message::Binary(payload.into())).await.is_err() {
            break;
        }
    }
    reader.abort();
}

pub fn router(scene: Option<Scene4D>, config: ServerConfig) -> Router {
    let config = ServerConfig {
        max_width: config.max_width.min(u16::MAX as u32),
        max_height: config.max_height.min(u16::MAX as u32),
        workers: config.workers.max(1),
        ..config
    };
    let static_dir = config.static_dir.clone();
    let state = Arc::new(AppState {
        scene: scene.map(Arc::new),
        workers: Arc::new(Semaphore::new(config.workers)),
        config,
    });
    let app = Router::new()
        .route("/healthz", get(healthz))
        .route("/info", get(get_info))
        .route("/stream", get(stream))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, scene: Option<Scene4D>, config: ServerConfig) -> std::io::Result<()> {
    axum::serve(listener, router(scene, config).into_make_service_with_connect_info::<SocketAddr>()).await
}
