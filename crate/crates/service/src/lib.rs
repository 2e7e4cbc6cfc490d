//! HTTP/JSON API over a directory of scenes, with live recalibration.
//!
//! Each scene is loaded once and never mutated. The per-scene session —
//! calibration, vanishing point and the output derived from them — is
//! replaced as a whole behind an `Arc`, so readers always see one complete
//! parameter set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::CorsLayer;

use topview_core::bev::{export_geojson, export_tokens, token_json, CalibrationParams, GeoJsonMode};
use topview_core::geometry::PerspectiveGrid;
use topview_core::ingest::{Detection, ObjectClass};
use topview_core::pipeline::{load_scene_dir, run_pipeline, PipelineConfig, SceneMeta, SceneOutput, CALIBRATION_FILE};
use topview_core::vp::VanishingPoint;
use topview_core::{PipelineError, SceneLoadError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("scene directory {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scene `{id}`: {source}")]
    Load {
        id: String,
        #[source]
        source: SceneLoadError,
    },
    #[error("scene `{id}`: {source}")]
    Pipeline {
        id: String,
        #[source]
        source: PipelineError,
    },
}

/// Immutable inputs of one scene.
#[derive(Debug)]
pub struct Scene {
    pub id: String,
    pub dir: PathBuf,
    pub detections: Vec<Detection>,
    pub meta: SceneMeta,
    pub file_vp: VanishingPoint,
    pub frames: Option<(u64, u64)>,
    pub frame_count: usize,
    pub classes: Vec<ObjectClass>,
}

/// Current parameters of a scene and everything derived from them.
#[derive(Debug)]
pub struct Session {
    pub calibration: CalibrationParams,
    pub vp: VanishingPoint,
    pub output: SceneOutput,
}

pub struct SceneSlot {
    pub scene: Arc<Scene>,
    session: RwLock<Arc<Session>>,
}

impl SceneSlot {
    pub fn session(&self) -> Arc<Session> {
        self.session.read().expect("session lock poisoned").clone()
    }

    fn swap(&self, next: Session) {
        *self.session.write().expect("session lock poisoned") = Arc::new(next);
    }
}

pub struct AppState {
    pub config: PipelineConfig,
    pub scenes: BTreeMap<String, SceneSlot>,
}

fn compute(scene: &Scene, cal: CalibrationParams, vp: VanishingPoint, cfg: &PipelineConfig) -> Result<Session, PipelineError> {
    let output = run_pipeline(&scene.detections, &vp, scene.meta.image_size(), &cal, Some(scene.meta.fps), cfg)?;
    Ok(Session {
        calibration: cal,
        vp,
        output,
    })
}

impl AppState {
    /// Loads every subdirectory of `root` that contains a scene.
    pub fn load(root: &Path, config: PipelineConfig) -> Result<Self, ServiceError> {
        let io = |source| ServiceError::Io {
            path: root.to_path_buf(),
            source,
        };
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.join(topview_core::pipeline::DETECTIONS_FILE).exists())
            .collect();
        dirs.sort();
        let mut scenes = BTreeMap::new();
        for dir in dirs {
            let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let inputs = load_scene_dir(&dir).map_err(|source| ServiceError::Load { id: id.clone(), source })?;
            let frame_set: BTreeSet<u64> = inputs.detections.iter().map(|d| d.frame).collect();
            let classes: BTreeSet<ObjectClass> = inputs.detections.iter().map(|d| d.class).collect();
            let scene = Scene {
                id: id.clone(),
                dir: dir.clone(),
                frames: frame_set.first().zip(frame_set.last()).map(|(a, b)| (*a, *b)),
                frame_count: frame_set.len(),
                classes: classes.into_iter().collect(),
                meta: inputs.meta,
                file_vp: inputs.vp,
                detections: inputs.detections,
            };
            let session = compute(&scene, inputs.calibration.unwrap_or_default(), inputs.vp, &config)
                .map_err(|source| ServiceError::Pipeline { id: id.clone(), source })?;
            log::info!("loaded scene {id}: {} detections", scene.detections.len());
            scenes.insert(
                id,
                SceneSlot {
                    scene: Arc::new(scene),
                    session: RwLock::new(Arc::new(session)),
                },
            );
        }
        Ok(Self { config, scenes })
    }
}

pub type SharedState = Arc<AppState>;

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ApiError { error: message.into() })).into_response()
}

fn slot<'a>(state: &'a AppState, id: &str) -> Result<&'a SceneSlot, Response> {
    state
        .scenes
        .get(id)
        .ok_or_else(|| error(StatusCode::NOT_FOUND, format!("unknown scene `{id}`")))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSummary {
    pub id: String,
    pub frame_count: usize,
    pub first_frame: Option<u64>,
    pub last_frame: Option<u64>,
    pub classes: Vec<ObjectClass>,
    pub vp: VanishingPoint,
    pub image_width: u32,
    pub image_height: u32,
    pub fps: f64,
}

async fn list_scenes(State(state): State<SharedState>) -> Json<Vec<SceneSummary>> {
    Json(
        state
            .scenes
            .values()
            .map(|s| {
                let sc = &s.scene;
                SceneSummary {
                    id: sc.id.clone(),
                    frame_count: sc.frame_count,
                    first_frame: sc.frames.map(|f| f.0),
                    last_frame: sc.frames.map(|f| f.1),
                    classes: sc.classes.clone(),
                    vp: s.session().vp,
                    image_width: sc.meta.image_width,
                    image_height: sc.meta.image_height,
                    fps: sc.meta.fps,
                }
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct FrameQuery {
    frame: u64,
}

async fn bev_frame(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FrameQuery>,
) -> Response {
    let slot = match slot(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    match slot.scene.frames {
        Some((a, b)) if (a..=b).contains(&q.frame) => {}
        _ => return error(StatusCode::RANGE_NOT_SATISFIABLE, format!("frame {} outside the scene", q.frame)),
    }
    let session = slot.session();
    let objects: Vec<Value> = session
        .output
        .streams
        .iter()
        .flat_map(|s| s.states.iter().filter(|o| o.frame == q.frame))
        .map(token_json)
        .collect();
    Json(json!({
        "frame": q.frame,
        "calibration": session.calibration,
        "objects": objects,
    }))
    .into_response()
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
}

async fn put_calibration(State(state): State<SharedState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let slot = match slot(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let cal: CalibrationParams = match parse_body(&body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    if let Err(e) = cal.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
    }
    let vp = slot.session().vp;
    match compute(&slot.scene, cal, vp, &state.config) {
        Ok(next) => {
            slot.swap(next);
            Json(cal).into_response()
        }
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn save_calibration(State(state): State<SharedState>, UrlPath(id): UrlPath<String>) -> Response {
    let slot = match slot(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let cal = slot.session().calibration;
    let path = slot.scene.dir.join(CALIBRATION_FILE);
    let tmp = path.with_extension("json.tmp");
    let written = fs::write(&tmp, cal.to_json() + "\n").and_then(|_| fs::rename(&tmp, &path));
    match written {
        Ok(()) => Json(json!({ "path": path.display().to_string(), "calibration": cal })).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GridSummary {
    pub vp: VanishingPoint,
    pub horizon_y: f64,
    pub upper_y: f64,
    /// Source quadrangle: top-left, top-right, bottom-right, bottom-left.
    pub src: [[f64; 2]; 4],
    pub bev_width: f64,
    pub bev_depth: f64,
    pub homography: [[f64; 3]; 3],
    pub radials: Vec<[[f64; 2]; 2]>,
}

fn grid_summary(vp: VanishingPoint, g: &PerspectiveGrid) -> GridSummary {
    GridSummary {
        vp,
        horizon_y: g.horizon().y,
        upper_y: g.upper_y(),
        src: g.src.corners().map(|p| [p.x, p.y]),
        bev_width: g.bev_width,
        bev_depth: g.bev_depth,
        homography: g.homography.rows(),
        radials: g
            .radial_segments()
            .into_iter()
            .map(|(a, b)| [[a.x, a.y], [b.x, b.y]])
            .collect(),
    }
}

async fn get_grid(State(state): State<SharedState>, UrlPath(id): UrlPath<String>) -> Response {
    match slot(&state, &id) {
        Ok(slot) => {
            let s = slot.session();
            Json(grid_summary(s.vp, &s.output.grid)).into_response()
        }
        Err(r) => r,
    }
}

#[derive(Debug, Deserialize)]
struct VpBody {
    x: f64,
    y: f64,
}

async fn put_vp(State(state): State<SharedState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let slot = match slot(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let b: VpBody = match parse_body(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let vp = VanishingPoint::new(b.x, b.y);
    let cal = slot.session().calibration;
    match compute(&slot.scene, cal, vp, &state.config) {
        Ok(next) => {
            let summary = grid_summary(vp, &next.output.grid);
            slot.swap(next);
            Json(summary).into_response()
        }
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn get_tokens(State(state): State<SharedState>, UrlPath(id): UrlPath<String>) -> Response {
    match slot(&state, &id) {
        Ok(slot) => (
            [(header::CONTENT_TYPE, "application/x-ndjson")],
            export_tokens(&slot.session().output.streams),
        )
            .into_response(),
        Err(r) => r,
    }
}

#[derive(Debug, Deserialize)]
struct GeoQuery {
    #[serde(default)]
    mode: Option<String>,
}

async fn get_geojson(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<GeoQuery>,
) -> Response {
    let slot = match slot(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let mode = match q.mode.as_deref() {
        None | Some("points") => GeoJsonMode::Points,
        Some("lines") => GeoJsonMode::LineStrings,
        Some(other) => return error(StatusCode::BAD_REQUEST, format!("unknown mode `{other}`")),
    };
    match export_geojson(&slot.session().output.streams, mode) {
        Ok(doc) => (
            [(header::CONTENT_TYPE, "application/geo+json")],
            serde_json::to_string(&doc).expect("geojson serializes"),
        )
            .into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/:id/bev", get(bev_frame))
        .route("/scenes/:id/grid", get(get_grid))
        .route("/scenes/:id/calibration", put(put_calibration))
        .route("/scenes/:id/calibration/save", post(save_calibration))
        .route("/scenes/:id/vp", put(put_vp))
        .route("/scenes/:id/tokens", get(get_tokens))
        .route("/scenes/:id/geojson", get(get_geojson))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, state: SharedState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
