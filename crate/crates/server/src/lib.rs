//! WebSocket session service and annotation REST API.
//!
//! `GET /ws?poi=<id>&user=<id>` opens an interactive session. REST routes:
//! `GET /pois`, `GET /pois/{id}`, `GET|POST /annotations`,
//! `GET|PATCH|DELETE /annotations/{id}`. Annotation routes take `?poi=` and
//! default to the first POI loaded.

pub mod client;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use lastmeter_core::annotations::{Anchor, AnnotationError, AnnotationStore, Category, Filter};
use lastmeter_core::navgrid::{NavGrid, DEFAULT_CLEARANCE_M, DEFAULT_RESOLUTION_M};
use lastmeter_core::orchestrator::{Action, Ports, World};
use lastmeter_core::session::{standalone_error, ErrorKind, LiveSession, ServerBody};
use lastmeter_core::{EngineEvent, Point2, Pose, SceneGraph, UserPrefs};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;

/// Session clock start used by the golden transcripts.
pub const GOLDEN_EPOCH: f64 = 1_800_000_000.0;

pub struct Poi {
    pub scene: Arc<SceneGraph>,
    pub grid: Arc<NavGrid>,
    pub store: Arc<RwLock<AnnotationStore>>,
    /// Annotation mutations are written back here when set.
    pub annotations_path: Option<PathBuf>,
}

impl Poi {
    pub fn new(scene: SceneGraph, annotations_jsonl: &str) -> Result<Poi, String> {
        let grid = NavGrid::build(&scene, DEFAULT_RESOLUTION_M, DEFAULT_CLEARANCE_M).map_err(|e| e.to_string())?;
        let scene = Arc::new(scene);
        let store = AnnotationStore::load_jsonl(annotations_jsonl, scene.clone()).map_err(|e| e.to_string())?;
        Ok(Poi {
            scene,
            grid: Arc::new(grid),
            store: Arc::new(RwLock::new(store)),
            annotations_path: None,
        })
    }

    fn persist(&self) {
        let Some(path) = &self.annotations_path else { return };
        let text = self.store.read().expect("store lock").to_jsonl();
        if let Err(e) = std::fs::write(path, text) {
            log::error!("writing {}: {e}", path.display());
        }
    }
}

pub struct AppState {
    pub pois: BTreeMap<String, Poi>,
    pub ports: Ports,
    /// Fixed session clock start; wall time when unset.
    pub epoch: Option<f64>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(pois: Vec<Poi>, ports: Ports, epoch: Option<f64>) -> AppState {
        AppState {
            pois: pois.into_iter().map(|p| (p.scene.poi_id.clone(), p)).collect(),
            ports,
            epoch,
            next_session: AtomicU64::new(1),
        }
    }

    fn now(&self) -> f64 {
        self.epoch.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0)
        })
    }

    fn poi(&self, id: Option<&str>) -> Result<&Poi, ApiError> {
        match id {
            Some(id) => self.pois.get(id).ok_or_else(|| ApiError::not_found(format!("unknown poi '{id}'"))),
            None => self.pois.values().next().ok_or_else(|| ApiError::not_found("no POI loaded")),
        }
    }

    fn world(&self, poi: &Poi) -> World {
        World {
            scene: poi.scene.clone(),
            grid: poi.grid.clone(),
            store: poi.store.clone(),
            ports: self.ports.clone(),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/pois", get(list_pois))
        .route("/pois/{id}", get(get_poi))
        .route("/annotations", get(list_annotations).post(create_annotation))
        .route(
            "/annotations/{id}",
            get(get_annotation).patch(patch_annotation).delete(delete_annotation),
        )
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

// ---------------------------------------------------------------- errors

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(m: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: m.into(),
        }
    }

    fn bad_request(m: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: m.into(),
        }
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match e {
            AnnotationError::NotFound(_) => StatusCode::NOT_FOUND,
            AnnotationError::NotAuthor(_) => StatusCode::FORBIDDEN,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

// ------------------------------------------------------------------ pois

async fn list_pois(State(st): State<Arc<AppState>>) -> Json<Value> {
    let items: Vec<Value> = st
        .pois
        .values()
        .map(|p| {
            json!({
                "id": p.scene.poi_id,
                "object_count": p.scene.objects.len(),
                "annotation_count": p.store.read().expect("store lock").len(),
            })
        })
        .collect();
    Json(Value::Array(items))
}

async fn get_poi(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let poi = st.poi(Some(&id))?;
    let v: Value = serde_json::from_str(&poi.scene.to_json()).expect("scene serializes");
    Ok(Json(v))
}

// ----------------------------------------------------------- annotations

#[derive(Debug, Deserialize)]
struct ListParams {
    poi: Option<String>,
    category: Option<String>,
    author: Option<String>,
    text: Option<String>,
    radius: Option<f64>,
    x: Option<f64>,
    y: Option<f64>,
}

async fn list_annotations(State(st): State<Arc<AppState>>, Query(q): Query<ListParams>) -> Result<Json<Value>, ApiError> {
    let poi = st.poi(q.poi.as_deref())?;
    let category = q
        .category
        .as_deref()
        .map(|c| c.parse::<Category>().map_err(ApiError::bad_request))
        .transpose()?;
    let pose = match (q.x, q.y) {
        (Some(x), Some(y)) => Some(Pose::new(Point2::new(x, y), 0.0)),
        (None, None) => None,
        _ => return Err(ApiError::bad_request("x and y must be given together")),
    };
    if q.radius.is_some() && pose.is_none() {
        return Err(ApiError::bad_request("radius needs x and y"));
    }
    let filter = Filter {
        category,
        author: q.author,
        radius_m: q.radius,
        text: q.text,
    };
    let store = poi.store.read().expect("store lock");
    let hits = store.query(&filter, pose.as_ref());
    Ok(Json(serde_json::to_value(hits).expect("annotations serialize")))
}

#[derive(Debug, Deserialize)]
struct PoiParam {
    poi: Option<String>,
}

#[derive(Debug, Deserialize)]
struct AuthorParam {
    poi: Option<String>,
    author: Option<String>,
}

async fn get_annotation(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PoiParam>,
) -> Result<Json<Value>, ApiError> {
    let poi = st.poi(q.poi.as_deref())?;
    let store = poi.store.read().expect("store lock");
    let a = store.get(&id).ok_or(AnnotationError::NotFound(id))?;
    Ok(Json(serde_json::to_value(a).expect("annotation serializes")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    author: String,
    text: String,
    anchor: Anchor,
    #[serde(default)]
    category: Option<Category>,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_str(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| ApiError::bad_request(format!("{}: {}", e.path(), e.inner())))
}

async fn create_annotation(
    State(st): State<Arc<AppState>>,
    Query(q): Query<PoiParam>,
    body: String,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let poi = st.poi(q.poi.as_deref())?;
    let b: CreateBody = parse_body(&body)?;
    if b.author.trim().is_empty() {
        return Err(ApiError::bad_request("author: must not be empty"));
    }
    let a = poi
        .store
        .write()
        .expect("store lock")
        .create(&b.author, &b.text, b.anchor, b.category, st.now())?;
    poi.persist();
    Ok((StatusCode::CREATED, Json(serde_json::to_value(a).expect("annotation serializes"))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchBody {
    author: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    category: Option<Category>,
}

async fn patch_annotation(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PoiParam>,
    body: String,
) -> Result<Json<Value>, ApiError> {
    let poi = st.poi(q.poi.as_deref())?;
    let b: PatchBody = parse_body(&body)?;
    if b.text.is_none() && b.category.is_none() {
        return Err(ApiError::bad_request("nothing to change"));
    }
    let now = st.now();
    let a = {
        let mut store = poi.store.write().expect("store lock");
        // validate both changes before applying either
        let mut scratch = store.clone();
        let mut out = None;
        if let Some(t) = &b.text {
            out = Some(scratch.edit(&id, &b.author, t, now)?);
        }
        if let Some(c) = b.category {
            out = Some(scratch.set_category(&id, &b.author, c, now)?);
        }
        *store = scratch;
        out.expect("at least one change")
    };
    poi.persist();
    Ok(Json(serde_json::to_value(a).expect("annotation serializes")))
}

async fn delete_annotation(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<AuthorParam>,
) -> Result<Json<Value>, ApiError> {
    let poi = st.poi(q.poi.as_deref())?;
    let author = q.author.ok_or_else(|| ApiError::bad_request("author query parameter is required"))?;
    let a = poi.store.write().expect("store lock").delete(&id, &author)?;
    poi.persist();
    Ok(Json(serde_json::to_value(a).expect("annotation serializes")))
}

// -------------------------------------------------------------- websocket

#[derive(Debug, Deserialize)]
struct WsParams {
    poi: Option<String>,
    user: Option<String>,
}

async fn ws_handler(ws: WebSocketUpgrade, State(st): State<Arc<AppState>>, Query(q): Query<WsParams>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, st, q))
}

fn mutated(frames: &[lastmeter_core::ServerMessage]) -> bool {
    frames.iter().any(|m| {
        matches!(&m.body, ServerBody::Engine(EngineEvent::Reply { actions, .. })
            if actions.iter().any(|a| matches!(a, Action::AnnotationMutation { .. })))
    })
}

async fn send_all(socket: &mut WebSocket, frames: &[lastmeter_core::ServerMessage]) -> bool {
    for f in frames {
        if socket.send(Message::Text(f.to_json().into())).await.is_err() {
            return false;
        }
    }
    true
}

async fn run_session(mut socket: WebSocket, st: Arc<AppState>, q: WsParams) {
    let n = st.next_session.fetch_add(1, Ordering::Relaxed);
    let session_id = format!("s{n}");
    let poi_id = q.poi.clone().or_else(|| st.pois.keys().next().cloned()).unwrap_or_default();
    let Some(poi) = st.pois.get(&poi_id) else {
        let e = standalone_error(ErrorKind::UnknownPoi, &format!("unknown poi '{poi_id}'"), &session_id);
        let _ = socket.send(Message::Text(e.to_json().into())).await;
        let _ = socket.send(Message::Close(None)).await;
        return;
    };
    let user = q.user.unwrap_or_else(|| format!("guest_{n}"));
    let (mut session, first) = LiveSession::open(&session_id, st.world(poi), &user, UserPrefs::default(), st.now());
    log::info!("session {session_id} opened for {user} at {poi_id}");
    if !send_all(&mut socket, &first).await {
        return;
    }
    while let Some(msg) = socket.recv().await {
        let text = match msg {
            Ok(Message::Text(t)) => t.to_string(),
            Ok(Message::Binary(_)) => "binary frame".to_string(),
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        // queries may reach a blocking external port
        let joined = tokio::task::spawn_blocking(move || {
            let frames = session.handle_text(&text);
            (session, frames)
        })
        .await;
        let frames = match joined {
            Ok((s, frames)) => {
                session = s;
                frames
            }
            Err(e) => {
                log::error!("session {session_id}: {e}");
                let err = standalone_error(ErrorKind::Internal, "session task failed", &session_id);
                let _ = socket.send(Message::Text(err.to_json().into())).await;
                break;
            }
        };
        if mutated(&frames) {
            poi.persist();
        }
        if !send_all(&mut socket, &frames).await {
            break;
        }
    }
    log::info!("session {session_id} closed");
}
