//! HTTP/JSON service over one loaded planning scene.
//!
//! Endpoints:
//!
//! - `GET /api/health`: liveness and load state.
//! - `GET /api/scene`: grid metadata, skeleton points, airway and lesion meshes.
//! - `POST /api/heatmap`: `{error_deg, lesion_pose?, units?, exempt_factor?}`,
//!   recomputed or served from the single-entry cache.
//! - `GET /api/poe/{id}/cone?error_deg=`: cone and sample of one POE under the
//!   current pose and units.
//!
//! Every endpoint except health answers 503 until a session is installed.

pub mod surface;

use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use poeplan_core::feasibility::{
    compute_heatmap, AirwayIndex, FeasibilityEngine, HeatmapParams, HeatmapResult, HeatmapSample, Units,
};
use poeplan_core::scene::{lesion_metrics_with, transform_lesion_about, ConeSpec, LesionModel, LesionPose};
use poeplan_core::skeleton::{extract_centerline, SkeletonPointSet};
use poeplan_core::{Geometry, VoxelGrid};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use surface::{extract_surface, TriangleMesh};

/// Immutable anatomy plus the adjustable planning state.
pub struct SceneSession {
    airway: VoxelGrid,
    skeleton: SkeletonPointSet,
    lesion: LesionModel,
    index: AirwayIndex,
    scene_payload: Bytes,
    state: Mutex<PlanState>,
    /// Held while a heatmap is computed, so equal requests compute once.
    compute: tokio::sync::Mutex<Option<CachedHeatmap>>,
}

#[derive(Clone, Debug, PartialEq)]
struct PlanState {
    params: HeatmapParams,
    pose: LesionPose,
}

#[derive(Clone, Debug, PartialEq)]
struct CacheKey {
    error_bits: u64,
    exempt_bits: u64,
    units: Units,
    pose_bits: [u64; 7],
}

impl CacheKey {
    fn new(params: &HeatmapParams, pose: &LesionPose) -> Self {
        let p = [
            pose.axis.x,
            pose.axis.y,
            pose.axis.z,
            pose.angle_deg,
            pose.translation.x,
            pose.translation.y,
            pose.translation.z,
        ];
        CacheKey {
            error_bits: params.error_deg.to_bits(),
            exempt_bits: params.exempt_factor.to_bits(),
            units: params.units,
            pose_bits: p.map(f64::to_bits),
        }
    }
}

struct CachedHeatmap {
    key: CacheKey,
    result: Arc<HeatmapResult>,
    compute_ms: f64,
}

#[derive(Serialize)]
struct SkeletonEntry {
    id: usize,
    index: [usize; 3],
    world: [f64; 3],
    radius: f64,
}

#[derive(Debug)]
pub struct ServeError {
    status: StatusCode,
    message: String,
}

impl ServeError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ServeError {
            status,
            message: message.into(),
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl std::fmt::Display for ServeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.status, self.message)
    }
}

impl std::error::Error for ServeError {}

type ApiResult<T> = Result<T, ServeError>;

impl SceneSession {
    /// Thins the airway and prepares meshes and indexes. `params` is the
    /// initial planning state.
    pub fn new(airway: VoxelGrid, lesion: &VoxelGrid, params: HeatmapParams) -> poeplan_core::Result<Self> {
        params.validate()?;
        airway.geometry().ensure_same(lesion.geometry(), "airway vs lesion")?;
        let skeleton = extract_centerline(&airway)?;
        Self::with_skeleton(airway, skeleton, lesion, params)
    }

    pub fn with_skeleton(
        airway: VoxelGrid,
        skeleton: SkeletonPointSet,
        lesion: &VoxelGrid,
        params: HeatmapParams,
    ) -> poeplan_core::Result<Self> {
        params.validate()?;
        let lesion = lesion_metrics_with(lesion.clone(), Default::default())?;
        let index = AirwayIndex::new(&airway)?;
        let scene_payload = scene_payload(&airway, &skeleton, &lesion)?;
        Ok(SceneSession {
            airway,
            skeleton,
            lesion,
            index,
            scene_payload,
            state: Mutex::new(PlanState {
                params,
                pose: LesionPose::default(),
            }),
            compute: tokio::sync::Mutex::new(None),
        })
    }

    pub fn skeleton(&self) -> &SkeletonPointSet {
        &self.skeleton
    }

    pub fn geometry(&self) -> &Geometry {
        self.airway.geometry()
    }

    fn current(&self) -> PlanState {
        self.state.lock().expect("plan state lock").clone()
    }

    /// The lesion under `pose`; the identity pose uses the loaded mask as is.
    fn posed_lesion(&self, pose: &LesionPose) -> poeplan_core::Result<LesionModel> {
        if pose.is_identity() {
            return Ok(self.lesion.clone());
        }
        let moved = transform_lesion_about(&self.lesion, self.lesion.center, pose, self.airway.geometry())?;
        lesion_metrics_with(moved, self.lesion.center_mode)
    }

    /// Heatmap for `params` and `pose`, from cache when the key matches the
    /// last computation. Returns the result, its compute time and whether it
    /// was a cache hit.
    pub async fn heatmap(
        self: &Arc<Self>,
        params: HeatmapParams,
        pose: LesionPose,
    ) -> poeplan_core::Result<(Arc<HeatmapResult>, f64, bool)> {
        params.validate()?;
        let pose = pose.validated()?;
        let key = CacheKey::new(&params, &pose);
        let mut slot = self.compute.lock().await;
        *self.state.lock().expect("plan state lock") = PlanState {
            params,
            pose: pose.clone(),
        };
        if let Some(hit) = slot.as_ref().filter(|c| c.key == key) {
            return Ok((hit.result.clone(), hit.compute_ms, true));
        }
        let me = self.clone();
        let started = Instant::now();
        let result = tokio::task::spawn_blocking(move || {
            let lesion = me.posed_lesion(&pose)?;
            compute_heatmap(&me.skeleton, &lesion, &me.airway, &params)
        })
        .await
        .expect("heatmap task panicked")?;
        let compute_ms = started.elapsed().as_secs_f64() * 1e3;
        let result = Arc::new(result);
        *slot = Some(CachedHeatmap {
            key,
            result: result.clone(),
            compute_ms,
        });
        Ok((result, compute_ms, false))
    }

    /// Cone and sample of one POE under the current pose and units.
    pub fn cone(&self, poe_id: usize, error_deg: Option<f64>) -> ApiResult<(ConeSpec, HeatmapSample)> {
        let point = self
            .skeleton
            .points
            .get(poe_id)
            .ok_or_else(|| ServeError::new(StatusCode::NOT_FOUND, format!("unknown POE id {poe_id}")))?;
        let mut state = self.current();
        if let Some(e) = error_deg {
            state.params.error_deg = e;
        }
        state.params.validate().map_err(|e| ServeError::unprocessable(e.to_string()))?;
        let lesion = self
            .posed_lesion(&state.pose)
            .map_err(|e| ServeError::unprocessable(e.to_string()))?;
        let engine = FeasibilityEngine::new(&self.index, &lesion, state.params)
            .map_err(|e| ServeError::unprocessable(e.to_string()))?;
        let cone = engine.cone(point).map_err(|e| ServeError::unprocessable(e.to_string()))?;
        let sample = engine.sample(point).map_err(|e| ServeError::unprocessable(e.to_string()))?;
        Ok((cone, sample))
    }
}

fn scene_payload(
    airway: &VoxelGrid,
    skeleton: &SkeletonPointSet,
    lesion: &LesionModel,
) -> poeplan_core::Result<Bytes> {
    let points: Vec<SkeletonEntry> = skeleton
        .points
        .iter()
        .map(|p| SkeletonEntry {
            id: p.id,
            index: p.index,
            world: p.world,
            radius: p.local_radius,
        })
        .collect();
    let body = json!({
        "grid": airway.geometry(),
        "skeleton": points,
        "branch_points": skeleton.branch_points(),
        "airway_mesh": extract_surface(airway),
        "lesion_mesh": extract_surface(lesion.mask()),
        "lesion": {
            "center": lesion.center,
            "bbox_min": lesion.bbox_min,
            "bbox_max": lesion.bbox_max,
            "center_mode": lesion.center_mode,
            "voxels": lesion.voxel_count(),
        },
    });
    Ok(Bytes::from(serde_json::to_vec(&body)?))
}

/// Shared handle; empty until the scene finishes loading.
#[derive(Clone, Default)]
pub struct AppState {
    session: Arc<OnceLock<Arc<SceneSession>>>,
}

impl AppState {
    pub fn loading() -> Self {
        Self::default()
    }

    pub fn ready(session: SceneSession) -> Self {
        let state = Self::default();
        state.install(session);
        state
    }

    /// Installs the session; later calls are ignored.
    pub fn install(&self, session: SceneSession) {
        let _ = self.session.set(Arc::new(session));
    }

    fn session(&self) -> ApiResult<Arc<SceneSession>> {
        self.session
            .get()
            .cloned()
            .ok_or_else(|| ServeError::new(StatusCode::SERVICE_UNAVAILABLE, "scene is still loading"))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/scene", get(scene))
        .route("/api/heatmap", post(heatmap))
        .route("/api/poe/{id}/cone", get(cone))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "loaded": state.session.get().is_some() }))
}

async fn scene(State(state): State<AppState>) -> ApiResult<Response> {
    let session = state.session()?;
    Ok(([(header::CONTENT_TYPE, "application/json")], session.scene_payload.clone()).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeatmapRequest {
    error_deg: f64,
    #[serde(default)]
    lesion_pose: Option<LesionPose>,
    #[serde(default)]
    units: Option<Units>,
    #[serde(default)]
    exempt_factor: Option<f64>,
}

#[derive(Serialize)]
struct HeatmapResponse<'a> {
    error_deg: f64,
    units: Units,
    exempt_factor: f64,
    lesion_pose: &'a LesionPose,
    cache_hit: bool,
    compute_ms: f64,
    poe_count: usize,
    valid_count: usize,
    fingerprint: &'a poeplan_core::feasibility::SceneFingerprint,
    samples: &'a [HeatmapSample],
}

async fn heatmap(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let session = state.session()?;
    let req: HeatmapRequest =
        serde_json::from_slice(&body).map_err(|e| ServeError::unprocessable(format!("malformed body: {e}")))?;
    let current = session.current();
    let params = HeatmapParams {
        error_deg: req.error_deg,
        units: req.units.unwrap_or(current.params.units),
        exempt_factor: req.exempt_factor.unwrap_or(current.params.exempt_factor),
    };
    params.validate().map_err(|e| ServeError::unprocessable(e.to_string()))?;
    let pose = req
        .lesion_pose
        .unwrap_or_default()
        .validated()
        .map_err(|e| ServeError::unprocessable(e.to_string()))?;
    let (result, compute_ms, cache_hit) = session
        .heatmap(params, pose.clone())
        .await
        .map_err(|e| ServeError::unprocessable(e.to_string()))?;
    let payload = HeatmapResponse {
        error_deg: params.error_deg,
        units: params.units,
        exempt_factor: params.exempt_factor,
        lesion_pose: &pose,
        cache_hit,
        compute_ms,
        poe_count: result.samples.len(),
        valid_count: result.valid_count(),
        fingerprint: &result.fingerprint,
        samples: &result.samples,
    };
    Ok(Json(payload).into_response())
}

async fn cone(
    State(state): State<AppState>,
    Path(id): Path<String>,
    RawQuery(query): RawQuery,
) -> ApiResult<Json<serde_json::Value>> {
    let session = state.session()?;
    let id: usize = id
        .parse()
        .map_err(|_| ServeError::new(StatusCode::NOT_FOUND, format!("unknown POE id {id}")))?;
    let mut error_deg = None;
    for pair in query.as_deref().unwrap_or("").split('&').filter(|s| !s.is_empty()) {
        match pair.split_once('=') {
            Some(("error_deg", v)) => {
                let v: f64 = v
                    .parse()
                    .map_err(|_| ServeError::unprocessable(format!("error_deg `{v}` is not a number")))?;
                error_deg = Some(v);
            }
            _ => return Err(ServeError::unprocessable(format!("unexpected query parameter `{pair}`"))),
        }
    }
    let (cone, sample) = session.cone(id, error_deg)?;
    Ok(Json(json!({
        "poe_id": id,
        "cone": cone,
        "sample": sample,
    })))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
