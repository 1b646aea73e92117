//! Local HTTP service for the interactive flow: upload, tune the mask ratio
//! against live previews, approve, edit, reintegrate.
//!
//! The original image stays in process memory. The only image bytes that
//! reach the edit backend are the approved masked composite.

use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{edit, EditRequest};
use crate::imaging::{decode_image, encode_image, Encoding, Image, SoftMask};
use crate::landmarks::{detect_landmarks, LandmarkError, LandmarkSet};
use crate::masking::{mask_image, MaskConfig};
use crate::pipeline::{
    reintegrate_edited, request_id, score, PipelineContext, PipelineResult, ProbeRecord, ProbeStatus, ResultPaths,
    RESULT_SCHEMA,
};

pub const MASKED_PIXELS_HEADER: &str = "x-masked-pixels";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("refusing to bind non-loopback address {0}; set service.allow_non_loopback to permit it")]
    NonLoopback(IpAddr),
    #[error("invalid bind address `{0}`")]
    BadAddress(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Uploaded,
    Masked,
    Edited,
    Reintegrated,
}

struct Session {
    original: Image,
    landmarks: Option<LandmarkSet>,
    state: SessionState,
    mask: Option<MaskConfig>,
    masked: Option<(Image, SoftMask)>,
    prompt: Option<String>,
    edited: Option<Image>,
    result: Option<PipelineResult>,
}

type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

struct AppState {
    ctx: Arc<PipelineContext>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
}

/// JSON error with a status code.
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn conflict(state: SessionState, action: &str, need: &str) -> ApiError {
    ApiError(
        StatusCode::CONFLICT,
        format!("cannot {action} while the session is {}; {need} first", state_name(state)),
    )
}

fn state_name(s: SessionState) -> &'static str {
    match s {
        SessionState::Uploaded => "uploaded",
        SessionState::Masked => "masked",
        SessionState::Edited => "edited",
        SessionState::Reintegrated => "reintegrated",
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(internal)
}

fn validated_ratio(base: &MaskConfig, ratio: f64) -> ApiResult<MaskConfig> {
    let cfg = base.clone().with_ratio(ratio);
    cfg.validate()
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    Ok(cfg)
}

fn png(img: &Image) -> ApiResult<Vec<u8>> {
    encode_image(img, Encoding::Png).map_err(internal)
}

/// The service router over a shared pipeline context.
pub fn router(ctx: Arc<PipelineContext>) -> Router {
    let state = Arc::new(AppState {
        ctx,
        sessions: Mutex::new(HashMap::new()),
    });
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", get(session_status).delete(delete_session))
        .route("/session/{id}/preview", get(preview))
        .route("/session/{id}/approve", post(approve))
        .route("/session/{id}/edit", post(edit_session))
        .route("/session/{id}/reintegrate", post(reintegrate))
        .route("/session/{id}/report", get(report))
        .layer(axum::extract::DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(state)
}

/// Binds and serves until the process ends. Non-loopback addresses need
/// `allow_non_loopback`.
pub async fn serve(ctx: Arc<PipelineContext>) -> Result<(), ServiceError> {
    let svc = ctx.cfg.service.clone();
    let ip: IpAddr = svc.bind.parse().map_err(|_| ServiceError::BadAddress(svc.bind.clone()))?;
    if !ip.is_loopback() && !svc.allow_non_loopback {
        return Err(ServiceError::NonLoopback(ip));
    }
    let listener = tokio::net::TcpListener::bind(SocketAddr::new(ip, svc.port)).await?;
    eprintln!("privedit service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(ctx)).await?;
    Ok(())
}

fn lookup(app: &AppState, id: &str) -> ApiResult<SessionHandle> {
    app.sessions
        .lock()
        .expect("session map lock")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
}

#[derive(Serialize)]
struct LandmarkStatus {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

async fn create_session(State(app): State<Arc<AppState>>, req: Request) -> ApiResult<Response> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let mut image_bytes = None;
    let mut landmarks_json = None;
    if is_multipart {
        let mut mp = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
        while let Some(field) = mp
            .next_field()
            .await
            .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?
        {
            let name = field.name().unwrap_or_default().to_string();
            let data = field
                .bytes()
                .await
                .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
            match name.as_str() {
                "image" => image_bytes = Some(data),
                "landmarks" => landmarks_json = Some(String::from_utf8_lossy(&data).into_owned()),
                _ => {}
            }
        }
    } else {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
        image_bytes = Some(body);
    }
    let bytes = image_bytes
        .filter(|b| !b.is_empty())
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "missing image".into()))?;
    let original = decode_image(&bytes).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("undecodable image: {e}")))?;

    let ctx = app.ctx.clone();
    let img = original.clone();
    let points = ctx.map.point_count;
    let detected = blocking(move || -> Result<LandmarkSet, LandmarkError> {
        match landmarks_json {
            Some(json) => {
                let l = LandmarkSet::from_json(&json, points)?;
                if l.source_dimensions() != img.dimensions() {
                    return Err(LandmarkError::MalformedLandmarks("landmarks describe a different frame".into()));
                }
                Ok(l)
            }
            None => detect_landmarks(&img, None, ctx.landmarks.as_ref()),
        }
    })
    .await?;
    let (landmarks, status) = match detected {
        Ok(l) => (Some(l), LandmarkStatus { status: "ok", detail: None }),
        Err(LandmarkError::NoFaceFound) => (None, LandmarkStatus { status: "no-face", detail: None }),
        Err(e) => (
            None,
            LandmarkStatus {
                status: "unavailable",
                detail: Some(e.to_string()),
            },
        ),
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let (w, h) = original.dimensions();
    let session = Session {
        original,
        landmarks,
        state: SessionState::Uploaded,
        mask: None,
        masked: None,
        prompt: None,
        edited: None,
        result: None,
    };
    app.sessions
        .lock()
        .expect("session map lock")
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": id,
            "state": "uploaded",
            "width": w,
            "height": h,
            "landmarks": status,
        })),
    )
        .into_response())
}

async fn session_status(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let handle = lookup(&app, &id)?;
    let s = handle.lock().await;
    Ok(Json(json!({
        "session_id": id,
        "state": s.state,
        "ratio": s.mask.as_ref().map(|m| m.mask_ratio),
        "landmarks": s.landmarks.is_some(),
    })))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let handle = app
        .sessions
        .lock()
        .expect("session map lock")
        .remove(&id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))?;
    // Wait for any in-flight transition, then drop the data.
    let mut s = handle.lock().await;
    s.original = Image::new(1, 1);
    s.masked = None;
    s.edited = None;
    s.result = None;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct PreviewQuery {
    ratio: Option<String>,
}

fn parse_ratio(raw: &str) -> ApiResult<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("ratio `{raw}` is not a number")))
}

fn compute_mask(ctx: &PipelineContext, s: &Session, cfg: &MaskConfig) -> ApiResult<(Image, SoftMask)> {
    let lms = s.landmarks.as_ref().ok_or_else(|| {
        ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "session has no landmarks; upload them with the image".into(),
        )
    })?;
    mask_image(&s.original, lms, cfg, &ctx.map).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
}

async fn preview(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let handle = lookup(&app, &id)?;
    let ratio = match q.ratio.as_deref() {
        Some(r) => parse_ratio(r)?,
        None => {
            let s = handle.lock().await;
            s.mask.as_ref().map_or(app.ctx.cfg.mask.mask_ratio, |m| m.mask_ratio)
        }
    };
    let cfg = validated_ratio(&app.ctx.cfg.mask, ratio)?;
    let ctx = app.ctx.clone();
    let (bytes, count) = blocking(move || -> ApiResult<(Vec<u8>, usize)> {
        let s = handle.blocking_lock();
        let (masked, mask) = compute_mask(&ctx, &s, &cfg)?;
        Ok((png(&masked)?, mask.support()))
    })
    .await??;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(MASKED_PIXELS_HEADER, HeaderValue::from(count));
    Ok((headers, Body::from(bytes)).into_response())
}

#[derive(Deserialize)]
struct ApproveBody {
    ratio: f64,
}

async fn approve(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<ApproveBody>>,
) -> ApiResult<Json<serde_json::Value>> {
    let handle = lookup(&app, &id)?;
    let Json(body) = body.ok_or_else(|| ApiError(StatusCode::UNPROCESSABLE_ENTITY, "body must be {\"ratio\": R}".into()))?;
    let cfg = validated_ratio(&app.ctx.cfg.mask, body.ratio)?;
    let ctx = app.ctx.clone();
    blocking(move || -> ApiResult<Json<serde_json::Value>> {
        let mut s = handle.blocking_lock();
        match s.state {
            SessionState::Uploaded | SessionState::Masked => {}
            // Re-tuning after an edit is allowed only with a new ratio.
            SessionState::Edited | SessionState::Reintegrated => {
                if s.mask.as_ref().is_some_and(|m| m.mask_ratio == cfg.mask_ratio) {
                    return Err(ApiError(
                        StatusCode::CONFLICT,
                        format!(
                            "session is {} with ratio {}; approve a different ratio to re-mask",
                            state_name(s.state),
                            cfg.mask_ratio
                        ),
                    ));
                }
            }
        }
        let (masked, mask) = compute_mask(&ctx, &s, &cfg)?;
        let count = mask.support();
        s.masked = Some((masked, mask));
        s.mask = Some(cfg.clone());
        s.edited = None;
        s.result = None;
        s.state = SessionState::Masked;
        Ok(Json(json!({ "state": "masked", "ratio": cfg.mask_ratio, "masked_pixels": count })))
    })
    .await?
}

#[derive(Deserialize)]
struct EditBody {
    prompt: String,
}

async fn edit_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<EditBody>>,
) -> ApiResult<Response> {
    let handle = lookup(&app, &id)?;
    let Json(body) = body.ok_or_else(|| ApiError(StatusCode::UNPROCESSABLE_ENTITY, "body must be {\"prompt\": T}".into()))?;
    if body.prompt.trim().is_empty() {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "prompt is empty".into()));
    }
    let ctx = app.ctx.clone();
    let bytes = blocking(move || -> ApiResult<Vec<u8>> {
        let mut s = handle.blocking_lock();
        if !matches!(s.state, SessionState::Masked | SessionState::Edited) {
            return Err(conflict(s.state, "edit", "approve a mask"));
        }
        let (masked, _) = s.masked.as_ref().expect("masked state has a mask");
        let format = ctx.cfg.upload_format;
        let upload = encode_image(masked, format).map_err(internal)?;
        let rid = request_id(&id, "edit", &upload, &body.prompt);
        let req = EditRequest::new(upload, format.content_type(), &body.prompt, &rid, ctx.cfg.backend.timeout())
            .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        let out = edit(&req, ctx.backend.as_ref()).map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?;
        let bytes = png(&out.image)?;
        s.edited = Some(out.image);
        s.prompt = Some(body.prompt);
        s.result = None;
        s.state = SessionState::Edited;
        Ok(bytes)
    })
    .await??;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn reintegrate(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let handle = lookup(&app, &id)?;
    let ctx = app.ctx.clone();
    blocking(move || -> ApiResult<Json<serde_json::Value>> {
        let mut s = handle.blocking_lock();
        if s.state != SessionState::Edited {
            return Err(conflict(s.state, "reintegrate", "run an edit"));
        }
        let edited = s.edited.clone().expect("edited state has an image");
        let mask_cfg = s.mask.clone().expect("edited state has a mask");
        let lms = s.landmarks.clone().expect("masked sessions have landmarks");
        let prompt = s.prompt.clone().unwrap_or_default();
        let (reint, source) = reintegrate_edited(&ctx, &s.original, &lms, &edited, None, &mask_cfg)
            .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        let (scores, identity) = score(&ctx, &s.original, &edited, &reint.image, None, &prompt)
            .map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?;
        let masked_pixels = s.masked.as_ref().map_or(0, |(_, m)| m.support());
        let result = PipelineResult {
            schema: RESULT_SCHEMA.to_string(),
            id: id.clone(),
            edit_task: prompt,
            backend: ctx.backend.name().to_string(),
            mask_ratio: mask_cfg.mask_ratio,
            paths: ResultPaths::default(),
            scores,
            identity,
            pose_delta: reint.pose_delta,
            validity: reint.validity.clone(),
            blend: reint.blend,
            solver: reint.solver,
            edited_landmarks: source,
            masked_pixels,
            probe: ProbeRecord {
                status: ProbeStatus::Skipped,
                prompt: None,
                detail: None,
                adversarial_simulation: true,
            },
            warnings: reint.warning.iter().cloned().collect(),
            timings_ms: Default::default(),
        };
        if reint.validity.passed {
            s.state = SessionState::Reintegrated;
        }
        let image = base64::engine::general_purpose::STANDARD.encode(png(&reint.image)?);
        s.result = Some(result);
        Ok(Json(json!({
            "state": s.state,
            "validity": reint.validity,
            "pose_delta": reint.pose_delta,
            "blend": reint.blend,
            "solver": reint.solver,
            "warning": reint.warning,
            "image_png_base64": image,
        })))
    })
    .await?
}

async fn report(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<PipelineResult>> {
    let handle = lookup(&app, &id)?;
    let s = handle.lock().await;
    s.result
        .clone()
        .map(Json)
        .ok_or_else(|| conflict(s.state, "report", "reintegrate"))
}
