//! End-to-end run over a workspace: mask, optional reconstruction probe,
//! edit, reintegrate, score.
//!
//! Layout under the workspace root:
//!
//! ```text
//! input_og_imgs/<id>.jpg            (+ <id>.landmarks.json for the sidecar provider)
//! masked_imgs/<id>_mask.jpg
//! gpt_generated/<id>_private.jpg
//! gpt_generated/<id>_recon.jpg      (probe only)
//! ours_edited/<id>_final.jpg        (validity pass only)
//! ours_edited/<id>_result.json
//! ```
//!
//! Artifacts are written under `.privedit-staging/<id>/` and renamed into
//! place only after every stage succeeded.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{edit, reconstruction_probe, EditBackend, EditRequest};
use crate::config::{EditedLandmarks, EmbeddingKind, PipelineConfig, ProviderKind};
use crate::evaluation::{
    clip_score, cosine_similarity, frechet_distance, run_attribute_benchmark, AblationRow, AttributeF1,
    AttributeGroundTruth, AttributeOracle, AttributeSpec, BenchmarkOptions, Condition, EmbeddingProvider,
    ImagePair, ImageRow, MethodRow, MetricsReport, RemoteEmbedder, ReportMetadata, StubEmbedder,
};
use crate::imaging::{decode_image, encode_image, load_image, Encoding, Image, SoftMask};
use crate::landmarks::{
    detect_landmarks, sidecar_path, IndexMap, LandmarkError, LandmarkProvider, LandmarkSet, PoseDelta,
    RemoteProvider, SidecarProvider,
};
use crate::masking::{mask_image, MaskConfig};
use crate::poisson::SolverStats;
use crate::reintegration::{swap_face_back, BlendMode, ReintegrationResult, Validity};
use crate::transport::{HttpTransport, RetryPolicy, Transport};

pub const RESULT_SCHEMA: &str = "privedit-result/1";
pub const STAGING_DIR: &str = ".privedit-staging";
pub const INPUT_DIR: &str = "input_og_imgs";
pub const MASKED_DIR: &str = "masked_imgs";
pub const GENERATED_DIR: &str = "gpt_generated";
pub const FINAL_DIR: &str = "ours_edited";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Landmarks,
    Mask,
    Probe,
    Edit,
    Reintegrate,
    Score,
    Persist,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("stage is a string"))
    }
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl std::fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
        }
    }
}

/// Workspace-relative artifact paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultPaths {
    pub input: Option<String>,
    pub mask: Option<String>,
    pub gen_private: Option<String>,
    pub gen_recon: Option<String>,
    #[serde(rename = "final")]
    pub final_image: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub s_orig: f64,
    pub s_gpt: f64,
    pub s_ours: f64,
}

/// Embedding cosine against the original image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityScores {
    pub private: f64,
    #[serde(rename = "final")]
    pub final_image: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeStatus {
    Skipped,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub status: ProbeStatus,
    /// The probe reuses the edit prompt.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
    pub adversarial_simulation: bool,
}

impl ProbeRecord {
    fn skipped() -> Self {
        Self {
            status: ProbeStatus::Skipped,
            prompt: None,
            detail: None,
            adversarial_simulation: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditedLandmarkSource {
    Detected,
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub schema: String,
    pub id: String,
    pub edit_task: String,
    pub backend: String,
    pub mask_ratio: f64,
    pub paths: ResultPaths,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scores: Option<Scores>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub identity: Option<IdentityScores>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pose_delta: Option<PoseDelta>,
    pub validity: Validity,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub blend: Option<BlendMode>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solver: Option<SolverStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub edited_landmarks: Option<EditedLandmarkSource>,
    pub masked_pixels: usize,
    pub probe: ProbeRecord,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Wall-clock stage timings; kept out of the persisted JSON so reruns are byte-identical.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings_ms: BTreeMap<String, f64>,
}

impl PipelineResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// Configured collaborators of a run.
pub struct PipelineContext {
    pub cfg: PipelineConfig,
    pub map: IndexMap,
    pub backend: Box<dyn EditBackend>,
    pub landmarks: Box<dyn LandmarkProvider>,
    pub embedder: Option<Box<dyn EmbeddingProvider>>,
}

impl PipelineContext {
    /// Builds every collaborator from `cfg`. `transport` is used for the
    /// network-facing ones; a real HTTP transport is created when needed
    /// and none is given.
    pub fn from_config(cfg: PipelineConfig, transport: Option<Arc<dyn Transport>>) -> Result<Self, PipelineError> {
        let err = |e: &dyn std::fmt::Display| PipelineError::new(Stage::Config, e);
        cfg.validate().map_err(|e| err(&e))?;
        let map = match &cfg.landmarks.index_map {
            Some(p) => IndexMap::load(p).map_err(|e| err(&e))?,
            None => IndexMap::default(),
        };
        let needs_net = cfg.backend.kind == crate::backend::BackendKind::Http
            || cfg.landmarks.provider == ProviderKind::Remote
            || cfg.embedding.provider == EmbeddingKind::Remote;
        let transport = match (transport, needs_net) {
            (Some(t), _) => Some(t),
            (None, true) => Some(Arc::new(HttpTransport::new().map_err(|e| err(&e))?) as Arc<dyn Transport>),
            (None, false) => None,
        };
        let backend = cfg.backend.build(transport.clone()).map_err(|e| err(&e))?;
        let landmarks: Box<dyn LandmarkProvider> = match cfg.landmarks.provider {
            ProviderKind::Sidecar => Box::new(SidecarProvider::new(&map)),
            ProviderKind::Remote => Box::new(
                RemoteProvider::new(
                    cfg.landmarks.endpoint.as_deref().expect("validated"),
                    transport.clone().expect("transport built"),
                    Duration::from_millis(cfg.landmarks.timeout_ms),
                    RetryPolicy {
                        retries: cfg.landmarks.retries,
                        ..RetryPolicy::default()
                    },
                )
                .with_expected_points(map.point_count),
            ),
        };
        let embedder: Option<Box<dyn EmbeddingProvider>> = match cfg.embedding.provider {
            EmbeddingKind::None => None,
            EmbeddingKind::Stub => Some(Box::new(StubEmbedder::new(cfg.embedding.dim, cfg.embedding.seed))),
            EmbeddingKind::Remote => Some(Box::new(RemoteEmbedder::new(
                cfg.embedding.endpoint.as_deref().expect("validated"),
                transport.expect("transport built"),
                Duration::from_millis(cfg.embedding.timeout_ms),
                RetryPolicy {
                    retries: cfg.embedding.retries,
                    ..RetryPolicy::default()
                },
            ))),
        };
        Ok(Self {
            cfg,
            map,
            backend,
            landmarks,
            embedder,
        })
    }

    pub fn with_backend(mut self, backend: Box<dyn EditBackend>) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_landmarks(mut self, provider: Box<dyn LandmarkProvider>) -> Self {
        self.landmarks = provider;
        self
    }

    pub fn with_embedder(mut self, embedder: Option<Box<dyn EmbeddingProvider>>) -> Self {
        self.embedder = embedder;
        self
    }
}

/// Provider for the edited image: tries `primary`, and when it cannot
/// answer at all falls back to fixed landmarks (if any).
struct EditedProvider<'a> {
    primary: Option<&'a dyn LandmarkProvider>,
    fallback: Option<LandmarkSet>,
}

impl LandmarkProvider for EditedProvider<'_> {
    fn name(&self) -> &str {
        "edited"
    }

    fn detect(&self, img: &Image, origin: Option<&Path>) -> Result<LandmarkSet, LandmarkError> {
        match (self.primary, &self.fallback) {
            (Some(p), Some(f)) => match p.detect(img, origin) {
                Err(LandmarkError::ProviderUnavailable(_)) => Ok(f.clone()),
                other => other,
            },
            (Some(p), None) => p.detect(img, origin),
            (None, Some(f)) => Ok(f.clone()),
            (None, None) => Err(LandmarkError::ProviderUnavailable("no edited-image landmark source".into())),
        }
    }
}

/// In-memory products of one run.
pub struct Processed {
    pub masked: Image,
    pub mask: SoftMask,
    pub upload: Vec<u8>,
    pub recon: Option<Image>,
    pub private: Image,
    pub reintegration: ReintegrationResult,
    pub result: PipelineResult,
}

/// Deterministic idempotency key: same masked bytes, prompt and purpose give
/// the same key.
pub fn request_id(id: &str, purpose: &str, bytes: &[u8], prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.update(prompt.as_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("{id}-{purpose}-{hex}")
}

fn ms(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

/// Swaps the original face back into `edited`, sourcing the edited
/// landmarks per `landmarks.edited`.
pub fn reintegrate_edited(
    ctx: &PipelineContext,
    original: &Image,
    original_lms: &LandmarkSet,
    edited: &Image,
    edited_origin: Option<&Path>,
    mask_cfg: &MaskConfig,
) -> Result<(ReintegrationResult, Option<EditedLandmarkSource>), PipelineError> {
    let cfg = &ctx.cfg;
    let source_lms = original_lms.rescaled_to(edited.width(), edited.height());
    let provider = match cfg.landmarks.edited {
        EditedLandmarks::Source => EditedProvider {
            primary: None,
            fallback: Some(source_lms.clone()),
        },
        EditedLandmarks::Detect => EditedProvider {
            primary: Some(ctx.landmarks.as_ref()),
            fallback: None,
        },
        EditedLandmarks::Auto => EditedProvider {
            primary: Some(ctx.landmarks.as_ref()),
            fallback: ctx.backend.is_mock().then(|| source_lms.clone()),
        },
    };
    let reint = swap_face_back(
        original,
        original_lms,
        edited,
        edited_origin,
        &provider,
        mask_cfg,
        &cfg.reintegration,
        &ctx.map,
    )
    .map_err(|e| PipelineError::new(Stage::Reintegrate, e))?;
    let source = reint.edited_landmarks.as_ref().map(|l| {
        if *l == source_lms && cfg.landmarks.edited != EditedLandmarks::Detect {
            EditedLandmarkSource::Source
        } else {
            EditedLandmarkSource::Detected
        }
    });
    Ok((reint, source))
}

/// CLIP-style scores and identity cosines, when an embedder is configured.
pub fn score(
    ctx: &PipelineContext,
    original: &Image,
    private: &Image,
    final_image: &Image,
    recon: Option<&Image>,
    edit_task: &str,
) -> Result<(Option<Scores>, Option<IdentityScores>), PipelineError> {
    let Some(e) = &ctx.embedder else {
        return Ok((None, None));
    };
    let err = |x: crate::evaluation::EvaluationError| PipelineError::new(Stage::Score, x);
    let scores = Scores {
        s_orig: clip_score(original, edit_task, e.as_ref()).map_err(err)?,
        s_gpt: clip_score(private, edit_task, e.as_ref()).map_err(err)?,
        s_ours: clip_score(final_image, edit_task, e.as_ref()).map_err(err)?,
    };
    let eo = e.embed_image(original).map_err(err)?;
    let cos = |img: &Image| -> Result<f64, PipelineError> { cosine_similarity(&eo, &e.embed_image(img).map_err(err)?).map_err(err) };
    let identity = IdentityScores {
        private: cos(private)?,
        final_image: cos(final_image)?,
        recon: recon.map(cos).transpose()?,
    };
    Ok((Some(scores), Some(identity)))
}

/// Runs every stage on an already-loaded original without touching disk.
/// `edited_origin` is where the edited image will live (for sidecar lookups).
pub fn process_image(
    ctx: &PipelineContext,
    id: &str,
    original: &Image,
    original_lms: &LandmarkSet,
    edit_task: &str,
    mask_cfg: &MaskConfig,
    edited_origin: Option<&Path>,
) -> Result<Processed, PipelineError> {
    let cfg = &ctx.cfg;
    let mut timings = BTreeMap::new();
    let mut warnings = Vec::new();

    let t = Instant::now();
    let (masked, mask) =
        mask_image(original, original_lms, mask_cfg, &ctx.map).map_err(|e| PipelineError::new(Stage::Mask, e))?;
    // Only the masked composite is ever encoded for the backend.
    let upload = encode_image(&masked, cfg.upload_format).map_err(|e| PipelineError::new(Stage::Mask, e))?;
    timings.insert("mask".to_string(), ms(t));

    let timeout = cfg.backend.timeout();
    let mut probe = ProbeRecord::skipped();
    let mut recon = None;
    if cfg.probe_enabled {
        let t = Instant::now();
        let req = EditRequest::new(
            upload.clone(),
            cfg.upload_format.content_type(),
            edit_task,
            &request_id(id, "recon", &upload, edit_task),
            timeout,
        )
        .map_err(|e| PipelineError::new(Stage::Probe, e))?;
        match reconstruction_probe(&req, ctx.backend.as_ref()) {
            Ok(r) => {
                probe = ProbeRecord {
                    status: ProbeStatus::Ok,
                    prompt: Some(edit_task.to_string()),
                    detail: None,
                    adversarial_simulation: true,
                };
                recon = Some(r.image);
            }
            Err(e) => {
                // The probe is optional: record and carry on.
                warnings.push(format!("reconstruction probe failed: {e}"));
                probe = ProbeRecord {
                    status: ProbeStatus::Failed,
                    prompt: Some(edit_task.to_string()),
                    detail: Some(e.to_string()),
                    adversarial_simulation: true,
                };
            }
        }
        timings.insert("probe".to_string(), ms(t));
    }

    let t = Instant::now();
    let req = EditRequest::new(
        upload.clone(),
        cfg.upload_format.content_type(),
        edit_task,
        &request_id(id, "edit", &upload, edit_task),
        timeout,
    )
    .map_err(|e| PipelineError::new(Stage::Edit, e))?;
    let edited = edit(&req, ctx.backend.as_ref()).map_err(|e| PipelineError::new(Stage::Edit, e))?;
    let private = edited.image;
    timings.insert("edit".to_string(), ms(t));

    let t = Instant::now();
    let (reint, edited_landmarks) = reintegrate_edited(ctx, original, original_lms, &private, edited_origin, mask_cfg)?;
    timings.insert("reintegrate".to_string(), ms(t));
    if let Some(w) = &reint.warning {
        warnings.push(w.clone());
    }

    let t = Instant::now();
    let (scores, identity) = score(ctx, original, &private, &reint.image, recon.as_ref(), edit_task)?;
    if scores.is_some() {
        timings.insert("score".to_string(), ms(t));
    }

    let result = PipelineResult {
        schema: RESULT_SCHEMA.to_string(),
        id: id.to_string(),
        edit_task: edit_task.to_string(),
        backend: ctx.backend.name().to_string(),
        mask_ratio: mask_cfg.mask_ratio,
        paths: ResultPaths::default(),
        scores,
        identity,
        pose_delta: reint.pose_delta,
        validity: reint.validity.clone(),
        blend: reint.blend,
        solver: reint.solver,
        edited_landmarks,
        masked_pixels: mask.support(),
        probe,
        warnings,
        timings_ms: timings,
    };
    Ok(Processed {
        masked,
        mask,
        upload,
        recon,
        private,
        reintegration: reint,
        result,
    })
}

fn rel(dir: &str, name: &str) -> String {
    format!("{dir}/{name}")
}

/// Loads `input_og_imgs/<id>.jpg` and its landmarks.
pub fn load_input(ctx: &PipelineContext, id: &str) -> Result<(PathBuf, Image, LandmarkSet), PipelineError> {
    let path = ctx.cfg.workspace.join(INPUT_DIR).join(format!("{id}.jpg"));
    if !path.is_file() {
        return Err(PipelineError::new(Stage::Ingest, format!("{} does not exist", path.display())));
    }
    let original = load_image(&path).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    let lms = detect_landmarks(&original, Some(&path), ctx.landmarks.as_ref())
        .map_err(|e| PipelineError::new(Stage::Landmarks, e))?;
    Ok((path, original, lms))
}

/// Runs the whole pipeline for `id` and commits the artifacts.
pub fn run_pipeline(id: &str, edit_task: &str, ctx: &PipelineContext) -> Result<PipelineResult, PipelineError> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(PipelineError::new(Stage::Ingest, format!("invalid image id `{id}`")));
    }
    let t_total = Instant::now();
    let t = Instant::now();
    let (_, original, lms) = load_input(ctx, id)?;
    let ingest_ms = ms(t);
    let ws = &ctx.cfg.workspace;
    let private_name = format!("{id}_private.jpg");
    let private_dest = ws.join(GENERATED_DIR).join(&private_name);
    let mut p = process_image(ctx, id, &original, &lms, edit_task, &ctx.cfg.mask, Some(&private_dest))?;
    p.result.timings_ms.insert("ingest".to_string(), ingest_ms);

    let t = Instant::now();
    let q = ctx.cfg.jpeg_quality;
    let jpeg = |img: &Image| encode_image(img, Encoding::Jpeg { quality: q }).map_err(|e| PipelineError::new(Stage::Persist, e));
    let mut files: Vec<(&str, String, Vec<u8>)> = vec![
        (MASKED_DIR, format!("{id}_mask.jpg"), jpeg(&p.masked)?),
        (GENERATED_DIR, private_name, jpeg(&p.private)?),
    ];
    if let Some(r) = &p.recon {
        files.push((GENERATED_DIR, format!("{id}_recon.jpg"), jpeg(r)?));
    }
    if p.result.validity.passed {
        files.push((FINAL_DIR, format!("{id}_final.jpg"), jpeg(&p.reintegration.image)?));
    }
    let paths = &mut p.result.paths;
    paths.input = Some(rel(INPUT_DIR, &format!("{id}.jpg")));
    for (dir, name, _) in &files {
        let r = Some(rel(dir, name));
        match (*dir, name.rsplit('_').next()) {
            (MASKED_DIR, _) => paths.mask = r,
            (GENERATED_DIR, Some("private.jpg")) => paths.gen_private = r,
            (GENERATED_DIR, Some("recon.jpg")) => paths.gen_recon = r,
            (FINAL_DIR, _) => paths.final_image = r,
            _ => {}
        }
    }
    p.result.timings_ms.insert("persist".to_string(), ms(t));
    p.result.timings_ms.insert("total".to_string(), ms(t_total));
    let persisted = PipelineResult {
        timings_ms: BTreeMap::new(),
        ..p.result.clone()
    };
    files.push((FINAL_DIR, format!("{id}_result.json"), persisted.to_json().into_bytes()));

    // Stale artifacts of an earlier run that this run does not produce.
    let stale = [
        (GENERATED_DIR, format!("{id}_recon.jpg")),
        (FINAL_DIR, format!("{id}_final.jpg")),
    ];
    commit(ws, id, &files, &stale).map_err(|e| PipelineError::new(Stage::Persist, e))?;
    Ok(p.result)
}

fn commit(ws: &Path, id: &str, files: &[(&str, String, Vec<u8>)], stale: &[(&str, String)]) -> std::io::Result<()> {
    let staging = ws.join(STAGING_DIR).join(id);
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    let staged = (|| -> std::io::Result<()> {
        for (dir, name, bytes) in files {
            std::fs::create_dir_all(staging.join(dir))?;
            std::fs::write(staging.join(dir).join(name), bytes)?;
        }
        for (dir, _, _) in files {
            std::fs::create_dir_all(ws.join(dir))?;
        }
        Ok(())
    })();
    if let Err(e) = staged {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    for (dir, name) in stale {
        if !files.iter().any(|(d, n, _)| d == dir && n == name) {
            let p = ws.join(dir).join(name);
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
    }
    for (dir, name, _) in files {
        std::fs::rename(staging.join(dir).join(name), ws.join(dir).join(name))?;
    }
    let _ = std::fs::remove_dir_all(&staging);
    let root = ws.join(STAGING_DIR);
    if root.read_dir().map(|mut d| d.next().is_none()).unwrap_or(false) {
        let _ = std::fs::remove_dir(root);
    }
    Ok(())
}

/// Runs several ids on a pool of `cfg.workers` threads; results keep the
/// input order.
pub fn run_batch(ids: &[String], edit_task: &str, ctx: &PipelineContext) -> Vec<Result<PipelineResult, PipelineError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.cfg.workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| ids.par_iter().map(|id| run_pipeline(id, edit_task, ctx)).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn read_artifact(ws: &Path, rel_path: &Option<String>) -> Result<Option<Image>, PipelineError> {
    match rel_path {
        Some(r) => {
            let bytes = std::fs::read(ws.join(r)).map_err(|e| PipelineError::new(Stage::Score, format!("{r}: {e}")))?;
            decode_image(&bytes).map(Some).map_err(|e| PipelineError::new(Stage::Score, e))
        }
        None => Ok(None),
    }
}

/// Builds the method-comparison report from committed results. Needs an
/// embedding provider. The Face-FID rows need at least two images.
pub fn summarize(ctx: &PipelineContext, results: &[PipelineResult]) -> Result<MetricsReport, PipelineError> {
    let e = ctx
        .embedder
        .as_ref()
        .ok_or_else(|| PipelineError::new(Stage::Score, "no embedding provider configured"))?;
    let err = |x: crate::evaluation::EvaluationError| PipelineError::new(Stage::Score, x);
    let ws = &ctx.cfg.workspace;
    let mut report = MetricsReport::new(ReportMetadata {
        backend: ctx.backend.name().to_string(),
        provider: e.name().to_string(),
        mask_ratio: ctx.cfg.mask.mask_ratio,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        notes: vec![
            "Face-FID and cosine use the configured embedding provider; values are comparable only within one provider."
                .into(),
        ],
    });
    let mut emb: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    let mut clips: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut cosines: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in results {
        let original = read_artifact(ws, &r.paths.input)?.expect("input path always set");
        let eo = e.embed_image(&original).map_err(err)?;
        let mut row = ImageRow {
            id: r.id.clone(),
            face_fid_ref: 0.0,
            cosine: 0.0,
            clip_orig: clip_score(&original, &r.edit_task, e.as_ref()).map_err(err)?,
            clip_gpt: 0.0,
            clip_ours: 0.0,
        };
        let mut record = |method: &'static str, img: &Image, row: &mut ImageRow| -> Result<(), PipelineError> {
            let v = e.embed_image(img).map_err(err)?;
            let c = clip_score(img, &r.edit_task, e.as_ref()).map_err(err)?;
            let cos = cosine_similarity(&eo, &v).map_err(err)?;
            match method {
                "GPT Reconstructed" => {}
                "GPT (Masked Edit)" => row.clip_gpt = c,
                _ => {
                    row.clip_ours = c;
                    row.cosine = cos;
                    row.face_fid_ref = eo.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
                }
            }
            emb.entry(method).or_default().push(v);
            clips.entry(method).or_default().push(c);
            cosines.entry(method).or_default().push(cos);
            Ok(())
        };
        record("Input", &original, &mut row)?;
        if ctx.backend.is_mock() {
            // Non-private baseline: only ever computed with a local mock.
            let req = EditRequest::from_image(&original, Encoding::Png, &r.edit_task, &format!("{}-baseline", r.id), ctx.cfg.backend.timeout())
                .map_err(|x| PipelineError::new(Stage::Edit, x))?;
            let base = edit(&req, ctx.backend.as_ref()).map_err(|x| PipelineError::new(Stage::Edit, x))?;
            record("GPT (No Privacy)", &base.image, &mut row)?;
        }
        if let Some(img) = read_artifact(ws, &r.paths.gen_private)? {
            record("GPT (Masked Edit)", &img, &mut row)?;
        }
        if let Some(img) = read_artifact(ws, &r.paths.gen_recon)? {
            record("GPT Reconstructed", &img, &mut row)?;
        }
        let final_image = read_artifact(ws, &r.paths.final_image)?;
        if let Some(img) = &final_image {
            record("Ours", img, &mut row)?;
        }
        report.images.push(row);
    }
    if results.len() >= 2 {
        let reference = emb["Input"].clone();
        for (method, privacy) in [
            ("Input", None),
            ("GPT (No Privacy)", Some(false)),
            ("GPT Reconstructed", Some(true)),
            ("Ours", Some(true)),
        ] {
            let Some(set) = emb.get(method) else { continue };
            if set.len() < 2 {
                continue;
            }
            report.methods.push(MethodRow {
                method: method.to_string(),
                face_fid: frechet_distance(&reference, set, 1e-6).map_err(err)?,
                cosine: mean(&cosines[method]),
                clip: mean(&clips[method]),
                privacy,
            });
        }
    } else {
        report.metadata.notes.push("Fewer than two images: method table omitted (Face-FID needs a set).".into());
    }
    if ctx.backend.is_mock() {
        report
            .metadata
            .notes
            .push("GPT (No Privacy) is computed in memory with the local mock backend only.".into());
    }
    Ok(report)
}

/// Everything the mask-ratio ablation needs for one image.
pub struct AblationInput {
    pub id: String,
    pub original: Image,
    pub landmarks: LandmarkSet,
}

/// Attribute part of the ablation: oracles and truth for the F1 columns.
pub struct AblationAttributes<'a> {
    pub specs: &'a [AttributeSpec],
    pub oracles: &'a [&'a dyn AttributeOracle],
    pub truth: &'a AttributeGroundTruth,
    pub options: BenchmarkOptions,
}

/// Sweeps the mask ratio, producing one ablation row per ratio. Runs in
/// memory; nothing is written.
pub fn run_ablation(
    ctx: &PipelineContext,
    inputs: &[AblationInput],
    edit_task: &str,
    ratios: &[f64],
    attributes: Option<&AblationAttributes<'_>>,
) -> Result<Vec<AblationRow>, PipelineError> {
    let e = ctx
        .embedder
        .as_ref()
        .ok_or_else(|| PipelineError::new(Stage::Score, "no embedding provider configured"))?;
    let err = |x: crate::evaluation::EvaluationError| PipelineError::new(Stage::Score, x);
    if inputs.len() < 2 {
        return Err(PipelineError::new(Stage::Score, "the ablation needs at least two images"));
    }
    let reference: Vec<Vec<f64>> = inputs.iter().map(|i| e.embed_image(&i.original)).collect::<Result<_, _>>().map_err(err)?;
    let mut rows = Vec::new();
    for &ratio in ratios {
        let mask_cfg = ctx.cfg.mask.clone().with_ratio(ratio);
        mask_cfg.validate().map_err(|x| PipelineError::new(Stage::Config, x))?;
        let mut finals = Vec::new();
        let mut cos = Vec::new();
        let mut clip = Vec::new();
        let mut pairs = Vec::new();
        for (inp, eo) in inputs.iter().zip(&reference) {
            let p = process_image(ctx, &inp.id, &inp.original, &inp.landmarks, edit_task, &mask_cfg, None)?;
            let v = e.embed_image(&p.reintegration.image).map_err(err)?;
            cos.push(cosine_similarity(eo, &v).map_err(err)?);
            clip.push(clip_score(&p.reintegration.image, edit_task, e.as_ref()).map_err(err)?);
            finals.push(v);
            pairs.push(ImagePair {
                id: inp.id.clone(),
                unmasked: inp.original.clone(),
                masked: p.masked,
            });
        }
        let mut f1 = Vec::new();
        if let Some(a) = attributes {
            let outcome = run_attribute_benchmark(&pairs, a.specs, a.oracles, a.truth, &a.options).map_err(err)?;
            for row in outcome.rows.iter().filter(|r| r.condition == Condition::Masked) {
                f1.push(AttributeF1 {
                    attribute: row.attribute.clone(),
                    f1: row.f1,
                });
            }
        }
        rows.push(AblationRow {
            mask_ratio: ratio,
            face_fid: frechet_distance(&reference, &finals, 1e-6).map_err(err)?,
            cosine: mean(&cos),
            clip: mean(&clip),
            f1,
        });
    }
    Ok(rows)
}

/// Attribute list from config: the defaults plus configured extra slots.
pub fn configured_attributes(cfg: &PipelineConfig) -> Vec<AttributeSpec> {
    let mut specs = crate::evaluation::default_attributes_with(&cfg.oracle.prompt_template);
    specs.extend(
        cfg.oracle
            .extra_attributes
            .iter()
            .filter_map(|s| AttributeSpec::from_compact(&cfg.oracle.prompt_template, s)),
    );
    specs
}

/// Loads the landmark sidecar path convention for an arbitrary image file.
pub fn landmarks_for(path: &Path, img: &Image, provider: &dyn LandmarkProvider) -> Result<LandmarkSet, PipelineError> {
    detect_landmarks(img, Some(path), provider).map_err(|e| {
        PipelineError::new(
            Stage::Landmarks,
            match e {
                LandmarkError::ProviderUnavailable(m) => {
                    format!("{m} (expected landmarks at {})", sidecar_path(path).display())
                }
                other => other.to_string(),
            },
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockIdentity, MockRecolor};
    use crate::imaging::save_image;
    use crate::synthetic::{portrait_image, portrait_landmarks, PortraitParams};

    fn workspace(ids: &[&str]) -> (tempfile::TempDir, PipelineConfig) {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join(INPUT_DIR);
        std::fs::create_dir_all(&input).unwrap();
        for (i, id) in ids.iter().enumerate() {
            let p = PortraitParams::fixture(i);
            let p = PortraitParams {
                width: 160,
                height: 160,
                ..p
            };
            let path = input.join(format!("{id}.jpg"));
            save_image(&portrait_image(&p), &path, 95).unwrap();
            std::fs::write(sidecar_path(&path), portrait_landmarks(&p).to_json()).unwrap();
        }
        let cfg = PipelineConfig {
            workspace: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        (dir, cfg)
    }

    #[test]
    fn identity_run_populates_layout() {
        let (dir, cfg) = workspace(&["a1"]);
        let ctx = PipelineContext::from_config(cfg, None).unwrap();
        let r = run_pipeline("a1", "Convert this image into a professional studio headshot.", &ctx).unwrap();
        assert!(r.validity.passed, "{:?}", r.validity);
        for p in ["masked_imgs/a1_mask.jpg", "gpt_generated/a1_private.jpg", "ours_edited/a1_final.jpg", "ours_edited/a1_result.json"] {
            assert!(dir.path().join(p).is_file(), "{p}");
        }
        assert!(!dir.path().join("gpt_generated/a1_recon.jpg").exists());
        assert!(!dir.path().join(STAGING_DIR).exists());
        assert_eq!(r.probe.status, ProbeStatus::Skipped);
        let s = r.scores.unwrap();
        assert!((s.s_ours - s.s_orig).abs() <= 1e-6, "{s:?}");
        assert!((s.s_gpt - s.s_orig).abs() > 1e-6);
        assert_eq!(r.edited_landmarks, Some(EditedLandmarkSource::Source));
        let json = std::fs::read_to_string(dir.path().join("ours_edited/a1_result.json")).unwrap();
        let back: PipelineResult = serde_json::from_str(&json).unwrap();
        assert!(!r.timings_ms.is_empty());
        assert_eq!(back, PipelineResult { timings_ms: BTreeMap::new(), ..r });
    }

    #[test]
    fn probe_writes_recon() {
        let (dir, mut cfg) = workspace(&["p"]);
        cfg.probe_enabled = true;
        let ctx = PipelineContext::from_config(cfg, None).unwrap();
        let r = run_pipeline("p", "headshot", &ctx).unwrap();
        assert_eq!(r.probe.status, ProbeStatus::Ok);
        assert_eq!(r.probe.prompt.as_deref(), Some("headshot"));
        assert!(dir.path().join("gpt_generated/p_recon.jpg").is_file());
        assert!(r.identity.unwrap().recon.is_some());
    }

    #[test]
    fn missing_input_leaves_nothing() {
        let (dir, cfg) = workspace(&[]);
        let ctx = PipelineContext::from_config(cfg, None).unwrap();
        let e = run_pipeline("nope", "x", &ctx).unwrap_err();
        assert_eq!(e.stage, Stage::Ingest);
        let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(entries, vec![std::ffi::OsString::from(INPUT_DIR)]);
    }

    #[test]
    fn detect_policy_without_sidecar_fails_reintegration() {
        let (_dir, mut cfg) = workspace(&["d"]);
        cfg.landmarks.edited = EditedLandmarks::Detect;
        let ctx = PipelineContext::from_config(cfg, None).unwrap();
        let e = run_pipeline("d", "x", &ctx).unwrap_err();
        assert_eq!(e.stage, Stage::Reintegrate);
    }

    #[test]
    fn backend_only_sees_masked_bytes() {
        let (_dir, cfg) = workspace(&["m"]);
        let ctx = PipelineContext::from_config(cfg, None).unwrap().with_backend(Box::new(MockRecolor {
            delta: [0.1, 0.0, 0.0],
        }));
        let (_, original, lms) = load_input(&ctx, "m").unwrap();
        let p = process_image(&ctx, "m", &original, &lms, "x", &ctx.cfg.mask, None).unwrap();
        let sent = decode_image(&p.upload).unwrap();
        for (i, a) in p.mask.alpha().iter().enumerate() {
            if *a >= 0.99 {
                assert_eq!(&sent.data()[i * 3..i * 3 + 3], &[0.0, 0.0, 0.0]);
            }
        }
        // The recolor mock is not geometry-aware, but keeps the geometry.
        assert!(p.result.validity.passed);
    }

    #[test]
    fn batch_keeps_order_and_reports() {
        let (_dir, mut cfg) = workspace(&["b1", "b2", "b3"]);
        cfg.workers = 2;
        let ctx = PipelineContext::from_config(cfg, None).unwrap().with_backend(Box::new(MockIdentity));
        let ids: Vec<String> = ["b1", "b2", "missing", "b3"].iter().map(|s| s.to_string()).collect();
        let out = run_batch(&ids, "headshot", &ctx);
        assert!(out[2].is_err());
        let ok: Vec<PipelineResult> = out.into_iter().filter_map(Result::ok).collect();
        assert_eq!(ok.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["b1", "b2", "b3"]);
        let report = summarize(&ctx, &ok).unwrap();
        assert_eq!(report.images.len(), 3);
        let names: Vec<&str> = report.methods.iter().map(|m| m.method.as_str()).collect();
        assert_eq!(names, vec!["Input", "GPT (No Privacy)", "Ours"]);
        assert!(report.methods[0].face_fid.abs() < 1e-9);
        assert!(report.validate().is_ok());
    }
}
