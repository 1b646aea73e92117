//! Facial landmark acquisition and pose-change estimation.
//!
//! Landmarks follow the 468-point FaceMesh topology; which indices form the
//! eyes and the inner face is data (see [`IndexMap`]), not code. Providers are
//! pluggable: a sidecar file next to the image (the offline default), a remote
//! detector over HTTP, or a fixed in-memory set.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{encode_image, Encoding, Image};
use crate::transport::{send_with_retry, OutboundRequest, RequestBody, RetryPolicy, Transport};

pub const FACEMESH_POINT_COUNT: usize = 468;

const DEFAULT_INDEX_MAP: &str = include_str!("../data/facemesh_indices.toml");

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LandmarkError {
    #[error("no face found")]
    NoFaceFound,
    #[error("landmark provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed landmarks: {0}")]
    MalformedLandmarks(String),
    #[error("degenerate face: {0}")]
    DegenerateFace(String),
}

/// Landmark groups of one topology. The inner face (eyes, nose, mouth and
/// cheeks) defines the identity hull, the warp mesh and the pose-fit subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMap {
    pub point_count: usize,
    pub right_eye: Vec<usize>,
    pub left_eye: Vec<usize>,
    pub nose: Vec<usize>,
    pub mouth: Vec<usize>,
    pub cheeks: Vec<usize>,
    #[serde(default)]
    pub face_oval: Vec<usize>,
    #[serde(default)]
    pub right_brow: Vec<usize>,
    #[serde(default)]
    pub left_brow: Vec<usize>,
}

impl Default for IndexMap {
    fn default() -> Self {
        Self::from_toml(DEFAULT_INDEX_MAP).expect("bundled index map is valid")
    }
}

impl IndexMap {
    pub fn from_toml(doc: &str) -> Result<Self, LandmarkError> {
        let map: IndexMap =
            toml::from_str(doc).map_err(|e| LandmarkError::MalformedLandmarks(format!("index map: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, LandmarkError> {
        let doc = std::fs::read_to_string(path)
            .map_err(|e| LandmarkError::ProviderUnavailable(format!("{}: {e}", path.display())))?;
        Self::from_toml(&doc)
    }

    fn validate(&self) -> Result<(), LandmarkError> {
        let groups = [
            &self.right_eye,
            &self.left_eye,
            &self.nose,
            &self.mouth,
            &self.cheeks,
            &self.face_oval,
            &self.right_brow,
            &self.left_brow,
        ];
        for g in groups {
            if let Some(&bad) = g.iter().find(|&&i| i >= self.point_count) {
                return Err(LandmarkError::MalformedLandmarks(format!(
                    "index {bad} out of range for {} points",
                    self.point_count
                )));
            }
        }
        if self.right_eye.is_empty() || self.left_eye.is_empty() || self.inner_face().len() < 3 {
            return Err(LandmarkError::MalformedLandmarks("index map lacks eye or inner-face groups".into()));
        }
        Ok(())
    }

    /// Eyes, nose, mouth and cheeks, deduplicated in first-seen order.
    pub fn inner_face(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for g in [&self.right_eye, &self.left_eye, &self.nose, &self.mouth, &self.cheeks] {
            for &i in g {
                if !out.contains(&i) {
                    out.push(i);
                }
            }
        }
        out
    }
}

/// An ordered landmark cloud. `x`, `y` are normalized to the source frame,
/// `z` is unitless relative depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<[f64; 3]>,
    source_width: u32,
    source_height: u32,
}

/// On-disk / on-wire landmark document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkDocument {
    pub width: u32,
    pub height: u32,
    pub points: Vec<[f64; 3]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 3]>, source_width: u32, source_height: u32) -> Result<Self, LandmarkError> {
        Self::with_count(points, source_width, source_height, FACEMESH_POINT_COUNT)
    }

    pub fn with_count(
        points: Vec<[f64; 3]>,
        source_width: u32,
        source_height: u32,
        expected: usize,
    ) -> Result<Self, LandmarkError> {
        if points.len() != expected {
            return Err(LandmarkError::MalformedLandmarks(format!(
                "expected {expected} points, got {}",
                points.len()
            )));
        }
        if source_width == 0 || source_height == 0 {
            return Err(LandmarkError::MalformedLandmarks("zero-sized source frame".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) || !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(LandmarkError::MalformedLandmarks(format!(
                    "point {i} = {p:?} outside the normalized frame"
                )));
            }
        }
        Ok(Self {
            points,
            source_width,
            source_height,
        })
    }

    pub fn from_document(doc: LandmarkDocument, expected: usize) -> Result<Self, LandmarkError> {
        if doc.points.is_empty() {
            return Err(LandmarkError::NoFaceFound);
        }
        Self::with_count(doc.points, doc.width, doc.height, expected)
    }

    pub fn from_json(json: &str, expected: usize) -> Result<Self, LandmarkError> {
        let doc: LandmarkDocument =
            serde_json::from_str(json).map_err(|e| LandmarkError::MalformedLandmarks(e.to_string()))?;
        Self::from_document(doc, expected)
    }

    pub fn to_document(&self) -> LandmarkDocument {
        LandmarkDocument {
            width: self.source_width,
            height: self.source_height,
            points: self.points.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("landmark document serializes")
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn source_width(&self) -> u32 {
        self.source_width
    }

    pub fn source_height(&self) -> u32 {
        self.source_height
    }

    pub fn source_dimensions(&self) -> (u32, u32) {
        (self.source_width, self.source_height)
    }

    /// Landmark `i` in source pixel units.
    pub fn pixel(&self, i: usize) -> [f64; 2] {
        let p = self.points[i];
        [p[0] * f64::from(self.source_width), p[1] * f64::from(self.source_height)]
    }

    pub fn pixels(&self, indices: &[usize]) -> Vec<[f64; 2]> {
        indices.iter().map(|&i| self.pixel(i)).collect()
    }

    /// Same normalized points attached to a different frame size.
    pub fn rescaled_to(&self, width: u32, height: u32) -> Self {
        Self {
            points: self.points.clone(),
            source_width: width,
            source_height: height,
        }
    }

    /// Applies `f` to every point in pixel space; results must stay in frame.
    pub fn map_pixels(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Self, LandmarkError> {
        let (w, h) = (f64::from(self.source_width), f64::from(self.source_height));
        let points = self
            .points
            .iter()
            .map(|p| {
                let q = f([p[0] * w, p[1] * h]);
                [q[0] / w, q[1] / h, p[2]]
            })
            .collect();
        Self::with_count(points, self.source_width, self.source_height, self.points.len())
    }
}

fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

pub fn eye_centers(lms: &LandmarkSet, map: &IndexMap) -> ([f64; 2], [f64; 2]) {
    (centroid(&lms.pixels(&map.left_eye)), centroid(&lms.pixels(&map.right_eye)))
}

/// Distance between the eye-center landmarks in source pixels.
pub fn interocular_distance(lms: &LandmarkSet, map: &IndexMap) -> Result<f64, LandmarkError> {
    let (l, r) = eye_centers(lms, map);
    let d = ((l[0] - r[0]).powi(2) + (l[1] - r[1]).powi(2)).sqrt();
    if d < 1.0 {
        return Err(LandmarkError::DegenerateFace(format!("interocular distance {d:.3} px < 1 px")));
    }
    Ok(d)
}

/// 2-D similarity `(x, y) -> (a·x − b·y + tx, b·x + a·y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    /// Rotation angle in degrees, in `(−180, 180]`.
    pub fn rotation_degrees(&self) -> f64 {
        let deg = self.b.atan2(self.a).to_degrees();
        if deg <= -180.0 {
            deg + 360.0
        } else {
            deg
        }
    }
}

/// Least-squares similarity sending `src[i]` toward `dst[i]`.
pub fn fit_similarity(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Similarity, LandmarkError> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(LandmarkError::DegenerateFace("similarity fit needs >= 2 paired points".into()));
    }
    let cs = centroid(src);
    let cd = centroid(dst);
    let (mut dot, mut cross, mut norm) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy) = (s[0] - cs[0], s[1] - cs[1]);
        let (dx, dy) = (d[0] - cd[0], d[1] - cd[1]);
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
        norm += sx * sx + sy * sy;
    }
    if norm <= f64::EPSILON {
        return Err(LandmarkError::DegenerateFace("source points coincide".into()));
    }
    let a = dot / norm;
    let b = cross / norm;
    Ok(Similarity {
        a,
        b,
        tx: cd[0] - (a * cs[0] - b * cs[1]),
        ty: cd[1] - (b * cs[0] + a * cs[1]),
    })
}

/// In-plane rotation plus a normalized misfit that stands in for out-of-plane
/// pose change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta {
    /// Degrees in `(−180, 180]`.
    pub roll: f64,
    /// RMS post-fit landmark distance over the destination interocular distance.
    pub residual: f64,
}

impl PoseDelta {
    pub const ZERO: PoseDelta = PoseDelta { roll: 0.0, residual: 0.0 };
}

pub fn estimate_pose_delta(src: &LandmarkSet, dst: &LandmarkSet, map: &IndexMap) -> Result<PoseDelta, LandmarkError> {
    interocular_distance(src, map)?;
    let iod = interocular_distance(dst, map)?;
    let subset = map.inner_face();
    let sp = src.pixels(&subset);
    let dp = dst.pixels(&subset);
    let fit = fit_similarity(&sp, &dp)?;
    let sq: f64 = sp
        .iter()
        .zip(&dp)
        .map(|(s, d)| {
            let m = fit.apply(*s);
            (m[0] - d[0]).powi(2) + (m[1] - d[1]).powi(2)
        })
        .sum();
    let rms = (sq / sp.len() as f64).sqrt();
    Ok(PoseDelta {
        roll: fit.rotation_degrees(),
        residual: rms / iod,
    })
}

/// Source of landmarks for an image. `origin` is the file the image came
/// from, when there is one.
pub trait LandmarkProvider: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, img: &Image, origin: Option<&Path>) -> Result<LandmarkSet, LandmarkError>;
}

/// Runs `provider` and checks the result against the image it describes.
pub fn detect_landmarks(
    img: &Image,
    origin: Option<&Path>,
    provider: &dyn LandmarkProvider,
) -> Result<LandmarkSet, LandmarkError> {
    let lms = provider.detect(img, origin)?;
    if lms.source_dimensions() != img.dimensions() {
        return Err(LandmarkError::MalformedLandmarks(format!(
            "landmarks describe a {}x{} frame, image is {}x{}",
            lms.source_width(),
            lms.source_height(),
            img.width(),
            img.height()
        )));
    }
    Ok(lms)
}

/// `<image-stem>.landmarks.json` next to `image`.
pub fn sidecar_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    image.with_file_name(format!("{stem}.landmarks.json"))
}

/// Reads the sidecar document that sits next to the image file.
#[derive(Debug, Clone)]
pub struct SidecarProvider {
    expected_points: usize,
}

impl SidecarProvider {
    pub fn new(map: &IndexMap) -> Self {
        Self {
            expected_points: map.point_count,
        }
    }
}

impl Default for SidecarProvider {
    fn default() -> Self {
        Self {
            expected_points: FACEMESH_POINT_COUNT,
        }
    }
}

impl LandmarkProvider for SidecarProvider {
    fn name(&self) -> &str {
        "sidecar"
    }

    fn detect(&self, _img: &Image, origin: Option<&Path>) -> Result<LandmarkSet, LandmarkError> {
        let origin =
            origin.ok_or_else(|| LandmarkError::ProviderUnavailable("sidecar provider needs the image path".into()))?;
        let path = sidecar_path(origin);
        let json = std::fs::read_to_string(&path)
            .map_err(|e| LandmarkError::ProviderUnavailable(format!("{}: {e}", path.display())))?;
        LandmarkSet::from_json(&json, self.expected_points)
    }
}

/// Always returns the same landmarks, or reports no face.
#[derive(Debug, Clone)]
pub struct StaticProvider {
    landmarks: Option<LandmarkSet>,
}

impl StaticProvider {
    pub fn new(landmarks: LandmarkSet) -> Self {
        Self {
            landmarks: Some(landmarks),
        }
    }

    pub fn no_face() -> Self {
        Self { landmarks: None }
    }
}

impl LandmarkProvider for StaticProvider {
    fn name(&self) -> &str {
        "static"
    }

    fn detect(&self, _img: &Image, _origin: Option<&Path>) -> Result<LandmarkSet, LandmarkError> {
        self.landmarks.clone().ok_or(LandmarkError::NoFaceFound)
    }
}

/// POSTs PNG bytes to a detector service and reads back a landmark document.
/// 404 and 422 mean "no face"; other failures mean the provider is unavailable.
pub struct RemoteProvider {
    endpoint: String,
    transport: Arc<dyn Transport>,
    timeout: Duration,
    retry: RetryPolicy,
    expected_points: usize,
}

impl RemoteProvider {
    pub fn new(endpoint: &str, transport: Arc<dyn Transport>, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            transport,
            timeout,
            retry,
            expected_points: FACEMESH_POINT_COUNT,
        }
    }

    pub fn with_expected_points(mut self, n: usize) -> Self {
        self.expected_points = n;
        self
    }
}

impl LandmarkProvider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn detect(&self, img: &Image, _origin: Option<&Path>) -> Result<LandmarkSet, LandmarkError> {
        let bytes = encode_image(img, Encoding::Png).map_err(|e| LandmarkError::ProviderUnavailable(e.to_string()))?;
        let req = OutboundRequest::post(
            &self.endpoint,
            RequestBody::Bytes {
                content_type: "image/png".into(),
                data: bytes,
            },
            self.timeout,
        );
        let resp = send_with_retry(self.transport.as_ref(), &req, self.retry)
            .map_err(|e| LandmarkError::ProviderUnavailable(e.to_string()))?;
        match resp.status {
            404 | 422 => Err(LandmarkError::NoFaceFound),
            s if !(200..300).contains(&s) => Err(LandmarkError::ProviderUnavailable(format!(
                "detector returned {s}: {}",
                resp.body_excerpt()
            ))),
            _ => {
                let text = String::from_utf8_lossy(&resp.body);
                LandmarkSet::from_json(&text, self.expected_points)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{InboundResponse, RecordingTransport};

    fn uniform_set(w: u32, h: u32) -> Vec<[f64; 3]> {
        (0..FACEMESH_POINT_COUNT)
            .map(|i| {
                let t = i as f64 / FACEMESH_POINT_COUNT as f64;
                let ang = t * 37.0;
                [0.5 + 0.3 * t * ang.cos(), 0.5 + 0.3 * t * ang.sin(), 0.0]
            })
            .map(|p| [p[0], p[1] * f64::from(w) / f64::from(w.max(h)), p[2]])
            .collect()
    }

    fn with_eyes(left: [f64; 2], right: [f64; 2], w: u32) -> LandmarkSet {
        let map = IndexMap::default();
        let mut pts = vec![[0.5, 0.5, 0.0]; FACEMESH_POINT_COUNT];
        for &i in &map.left_eye {
            pts[i] = [left[0], left[1], 0.0];
        }
        for &i in &map.right_eye {
            pts[i] = [right[0], right[1], 0.0];
        }
        LandmarkSet::new(pts, w, w).unwrap()
    }

    #[test]
    fn bundled_index_map_is_consistent() {
        let map = IndexMap::default();
        assert_eq!(map.point_count, 468);
        let inner = map.inner_face();
        let mut sorted = inner.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), inner.len());
        assert!(inner.len() > 50);
    }

    #[test]
    fn interocular_examples() {
        let map = IndexMap::default();
        let lms = with_eyes([0.6, 0.5], [0.4, 0.5], 100);
        assert!((interocular_distance(&lms, &map).unwrap() - 20.0).abs() < 1e-9);
        let doubled = lms.rescaled_to(200, 200);
        assert!((interocular_distance(&doubled, &map).unwrap() - 40.0).abs() < 1e-9);
        let same = with_eyes([0.5, 0.5], [0.5, 0.5], 100);
        assert!(matches!(interocular_distance(&same, &map), Err(LandmarkError::DegenerateFace(_))));
    }

    #[test]
    fn wrong_point_count_is_malformed() {
        let pts = vec![[0.5, 0.5, 0.0]; 467];
        assert!(matches!(LandmarkSet::new(pts, 10, 10), Err(LandmarkError::MalformedLandmarks(_))));
        let mut pts = vec![[0.5, 0.5, 0.0]; 468];
        pts[3][0] = 1.2;
        assert!(matches!(LandmarkSet::new(pts, 10, 10), Err(LandmarkError::MalformedLandmarks(_))));
    }

    #[test]
    fn sidecar_provider_paths_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("face.jpg");
        let img = Image::new(64, 64);
        let provider = SidecarProvider::default();
        assert!(matches!(
            provider.detect(&img, Some(&img_path)),
            Err(LandmarkError::ProviderUnavailable(_))
        ));

        let doc = LandmarkDocument {
            width: 64,
            height: 64,
            points: vec![[0.5, 0.5, 0.0]; 467],
        };
        std::fs::write(sidecar_path(&img_path), serde_json::to_string(&doc).unwrap()).unwrap();
        assert!(matches!(
            provider.detect(&img, Some(&img_path)),
            Err(LandmarkError::MalformedLandmarks(_))
        ));

        let good = LandmarkSet::new(uniform_set(64, 64), 64, 64).unwrap();
        std::fs::write(sidecar_path(&img_path), good.to_json()).unwrap();
        let got = detect_landmarks(&img, Some(&img_path), &provider).unwrap();
        assert_eq!(got, good);

        let wrong_size = Image::new(32, 64);
        assert!(matches!(
            detect_landmarks(&wrong_size, Some(&img_path), &provider),
            Err(LandmarkError::MalformedLandmarks(_))
        ));
    }

    #[test]
    fn sidecar_name_follows_stem() {
        assert_eq!(
            sidecar_path(Path::new("a/b/000001.jpg")),
            PathBuf::from("a/b/000001.landmarks.json")
        );
    }

    #[test]
    fn remote_provider_maps_statuses() {
        let good = LandmarkSet::new(uniform_set(8, 8), 8, 8).unwrap();
        let body = good.to_json().into_bytes();
        let ok = Arc::new(RecordingTransport::new(move |_| Ok(InboundResponse::ok("application/json", body.clone()))));
        let p = RemoteProvider::new("http://det.invalid", ok.clone(), Duration::from_secs(1), RetryPolicy::default());
        assert_eq!(p.detect(&Image::new(8, 8), None).unwrap(), good);
        assert_eq!(ok.requests()[0].payloads().len(), 1);

        let none = Arc::new(RecordingTransport::new(|_| Ok(InboundResponse::status(422, "no face"))));
        let p = RemoteProvider::new("http://det.invalid", none, Duration::from_secs(1), RetryPolicy::default());
        assert_eq!(p.detect(&Image::new(8, 8), None), Err(LandmarkError::NoFaceFound));

        let down = Arc::new(RecordingTransport::new(|_| Ok(InboundResponse::status(500, "down"))));
        let p = RemoteProvider::new(
            "http://det.invalid",
            down.clone(),
            Duration::from_secs(1),
            RetryPolicy {
                retries: 1,
                base_backoff: Duration::ZERO,
            },
        );
        assert!(matches!(p.detect(&Image::new(8, 8), None), Err(LandmarkError::ProviderUnavailable(_))));
        assert_eq!(down.count(), 2);
    }

    fn face_like() -> LandmarkSet {
        crate::synthetic::portrait_landmarks(&crate::synthetic::PortraitParams::default())
    }

    #[test]
    fn pose_delta_examples() {
        let map = IndexMap::default();
        let src = face_like();
        let d = estimate_pose_delta(&src, &src, &map).unwrap();
        assert_eq!(d.roll, 0.0);
        assert!(d.residual.abs() < 1e-12);

        let (w, h) = src.source_dimensions();
        let shift = [0.1 * f64::from(w), 0.05 * f64::from(h)];
        let moved = src.map_pixels(|p| [p[0] + shift[0], p[1] + shift[1]]).unwrap();
        let d = estimate_pose_delta(&src, &moved, &map).unwrap();
        assert!(d.roll.abs() < 1e-9);
        assert!(d.residual < 1e-9);
    }

    #[test]
    fn pose_delta_recovers_in_plane_rotation() {
        let map = IndexMap::default();
        let src = face_like();
        let c = centroid(&src.pixels(&map.inner_face()));
        let rot = |deg: f64| {
            let (s, co) = deg.to_radians().sin_cos();
            move |p: [f64; 2]| {
                let (x, y) = (p[0] - c[0], p[1] - c[1]);
                [c[0] + co * x - s * y, c[1] + s * x + co * y]
            }
        };
        let dst = src.map_pixels(rot(10.0)).unwrap();
        let fwd = estimate_pose_delta(&src, &dst, &map).unwrap();
        assert!((fwd.roll - 10.0).abs() < 0.5);
        assert!(fwd.residual < 1e-9);
        let back = estimate_pose_delta(&dst, &src, &map).unwrap();
        assert!((fwd.roll + back.roll).abs() < 1e-6);
    }

    #[test]
    fn similarity_fit_is_exact_for_similarity_pairs() {
        let src: Vec<[f64; 2]> = (0..30).map(|i| [f64::from(i * 7 % 13), f64::from(i * 5 % 11)]).collect();
        let truth = Similarity {
            a: 1.3 * 0.3f64.cos(),
            b: 1.3 * 0.3f64.sin(),
            tx: 4.0,
            ty: -2.5,
        };
        let dst: Vec<[f64; 2]> = src.iter().map(|p| truth.apply(*p)).collect();
        let fit = fit_similarity(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let m = fit.apply(*s);
            assert!((m[0] - d[0]).abs() < 1e-9 && (m[1] - d[1]).abs() < 1e-9);
        }
    }
}
