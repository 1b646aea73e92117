//! Quantitative evaluation: embeddings, alignment and identity scores,
//! Face-FID, the masked-vs-unmasked attribute inference benchmark, CelebA
//! attribute ingestion and report emission.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{encode_image, Encoding, Image};
use crate::transport::{send_with_retry, FormPart, OutboundRequest, RequestBody, RetryPolicy, Transport};

pub const REPORT_SCHEMA: &str = "privedit-report/1";
pub const PROMPT_TEMPLATE_VERSION: &str = "attr-prompt/1";
pub const YES_NO_TEMPLATE: &str = "Answer strictly yes or no: does the person in this image have <attribute>?";

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("zero-length vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least two samples per set, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("image id `{0}` has no ground-truth row")]
    UnknownImageId(String),
    #[error("attribute `{0}` is not a ground-truth column")]
    UnknownAttribute(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} values, found {actual}")]
    RowArityMismatch { line: usize, expected: usize, actual: usize },
    #[error("line {line}: value `{value}` is not -1 or 1")]
    NonBinaryValue { line: usize, value: String },
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("{abstained} of {total} queries abstained (more than half)")]
    AbstentionRateExceeded { abstained: usize, total: usize },
}

// ---------------------------------------------------------------------------
// Embeddings and scores

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Unit-norm image embedding.
    fn embed_image(&self, img: &Image) -> Result<Vec<f64>, EvaluationError>;
    /// Unit-norm text embedding in the same space.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, EvaluationError>;
}

fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>, EvaluationError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(EvaluationError::ZeroVector);
    }
    for x in &mut v {
        *x /= n;
    }
    Ok(v)
}

const STUB_FEATURES: usize = 64 + 3;

/// Deterministic, offline embedder: a perceptual hash of the image (8×8
/// block-luma sign bits plus coarsely quantized mean colour) projected
/// through a seeded Gaussian matrix. Text hashes into the same feature
/// space. Near-identical images map to identical vectors.
pub struct StubEmbedder {
    dim: usize,
    projection: Vec<f64>,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..dim * STUB_FEATURES).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { dim, projection }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, f: &[f64]) -> Result<Vec<f64>, EvaluationError> {
        let v = (0..self.dim)
            .map(|r| {
                self.projection[r * STUB_FEATURES..(r + 1) * STUB_FEATURES]
                    .iter()
                    .zip(f)
                    .map(|(p, x)| p * x)
                    .sum()
            })
            .collect();
        normalized(v)
    }

    fn image_features(img: &Image) -> Vec<f64> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut blocks = [0.0f64; 64];
        let mut counts = [0usize; 64];
        let mut mean = [0.0f64; 3];
        for y in 0..h {
            for x in 0..w {
                let p = img.pixel(x as u32, y as u32);
                let b = (y * 8 / h.max(1)) * 8 + x * 8 / w.max(1);
                blocks[b] += 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
                counts[b] += 1;
                for c in 0..3 {
                    mean[c] += f64::from(p[c]);
                }
            }
        }
        for (b, n) in blocks.iter_mut().zip(counts) {
            *b /= n.max(1) as f64;
        }
        let global = blocks.iter().sum::<f64>() / 64.0;
        let mut f: Vec<f64> = blocks.iter().map(|b| if *b >= global { 1.0 } else { -1.0 }).collect();
        let px = (w * h).max(1) as f64;
        for m in mean {
            let q = (m / px * 7.0).round();
            f.push(q / 7.0 * 2.0 - 1.0);
        }
        f
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(128, 0x5eed)
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn name(&self) -> &str {
        "stub"
    }

    fn embed_image(&self, img: &Image) -> Result<Vec<f64>, EvaluationError> {
        self.project(&Self::image_features(img))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, EvaluationError> {
        let digest = Sha256::digest(text.as_bytes());
        let f: Vec<f64> = (0..STUB_FEATURES)
            .map(|i| if digest[(i / 8) % 32] >> (i % 8) & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        self.project(&f)
    }
}

/// Content key for an image: SHA-256 over its 8-bit pixels and size.
pub fn image_key(img: &Image) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.to_rgb8().as_raw());
    h.finalize().into()
}

/// Lookup-table embedder for constructed fixtures.
#[derive(Default)]
pub struct TableEmbedder {
    images: HashMap<[u8; 32], Vec<f64>>,
    texts: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn with_image(mut self, img: &Image, v: Vec<f64>) -> Self {
        self.images.insert(image_key(img), v);
        self
    }

    pub fn with_text(mut self, text: &str, v: Vec<f64>) -> Self {
        self.texts.insert(text.to_string(), v);
        self
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn name(&self) -> &str {
        "table"
    }

    fn embed_image(&self, img: &Image) -> Result<Vec<f64>, EvaluationError> {
        let v = self.images.get(&image_key(img)).cloned();
        normalized(v.ok_or_else(|| EvaluationError::ProviderUnavailable("image not in table".into()))?)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, EvaluationError> {
        let v = self.texts.get(text).cloned();
        normalized(v.ok_or_else(|| EvaluationError::ProviderUnavailable(format!("text `{text}` not in table")))?)
    }
}

/// Scoring service client: `POST <base>/embed/image` (multipart `image`)
/// and `POST <base>/embed/text` (JSON `{"text": ...}`), both answering
/// `{"embedding": [...]}`.
pub struct RemoteEmbedder {
    base: String,
    transport: Arc<dyn Transport>,
    timeout: Duration,
    retry: RetryPolicy,
}

impl RemoteEmbedder {
    pub fn new(base: &str, transport: Arc<dyn Transport>, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            transport,
            timeout,
            retry,
        }
    }

    fn fetch(&self, req: OutboundRequest) -> Result<Vec<f64>, EvaluationError> {
        let resp = send_with_retry(self.transport.as_ref(), &req, self.retry)
            .map_err(|e| EvaluationError::ProviderUnavailable(e.to_string()))?;
        if !resp.is_success() {
            return Err(EvaluationError::ProviderUnavailable(format!(
                "HTTP {}: {}",
                resp.status,
                resp.body_excerpt()
            )));
        }
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f64>,
        }
        let r: Reply =
            serde_json::from_slice(&resp.body).map_err(|e| EvaluationError::ProviderUnavailable(e.to_string()))?;
        normalized(r.embedding)
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        "remote"
    }

    fn embed_image(&self, img: &Image) -> Result<Vec<f64>, EvaluationError> {
        let png = encode_image(img, Encoding::Png).map_err(|e| EvaluationError::ProviderUnavailable(e.to_string()))?;
        let body = RequestBody::Multipart(vec![FormPart::file("image", "image.png", "image/png", png)]);
        self.fetch(OutboundRequest::post(&format!("{}/embed/image", self.base), body, self.timeout))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, EvaluationError> {
        let body = RequestBody::Bytes {
            content_type: "application/json".into(),
            data: serde_json::to_vec(&serde_json::json!({ "text": text })).expect("json"),
        };
        self.fetch(OutboundRequest::post(&format!("{}/embed/text", self.base), body, self.timeout))
    }
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[−1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EvaluationError> {
    if a.len() != b.len() {
        return Err(EvaluationError::DimMismatch(a.len(), b.len()));
    }
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(EvaluationError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // sqrt(na·nb) rather than sqrt(na)·sqrt(nb): exact when a = ±b.
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

pub fn clip_score(img: &Image, prompt: &str, provider: &dyn EmbeddingProvider) -> Result<f64, EvaluationError> {
    cosine_similarity(&provider.embed_image(img)?, &provider.embed_text(prompt)?)
}

fn mean_and_covariance(set: &[Vec<f64>], eps: f64) -> (DVector<f64>, DMatrix<f64>) {
    let d = set[0].len();
    let n = set.len() as f64;
    let mut mu = DVector::zeros(d);
    for v in set {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in set {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    for i in 0..d {
        cov[(i, i)] += eps;
    }
    (mu, cov)
}

/// Symmetric PSD square root via eigendecomposition, negative eigenvalues
/// clipped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two sample sets (unbiased
/// covariance, `eps` added to each diagonal). `Tr (Σ_A Σ_B)^{1/2}` is
/// computed as `Tr (√Σ_A Σ_B √Σ_A)^{1/2}`, which is symmetric PSD.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>], eps: f64) -> Result<f64, EvaluationError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvaluationError::TooFewSamples(a.len(), b.len()));
    }
    let d = a[0].len();
    for v in a.iter().chain(b) {
        if v.len() != d {
            return Err(EvaluationError::DimMismatch(d, v.len()));
        }
    }
    let (mu_a, cov_a) = mean_and_covariance(a, eps);
    let (mu_b, cov_b) = mean_and_covariance(b, eps);
    let diff = &mu_a - &mu_b;
    let sa = psd_sqrt(&cov_a);
    let inner = &sa * &cov_b * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(value.max(0.0))
}

// ---------------------------------------------------------------------------
// Ground truth

/// Boolean attribute table keyed by filename.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGroundTruth {
    pub attributes: Vec<String>,
    pub rows: BTreeMap<String, Vec<bool>>,
}

impl AttributeGroundTruth {
    fn column(&self, attribute: &str) -> Result<usize, EvaluationError> {
        self.attributes
            .iter()
            .position(|a| a == attribute)
            .ok_or_else(|| EvaluationError::UnknownAttribute(attribute.to_string()))
    }

    /// Row for `id`, matched exactly or by file stem (`000001` ↔ `000001.jpg`).
    pub fn row(&self, id: &str) -> Option<&Vec<bool>> {
        self.rows.get(id).or_else(|| {
            self.rows
                .iter()
                .find(|(k, _)| std::path::Path::new(k).file_stem().and_then(|s| s.to_str()) == Some(id))
                .map(|(_, v)| v)
        })
    }

    pub fn get(&self, id: &str, attribute: &str) -> Result<bool, EvaluationError> {
        let col = self.column(attribute)?;
        let row = self.row(id).ok_or_else(|| EvaluationError::UnknownImageId(id.to_string()))?;
        Ok(row[col])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Parses the CelebA `list_attr_celeba.txt` layout: a row count, a line of
/// attribute names, then `filename v1 … vN` rows with each value −1 or 1.
pub fn ingest_celeba_attributes(doc: &str) -> Result<AttributeGroundTruth, EvaluationError> {
    let mut lines = doc.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, count_line) = lines.next().ok_or_else(|| EvaluationError::MalformedHeader("empty document".into()))?;
    let declared: usize = count_line
        .trim()
        .parse()
        .map_err(|_| EvaluationError::MalformedHeader(format!("first line `{}` is not a row count", count_line.trim())))?;
    let (_, names_line) = lines
        .next()
        .ok_or_else(|| EvaluationError::MalformedHeader("missing attribute-name line".into()))?;
    let attributes: Vec<String> = names_line.split_whitespace().map(str::to_string).collect();
    if attributes.is_empty() {
        return Err(EvaluationError::MalformedHeader("no attribute names".into()));
    }
    let mut rows = BTreeMap::new();
    for (idx, line) in lines {
        let mut fields = line.split_whitespace();
        let name = fields.next().expect("non-empty line").to_string();
        let values: Vec<&str> = fields.collect();
        if values.len() != attributes.len() {
            return Err(EvaluationError::RowArityMismatch {
                line: idx + 1,
                expected: attributes.len(),
                actual: values.len(),
            });
        }
        let parsed = values
            .iter()
            .map(|v| match *v {
                "1" => Ok(true),
                "-1" => Ok(false),
                other => Err(EvaluationError::NonBinaryValue {
                    line: idx + 1,
                    value: other.to_string(),
                }),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        rows.insert(name, parsed);
    }
    if rows.len() != declared {
        return Err(EvaluationError::MalformedHeader(format!(
            "declared {declared} rows, found {}",
            rows.len()
        )));
    }
    Ok(AttributeGroundTruth { attributes, rows })
}

// ---------------------------------------------------------------------------
// Attribute metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// Ground-truth column the prediction refers to.
    pub attribute: String,
    /// `None` is an abstention.
    pub predicted: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Abstentions on a negative truth: wrong, but neither FP nor TN.
    pub abstain_neg: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: bool, predicted: Option<bool>) {
        match (predicted, truth) {
            (Some(true), true) => self.tp += 1,
            (Some(true), false) => self.fp += 1,
            (Some(false), true) | (None, true) => self.fn_ += 1,
            (Some(false), false) => self.tn += 1,
            (None, false) => self.abstain_neg += 1,
        }
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn + self.abstain_neg
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.n()),
            precision,
            recall,
            f1,
            n: self.n(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
}

/// Per-attribute metrics in attribute-name order.
pub fn attribute_metrics(
    preds: &[Prediction],
    truth: &AttributeGroundTruth,
) -> Result<BTreeMap<String, Metrics>, EvaluationError> {
    let mut tables: BTreeMap<String, Confusion> = BTreeMap::new();
    for p in preds {
        let t = truth.get(&p.id, &p.attribute)?;
        tables.entry(p.attribute.clone()).or_default().record(t, p.predicted);
    }
    Ok(tables.into_iter().map(|(k, c)| (k, c.metrics())).collect())
}

// ---------------------------------------------------------------------------
// Attribute benchmark

/// One attribute query: how to ask, how to read the answer, and which
/// ground-truth column it maps to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    /// Display name, e.g. `Brown Eyes`.
    pub name: String,
    pub truth_column: String,
    /// The truth column states the opposite of the attribute (beard ↔ No_Beard).
    pub negate: bool,
    pub question: String,
    /// Accepted answer words: (positive, negative). `yes`/`no` by default.
    pub answers: (String, String),
}

impl AttributeSpec {
    pub fn yes_no(name: &str, phrase: &str, truth_column: &str, negate: bool) -> Self {
        Self::yes_no_with(YES_NO_TEMPLATE, name, phrase, truth_column, negate)
    }

    /// Yes/no question built from `template`, whose `<attribute>` is replaced
    /// by `phrase`.
    pub fn yes_no_with(template: &str, name: &str, phrase: &str, truth_column: &str, negate: bool) -> Self {
        Self {
            name: name.to_string(),
            truth_column: truth_column.to_string(),
            negate,
            question: template.replace("<attribute>", phrase),
            answers: ("yes".into(), "no".into()),
        }
    }

    /// Parses `Name|phrase|TruthColumn` (prefix the column with `!` to negate).
    pub fn from_compact(template: &str, spec: &str) -> Option<Self> {
        let parts: Vec<&str> = spec.split('|').map(str::trim).collect();
        let [name, phrase, column] = parts.as_slice() else {
            return None;
        };
        let (column, negate) = match column.strip_prefix('!') {
            Some(c) => (c, true),
            None => (*column, false),
        };
        Some(Self::yes_no_with(template, name, phrase, column, negate))
    }

    pub fn categorical(name: &str, question: &str, truth_column: &str, positive: &str, negative: &str) -> Self {
        Self {
            name: name.to_string(),
            truth_column: truth_column.to_string(),
            negate: false,
            question: question.to_string(),
            answers: (positive.to_string(), negative.to_string()),
        }
    }

    /// Whether the attribute holds for `id`, in the sense of the question.
    pub fn truth(&self, truth: &AttributeGroundTruth, id: &str) -> Result<bool, EvaluationError> {
        Ok(truth.get(id, &self.truth_column)? != self.negate)
    }

    /// Case-insensitive whole-word match; `None` when neither or both
    /// answer words appear. `true` means the positive answer.
    pub fn parse(&self, answer: &str) -> Option<bool> {
        let lower = answer.to_lowercase();
        let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        let pos = words.contains(&self.answers.0.as_str());
        let neg = words.contains(&self.answers.1.as_str());
        match (pos, neg) {
            (true, false) => Some(true),
            (false, true) => Some(false),
            _ => None,
        }
    }
}

/// Default attribute list: age group, gender, eye colour, two facial-hair
/// attributes and lipstick. `Brown_Eyes` is not a CelebA column and must be
/// supplied by a supplementary truth file.
pub fn default_attributes() -> Vec<AttributeSpec> {
    default_attributes_with(YES_NO_TEMPLATE)
}

/// [`default_attributes`] with the yes/no questions built from `template`.
pub fn default_attributes_with(template: &str) -> Vec<AttributeSpec> {
    vec![
        AttributeSpec::categorical(
            "Age",
            "Answer strictly with one word, young or old: which age group does the person in this image belong to?",
            "Young",
            "young",
            "old",
        ),
        AttributeSpec::yes_no_with(template, "Mustache", "a mustache", "Mustache", false),
        AttributeSpec::yes_no_with(template, "Beard", "a beard", "No_Beard", true),
        AttributeSpec::yes_no_with(template, "Brown Eyes", "brown eyes", "Brown_Eyes", false),
        AttributeSpec::categorical(
            "Gender",
            "Answer strictly with one word, male or female: what is the gender of the person in this image?",
            "Male",
            "male",
            "female",
        ),
        AttributeSpec::yes_no_with(template, "Lipstick", "lipstick on", "Wearing_Lipstick", false),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Unmasked,
    Masked,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Unmasked => "unmasked",
            Condition::Masked => "masked",
        }
    }
}

/// Everything an oracle may look at. `condition` is bookkeeping for
/// scripted stubs; remote oracles never transmit it.
pub struct Query<'a> {
    pub image_id: &'a str,
    pub condition: Condition,
    pub attribute: &'a AttributeSpec,
    pub image: &'a Image,
}

pub trait AttributeOracle: Send + Sync {
    fn name(&self) -> &str;
    /// Free-text answer to `query.attribute.question` about `query.image`.
    fn ask(&self, query: &Query<'_>) -> Result<String, EvaluationError>;
}

type Script = dyn Fn(&Query<'_>) -> String + Send + Sync;

/// Oracle driven by a closure.
pub struct ScriptedOracle {
    name: String,
    script: Box<Script>,
}

impl ScriptedOracle {
    pub fn new(name: &str, script: impl Fn(&Query<'_>) -> String + Send + Sync + 'static) -> Self {
        Self {
            name: name.to_string(),
            script: Box::new(script),
        }
    }
}

impl AttributeOracle for ScriptedOracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn ask(&self, query: &Query<'_>) -> Result<String, EvaluationError> {
        Ok((self.script)(query))
    }
}

/// Replays recorded answers. Keys are what the oracle was shown: `<id>` for
/// the unmasked image and `<id>_mask` for the masked one, each mapping
/// attribute display names to the answer text. Missing entries abstain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOracle {
    pub model: String,
    pub answers: BTreeMap<String, BTreeMap<String, String>>,
}

impl ReplayOracle {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn key(image_id: &str, condition: Condition) -> String {
        match condition {
            Condition::Unmasked => image_id.to_string(),
            Condition::Masked => format!("{image_id}_mask"),
        }
    }
}

impl AttributeOracle for ReplayOracle {
    fn name(&self) -> &str {
        &self.model
    }

    fn ask(&self, query: &Query<'_>) -> Result<String, EvaluationError> {
        Ok(self
            .answers
            .get(&Self::key(query.image_id, query.condition))
            .and_then(|m| m.get(&query.attribute.name))
            .cloned()
            .unwrap_or_default())
    }
}

/// VLM client: multipart `image` + `question` (+ `model`), answering plain
/// text or JSON `{"answer": ...}`.
pub struct RemoteOracle {
    model: String,
    endpoint: String,
    token: Option<String>,
    transport: Arc<dyn Transport>,
    timeout: Duration,
    retry: RetryPolicy,
    limiter: crate::transport::RateLimiter,
}

impl RemoteOracle {
    pub fn new(model: &str, endpoint: &str, transport: Arc<dyn Transport>, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            model: model.to_string(),
            endpoint: endpoint.to_string(),
            token: None,
            transport,
            timeout,
            retry,
            limiter: crate::transport::RateLimiter::per_minute(0),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_rate_limit(mut self, per_minute: u32) -> Self {
        self.limiter = crate::transport::RateLimiter::per_minute(per_minute);
        self
    }
}

impl AttributeOracle for RemoteOracle {
    fn name(&self) -> &str {
        &self.model
    }

    fn ask(&self, query: &Query<'_>) -> Result<String, EvaluationError> {
        let png = encode_image(query.image, Encoding::Png).map_err(|e| EvaluationError::ProviderUnavailable(e.to_string()))?;
        let body = RequestBody::Multipart(vec![
            FormPart::file("image", "image.png", "image/png", png),
            FormPart::text("question", &query.attribute.question),
            FormPart::text("model", &self.model),
        ]);
        let mut req = OutboundRequest::post(&self.endpoint, body, self.timeout);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        self.limiter.acquire();
        let resp = send_with_retry(self.transport.as_ref(), &req, self.retry)
            .map_err(|e| EvaluationError::ProviderUnavailable(e.to_string()))?;
        if !resp.is_success() {
            return Err(EvaluationError::ProviderUnavailable(format!("HTTP {}", resp.status)));
        }
        let text = String::from_utf8_lossy(&resp.body).into_owned();
        match serde_json::from_str::<serde_json::Value>(&text) {
            Ok(v) => Ok(v.get("answer").and_then(|a| a.as_str()).map_or(text.clone(), str::to_string)),
            Err(_) => Ok(text),
        }
    }
}

pub struct ImagePair {
    pub id: String,
    pub unmasked: Image,
    pub masked: Image,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchmarkOptions {
    /// Extra attempts per query after an oracle error.
    pub retries: u32,
    pub parallelism: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            retries: 1,
            parallelism: 4,
        }
    }
}

/// Mean and sample standard deviation across models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub attribute: String,
    pub condition: Condition,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Queries per model.
    pub n: usize,
    pub models: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub rows: Vec<AttributeRow>,
    pub per_model: BTreeMap<String, Vec<AttributeRow>>,
    pub abstained: usize,
    pub total: usize,
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Queries every oracle about every (image, attribute, condition), scores
/// per model, then reports mean ± std across models. Rows follow the
/// `attributes` order, unmasked before masked.
pub fn run_attribute_benchmark(
    pairs: &[ImagePair],
    attributes: &[AttributeSpec],
    oracles: &[&dyn AttributeOracle],
    truth: &AttributeGroundTruth,
    opts: &BenchmarkOptions,
) -> Result<BenchmarkOutcome, EvaluationError> {
    for p in pairs {
        if truth.row(&p.id).is_none() {
            return Err(EvaluationError::UnknownImageId(p.id.clone()));
        }
    }
    for a in attributes {
        truth.column(&a.truth_column)?;
    }
    let mut jobs = Vec::new();
    for (m, _) in oracles.iter().enumerate() {
        for (i, _) in pairs.iter().enumerate() {
            for (a, _) in attributes.iter().enumerate() {
                for cond in [Condition::Unmasked, Condition::Masked] {
                    jobs.push((m, i, a, cond));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| EvaluationError::ProviderUnavailable(e.to_string()))?;
    let answers: Vec<Option<bool>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, i, a, cond)| {
                let pair = &pairs[i];
                let query = Query {
                    image_id: &pair.id,
                    condition: cond,
                    attribute: &attributes[a],
                    image: if cond == Condition::Masked { &pair.masked } else { &pair.unmasked },
                };
                for _ in 0..=opts.retries {
                    if let Ok(text) = oracles[m].ask(&query) {
                        return attributes[a].parse(&text);
                    }
                }
                None
            })
            .collect()
    });
    let total = answers.len();
    let abstained = answers.iter().filter(|a| a.is_none()).count();
    if total > 0 && abstained * 2 > total {
        return Err(EvaluationError::AbstentionRateExceeded { abstained, total });
    }

    let mut tables: BTreeMap<(usize, usize, Condition), Confusion> = BTreeMap::new();
    for (&(m, i, a, cond), ans) in jobs.iter().zip(&answers) {
        let t = attributes[a].truth(truth, &pairs[i].id)?;
        tables.entry((m, a, cond)).or_default().record(t, *ans);
    }

    let mut per_model = BTreeMap::new();
    for (m, o) in oracles.iter().enumerate() {
        let mut rows = Vec::new();
        for (a, spec) in attributes.iter().enumerate() {
            for cond in [Condition::Unmasked, Condition::Masked] {
                let met = tables.get(&(m, a, cond)).copied().unwrap_or_default().metrics();
                rows.push(AttributeRow {
                    attribute: spec.name.clone(),
                    condition: cond,
                    accuracy: met.accuracy,
                    precision: met.precision,
                    recall: met.recall,
                    f1: met.f1,
                    n: met.n,
                    models: 1,
                    std: None,
                });
            }
        }
        per_model.insert(o.name().to_string(), rows);
    }

    let mut rows = Vec::new();
    let models: Vec<&Vec<AttributeRow>> = per_model.values().collect();
    if let Some(first) = models.first() {
        for k in 0..first.len() {
            let col = |f: fn(&AttributeRow) -> f64| -> Vec<f64> { models.iter().map(|r| f(&r[k])).collect() };
            let (acc, pre, rec, f1) = (col(|r| r.accuracy), col(|r| r.precision), col(|r| r.recall), col(|r| r.f1));
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            rows.push(AttributeRow {
                attribute: first[k].attribute.clone(),
                condition: first[k].condition,
                accuracy: mean(&acc),
                precision: mean(&pre),
                recall: mean(&rec),
                f1: mean(&f1),
                n: first[k].n,
                models: models.len(),
                std: Some(Spread {
                    accuracy: sample_std(&acc),
                    precision: sample_std(&pre),
                    recall: sample_std(&rec),
                    f1: sample_std(&f1),
                }),
            });
        }
    }
    Ok(BenchmarkOutcome {
        rows,
        per_model,
        abstained,
        total,
    })
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub backend: String,
    pub provider: String,
    pub mask_ratio: f64,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Per-image scores. `face_fid_ref` is the squared embedding distance
/// between final and original (the mean term of a one-sample Fréchet
/// distance), since FID proper needs a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub id: String,
    pub face_fid_ref: f64,
    pub cosine: f64,
    pub clip_orig: f64,
    pub clip_gpt: f64,
    pub clip_ours: f64,
}

/// One line of the method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub face_fid: f64,
    pub cosine: f64,
    pub clip: f64,
    /// Biometric preservation: `Some(true)` ✓, `Some(false)` ✗, `None` NA.
    pub privacy: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeF1 {
    pub attribute: String,
    pub f1: f64,
}

/// One line of the mask-ratio ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask_ratio: f64,
    pub face_fid: f64,
    pub cosine: f64,
    pub clip: f64,
    pub f1: Vec<AttributeF1>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub metadata: ReportMetadata,
    #[serde(default)]
    pub images: Vec<ImageRow>,
    #[serde(default)]
    pub methods: Vec<MethodRow>,
    #[serde(default)]
    pub ablation: Vec<AblationRow>,
    #[serde(default)]
    pub attributes: Vec<AttributeRow>,
}

impl MetricsReport {
    pub fn new(metadata: ReportMetadata) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            metadata,
            images: Vec::new(),
            methods: Vec::new(),
            ablation: Vec::new(),
            attributes: Vec::new(),
        }
    }

    /// Checks finiteness and ranges of every metric.
    pub fn validate(&self) -> Result<(), String> {
        let finite = |name: &str, v: f64| if v.is_finite() { Ok(()) } else { Err(format!("{name} is not finite")) };
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} = {v} outside [0, 1]"))
            }
        };
        let cos = |name: &str, v: f64| {
            if (-1.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} = {v} outside [-1, 1]"))
            }
        };
        for r in &self.images {
            finite("face_fid_ref", r.face_fid_ref)?;
            cos("cosine", r.cosine)?;
            cos("clip_orig", r.clip_orig)?;
            cos("clip_gpt", r.clip_gpt)?;
            cos("clip_ours", r.clip_ours)?;
        }
        for r in &self.methods {
            finite("face_fid", r.face_fid)?;
            cos("cosine", r.cosine)?;
            cos("clip", r.clip)?;
        }
        for r in &self.ablation {
            finite("face_fid", r.face_fid)?;
            finite("mask_ratio", r.mask_ratio)?;
            for a in &r.f1 {
                unit("f1", a.f1)?;
            }
        }
        for r in &self.attributes {
            unit("accuracy", r.accuracy)?;
            unit("precision", r.precision)?;
            unit("recall", r.recall)?;
            unit("f1", r.f1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown report format `{other}` (json | markdown)")),
        }
    }
}

pub fn parse_report(json: &str) -> Result<MetricsReport, serde_json::Error> {
    serde_json::from_str(json)
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    out.push_str(&line(header));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in rows {
        out.push_str(&line(r));
    }
}

fn render_markdown(r: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# PrivEdit metrics report\n");
    let _ = writeln!(
        out,
        "backend: {} · provider: {} · mask ratio: {:.2} · {}\n",
        r.metadata.backend, r.metadata.provider, r.metadata.mask_ratio, r.metadata.timestamp
    );
    for n in &r.metadata.notes {
        let _ = writeln!(out, "- {n}");
    }
    if !r.metadata.notes.is_empty() {
        out.push('\n');
    }
    let s = |v: &str| v.to_string();
    if !r.methods.is_empty() {
        out.push_str("## Method comparison\n\n");
        let rows: Vec<Vec<String>> = r
            .methods
            .iter()
            .map(|m| {
                vec![
                    m.method.clone(),
                    format!("{:.2}", m.face_fid),
                    format!("{:.2}", m.cosine),
                    format!("{:.2}", m.clip),
                    match m.privacy {
                        Some(true) => s("✓"),
                        Some(false) => s("✗"),
                        None => s("NA"),
                    },
                ]
            })
            .collect();
        table(&mut out, &[s("Method"), s("Face-FID"), s("Cosine"), s("CLIP"), s("Privacy")], &rows);
        out.push('\n');
    }
    if !r.ablation.is_empty() {
        out.push_str("## Mask ratio ablation\n\n");
        let mut header = vec![s("Mask Ratio"), s("Face-FID"), s("Cosine"), s("CLIP")];
        header.extend(r.ablation[0].f1.iter().map(|a| a.attribute.clone()));
        let rows: Vec<Vec<String>> = r
            .ablation
            .iter()
            .map(|a| {
                let mut row = vec![
                    format!("{:.2}", a.mask_ratio),
                    format!("{:.2}", a.face_fid),
                    format!("{:.2}", a.cosine),
                    format!("{:.2}", a.clip),
                ];
                for name in &header[4..] {
                    let f = a.f1.iter().find(|x| &x.attribute == name).map(|x| x.f1);
                    row.push(f.map_or_else(|| s("-"), |v| format!("{v:.2}")));
                }
                row
            })
            .collect();
        table(&mut out, &header, &rows);
        out.push('\n');
    }
    if !r.attributes.is_empty() {
        out.push_str("## Attribute inference (masked vs unmasked)\n\n");
        let pm = |v: f64, sd: Option<f64>| match sd {
            Some(sd) => format!("{v:.2} ± {sd:.2}"),
            None => format!("{v:.2}"),
        };
        let rows: Vec<Vec<String>> = r
            .attributes
            .iter()
            .map(|a| {
                vec![
                    a.attribute.clone(),
                    s(a.condition.as_str()),
                    pm(a.accuracy, a.std.map(|x| x.accuracy)),
                    pm(a.precision, a.std.map(|x| x.precision)),
                    pm(a.recall, a.std.map(|x| x.recall)),
                    pm(a.f1, a.std.map(|x| x.f1)),
                    a.n.to_string(),
                ]
            })
            .collect();
        table(
            &mut out,
            &[s("Attribute"), s("Condition"), s("Accuracy"), s("Precision"), s("Recall"), s("F1"), s("n")],
            &rows,
        );
        out.push('\n');
    }
    if !r.images.is_empty() {
        out.push_str("## Per-image scores\n\n");
        let rows: Vec<Vec<String>> = r
            .images
            .iter()
            .map(|i| {
                vec![
                    i.id.clone(),
                    format!("{:.4}", i.face_fid_ref),
                    format!("{:.4}", i.cosine),
                    format!("{:.4}", i.clip_orig),
                    format!("{:.4}", i.clip_gpt),
                    format!("{:.4}", i.clip_ours),
                ]
            })
            .collect();
        table(
            &mut out,
            &[s("Image"), s("Face-FID ref"), s("Cosine"), s("CLIP orig"), s("CLIP gpt"), s("CLIP ours")],
            &rows,
        );
    }
    out
}
