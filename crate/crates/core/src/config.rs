//! Flat, typed pipeline configuration.
//!
//! The file is TOML; nested tables and dotted keys are equivalent, so
//! `[mask] ratio = 0.8` and `"mask.ratio" = 0.8` set the same key. Every key
//! can be overridden by an environment variable named `PRIVEDIT_` plus the
//! key upper-cased with dots as underscores (`PRIVEDIT_MASK_RATIO`).
//! Credentials are never read from the file: `*.auth_env` names the
//! variable that holds them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backend::{BackendConfig, BackendKind};
use crate::evaluation::{ReportFormat, YES_NO_TEMPLATE};
use crate::imaging::Encoding;
use crate::masking::MaskConfig;
use crate::reintegration::{BlendMode, ReintegrationConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: {message}")]
    InvalidValue { key: String, message: String },
}

/// Every recognised key with a one-line description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("workspace", "root of the input_og_imgs/ … ours_edited/ layout"),
    ("mask.ratio", "hull scale about its centroid, (0, 2]"),
    ("mask.hull_expansion", "extra hull scale applied on top of the ratio"),
    ("mask.feather_sigma", "outward feathering sigma, pixels"),
    ("mask.fill", "fill constant c as [r, g, b] in [0, 1]"),
    ("mask.edge_overlay", "draw context-only Canny edges across the mask rim"),
    ("mask.edge_low", "Canny low threshold"),
    ("mask.edge_high", "Canny high threshold"),
    ("reintegration.tau_roll", "largest accepted in-plane rotation, degrees"),
    ("reintegration.max_residual", "largest accepted normalized similarity residual"),
    ("reintegration.blend", "poisson | alpha-only"),
    ("reintegration.tol", "CG relative residual tolerance"),
    ("reintegration.max_iter", "CG iteration cap (0 = ceil(10·sqrt(n)))"),
    ("reintegration.jacobi", "Jacobi-preconditioned CG"),
    ("reintegration.mixed_gradients", "per-edge stronger of source/destination gradients"),
    ("backend.kind", "http | mock-identity | mock-recolor | mock-headshot"),
    ("backend.endpoint", "URL of the http editing endpoint"),
    ("backend.auth_env", "environment variable holding the bearer token"),
    ("backend.timeout_ms", "per-request timeout"),
    ("backend.retries", "extra attempts after a transient failure"),
    ("backend.rate_per_min", "request budget per minute (0 = unlimited)"),
    ("backend.max_concurrency", "in-flight request cap"),
    ("backend.upload_format", "png | jpeg encoding of the outbound masked image"),
    ("backend.recolor_delta", "per-channel delta of mock-recolor"),
    ("backend.backdrop", "backdrop image of mock-headshot"),
    ("landmarks.provider", "sidecar | remote"),
    ("landmarks.endpoint", "URL of the remote detector"),
    ("landmarks.timeout_ms", "remote detector timeout"),
    ("landmarks.retries", "remote detector retries"),
    ("landmarks.edited", "auto | source | detect: landmarks of the edited image"),
    ("landmarks.index_map", "TOML file overriding the bundled index map"),
    ("embedding.provider", "none | stub | remote"),
    ("embedding.endpoint", "base URL of the scoring service"),
    ("embedding.dim", "stub embedding dimension"),
    ("embedding.seed", "stub projection seed"),
    ("embedding.timeout_ms", "scoring service timeout"),
    ("embedding.retries", "scoring service retries"),
    ("oracle.endpoint", "URL of the VLM question endpoint"),
    ("oracle.models", "model names queried by the attribute benchmark"),
    ("oracle.auth_env", "environment variable holding the VLM token"),
    ("oracle.timeout_ms", "VLM timeout"),
    ("oracle.retries", "VLM retries before a query abstains"),
    ("oracle.rate_per_min", "VLM request budget per minute (0 = unlimited)"),
    ("oracle.parallelism", "concurrent benchmark queries"),
    ("oracle.prompt_template", "yes/no question template containing <attribute>"),
    ("oracle.extra_attributes", "additional attributes as \"Name|phrase|TruthColumn\""),
    ("pipeline.probe", "run the reconstruction probe"),
    ("pipeline.jpeg_quality", "quality of the JPEG artifacts"),
    ("pipeline.workers", "images processed concurrently in batch mode"),
    ("report.format", "json | markdown"),
    ("service.bind", "listen address of the local service"),
    ("service.port", "listen port of the local service"),
    ("service.allow_non_loopback", "permit binding a non-loopback address"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Sidecar,
    Remote,
}

/// Where the edited image's landmarks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditedLandmarks {
    /// Ask the provider; fall back to the source landmarks only when the
    /// backend is a geometry-preserving mock.
    Auto,
    /// Reuse the source landmarks, rescaled to the edited frame.
    Source,
    /// Always ask the provider.
    Detect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkConfig {
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub edited: EditedLandmarks,
    pub index_map: Option<PathBuf>,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Sidecar,
            endpoint: None,
            timeout_ms: 10_000,
            retries: 2,
            edited: EditedLandmarks::Auto,
            index_map: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    None,
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingKind,
    pub endpoint: Option<String>,
    pub dim: usize,
    pub seed: u64,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingKind::Stub,
            endpoint: None,
            dim: 128,
            seed: 0x5eed,
            timeout_ms: 30_000,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub endpoint: Option<String>,
    pub models: Vec<String>,
    pub auth_env: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub rate_per_min: u32,
    pub parallelism: usize,
    pub prompt_template: String,
    pub extra_attributes: Vec<String>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            models: Vec::new(),
            auth_env: None,
            timeout_ms: 60_000,
            retries: 1,
            rate_per_min: 0,
            parallelism: 4,
            prompt_template: YES_NO_TEMPLATE.to_string(),
            extra_attributes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub allow_non_loopback: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8787,
            allow_non_loopback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub workspace: PathBuf,
    pub mask: MaskConfig,
    pub reintegration: ReintegrationConfig,
    pub backend: BackendConfig,
    pub upload_format: Encoding,
    pub landmarks: LandmarkConfig,
    pub embedding: EmbeddingConfig,
    pub oracle: OracleConfig,
    pub probe_enabled: bool,
    pub jpeg_quality: u8,
    pub workers: usize,
    pub report_format: ReportFormat,
    pub service: ServiceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("."),
            mask: MaskConfig::default(),
            reintegration: ReintegrationConfig::default(),
            backend: BackendConfig::default(),
            upload_format: Encoding::Png,
            landmarks: LandmarkConfig::default(),
            embedding: EmbeddingConfig::default(),
            oracle: OracleConfig::default(),
            probe_enabled: false,
            jpeg_quality: 95,
            workers: 1,
            report_format: ReportFormat::Json,
            service: ServiceConfig::default(),
        }
    }
}

/// A raw value before it is typed against its key.
enum Raw {
    Toml(toml::Value),
    Env(String),
}

impl Raw {
    fn describe(&self) -> String {
        match self {
            Raw::Toml(v) => v.to_string(),
            Raw::Env(s) => format!("\"{s}\""),
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn as_string(key: &str, raw: &Raw) -> Result<String, ConfigError> {
    match raw {
        Raw::Toml(toml::Value::String(s)) => Ok(s.clone()),
        Raw::Env(s) => Ok(s.clone()),
        other => Err(invalid(key, format!("expected a string, got {}", other.describe()))),
    }
}

fn as_f64(key: &str, raw: &Raw) -> Result<f64, ConfigError> {
    match raw {
        Raw::Toml(toml::Value::Float(f)) => Ok(*f),
        Raw::Toml(toml::Value::Integer(i)) => Ok(*i as f64),
        Raw::Env(s) => s.trim().parse().map_err(|_| invalid(key, format!("`{s}` is not a number"))),
        other => Err(invalid(key, format!("expected a number, got {}", other.describe()))),
    }
}

fn as_u64(key: &str, raw: &Raw) -> Result<u64, ConfigError> {
    match raw {
        Raw::Toml(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
        Raw::Env(s) => s
            .trim()
            .parse()
            .map_err(|_| invalid(key, format!("`{s}` is not a non-negative integer"))),
        other => Err(invalid(key, format!("expected a non-negative integer, got {}", other.describe()))),
    }
}

fn as_bool(key: &str, raw: &Raw) -> Result<bool, ConfigError> {
    match raw {
        Raw::Toml(toml::Value::Boolean(b)) => Ok(*b),
        Raw::Env(s) => match s.trim().to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" | "on" => Ok(true),
            "0" | "false" | "no" | "off" => Ok(false),
            _ => Err(invalid(key, format!("`{s}` is not a boolean"))),
        },
        other => Err(invalid(key, format!("expected a boolean, got {}", other.describe()))),
    }
}

fn as_strings(key: &str, raw: &Raw) -> Result<Vec<String>, ConfigError> {
    match raw {
        Raw::Toml(toml::Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s.clone()),
                other => Err(invalid(key, format!("expected strings, got {other}"))),
            })
            .collect(),
        Raw::Env(s) => Ok(s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()),
        other => Err(invalid(key, format!("expected an array of strings, got {}", other.describe()))),
    }
}

fn as_triple(key: &str, raw: &Raw) -> Result<[f32; 3], ConfigError> {
    let values: Vec<f64> = match raw {
        Raw::Toml(toml::Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                toml::Value::Float(f) => Ok(*f),
                toml::Value::Integer(i) => Ok(*i as f64),
                other => Err(invalid(key, format!("expected numbers, got {other}"))),
            })
            .collect::<Result<_, _>>()?,
        Raw::Env(s) => s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| invalid(key, format!("`{s}` is not r,g,b"))))
            .collect::<Result<_, _>>()?,
        other => return Err(invalid(key, format!("expected [r, g, b], got {}", other.describe()))),
    };
    match values.as_slice() {
        [r, g, b] => Ok([*r as f32, *g as f32, *b as f32]),
        _ => Err(invalid(key, format!("expected 3 components, got {}", values.len()))),
    }
}

fn optional(s: String) -> Option<String> {
    (!s.is_empty()).then_some(s)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Environment variable name for `key`.
pub fn env_var_for(key: &str) -> String {
    format!("PRIVEDIT_{}", key.to_ascii_uppercase().replace('.', "_"))
}

impl PipelineConfig {
    /// Parses a TOML document (no environment overrides).
    pub fn from_toml_str(doc: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut cfg = Self::default();
        for (k, v) in flat {
            cfg.set(&k, Raw::Toml(v))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (when given), then applies overrides from `env`.
    pub fn load_with_env(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let doc = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                let table: toml::Table = toml::from_str(&doc).map_err(|e| ConfigError::Parse(format!("{}: {e}", p.display())))?;
                let mut flat = BTreeMap::new();
                flatten("", &table, &mut flat);
                let mut cfg = Self::default();
                for (k, v) in flat {
                    cfg.set(&k, Raw::Toml(v))?;
                }
                cfg
            }
            None => Self::default(),
        };
        let env: BTreeMap<String, String> = env.into_iter().collect();
        for (key, _) in KEYS {
            if let Some(v) = env.get(&env_var_for(key)) {
                cfg.set(key, Raw::Env(v.clone()))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (when given) with overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_with_env(path, std::env::vars())
    }

    /// Sets one key from its string form, as an environment override would.
    pub fn set_str(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set(key, Raw::Env(value.to_string()))
    }

    fn set(&mut self, key: &str, raw: Raw) -> Result<(), ConfigError> {
        let k = key;
        match key {
            "workspace" => self.workspace = PathBuf::from(as_string(k, &raw)?),
            "mask.ratio" => self.mask.mask_ratio = as_f64(k, &raw)?,
            "mask.hull_expansion" => self.mask.hull_expansion = as_f64(k, &raw)?,
            "mask.feather_sigma" => self.mask.feather_sigma = as_f64(k, &raw)? as f32,
            "mask.fill" => self.mask.fill = as_triple(k, &raw)?,
            "mask.edge_overlay" => self.mask.edge_overlay = as_bool(k, &raw)?,
            "mask.edge_low" => self.mask.edge_low = as_f64(k, &raw)? as f32,
            "mask.edge_high" => self.mask.edge_high = as_f64(k, &raw)? as f32,
            "reintegration.tau_roll" => self.reintegration.tau_roll = as_f64(k, &raw)?,
            "reintegration.max_residual" => self.reintegration.max_residual = as_f64(k, &raw)?,
            "reintegration.blend" => {
                self.reintegration.blend = as_string(k, &raw)?
                    .trim()
                    .parse::<BlendMode>()
                    .map_err(|e| invalid(k, e))?
            }
            "reintegration.tol" => self.reintegration.solver.tol = as_f64(k, &raw)?,
            "reintegration.max_iter" => {
                let n = as_u64(k, &raw)? as usize;
                self.reintegration.solver.max_iter = (n > 0).then_some(n);
            }
            "reintegration.jacobi" => self.reintegration.solver.jacobi = as_bool(k, &raw)?,
            "reintegration.mixed_gradients" => self.reintegration.mixed_gradients = as_bool(k, &raw)?,
            "backend.kind" => {
                self.backend.kind = as_string(k, &raw)?.trim().parse::<BackendKind>().map_err(|e| invalid(k, e))?
            }
            "backend.endpoint" => self.backend.endpoint = optional(as_string(k, &raw)?),
            "backend.auth_env" => self.backend.auth_env = optional(as_string(k, &raw)?),
            "backend.timeout_ms" => self.backend.timeout_ms = as_u64(k, &raw)?,
            "backend.retries" => self.backend.retries = as_u64(k, &raw)? as u32,
            "backend.rate_per_min" => self.backend.rate_per_min = as_u64(k, &raw)? as u32,
            "backend.max_concurrency" => self.backend.max_concurrency = as_u64(k, &raw)? as usize,
            "backend.upload_format" => {
                self.upload_format = match as_string(k, &raw)?.trim() {
                    "png" => Encoding::Png,
                    "jpeg" | "jpg" => Encoding::Jpeg { quality: self.jpeg_quality },
                    other => return Err(invalid(k, format!("unknown format `{other}` (png | jpeg)"))),
                }
            }
            "backend.recolor_delta" => self.backend.recolor_delta = as_triple(k, &raw)?,
            "backend.backdrop" => self.backend.backdrop = optional(as_string(k, &raw)?).map(PathBuf::from),
            "landmarks.provider" => {
                self.landmarks.provider = match as_string(k, &raw)?.trim() {
                    "sidecar" => ProviderKind::Sidecar,
                    "remote" => ProviderKind::Remote,
                    other => return Err(invalid(k, format!("unknown provider `{other}` (sidecar | remote)"))),
                }
            }
            "landmarks.endpoint" => self.landmarks.endpoint = optional(as_string(k, &raw)?),
            "landmarks.timeout_ms" => self.landmarks.timeout_ms = as_u64(k, &raw)?,
            "landmarks.retries" => self.landmarks.retries = as_u64(k, &raw)? as u32,
            "landmarks.edited" => {
                self.landmarks.edited = match as_string(k, &raw)?.trim() {
                    "auto" => EditedLandmarks::Auto,
                    "source" => EditedLandmarks::Source,
                    "detect" => EditedLandmarks::Detect,
                    other => return Err(invalid(k, format!("unknown policy `{other}` (auto | source | detect)"))),
                }
            }
            "landmarks.index_map" => self.landmarks.index_map = optional(as_string(k, &raw)?).map(PathBuf::from),
            "embedding.provider" => {
                self.embedding.provider = match as_string(k, &raw)?.trim() {
                    "none" => EmbeddingKind::None,
                    "stub" => EmbeddingKind::Stub,
                    "remote" => EmbeddingKind::Remote,
                    other => return Err(invalid(k, format!("unknown provider `{other}` (none | stub | remote)"))),
                }
            }
            "embedding.endpoint" => self.embedding.endpoint = optional(as_string(k, &raw)?),
            "embedding.dim" => self.embedding.dim = as_u64(k, &raw)? as usize,
            "embedding.seed" => self.embedding.seed = as_u64(k, &raw)?,
            "embedding.timeout_ms" => self.embedding.timeout_ms = as_u64(k, &raw)?,
            "embedding.retries" => self.embedding.retries = as_u64(k, &raw)? as u32,
            "oracle.endpoint" => self.oracle.endpoint = optional(as_string(k, &raw)?),
            "oracle.models" => self.oracle.models = as_strings(k, &raw)?,
            "oracle.auth_env" => self.oracle.auth_env = optional(as_string(k, &raw)?),
            "oracle.timeout_ms" => self.oracle.timeout_ms = as_u64(k, &raw)?,
            "oracle.retries" => self.oracle.retries = as_u64(k, &raw)? as u32,
            "oracle.rate_per_min" => self.oracle.rate_per_min = as_u64(k, &raw)? as u32,
            "oracle.parallelism" => self.oracle.parallelism = as_u64(k, &raw)? as usize,
            "oracle.prompt_template" => self.oracle.prompt_template = as_string(k, &raw)?,
            "oracle.extra_attributes" => self.oracle.extra_attributes = as_strings(k, &raw)?,
            "pipeline.probe" => self.probe_enabled = as_bool(k, &raw)?,
            "pipeline.jpeg_quality" => {
                self.jpeg_quality = u8::try_from(as_u64(k, &raw)?).map_err(|_| invalid(k, "must be 1..=100"))?;
                if let Encoding::Jpeg { .. } = self.upload_format {
                    self.upload_format = Encoding::Jpeg { quality: self.jpeg_quality };
                }
            }
            "pipeline.workers" => self.workers = as_u64(k, &raw)? as usize,
            "report.format" => self.report_format = as_string(k, &raw)?.trim().parse().map_err(|e: String| invalid(k, e))?,
            "service.bind" => self.service.bind = as_string(k, &raw)?,
            "service.port" => {
                self.service.port = u16::try_from(as_u64(k, &raw)?).map_err(|_| invalid(k, "port out of range"))?
            }
            "service.allow_non_loopback" => self.service.allow_non_loopback = as_bool(k, &raw)?,
            other => {
                if other.contains("token") || other.contains("secret") || other.contains("password") {
                    return Err(invalid(other, "credentials are read from the environment only; set `*.auth_env`"));
                }
                return Err(ConfigError::UnknownKey(other.to_string()));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mask.validate().map_err(|e| invalid("mask", e.to_string()))?;
        self.reintegration
            .validate()
            .map_err(|e| invalid("reintegration", e.to_string()))?;
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(invalid("pipeline.jpeg_quality", "must be 1..=100"));
        }
        if self.workers == 0 {
            return Err(invalid("pipeline.workers", "must be at least 1"));
        }
        if self.backend.kind == BackendKind::Http && self.backend.endpoint.is_none() {
            return Err(invalid("backend.endpoint", "required when backend.kind = http"));
        }
        if self.landmarks.provider == ProviderKind::Remote && self.landmarks.endpoint.is_none() {
            return Err(invalid("landmarks.endpoint", "required when landmarks.provider = remote"));
        }
        if self.embedding.provider == EmbeddingKind::Remote && self.embedding.endpoint.is_none() {
            return Err(invalid("embedding.endpoint", "required when embedding.provider = remote"));
        }
        if self.embedding.dim == 0 {
            return Err(invalid("embedding.dim", "must be at least 1"));
        }
        if !self.oracle.prompt_template.contains("<attribute>") {
            return Err(invalid("oracle.prompt_template", "must contain <attribute>"));
        }
        if self.oracle.parallelism == 0 {
            return Err(invalid("oracle.parallelism", "must be at least 1"));
        }
        for spec in &self.oracle.extra_attributes {
            if spec.split('|').count() != 3 {
                return Err(invalid("oracle.extra_attributes", format!("`{spec}` is not Name|phrase|TruthColumn")));
            }
        }
        Ok(())
    }

    pub fn input_dir(&self) -> PathBuf {
        self.workspace.join("input_og_imgs")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_and_dotted_keys_agree() {
        let a = PipelineConfig::from_toml_str("[mask]\nratio = 0.75\nfill = [0.5, 0.5, 0.5]\n").unwrap();
        let b = PipelineConfig::from_toml_str("\"mask.ratio\" = 0.75\n\"mask.fill\" = [0.5, 0.5, 0.5]\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mask.mask_ratio, 0.75);
        assert_eq!(a.mask.fill, [0.5; 3]);
    }

    #[test]
    fn environment_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("privedit.toml");
        std::fs::write(&path, "[mask]\nratio = 0.6\n[backend]\nkind = \"mock-recolor\"\n").unwrap();
        let env = vec![
            ("PRIVEDIT_MASK_RATIO".to_string(), "0.9".to_string()),
            ("PRIVEDIT_PIPELINE_PROBE".to_string(), "true".to_string()),
            ("PRIVEDIT_MASK_FILL".to_string(), "1, 1, 1".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let cfg = PipelineConfig::load_with_env(Some(&path), env).unwrap();
        assert_eq!(cfg.mask.mask_ratio, 0.9);
        assert!(cfg.probe_enabled);
        assert_eq!(cfg.mask.fill, [1.0; 3]);
        assert_eq!(cfg.backend.kind, BackendKind::MockRecolor);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(PipelineConfig::from_toml_str("nope = 1"), Err(ConfigError::UnknownKey(k)) if k == "nope"));
        assert!(matches!(
            PipelineConfig::from_toml_str("[mask]\nratio = 0.0"),
            Err(ConfigError::InvalidValue { key, .. }) if key == "mask"
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[backend]\ntoken = \"abc\""),
            Err(ConfigError::InvalidValue { key, .. }) if key == "backend.token"
        ));
        assert!(PipelineConfig::from_toml_str("[backend]\nkind = \"http\"").is_err());
        assert!(PipelineConfig::from_toml_str("[mask]\nratio = \"big\"").is_err());
        assert!(PipelineConfig::from_toml_str("[oracle]\nprompt_template = \"no placeholder\"").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = PipelineConfig::default();
        for (key, _) in KEYS {
            let value = match *key {
                "workspace" | "backend.endpoint" | "landmarks.endpoint" | "embedding.endpoint" | "oracle.endpoint" => "x",
                "backend.auth_env" | "oracle.auth_env" => "TOKEN_VAR",
                "backend.backdrop" | "landmarks.index_map" => "",
                k if k.ends_with("fill") || k.ends_with("delta") => "0.1,0.1,0.1",
                "reintegration.blend" => "alpha-only",
                "backend.kind" => "mock-headshot",
                "backend.upload_format" => "jpeg",
                "landmarks.provider" => "sidecar",
                "landmarks.edited" => "detect",
                "embedding.provider" => "stub",
                "oracle.models" => "a,b",
                "oracle.prompt_template" => "Q <attribute>?",
                "oracle.extra_attributes" => "Eyeglasses|eyeglasses|Eyeglasses",
                "report.format" => "markdown",
                "service.bind" => "127.0.0.1",
                k if k.ends_with("overlay") || k.ends_with("jacobi") || k.ends_with("gradients") || k.ends_with("probe") || k.ends_with("loopback") => "false",
                k if k.ends_with("edge_low") => "0.1",
                k if k.ends_with("edge_high") => "0.3",
                k if k.ends_with("ratio") || k.ends_with("expansion") || k.ends_with("residual") || k.ends_with("tol") => "0.5",
                _ => "7",
            };
            cfg.set_str(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        cfg.validate().unwrap();
        assert_eq!(cfg.upload_format, Encoding::Jpeg { quality: 7 });
        assert_eq!(env_var_for("mask.feather_sigma"), "PRIVEDIT_MASK_FEATHER_SIGMA");
    }
}
