//! Command-line front end. Exit status: 0 success, 1 stage failure,
//! 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use crate::backend::{edit, BackendKind, EditRequest};
use crate::config::PipelineConfig;
use crate::evaluation::{
    emit_report, ingest_celeba_attributes, parse_report, run_attribute_benchmark, AttributeOracle, BenchmarkOptions,
    ImagePair, MetricsReport, RemoteOracle, ReplayOracle, ReportFormat, ReportMetadata, PROMPT_TEMPLATE_VERSION,
};
use crate::imaging::{load_image, save_image};
use crate::masking::mask_image;
use crate::pipeline::{
    configured_attributes, landmarks_for, load_input, reintegrate_edited, request_id, run_ablation, run_batch, summarize,
    AblationAttributes, AblationInput, PipelineContext, INPUT_DIR, MASKED_DIR,
};
use crate::transport::{HttpTransport, RetryPolicy, Transport};

#[derive(Debug, Parser)]
#[command(name = "privedit", version, about = "Mask faces locally, edit remotely, restore identity locally")]
pub struct Cli {
    /// TOML configuration file (environment variables PRIVEDIT_* override it)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the masked composite of an image (landmarks from its sidecar)
    Mask {
        image: PathBuf,
        #[arg(long, value_name = "R", value_parser = parse_ratio)]
        ratio: Option<f64>,
        #[arg(long, value_name = "P")]
        out: Option<PathBuf>,
    },
    /// Send a masked image to the edit backend
    Edit {
        masked: PathBuf,
        #[arg(long, value_name = "T")]
        prompt: String,
        #[arg(long, value_name = "B")]
        backend: Option<BackendKind>,
        #[arg(long, value_name = "P")]
        out: Option<PathBuf>,
    },
    /// Restore the original face into an edited image
    Reintegrate {
        original: PathBuf,
        edited: PathBuf,
        /// Largest accepted in-plane rotation, degrees
        #[arg(long, value_name = "D", value_parser = parse_tau)]
        tau: Option<f64>,
        /// Mask ratio the edited image was produced with
        #[arg(long, value_name = "R", value_parser = parse_ratio)]
        ratio: Option<f64>,
        #[arg(long, value_name = "P")]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline on workspace images
    Run {
        #[arg(required = true, value_name = "IMG_ID")]
        ids: Vec<String>,
        #[arg(long, value_name = "T")]
        prompt: String,
        /// Also run the reconstruction probe
        #[arg(long)]
        probe: bool,
        /// Exit 1 when any image fails the geometric validity gate
        #[arg(long)]
        strict: bool,
        #[arg(long, value_name = "DIR")]
        workspace: Option<PathBuf>,
        #[arg(long, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
        workers: Option<u32>,
        /// Write report.json and report.md with the method comparison
        #[arg(long)]
        report: bool,
    },
    /// Evaluation tools
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Serve the local HTTP API
    Serve {
        #[arg(long, value_name = "N")]
        port: Option<u16>,
        #[arg(long, value_name = "ADDR")]
        bind: Option<String>,
        #[arg(long)]
        allow_non_loopback: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Attribute inference on unmasked vs masked images
    Attrs {
        /// Directory holding input_og_imgs/ and masked_imgs/
        #[arg(long, value_name = "D")]
        images: PathBuf,
        /// CelebA-format attribute file
        #[arg(long, value_name = "F")]
        truth: PathBuf,
        /// `remote` (models from oracle.models) or a recorded-answers JSON file; repeatable
        #[arg(long, value_name = "O", required = true)]
        oracle: Vec<String>,
        #[arg(long, value_name = "F")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "FMT")]
        format: Option<ReportFormat>,
    },
    /// Render a metrics report
    Metrics {
        #[arg(long, value_name = "F")]
        report: PathBuf,
        #[arg(long, value_name = "FMT", default_value = "markdown")]
        format: ReportFormat,
    },
    /// Sweep the mask ratio over workspace images
    Ablation {
        #[arg(required = true, value_name = "IMG_ID")]
        ids: Vec<String>,
        #[arg(long, value_name = "T")]
        prompt: String,
        #[arg(long, value_name = "R,...", value_delimiter = ',', default_value = "0.6,0.75,0.9,1.0", value_parser = parse_ratio)]
        ratios: Vec<f64>,
        #[arg(long, value_name = "F", requires = "oracle")]
        truth: Option<PathBuf>,
        #[arg(long, value_name = "O", requires = "truth")]
        oracle: Vec<String>,
        #[arg(long, value_name = "DIR")]
        workspace: Option<PathBuf>,
        #[arg(long, value_name = "F")]
        out: Option<PathBuf>,
    },
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let r: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if r > 0.0 && r <= crate::masking::MaskConfig::MAX_RATIO {
        Ok(r)
    } else {
        Err(format!("mask ratio must be in (0, {}]", crate::masking::MaskConfig::MAX_RATIO))
    }
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let t: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if t > 0.0 && t <= 180.0 {
        Ok(t)
    } else {
        Err("tolerance must be in (0, 180] degrees".into())
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(e)
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

/// Parses `args` and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    PipelineConfig::load(path).map_err(|e| usage(format!("--config: {e}")))
}

fn context(cfg: PipelineConfig) -> Result<PipelineContext, Failure> {
    PipelineContext::from_config(cfg, None).map_err(|e| usage(format!("--config: {e}")))
}

fn sibling(path: &Path, strip: &str, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let stem = stem.strip_suffix(strip).unwrap_or(stem);
    path.with_file_name(format!("{stem}{suffix}"))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Mask { image, ratio, out } => {
            if let Some(r) = ratio {
                cfg.mask.mask_ratio = r;
            }
            let ctx = context(cfg)?;
            let img = load_image(&image).with_context(|| format!("reading {}", image.display()))?;
            let lms = landmarks_for(&image, &img, ctx.landmarks.as_ref()).map_err(anyhow::Error::from)?;
            let (masked, mask) = mask_image(&img, &lms, &ctx.cfg.mask, &ctx.map).map_err(anyhow::Error::from)?;
            let out = out.unwrap_or_else(|| sibling(&image, "", "_mask.jpg"));
            save_image(&masked, &out, ctx.cfg.jpeg_quality).with_context(|| format!("writing {}", out.display()))?;
            println!("masked {} pixels at ratio {} -> {}", mask.support(), ctx.cfg.mask.mask_ratio, out.display());
        }
        Command::Edit {
            masked,
            prompt,
            backend,
            out,
        } => {
            if let Some(b) = backend {
                cfg.backend.kind = b;
            }
            let ctx = context(cfg)?;
            let img = load_image(&masked).with_context(|| format!("reading {}", masked.display()))?;
            let upload = crate::imaging::encode_image(&img, ctx.cfg.upload_format).map_err(anyhow::Error::from)?;
            let stem = masked.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            let req = EditRequest::new(
                upload.clone(),
                ctx.cfg.upload_format.content_type(),
                &prompt,
                &request_id(&stem, "edit", &upload, &prompt),
                ctx.cfg.backend.timeout(),
            )
            .map_err(|e| usage(format!("--prompt: {e}")))?;
            let res = edit(&req, ctx.backend.as_ref()).context("stage edit failed")?;
            let out = out.unwrap_or_else(|| sibling(&masked, "_mask", "_private.jpg"));
            save_image(&res.image, &out, ctx.cfg.jpeg_quality).with_context(|| format!("writing {}", out.display()))?;
            println!("{} answered {} in {:.1} ms -> {}", res.backend, res.raw_status, res.latency_ms, out.display());
        }
        Command::Reintegrate {
            original,
            edited,
            tau,
            ratio,
            out,
        } => {
            if let Some(t) = tau {
                cfg.reintegration.tau_roll = t;
            }
            if let Some(r) = ratio {
                cfg.mask.mask_ratio = r;
            }
            let ctx = context(cfg)?;
            let orig = load_image(&original).with_context(|| format!("reading {}", original.display()))?;
            let lms = landmarks_for(&original, &orig, ctx.landmarks.as_ref()).map_err(anyhow::Error::from)?;
            let ed = load_image(&edited).with_context(|| format!("reading {}", edited.display()))?;
            let (res, _) = reintegrate_edited(&ctx, &orig, &lms, &ed, Some(&edited), &ctx.cfg.mask).map_err(anyhow::Error::from)?;
            if let Some(d) = res.pose_delta {
                println!("pose delta: roll {:.2} deg, residual {:.4}", d.roll, d.residual);
            }
            if !res.validity.passed {
                let reason = res.validity.reason.clone().unwrap_or_default();
                let hint = res.validity.suggestion.clone().unwrap_or_default();
                return Err(Failure::Stage(anyhow!("validity check failed: {reason}. {hint}")));
            }
            if let Some(w) = &res.warning {
                eprintln!("warning: {w}");
            }
            let out = out.unwrap_or_else(|| sibling(&edited, "_private", "_final.jpg"));
            save_image(&res.image, &out, ctx.cfg.jpeg_quality).with_context(|| format!("writing {}", out.display()))?;
            println!("reintegrated {} pixels -> {}", res.region_pixels, out.display());
        }
        Command::Run {
            ids,
            prompt,
            probe,
            strict,
            workspace,
            workers,
            report,
        } => {
            if let Some(ws) = workspace {
                cfg.workspace = ws;
            }
            if probe {
                cfg.probe_enabled = true;
            }
            if let Some(w) = workers {
                cfg.workers = w as usize;
            }
            let ctx = context(cfg)?;
            let results = run_batch(&ids, &prompt, &ctx);
            let mut failed = 0;
            let mut invalid = 0;
            let mut ok = Vec::new();
            for (id, r) in ids.iter().zip(results) {
                match r {
                    Ok(r) => {
                        let scores = r
                            .scores
                            .map(|s| format!(" s_orig={:.4} s_gpt={:.4} s_ours={:.4}", s.s_orig, s.s_gpt, s.s_ours))
                            .unwrap_or_default();
                        let total = r.timings_ms.get("total").copied().unwrap_or_default();
                        if r.validity.passed {
                            println!("{id}: ok in {total:.0} ms{scores}");
                        } else {
                            invalid += 1;
                            println!(
                                "{id}: validity failed: {}. {}",
                                r.validity.reason.as_deref().unwrap_or(""),
                                r.validity.suggestion.as_deref().unwrap_or("")
                            );
                        }
                        ok.push(r);
                    }
                    Err(e) => {
                        failed += 1;
                        eprintln!("{id}: {e}");
                    }
                }
            }
            if report && !ok.is_empty() {
                let rep = summarize(&ctx, &ok).map_err(anyhow::Error::from)?;
                write_report(&ctx.cfg.workspace.join("report"), &rep)?;
            }
            if failed > 0 {
                return Err(Failure::Stage(anyhow!("{failed} of {} images failed", ids.len())));
            }
            if strict && invalid > 0 {
                return Err(Failure::Stage(anyhow!("{invalid} of {} images failed the validity gate", ids.len())));
            }
        }
        Command::Eval { command } => eval(cfg, command)?,
        Command::Serve {
            port,
            bind,
            allow_non_loopback,
        } => {
            if let Some(p) = port {
                cfg.service.port = p;
            }
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            if allow_non_loopback {
                cfg.service.allow_non_loopback = true;
            }
            let ctx = Arc::new(context(cfg)?);
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .context("starting runtime")?;
            rt.block_on(crate::service::serve(ctx)).map_err(|e| match e {
                crate::service::ServiceError::NonLoopback(_) | crate::service::ServiceError::BadAddress(_) => {
                    usage(format!("--bind: {e}"))
                }
                other => Failure::Stage(other.into()),
            })?;
        }
    }
    Ok(())
}

fn write_report(stem: &Path, report: &MetricsReport) -> Result<(), Failure> {
    let json = stem.with_extension("json");
    let md = stem.with_extension("md");
    std::fs::write(&json, emit_report(report, ReportFormat::Json)).with_context(|| format!("writing {}", json.display()))?;
    std::fs::write(&md, emit_report(report, ReportFormat::Markdown)).with_context(|| format!("writing {}", md.display()))?;
    println!("report -> {} and {}", json.display(), md.display());
    Ok(())
}

fn build_oracles(cfg: &PipelineConfig, specs: &[String]) -> Result<Vec<Box<dyn AttributeOracle>>, Failure> {
    let mut out: Vec<Box<dyn AttributeOracle>> = Vec::new();
    for spec in specs {
        if spec == "remote" {
            let endpoint = cfg
                .oracle
                .endpoint
                .as_deref()
                .ok_or_else(|| usage("--oracle remote: oracle.endpoint is not configured"))?;
            if cfg.oracle.models.is_empty() {
                return Err(usage("--oracle remote: oracle.models is empty"));
            }
            let token = match &cfg.oracle.auth_env {
                Some(var) => Some(std::env::var(var).map_err(|_| usage(format!("--oracle remote: {var} is not set")))?),
                None => None,
            };
            let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new().map_err(|e| Failure::Stage(e.into()))?);
            for model in &cfg.oracle.models {
                out.push(Box::new(
                    RemoteOracle::new(
                        model,
                        endpoint,
                        transport.clone(),
                        Duration::from_millis(cfg.oracle.timeout_ms),
                        RetryPolicy::default(),
                    )
                    .with_token(token.clone())
                    .with_rate_limit(cfg.oracle.rate_per_min),
                ));
            }
        } else {
            let doc = std::fs::read_to_string(spec).map_err(|e| usage(format!("--oracle {spec}: {e}")))?;
            let replay = ReplayOracle::from_json(&doc).map_err(|e| usage(format!("--oracle {spec}: {e}")))?;
            out.push(Box::new(replay));
        }
    }
    Ok(out)
}

fn eval(cfg: PipelineConfig, command: EvalCommand) -> Result<(), Failure> {
    match command {
        EvalCommand::Attrs {
            images,
            truth,
            oracle,
            out,
            format,
        } => {
            let doc = std::fs::read_to_string(&truth).map_err(|e| usage(format!("--truth {}: {e}", truth.display())))?;
            let gt = ingest_celeba_attributes(&doc).map_err(|e| usage(format!("--truth {}: {e}", truth.display())))?;
            let oracles = build_oracles(&cfg, &oracle)?;
            let refs: Vec<&dyn AttributeOracle> = oracles.iter().map(|o| o.as_ref()).collect();
            let (specs, mut notes) = usable_attributes(&cfg, &gt);
            let pairs = load_pairs(&images)?;
            if pairs.is_empty() {
                return Err(usage(format!("--images {}: no image with a masked counterpart", images.display())));
            }
            let opts = BenchmarkOptions {
                retries: cfg.oracle.retries,
                parallelism: cfg.oracle.parallelism,
            };
            let outcome = run_attribute_benchmark(&pairs, &specs, &refs, &gt, &opts).map_err(anyhow::Error::from)?;
            notes.push(format!(
                "Prompt template {PROMPT_TEMPLATE_VERSION}; abstentions ({} of {}) are scored as incorrect and never positive.",
                outcome.abstained, outcome.total
            ));
            notes.push(format!("Metrics are per model, then mean ± sample std across {} model(s).", refs.len()));
            let mut report = MetricsReport::new(ReportMetadata {
                backend: "n/a".into(),
                provider: refs.iter().map(|o| o.name()).collect::<Vec<_>>().join(","),
                mask_ratio: cfg.mask.mask_ratio,
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                notes,
            });
            report.attributes = outcome.rows;
            println!("{}", emit_report(&report, format.unwrap_or(ReportFormat::Markdown)));
            if let Some(out) = out {
                std::fs::write(&out, emit_report(&report, ReportFormat::Json))
                    .with_context(|| format!("writing {}", out.display()))?;
            }
        }
        EvalCommand::Metrics { report, format } => {
            let doc = std::fs::read_to_string(&report).map_err(|e| usage(format!("--report {}: {e}", report.display())))?;
            let parsed = parse_report(&doc).map_err(|e| usage(format!("--report {}: {e}", report.display())))?;
            if parsed.schema != crate::evaluation::REPORT_SCHEMA {
                return Err(usage(format!("--report: unsupported schema `{}`", parsed.schema)));
            }
            parsed.validate().map_err(|e| Failure::Stage(anyhow!("invalid report: {e}")))?;
            println!("{}", emit_report(&parsed, format));
        }
        EvalCommand::Ablation {
            ids,
            prompt,
            ratios,
            truth,
            oracle,
            workspace,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(ws) = workspace {
                cfg.workspace = ws;
            }
            let ctx = context(cfg)?;
            let mut inputs = Vec::new();
            for id in &ids {
                let (_, original, landmarks) = load_input(&ctx, id).map_err(anyhow::Error::from)?;
                inputs.push(AblationInput {
                    id: id.clone(),
                    original,
                    landmarks,
                });
            }
            let mut notes = Vec::new();
            let oracles;
            let gt;
            let specs;
            let refs: Vec<&dyn AttributeOracle>;
            let attrs = match truth {
                Some(truth) => {
                    let doc = std::fs::read_to_string(&truth).map_err(|e| usage(format!("--truth {}: {e}", truth.display())))?;
                    gt = ingest_celeba_attributes(&doc).map_err(|e| usage(format!("--truth {}: {e}", truth.display())))?;
                    oracles = build_oracles(&ctx.cfg, &oracle)?;
                    refs = oracles.iter().map(|o| o.as_ref()).collect();
                    let (s, n) = usable_attributes(&ctx.cfg, &gt);
                    specs = s;
                    notes.extend(n);
                    Some(AblationAttributes {
                        specs: &specs,
                        oracles: &refs,
                        truth: &gt,
                        options: BenchmarkOptions {
                            retries: ctx.cfg.oracle.retries,
                            parallelism: ctx.cfg.oracle.parallelism,
                        },
                    })
                }
                None => None,
            };
            let rows = run_ablation(&ctx, &inputs, &prompt, &ratios, attrs.as_ref()).map_err(anyhow::Error::from)?;
            let mut report = MetricsReport::new(ReportMetadata {
                backend: ctx.backend.name().to_string(),
                provider: ctx.embedder.as_ref().map_or("none".into(), |e| e.name().to_string()),
                mask_ratio: ctx.cfg.mask.mask_ratio,
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                notes,
            });
            report.ablation = rows;
            println!("{}", emit_report(&report, ReportFormat::Markdown));
            let out = out.unwrap_or_else(|| ctx.cfg.workspace.join("ablation.json"));
            std::fs::write(&out, emit_report(&report, ReportFormat::Json)).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

/// Configured attributes whose truth column exists; notes the rest.
fn usable_attributes(
    cfg: &PipelineConfig,
    gt: &crate::evaluation::AttributeGroundTruth,
) -> (Vec<crate::evaluation::AttributeSpec>, Vec<String>) {
    let mut notes = Vec::new();
    let specs = configured_attributes(cfg)
        .into_iter()
        .filter(|s| {
            let ok = gt.attributes.contains(&s.truth_column);
            if !ok {
                notes.push(format!("{} skipped: truth file has no `{}` column", s.name, s.truth_column));
            }
            ok
        })
        .collect();
    (specs, notes)
}

fn load_pairs(dir: &Path) -> Result<Vec<ImagePair>, Failure> {
    let input = dir.join(INPUT_DIR);
    let entries = std::fs::read_dir(&input).map_err(|e| usage(format!("--images {}: {e}", input.display())))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "jpg").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    ids.sort();
    let mut pairs = Vec::new();
    for id in ids {
        let masked = dir.join(MASKED_DIR).join(format!("{id}_mask.jpg"));
        if !masked.is_file() {
            continue;
        }
        pairs.push(ImagePair {
            unmasked: load_image(&input.join(format!("{id}.jpg"))).map_err(|e| Failure::Stage(e.into()))?,
            masked: load_image(&masked).map_err(|e| Failure::Stage(e.into()))?,
            id,
        });
    }
    Ok(pairs)
}
