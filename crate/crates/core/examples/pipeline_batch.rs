//! End-to-end run over the bundled fixtures with a mock backend, then a summary report.

use std::path::Path;

use anyhow::Result;
use privedit::config::PipelineConfig;
use privedit::evaluation::{emit_report, ReportFormat};
use privedit::pipeline::{run_batch, summarize, PipelineContext, INPUT_DIR};

fn main() -> Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let ws = std::env::temp_dir().join("privedit-examples/workspace");
    std::fs::create_dir_all(ws.join(INPUT_DIR))?;
    let ids: Vec<String> = (1..=5).map(|i| format!("{i:06}")).collect();
    for id in &ids {
        for name in [format!("{id}.jpg"), format!("{id}.landmarks.json")] {
            std::fs::copy(fixtures.join(&name), ws.join(INPUT_DIR).join(&name))?;
        }
    }

    let mut cfg = PipelineConfig { workspace: ws.clone(), probe_enabled: true, workers: 2, ..Default::default() };
    cfg.backend.kind = "mock-headshot".parse().map_err(anyhow::Error::msg)?;
    let ctx = PipelineContext::from_config(cfg, None)?;

    let results: Vec<_> = run_batch(&ids, "professional studio headshot", &ctx)
        .into_iter()
        .collect::<Result<_, _>>()?;
    for r in &results {
        let s = r.scores.expect("stub embedder is on");
        println!("{}: valid={} s_orig={:.3} s_gpt={:.3} s_ours={:.3}", r.id, r.validity.passed, s.s_orig, s.s_gpt, s.s_ours);
    }
    println!("{}", emit_report(&summarize(&ctx, &results)?, ReportFormat::Markdown));
    println!("artifacts in {}", ws.display());
    Ok(())
}
