//! Serves the session API on a loopback port and drives one session through it.

use std::sync::Arc;

use anyhow::{Context, Result};
use privedit::config::PipelineConfig;
use privedit::pipeline::PipelineContext;
use privedit::service::router;

#[tokio::main]
async fn main() -> Result<()> {
    let ctx = Arc::new(PipelineContext::from_config(PipelineConfig::default(), None)?);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, router(ctx)).await });

    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let image = std::fs::read(dir.join("000004.jpg"))?;
    let landmarks = std::fs::read_to_string(dir.join("000004.landmarks.json"))?;

    tokio::task::spawn_blocking(move || -> Result<()> {
        let http = reqwest::blocking::Client::new();
        let post_json = |url: String, body: serde_json::Value| {
            http.post(url).header("content-type", "application/json").body(body.to_string()).send()
        };
        let form = reqwest::blocking::multipart::Form::new()
            .part("image", reqwest::blocking::multipart::Part::bytes(image).file_name("face.jpg"))
            .text("landmarks", landmarks);
        let created: serde_json::Value =
            serde_json::from_slice(&http.post(format!("{base}/session")).multipart(form).send()?.bytes()?)?;
        let id = created["session_id"].as_str().context("session id")?.to_string();
        println!("created {id}: {created}");

        for ratio in [0.6, 1.0] {
            let r = http.get(format!("{base}/session/{id}/preview?ratio={ratio}")).send()?;
            println!("preview {ratio}: {} masked pixels", r.headers()["x-masked-pixels"].to_str()?);
        }
        post_json(format!("{base}/session/{id}/approve"), serde_json::json!({"ratio": 0.9}))?;
        let edited = post_json(format!("{base}/session/{id}/edit"), serde_json::json!({"prompt": "studio headshot"}))?;
        println!("edit: {} ({} bytes)", edited.status(), edited.bytes()?.len());
        let done: serde_json::Value =
            serde_json::from_slice(&http.post(format!("{base}/session/{id}/reintegrate")).send()?.bytes()?)?;
        println!("reintegrate: state={} validity={}", done["state"], done["validity"]);
        Ok(())
    })
    .await?
}
