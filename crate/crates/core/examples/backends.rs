//! The local mock backends, and what the HTTP adapter would send.

use std::sync::Arc;
use std::time::Duration;

use anyhow::Result;
use privedit::backend::{edit, EditBackend, EditRequest, HttpBackend, MockHeadshot, MockIdentity, MockRecolor};
use privedit::imaging::{encode_image, Encoding};
use privedit::synthetic::{portrait_image, studio_backdrop, PortraitParams};
use privedit::transport::{InboundResponse, RecordingTransport};

fn main() -> Result<()> {
    let img = portrait_image(&PortraitParams::default());
    let bytes = encode_image(&img, Encoding::Png)?;
    let req = EditRequest::new(bytes, "image/png", "studio headshot", "example-1", Duration::from_secs(5))?;

    let backends: Vec<Box<dyn EditBackend>> = vec![
        Box::new(MockIdentity),
        Box::new(MockRecolor { delta: [0.1, 0.0, 0.0] }),
        Box::new(MockHeadshot::new(studio_backdrop(512, 512))),
    ];
    for b in &backends {
        let out = edit(&req, b.as_ref())?;
        println!("{:<14} -> {}x{} in {:.1} ms", out.backend, out.image.width(), out.image.height(), out.latency_ms);
    }

    // Record instead of sending: the request carries only the given bytes and prompt.
    let transport = Arc::new(RecordingTransport::new(|r| {
        Ok(InboundResponse::ok("image/png", r.part("image").unwrap().data.clone()))
    }));
    let http = HttpBackend::new("https://edit.example/v1/images/edits", transport.clone()).with_token(Some("t0ken".into()));
    edit(&req, &http)?;
    for r in transport.requests() {
        let sizes: Vec<usize> = r.payloads().iter().map(|p| p.len()).collect();
        println!("POST {} headers {:?} payload sizes {sizes:?}", r.url, r.headers.iter().map(|h| &h.0).collect::<Vec<_>>());
    }
    Ok(())
}
