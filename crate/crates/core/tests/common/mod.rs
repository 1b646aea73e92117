#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

pub const FIXTURE_IDS: [&str; 5] = ["000001", "000002", "000003", "000004", "000005"];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_image(id: &str) -> PathBuf {
    fixtures().join(format!("{id}.jpg"))
}

/// Copies fixtures and their sidecars into `<ws>/input_og_imgs/`.
pub fn seed_workspace(ws: &Path, ids: &[&str]) {
    let input = ws.join(privedit::pipeline::INPUT_DIR);
    fs::create_dir_all(&input).unwrap();
    for id in ids {
        fs::copy(fixture_image(id), input.join(format!("{id}.jpg"))).unwrap();
        let sidecar = format!("{id}.landmarks.json");
        fs::copy(fixtures().join(&sidecar), input.join(&sidecar)).unwrap();
    }
}

/// A multipart/form-data body; returns (content type, body).
pub fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> (String, Vec<u8>) {
    let boundary = "privedit-test-boundary";
    let mut body = Vec::new();
    for (name, filename, data) in parts {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\n\r\n").as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}
