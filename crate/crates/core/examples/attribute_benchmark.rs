//! Masked vs. unmasked attribute inference with recorded model answers.

use std::path::Path;

use anyhow::Result;
use privedit::evaluation::{
    default_attributes, emit_report, ingest_celeba_attributes, run_attribute_benchmark, AttributeOracle,
    BenchmarkOptions, ImagePair, MetricsReport, ReplayOracle, ReportFormat, ReportMetadata,
};
use privedit::imaging::load_image;
use privedit::landmarks::{detect_landmarks, IndexMap, SidecarProvider};
use privedit::masking::{mask_image, MaskConfig};

fn main() -> Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let truth = ingest_celeba_attributes(&std::fs::read_to_string(dir.join("celeba/list_attr_fixtures.txt"))?)?;
    let oracle = ReplayOracle::from_json(&std::fs::read_to_string(dir.join("replay_oracle.json"))?)?;
    let map = IndexMap::default();

    let mut pairs = Vec::new();
    for i in 1..=5 {
        let id = format!("{i:06}");
        let path = dir.join(format!("{id}.jpg"));
        let img = load_image(&path)?;
        let lms = detect_landmarks(&img, Some(&path), &SidecarProvider::new(&map))?;
        let (masked, _) = mask_image(&img, &lms, &MaskConfig::default(), &map)?;
        pairs.push(ImagePair {
            id,
            unmasked: img,
            masked,
        });
    }

    let oracles: Vec<&dyn AttributeOracle> = vec![&oracle];
    let outcome = run_attribute_benchmark(&pairs, &default_attributes(), &oracles, &truth, &BenchmarkOptions::default())?;
    let mut report = MetricsReport::new(ReportMetadata {
        backend: "n/a".into(),
        provider: oracle.model.clone(),
        mask_ratio: 1.0,
        timestamp: "example".into(),
        notes: vec![format!("{} of {} answers abstained", outcome.abstained, outcome.total)],
    });
    report.attributes = outcome.rows;
    println!("{}", emit_report(&report, ReportFormat::Markdown));
    Ok(())
}
