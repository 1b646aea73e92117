//! Masks a bundled portrait at several ratios and reports how much is hidden.
//!
//! `cargo run --example mask_face`

use std::path::Path;

use anyhow::Result;
use privedit::imaging::{load_image, save_image, save_mask_png};
use privedit::landmarks::{detect_landmarks, IndexMap, SidecarProvider};
use privedit::masking::{mask_image, MaskConfig};

fn main() -> Result<()> {
    let input = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/000001.jpg");
    let out = std::env::temp_dir().join("privedit-examples");
    std::fs::create_dir_all(&out)?;

    let img = load_image(&input)?;
    let map = IndexMap::default();
    let lms = detect_landmarks(&img, Some(&input), &SidecarProvider::new(&map))?;

    for ratio in [0.6, 0.75, 0.9, 1.0] {
        let cfg = MaskConfig::default().with_ratio(ratio);
        let (masked, mask) = mask_image(&img, &lms, &cfg, &map)?;
        let name = format!("mask_{ratio:.2}");
        save_image(&masked, &out.join(format!("{name}.png")), 95)?;
        save_mask_png(&mask, &out.join(format!("{name}_alpha.png")))?;
        println!("ratio {ratio:.2}: {:>6} pixels touched, alpha sum {:.0}", mask.support(), mask.sum());
    }

    // Edge overlay keeps a hint of the face outline for the editor.
    let cfg = MaskConfig {
        edge_overlay: true,
        ..MaskConfig::default()
    };
    let (masked, _) = mask_image(&img, &lms, &cfg, &map)?;
    save_image(&masked, &out.join("mask_edges.png"), 95)?;
    println!("wrote {}", out.display());
    Ok(())
}
