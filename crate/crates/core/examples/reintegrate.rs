//! Local face reintegration after a (mock) remote edit, including the pose gate.

use anyhow::Result;
use privedit::backend::{edit, EditRequest, MockRecolor};
use privedit::imaging::{encode_image, psnr, Encoding};
use privedit::landmarks::{IndexMap, StaticProvider};
use privedit::masking::{mask_image, MaskConfig};
use privedit::reintegration::{swap_face_back, ReintegrationConfig};
use privedit::synthetic::{portrait_image, portrait_landmarks, PortraitParams};

fn main() -> Result<()> {
    let map = IndexMap::default();
    let params = PortraitParams::fixture(1);
    let (img, lms) = (portrait_image(&params), portrait_landmarks(&params));
    let mask = MaskConfig::default();
    let (masked, _) = mask_image(&img, &lms, &mask, &map)?;

    // A warm color cast stands in for a relighting edit.
    let upload = encode_image(&masked, Encoding::Png)?;
    let req = EditRequest::new(upload, "image/png", "warm evening light", "demo", std::time::Duration::from_secs(5))?;
    let edited = edit(&req, &MockRecolor { delta: [0.08, 0.03, -0.02] })?.image;

    let cfg = ReintegrationConfig::default();
    let provider = StaticProvider::new(lms.clone());
    let res = swap_face_back(&img, &lms, &edited, None, &provider, &mask, &cfg, &map)?;
    println!("validity {:?}, blend {:?}, solver {:?}", res.validity.passed, res.blend, res.solver);
    if let Some(region) = &res.region {
        println!("face PSNR vs original after the color cast: {:.1} dB", psnr(&res.image, &img, Some(region))?);
    }

    // A head turned past the tolerance is refused with a reason.
    let turned = PortraitParams {
        roll_degrees: 20.0,
        ..params
    };
    let res = swap_face_back(
        &img,
        &lms,
        &portrait_image(&turned),
        None,
        &StaticProvider::new(portrait_landmarks(&turned)),
        &mask,
        &cfg,
        &map,
    )?;
    println!("rotated edit: {:?}", res.validity);
    Ok(())
}
