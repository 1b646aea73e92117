//! Triangulates landmarks and warps a face onto a rotated copy of itself.

use anyhow::Result;
use privedit::imaging::{psnr, save_image};
use privedit::landmarks::{estimate_pose_delta, IndexMap};
use privedit::masking::{face_hull, rasterize_mask};
use privedit::synthetic::{portrait_image, portrait_landmarks, PortraitParams};
use privedit::warp::{delaunay, warp_region};

fn main() -> Result<()> {
    let map = IndexMap::default();
    let base = PortraitParams::fixture(2);
    let tilted = PortraitParams {
        roll_degrees: base.roll_degrees + 8.0,
        ..base.clone()
    };
    let (src, src_lms) = (portrait_image(&base), portrait_landmarks(&base));
    let (dst, dst_lms) = (portrait_image(&tilted), portrait_landmarks(&tilted));

    let mesh = delaunay(&dst_lms.pixels(&map.inner_face()))?;
    println!("{} inner-face vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());

    let delta = estimate_pose_delta(&src_lms, &dst_lms, &map)?;
    println!("roll {:.2} deg, residual {:.4}", delta.roll, delta.residual);

    let region = rasterize_mask(&face_hull(&dst_lms, &map, 1.0)?, dst.width(), dst.height());
    let (warped, valid) = warp_region(&src, &src_lms, &dst_lms, &region, &map)?;
    println!("warped face vs. rendered tilt: {:.1} dB", psnr(&warped, &dst, Some(&valid))?);

    let out = std::env::temp_dir().join("privedit-examples");
    std::fs::create_dir_all(&out)?;
    save_image(&warped, &out.join("warped.png"), 95)?;
    Ok(())
}
