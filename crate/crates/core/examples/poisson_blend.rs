//! Seamless cloning of a patch, compared with a plain paste.

use anyhow::Result;
use privedit::imaging::{Image, SoftMask};
use privedit::poisson::{seamless_clone, CloneOptions};

fn main() -> Result<()> {
    let (w, h) = (96, 64);
    // A bright textured source pasted into a dark gradient.
    let src = Image::from_fn(w, h, |x, _| {
        let t = ((x as f32) * 0.4).sin() * 0.1;
        [0.8 + t, 0.7 + t, 0.6]
    });
    let dst = Image::from_fn(w, h, |x, _| {
        let g = x as f32 / w as f32;
        [0.1 + 0.3 * g, 0.2, 0.35 - 0.2 * g]
    });
    let region = SoftMask::from_fn(w, h, |x, y| if (24..72).contains(&x) && (16..48).contains(&y) { 1.0 } else { 0.0 });

    for mixed in [false, true] {
        let opts = CloneOptions {
            mixed_gradients: mixed,
            ..Default::default()
        };
        let out = seamless_clone(&src, &dst, &region, &opts)?;
        let seam = (out.image.pixel(24, 32)[0] - dst.pixel(23, 32)[0]).abs();
        println!(
            "mixed={mixed}: {} unknowns, {} iterations, residual {:.2e}, seam step {seam:.4}",
            out.stats.unknowns, out.stats.iterations, out.stats.residual
        );
    }
    let paste_step = (src.pixel(24, 32)[0] - dst.pixel(23, 32)[0]).abs();
    println!("plain paste seam step {paste_step:.4}");
    Ok(())
}
