//! Identity mask construction and the masked composite sent off-device.
//!
//! The mask is the convex hull of the inner-face landmarks, scaled about its
//! vertex centroid by `hull_expansion · mask_ratio`, rasterized and feathered
//! outward. The composite is `out = (1 − α)·img + α·c` per channel.
//!
//! Feathering only ever adds occlusion outside the hull: inside the scaled
//! hull α is exactly 1, so every hull pixel of the composite equals `c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{canny_edges, ensure_dims, gaussian_blur, to_grayscale, GrayImage, Image, ImagingError, SoftMask};
use crate::landmarks::{IndexMap, LandmarkError, LandmarkSet};

#[derive(Debug, Error)]
pub enum MaskingError {
    #[error("fewer than three distinct points")]
    FewerThanThreePoints,
    #[error("all points are collinear")]
    CollinearInput,
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("invalid mask configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error(transparent)]
    Imaging(ImagingError),
}

impl From<ImagingError> for MaskingError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::DimensionMismatch { expected, actual } => MaskingError::DimensionMismatch { expected, actual },
            other => MaskingError::Imaging(other),
        }
    }
}

/// A polygon in pixel coordinates with counter-clockwise vertex order
/// (positive signed area in the `(x, y)` coordinate system as given).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    /// Reorders clockwise input to counter-clockwise.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self, MaskingError> {
        if vertices.len() < 3 {
            return Err(MaskingError::FewerThanThreePoints);
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    /// Vertex average.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.vertices.len() as f64;
        let (sx, sy) = self.vertices.iter().fold((0.0, 0.0), |(a, b), v| (a + v[0], b + v[1]));
        [sx / n, sy / n]
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % n], self.vertices[(i + 2) % n]) >= 0.0)
    }

    /// Inside or on the boundary.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        if self.is_convex() {
            return (0..n).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % n], p) >= 0.0);
        }
        let mut winding = 0i32;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            if on_segment(a, b, p) {
                return true;
            }
            if a[1] <= p[1] {
                if b[1] > p[1] && cross(a, b, p) > 0.0 {
                    winding += 1;
                }
            } else if b[1] <= p[1] && cross(a, b, p) < 0.0 {
                winding -= 1;
            }
        }
        winding != 0
    }

    /// Euclidean distance from `p` to the polygon boundary.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| segment_distance(self.vertices[i], self.vertices[(i + 1) % n], p))
            .fold(f64::INFINITY, f64::min)
    }
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// `(b − a) × (p − a)`; positive when `p` is left of `a → b`.
#[inline]
fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    cross(a, b, p) == 0.0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Andrew's monotone chain; collinear boundary points are dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<Polygon, MaskingError> {
    if points.len() < 3 {
        return Err(MaskingError::FewerThanThreePoints);
    }
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Err(MaskingError::FewerThanThreePoints);
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(MaskingError::CollinearInput);
    }
    Ok(Polygon { vertices: lower })
}

/// Maps every vertex `v` to `centroid + factor·(v − centroid)`.
pub fn scale_polygon(poly: &Polygon, factor: f64) -> Result<Polygon, MaskingError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(MaskingError::InvalidConfig(format!("scale factor must be > 0, got {factor}")));
    }
    let c = poly.centroid();
    Ok(Polygon {
        vertices: poly
            .vertices
            .iter()
            .map(|v| [c[0] + factor * (v[0] - c[0]), c[1] + factor * (v[1] - c[1])])
            .collect(),
    })
}

/// Binary mask of pixel centers (integer coordinates) inside or on `poly`.
pub fn rasterize_mask(poly: &Polygon, width: u32, height: u32) -> SoftMask {
    rasterize_with_margin(poly, width, height, 0.0)
}

/// Like [`rasterize_mask`] but also sets pixels within `margin` pixels of the
/// polygon boundary.
pub fn rasterize_with_margin(poly: &Polygon, width: u32, height: u32, margin: f64) -> SoftMask {
    let mut mask = SoftMask::new(width, height);
    if width == 0 || height == 0 || poly.area() <= 1e-12 {
        return mask;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in &poly.vertices {
        x0 = x0.min(v[0]);
        y0 = y0.min(v[1]);
        x1 = x1.max(v[0]);
        y1 = y1.max(v[1]);
    }
    let lo_x = (x0 - margin).ceil().max(0.0);
    let lo_y = (y0 - margin).ceil().max(0.0);
    let hi_x = (x1 + margin).floor().min(f64::from(width) - 1.0);
    let hi_y = (y1 + margin).floor().min(f64::from(height) - 1.0);
    if lo_x > hi_x || lo_y > hi_y {
        return mask;
    }
    for y in lo_y as u32..=hi_y as u32 {
        for x in lo_x as u32..=hi_x as u32 {
            let p = [f64::from(x), f64::from(y)];
            if poly.contains(p) || (margin > 0.0 && poly.boundary_distance(p) <= margin) {
                mask.set(x, y, 1.0);
            }
        }
    }
    mask
}

/// Gaussian-blurred alpha, clamped to `[0, 1]`; sigma 0 is the identity.
pub fn feather_mask(mask: &SoftMask, sigma: f32) -> Result<SoftMask, MaskingError> {
    Ok(gaussian_blur(mask, sigma)?)
}

/// `(1 − α)·img + α·c`, channel by channel.
pub fn apply_mask(img: &Image, mask: &SoftMask, fill: [f32; 3]) -> Result<Image, MaskingError> {
    ensure_dims(img.dimensions(), mask.dimensions())?;
    let mut out = img.clone();
    for (px, &a) in out.data_mut().chunks_exact_mut(3).zip(mask.alpha()) {
        for c in 0..3 {
            px[c] = (1.0 - a) * px[c] + a * fill[c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Scale of the identity hull about its centroid; larger conceals more.
    pub mask_ratio: f64,
    pub hull_expansion: f64,
    pub feather_sigma: f32,
    pub fill: [f32; 3],
    pub edge_overlay: bool,
    pub edge_low: f32,
    pub edge_high: f32,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 1.0,
            hull_expansion: 1.05,
            feather_sigma: 3.0,
            fill: [0.0, 0.0, 0.0],
            edge_overlay: false,
            edge_low: 0.08,
            edge_high: 0.2,
        }
    }
}

impl MaskConfig {
    pub const MAX_RATIO: f64 = 2.0;

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.mask_ratio = ratio;
        self
    }

    pub fn validate(&self) -> Result<(), MaskingError> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= Self::MAX_RATIO) {
            return Err(MaskingError::InvalidConfig(format!(
                "mask ratio must be in (0, {}], got {}",
                Self::MAX_RATIO,
                self.mask_ratio
            )));
        }
        if !(self.hull_expansion > 0.0) {
            return Err(MaskingError::InvalidConfig("hull expansion must be > 0".into()));
        }
        if !(self.feather_sigma >= 0.0) {
            return Err(MaskingError::InvalidConfig("feather sigma must be >= 0".into()));
        }
        if !self.fill.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(MaskingError::InvalidConfig("fill must lie in [0, 1]^3".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_low) || !(0.0..=1.0).contains(&self.edge_high) || self.edge_low > self.edge_high
        {
            return Err(MaskingError::InvalidConfig("edge thresholds need 0 <= low <= high <= 1".into()));
        }
        Ok(())
    }

    /// Pixel reach of the feathering kernel beyond the hard hull.
    pub fn feather_reach(&self) -> f64 {
        (3.0 * f64::from(self.feather_sigma)).ceil()
    }
}

/// Hull of the inner-face landmarks in pixel space, scaled by `factor`.
pub fn face_hull(lms: &LandmarkSet, map: &IndexMap, factor: f64) -> Result<Polygon, MaskingError> {
    let hull = convex_hull(&lms.pixels(&map.inner_face()))?;
    scale_polygon(&hull, factor)
}

/// The identity mask for `img`: hard hull with α = 1 plus an outward feather.
pub fn build_face_mask(
    img: &Image,
    lms: &LandmarkSet,
    cfg: &MaskConfig,
    map: &IndexMap,
) -> Result<SoftMask, MaskingError> {
    cfg.validate()?;
    ensure_dims(img.dimensions(), lms.source_dimensions())?;
    let hull = face_hull(lms, map, cfg.hull_expansion * cfg.mask_ratio)?;
    let hard = rasterize_mask(&hull, img.width(), img.height());
    if cfg.feather_sigma == 0.0 {
        return Ok(hard);
    }
    let soft = feather_mask(&hard, cfg.feather_sigma)?;
    Ok(hard.max(&soft)?)
}

/// Masks `img` with its identity mask, applying the edge overlay when enabled.
pub fn mask_image(
    img: &Image,
    lms: &LandmarkSet,
    cfg: &MaskConfig,
    map: &IndexMap,
) -> Result<(Image, SoftMask), MaskingError> {
    let mask = build_face_mask(img, lms, cfg, map)?;
    let masked = apply_mask(img, &mask, cfg.fill)?;
    let out = edge_overlay(&masked, img, &mask, cfg)?;
    Ok((out, mask))
}

/// Draws Canny edges of the non-facial context along the soft mask boundary.
///
/// Edges come only from pixels with α < 0.5; facial pixels are replaced by a
/// row-wise interpolation of neighboring context before edge detection, so
/// the result is independent of anything under the mask.
pub fn edge_overlay(masked: &Image, context: &Image, mask: &SoftMask, cfg: &MaskConfig) -> Result<Image, MaskingError> {
    if !cfg.edge_overlay {
        return Ok(masked.clone());
    }
    ensure_dims(masked.dimensions(), context.dimensions())?;
    ensure_dims(masked.dimensions(), mask.dimensions())?;
    let filled = context_only_luma(context, mask);
    let edges = canny_edges(&filled, cfg.edge_low, cfg.edge_high)?;
    let fill_luma = 0.299 * cfg.fill[0] + 0.587 * cfg.fill[1] + 0.114 * cfg.fill[2];
    let ink = if fill_luma < 0.5 { 1.0 } else { 0.0 };
    let mut out = masked.clone();
    for (i, (px, &a)) in out.data_mut().chunks_exact_mut(3).zip(mask.alpha()).enumerate() {
        let band = 4.0 * a * (1.0 - a);
        let w = 0.6 * edges.alpha()[i] * band;
        if w > 0.0 {
            for v in px.iter_mut() {
                *v = (1.0 - w) * *v + w * ink;
            }
        }
    }
    Ok(out)
}

fn context_only_luma(context: &Image, mask: &SoftMask) -> GrayImage {
    let luma = to_grayscale(context);
    let (w, h) = (context.width() as usize, context.height() as usize);
    let is_context = |i: usize| mask.alpha()[i] < 0.5;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for i in 0..w * h {
        if is_context(i) {
            sum += f64::from(luma.data()[i]);
            n += 1;
        }
    }
    let mean = if n > 0 { (sum / n as f64) as f32 } else { 0.0 };
    let mut data = luma.data().to_vec();
    for y in 0..h {
        let row = y * w;
        let mut x = 0;
        while x < w {
            if is_context(row + x) {
                x += 1;
                continue;
            }
            let start = x;
            while x < w && !is_context(row + x) {
                x += 1;
            }
            let left = (start > 0).then(|| luma.data()[row + start - 1]);
            let right = (x < w).then(|| luma.data()[row + x]);
            let span = (x - start + 1) as f32;
            for k in start..x {
                data[row + k] = match (left, right) {
                    (Some(l), Some(r)) => l + (r - l) * (k - start + 1) as f32 / span,
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => mean,
                };
            }
        }
    }
    GrayImage::from_raw(context.width(), context.height(), data).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{portrait_image, portrait_landmarks, PortraitParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n³) oracle: a point is a hull vertex iff it is an endpoint of some
    /// pair whose supporting line has every other point strictly on one side
    /// or on the segment, and it is not strictly between two other points on
    /// such a line.
    fn brute_force_hull_vertices(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        pts.dedup();
        let mut out = Vec::new();
        for (i, &p) in pts.iter().enumerate() {
            let mut extreme = false;
            for (j, &q) in pts.iter().enumerate() {
                if i == j {
                    continue;
                }
                let side: Vec<f64> = pts.iter().map(|&r| cross(p, q, r)).collect();
                let all_left = side.iter().all(|&s| s >= 0.0);
                let all_right = side.iter().all(|&s| s <= 0.0);
                if !(all_left || all_right) {
                    continue;
                }
                // p must be an end of the collinear run on this supporting line.
                let dir = [q[0] - p[0], q[1] - p[1]];
                let behind = pts
                    .iter()
                    .zip(&side)
                    .any(|(&r, &s)| s == 0.0 && r != p && (r[0] - p[0]) * dir[0] + (r[1] - p[1]) * dir[1] < 0.0);
                if !behind {
                    extreme = true;
                    break;
                }
            }
            if extreme {
                out.push(p);
            }
        }
        out
    }

    fn sorted(mut v: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
        v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        v
    }

    #[test]
    fn hull_examples() {
        let tri = [[0.0, 0.0], [4.0, 0.0], [1.0, 3.0]];
        let h = convex_hull(&tri).unwrap();
        assert_eq!(sorted(h.vertices().to_vec()), sorted(tri.to_vec()));
        assert!(signed_area(h.vertices()) > 0.0);

        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let h = convex_hull(&sq).unwrap();
        assert_eq!(sorted(h.vertices().to_vec()), sorted(sq[..4].to_vec()));

        assert!(matches!(convex_hull(&[[0.0, 0.0], [1.0, 1.0]]), Err(MaskingError::FewerThanThreePoints)));
        assert!(matches!(
            convex_hull(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
            Err(MaskingError::CollinearInput)
        ));
    }

    #[test]
    fn hull_matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.random_range(3..=60);
            // Integer grid coordinates exercise duplicates and collinear runs.
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [f64::from(rng.random_range(0..20)), f64::from(rng.random_range(0..20))])
                .collect();
            match convex_hull(&pts) {
                Ok(h) => assert_eq!(sorted(h.vertices().to_vec()), sorted(brute_force_hull_vertices(&pts))),
                Err(MaskingError::CollinearInput | MaskingError::FewerThanThreePoints) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn scale_examples() {
        let sq = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(scale_polygon(&sq, 1.0).unwrap(), sq);
        let big = scale_polygon(&sq, 2.0).unwrap();
        assert_eq!(big.vertices(), &[[-0.5, -0.5], [1.5, -0.5], [1.5, 1.5], [-0.5, 1.5]]);
        assert!((big.area() - 4.0 * sq.area()).abs() < 1e-9);
        assert!(scale_polygon(&sq, 0.0).is_err());
    }

    #[test]
    fn rasterize_examples() {
        let full = Polygon::new(vec![[-1.0, -1.0], [40.0, -1.0], [40.0, 40.0], [-1.0, 40.0]]).unwrap();
        assert_eq!(rasterize_mask(&full, 16, 12).support(), 16 * 12);
        let flat = Polygon::new(vec![[0.0, 0.0], [10.0, 10.0], [5.0, 5.0]]).unwrap();
        assert_eq!(rasterize_mask(&flat, 16, 16).support(), 0);
        let off = Polygon::new(vec![[100.0, 100.0], [120.0, 100.0], [110.0, 130.0]]).unwrap();
        assert_eq!(rasterize_mask(&off, 16, 16).support(), 0);
    }

    #[test]
    fn rasterized_triangle_matches_half_plane_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let v: Vec<[f64; 2]> = (0..3).map(|_| [rng.random_range(-4.0..36.0), rng.random_range(-4.0..36.0)]).collect();
            let Ok(poly) = Polygon::new(v.clone()) else { continue };
            if poly.area() < 1e-6 {
                continue;
            }
            let m = rasterize_mask(&poly, 32, 32);
            let ccw = poly.vertices();
            for y in 0..32u32 {
                for x in 0..32u32 {
                    let p = [f64::from(x), f64::from(y)];
                    let inside = (0..3).all(|i| {
                        let (a, b) = (ccw[i], ccw[(i + 1) % 3]);
                        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
                    });
                    assert_eq!(m.get(x, y) == 1.0, inside, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn feather_examples() {
        let m = SoftMask::from_fn(60, 60, |x, y| if (10..50).contains(&x) && (10..50).contains(&y) { 1.0 } else { 0.0 });
        assert_eq!(feather_mask(&m, 0.0).unwrap(), m);
        let f = feather_mask(&m, 2.0).unwrap();
        assert!(f.alpha().iter().all(|a| (0.0..=1.0).contains(a)));
        // Pixels >= 3σ inside: Gaussian tail mass beyond 3σ is < 0.0014 per axis.
        for y in 16..44 {
            for x in 16..44 {
                assert!(f.get(x, y) >= 0.99);
            }
        }
    }

    #[test]
    fn composite_examples() {
        let img = Image::from_fn(4, 4, |x, y| [x as f32 / 3.0, y as f32 / 3.0, 0.5]);
        assert_eq!(apply_mask(&img, &SoftMask::new(4, 4), [0.2, 0.3, 0.4]).unwrap(), img);
        let all = apply_mask(&img, &SoftMask::filled(4, 4, 1.0), [0.2, 0.3, 0.4]).unwrap();
        assert!(all.data().chunks(3).all(|p| p == [0.2, 0.3, 0.4]));
        assert!(matches!(
            apply_mask(&img, &SoftMask::new(3, 4), [0.0; 3]),
            Err(MaskingError::DimensionMismatch { .. })
        ));
    }

    fn small_portrait() -> (Image, LandmarkSet) {
        let p = PortraitParams {
            width: 160,
            height: 160,
            ..PortraitParams::default()
        };
        (portrait_image(&p), portrait_landmarks(&p))
    }

    #[test]
    fn face_mask_covers_inner_landmarks() {
        let (img, lms) = small_portrait();
        let map = IndexMap::default();
        let mask = build_face_mask(&img, &lms, &MaskConfig::default(), &map).unwrap();
        for p in lms.pixels(&map.inner_face()) {
            let (x, y) = (p[0].round() as u32, p[1].round() as u32);
            assert!(mask.get(x, y) >= 0.99, "landmark pixel ({x},{y}) α={}", mask.get(x, y));
        }
    }

    #[test]
    fn face_mask_grows_with_ratio() {
        let (img, lms) = small_portrait();
        let map = IndexMap::default();
        let small = build_face_mask(&img, &lms, &MaskConfig::default().with_ratio(0.6), &map).unwrap();
        let large = build_face_mask(&img, &lms, &MaskConfig::default().with_ratio(1.0), &map).unwrap();
        assert!(small.sum() < large.sum());
    }

    #[test]
    fn face_mask_rejects_foreign_landmarks() {
        let (img, lms) = small_portrait();
        let other = lms.rescaled_to(200, 160);
        assert!(matches!(
            build_face_mask(&img, &other, &MaskConfig::default(), &IndexMap::default()),
            Err(MaskingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hull_interior_is_exactly_fill_even_when_feathered() {
        let (img, lms) = small_portrait();
        let map = IndexMap::default();
        let cfg = MaskConfig {
            fill: [0.5, 0.5, 0.5],
            ..MaskConfig::default()
        };
        let (masked, mask) = mask_image(&img, &lms, &cfg, &map).unwrap();
        let hull = face_hull(&lms, &map, cfg.hull_expansion * cfg.mask_ratio).unwrap();
        let hard = rasterize_mask(&hull, 160, 160);
        for y in 0..160 {
            for x in 0..160 {
                if hard.get(x, y) == 1.0 {
                    assert_eq!(mask.get(x, y), 1.0);
                    assert_eq!(masked.pixel(x, y), [0.5, 0.5, 0.5]);
                }
            }
        }
    }

    #[test]
    fn edge_overlay_disabled_or_flat_context_is_noop() {
        let (img, lms) = small_portrait();
        let map = IndexMap::default();
        let cfg = MaskConfig::default();
        let mask = build_face_mask(&img, &lms, &cfg, &map).unwrap();
        let masked = apply_mask(&img, &mask, cfg.fill).unwrap();
        assert_eq!(edge_overlay(&masked, &img, &mask, &cfg).unwrap(), masked);

        let on = MaskConfig {
            edge_overlay: true,
            ..cfg
        };
        let flat = Image::filled(160, 160, [0.4, 0.5, 0.6]);
        let flat_masked = apply_mask(&flat, &mask, on.fill).unwrap();
        assert_eq!(edge_overlay(&flat_masked, &flat, &mask, &on).unwrap(), flat_masked);
    }

    #[test]
    fn edge_overlay_never_reads_facial_pixels() {
        let (img, lms) = small_portrait();
        let map = IndexMap::default();
        let cfg = MaskConfig {
            edge_overlay: true,
            ..MaskConfig::default()
        };
        let mask = build_face_mask(&img, &lms, &cfg, &map).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut other = img.clone();
        for y in 0..160 {
            for x in 0..160 {
                if mask.get(x, y) >= 0.5 {
                    other.set_pixel(x, y, [rng.random(), rng.random(), rng.random()]);
                }
            }
        }
        // Differences confined to the α = 1 hull leave the composite unchanged.
        let hard_only = Image::from_fn(160, 160, |x, y| if mask.get(x, y) == 1.0 { other.pixel(x, y) } else { img.pixel(x, y) });
        let a = mask_image(&img, &lms, &cfg, &map).unwrap().0;
        let b = mask_image(&hard_only, &lms, &cfg, &map).unwrap().0;
        assert_eq!(a, b);
        // And the edge layer itself depends only on α < 0.5 pixels.
        assert_eq!(context_only_luma(&img, &mask), context_only_luma(&other, &mask));
    }

    proptest! {
        #[test]
        fn masked_area_monotone_in_ratio(r1 in 0.2f64..1.9, dr in 0.0f64..0.1) {
            let (img, lms) = small_portrait();
            let map = IndexMap::default();
            let a = build_face_mask(&img, &lms, &MaskConfig::default().with_ratio(r1), &map).unwrap();
            let b = build_face_mask(&img, &lms, &MaskConfig::default().with_ratio(r1 + dr), &map).unwrap();
            prop_assert!(a.sum() <= b.sum() + 1e-6);
        }
    }
}
