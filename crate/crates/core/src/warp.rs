//! Delaunay meshes and piecewise affine warping by inverse mapping.

use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{ensure_dims, sample_bilinear, Image, ImagingError, SoftMask};
use crate::landmarks::{fit_similarity, IndexMap, LandmarkError, LandmarkSet};
use crate::masking::{convex_hull, MaskingError};

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("fewer than three distinct points")]
    FewerThanThreePoints,
    #[error("all points are collinear")]
    CollinearInput,
    #[error("degenerate triangle")]
    DegenerateTriangle,
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("landmark sets differ in size ({0} vs {1})")]
    LandmarkCountMismatch(usize, usize),
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
}

impl From<ImagingError> for WarpError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::DimensionMismatch { expected, actual } => WarpError::DimensionMismatch { expected, actual },
            other => unreachable!("unexpected imaging error in warp: {other}"),
        }
    }
}

impl From<MaskingError> for WarpError {
    fn from(e: MaskingError) -> Self {
        match e {
            MaskingError::CollinearInput => WarpError::CollinearInput,
            _ => WarpError::FewerThanThreePoints,
        }
    }
}

const BARY_EPS: f64 = 1e-9;
const SNAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex-index triples.
    pub triangles: Vec<[usize; 3]>,
}

#[inline]
fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `p` lies strictly inside the circumcircle of CCW `(a, b, c)`.
fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - p[0], a[1] - p[1]);
    let (bdx, bdy) = (b[0] - p[0], b[1] - p[1]);
    let (cdx, cdy) = (c[0] - p[0], c[1] - p[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Bowyer–Watson, inserting points in index order. Exact duplicates of an
/// earlier point are left out of the mesh. A point exactly on a circumcircle
/// does not invalidate the triangle, so cocircular ties keep the earlier
/// (lower-index) triangulation.
pub fn delaunay(points: &[[f64; 2]]) -> Result<Triangulation, WarpError> {
    if points.len() < 3 {
        return Err(WarpError::FewerThanThreePoints);
    }
    convex_hull(points)?;

    // Work in a normalized frame so the super triangle's size is scale free.
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0);
    let norm: Vec<[f64; 2]> = points.iter().map(|p| [(p[0] - x0) / span, (p[1] - y0) / span]).collect();

    let n = points.len();
    let big = 1.0e4;
    let mut verts = norm.clone();
    verts.push([-big, -big]);
    verts.push([big, -big]);
    verts.push([0.5, big]);
    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];

    let mut seen = std::collections::HashSet::new();
    for i in 0..n {
        let p = verts[i];
        if !seen.insert((p[0].to_bits(), p[1].to_bits())) {
            continue;
        }
        let mut bad = Vec::new();
        let mut keep = Vec::with_capacity(tris.len());
        for t in tris.drain(..) {
            if in_circle(verts[t[0]], verts[t[1]], verts[t[2]], p) > 0.0 {
                bad.push(t);
            } else {
                keep.push(t);
            }
        }
        tris = keep;
        // Boundary of the cavity: edges belonging to exactly one bad triangle.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for t in &bad {
            for k in 0..3 {
                let e = (t[k], t[(k + 1) % 3]);
                if let Some(pos) = edges.iter().position(|&(a, b)| a == e.1 && b == e.0) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(e);
                }
            }
        }
        for (a, b) in edges {
            if orient(verts[a], verts[b], p) > 0.0 {
                tris.push([a, b, i]);
            }
        }
    }
    tris.retain(|t| t.iter().all(|&v| v < n));
    tris.sort_unstable();
    if tris.is_empty() {
        return Err(WarpError::CollinearInput);
    }
    Ok(Triangulation {
        vertices: points.to_vec(),
        triangles: tris,
    })
}

impl Triangulation {
    pub fn triangle(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        barycentric(self.triangle(t), p)
    }

    /// Lowest-index triangle containing `p` (boundaries inclusive).
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        (0..self.triangles.len()).find(|&t| self.barycentric(t, p).iter().all(|&l| l >= -BARY_EPS))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                0.5 * orient(a, b, c)
            })
            .sum()
    }
}

fn barycentric(tri: [[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = tri;
    let det = orient(a, b, c);
    let l1 = orient(a, p, c) / det;
    let l2 = orient(a, b, p) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// `(x, y) -> (a·x + b·y + tx, c·x + d·y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        c: 0.0,
        d: 1.0,
        ty: 0.0,
    };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [self.a * p[0] + self.b * p[1] + self.tx, self.c * p[0] + self.d * p[1] + self.ty]
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }
}

/// The unique affine map sending each `src[i]` to `dst[i]`.
pub fn affine_from_triangles(src: [[f64; 2]; 3], dst: [[f64; 2]; 3]) -> Result<AffineTransform, WarpError> {
    let ds = orient(src[0], src[1], src[2]);
    let dd = orient(dst[0], dst[1], dst[2]);
    if ds.abs() <= 1e-12 || dd.abs() <= 1e-12 {
        return Err(WarpError::DegenerateTriangle);
    }
    // Express the basis in src edge vectors: M·[e1 e2] = [f1 f2].
    let (e1x, e1y) = (src[1][0] - src[0][0], src[1][1] - src[0][1]);
    let (e2x, e2y) = (src[2][0] - src[0][0], src[2][1] - src[0][1]);
    let (f1x, f1y) = (dst[1][0] - dst[0][0], dst[1][1] - dst[0][1]);
    let (f2x, f2y) = (dst[2][0] - dst[0][0], dst[2][1] - dst[0][1]);
    // inv([e1 e2]) = [e2y -e2x; -e1y e1x] / ds
    let a = (f1x * e2y - f2x * e1y) / ds;
    let b = (-f1x * e2x + f2x * e1x) / ds;
    let c = (f1y * e2y - f2y * e1y) / ds;
    let d = (-f1y * e2x + f2y * e1x) / ds;
    Ok(AffineTransform {
        a,
        b,
        tx: dst[0][0] - a * src[0][0] - b * src[0][1],
        c,
        d,
        ty: dst[0][1] - c * src[0][0] - d * src[0][1],
    })
}

/// A destination mesh paired with matching source vertex positions.
#[derive(Debug, Clone)]
pub struct WarpMesh {
    pub dst: Triangulation,
    pub src_vertices: Vec<[f64; 2]>,
}

impl WarpMesh {
    /// Triangulates `dst` and keeps `src` as per-vertex correspondences.
    pub fn new(src: Vec<[f64; 2]>, dst: Vec<[f64; 2]>) -> Result<Self, WarpError> {
        if src.len() != dst.len() {
            return Err(WarpError::LandmarkCountMismatch(src.len(), dst.len()));
        }
        Ok(Self {
            dst: delaunay(&dst)?,
            src_vertices: src,
        })
    }

    /// Inner-face landmarks of `dst_lms` plus a ring of anchors wide enough to
    /// enclose every pixel with `region` α > 0. Source anchors follow the
    /// best-fit similarity from destination to source.
    pub fn for_face(
        src_lms: &LandmarkSet,
        dst_lms: &LandmarkSet,
        region: &SoftMask,
        map: &IndexMap,
    ) -> Result<Self, WarpError> {
        if src_lms.len() != dst_lms.len() {
            return Err(WarpError::LandmarkCountMismatch(src_lms.len(), dst_lms.len()));
        }
        let idx = map.inner_face();
        let mut src = src_lms.pixels(&idx);
        let mut dst = dst_lms.pixels(&idx);
        let to_src = fit_similarity(&dst, &src)?;
        let hull = convex_hull(&dst)?;
        let c = hull.centroid();
        let factor = 1.05 * anchor_factor(hull.vertices(), c, support_corners(region)).max(1.1);
        for v in hull.vertices() {
            let a = [c[0] + factor * (v[0] - c[0]), c[1] + factor * (v[1] - c[1])];
            dst.push(a);
            src.push(to_src.apply(a));
        }
        Self::new(src, dst)
    }

    pub fn transform(&self, t: usize) -> Result<AffineTransform, WarpError> {
        let [i, j, k] = self.dst.triangles[t];
        affine_from_triangles(
            self.dst.triangle(t),
            [self.src_vertices[i], self.src_vertices[j], self.src_vertices[k]],
        )
    }

    /// Source position for destination point `p` inside triangle `t`:
    /// `p + Σ λᵢ (sᵢ − dᵢ)`, snapped to the nearest integer when within 1e-9.
    pub fn map_point(&self, t: usize, p: [f64; 2]) -> [f64; 2] {
        let l = self.dst.barycentric(t, p);
        let tri = self.dst.triangles[t];
        let mut out = p;
        for (k, &v) in tri.iter().enumerate() {
            let (s, d) = (self.src_vertices[v], self.dst.vertices[v]);
            out[0] += l[k] * (s[0] - d[0]);
            out[1] += l[k] * (s[1] - d[1]);
        }
        out.map(|c| {
            let r = c.round();
            if (c - r).abs() <= SNAP_EPS {
                r
            } else {
                c
            }
        })
    }

    /// Per-pixel triangle index (lowest index wins on shared boundaries).
    pub fn coverage(&self, width: u32, height: u32) -> Vec<Option<u32>> {
        let mut owner = vec![None; width as usize * height as usize];
        if width == 0 || height == 0 {
            return owner;
        }
        for t in 0..self.dst.triangles.len() {
            let tri = self.dst.triangle(t);
            let lo_x = tri.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let hi_x = tri.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max).floor().min(f64::from(width - 1));
            let lo_y = tri.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let hi_y = tri.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max).floor().min(f64::from(height - 1));
            if lo_x > hi_x || lo_y > hi_y {
                continue;
            }
            for y in lo_y as u32..=hi_y as u32 {
                for x in lo_x as u32..=hi_x as u32 {
                    let i = (y * width + x) as usize;
                    if owner[i].is_none()
                        && barycentric(tri, [f64::from(x), f64::from(y)]).iter().all(|&l| l >= -BARY_EPS)
                    {
                        owner[i] = Some(t as u32);
                    }
                }
            }
        }
        owner
    }
}

fn support_corners(region: &SoftMask) -> Vec<[f64; 2]> {
    let (w, h) = region.dimensions();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y) > 0.0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == u32::MAX {
        return Vec::new();
    }
    let (x0, y0, x1, y1) = (f64::from(x0) - 1.0, f64::from(y0) - 1.0, f64::from(x1) + 1.0, f64::from(y1) + 1.0);
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Smallest scale about `c` at which the CCW polygon `v` contains all `pts`.
fn anchor_factor(v: &[[f64; 2]], c: [f64; 2], pts: Vec<[f64; 2]>) -> f64 {
    let n = v.len();
    let mut f = 1.0f64;
    for q in pts {
        for i in 0..n {
            let a = [v[i][0] - c[0], v[i][1] - c[1]];
            let b = [v[(i + 1) % n][0] - c[0], v[(i + 1) % n][1] - c[1]];
            let e = [b[0] - a[0], b[1] - a[1]];
            let k = e[0] * a[1] - e[1] * a[0];
            let l = e[0] * (q[1] - c[1]) - e[1] * (q[0] - c[0]);
            if k < 0.0 {
                f = f.max(l / k);
            }
        }
    }
    f
}

/// Warps `src` onto the destination geometry for every pixel with region α > 0.
///
/// Returns the warped image (zero where invalid) and a validity mask equal to
/// the region α where a triangle covered the pixel and the source position
/// stayed inside the frame.
pub fn warp_region(
    src: &Image,
    src_lms: &LandmarkSet,
    dst_lms: &LandmarkSet,
    region: &SoftMask,
    map: &IndexMap,
) -> Result<(Image, SoftMask), WarpError> {
    ensure_dims(region.dimensions(), dst_lms.source_dimensions())?;
    ensure_dims(src.dimensions(), src_lms.source_dimensions())?;
    let mesh = WarpMesh::for_face(src_lms, dst_lms, region, map)?;
    Ok(warp_with_mesh(src, &mesh, region))
}

pub fn warp_with_mesh(src: &Image, mesh: &WarpMesh, region: &SoftMask) -> (Image, SoftMask) {
    let (w, h) = region.dimensions();
    let owner = mesh.coverage(w, h);
    let (maxx, maxy) = (f64::from(src.width()) - 1.0, f64::from(src.height()) - 1.0);
    let rows: Vec<(Vec<f32>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = vec![0.0f32; w as usize * 3];
            let mut valid = vec![0.0f32; w as usize];
            for x in 0..w {
                let a = region.get(x, y);
                if a <= 0.0 {
                    continue;
                }
                let Some(t) = owner[(y * w + x) as usize] else { continue };
                let s = mesh.map_point(t as usize, [f64::from(x), f64::from(y)]);
                if !(s[0] >= 0.0 && s[0] <= maxx && s[1] >= 0.0 && s[1] <= maxy) {
                    continue;
                }
                let px = sample_bilinear(src, s[0], s[1]);
                rgb[x as usize * 3..x as usize * 3 + 3].copy_from_slice(&px);
                valid[x as usize] = a;
            }
            (rgb, valid)
        })
        .collect();
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    let mut alpha = Vec::with_capacity(w as usize * h as usize);
    for (rgb, valid) in rows {
        data.extend(rgb);
        alpha.extend(valid);
    }
    (
        Image::from_raw(w, h, data).expect("row buffers match dimensions"),
        SoftMask::from_raw(w, h, alpha).expect("row buffers match dimensions"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{portrait_image, portrait_landmarks, PortraitParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Circumcircle by explicit center/radius, independent of `in_circle`.
    fn circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ([f64; 2], f64) {
        let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
        let a2 = a[0] * a[0] + a[1] * a[1];
        let b2 = b[0] * b[0] + b[1] * b[1];
        let c2 = c[0] * c[0] + c[1] * c[1];
        let ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d;
        let uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d;
        ([ux, uy], ((a[0] - ux).powi(2) + (a[1] - uy).powi(2)).sqrt())
    }

    fn assert_empty_circumcircles(t: &Triangulation) {
        for tri in &t.triangles {
            let [a, b, c] = tri.map(|i| t.vertices[i]);
            assert!(orient(a, b, c) > 0.0, "triangle not CCW");
            let (center, r) = circumcircle(a, b, c);
            for (i, p) in t.vertices.iter().enumerate() {
                if tri.contains(&i) {
                    continue;
                }
                let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
                assert!(d >= r * (1.0 - 1e-9), "vertex {i} inside circumcircle of {tri:?}");
            }
        }
    }

    fn hull_area(points: &[[f64; 2]]) -> f64 {
        convex_hull(points).unwrap().area()
    }

    #[test]
    fn delaunay_small_cases() {
        let t = delaunay(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(t.triangles.len(), 1);
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let t = delaunay(&sq).unwrap();
        assert_eq!(t.triangles.len(), 2);
        assert_empty_circumcircles(&t);
        assert!((t.area() - 1.0).abs() < 1e-12);
        assert!(matches!(delaunay(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), Err(WarpError::CollinearInput)));
        assert!(matches!(delaunay(&[[0.0, 0.0], [1.0, 1.0]]), Err(WarpError::FewerThanThreePoints)));
    }

    #[test]
    fn delaunay_random_sets_are_empty_circumcircle_and_cover_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let pts: Vec<[f64; 2]> = (0..100).map(|_| [rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)]).collect();
            let t = delaunay(&pts).unwrap();
            assert_empty_circumcircles(&t);
            assert!((t.area() - hull_area(&pts)).abs() < 1e-6 * hull_area(&pts));
            // Euler: 2n − 2 − h triangles for n points with h on the hull.
            let h = convex_hull(&pts).unwrap().vertices().len();
            assert_eq!(t.triangles.len(), 2 * pts.len() - 2 - h);
        }
    }

    #[test]
    fn delaunay_skips_duplicates() {
        let pts = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 0.0], [3.0, 3.0]];
        let t = delaunay(&pts).unwrap();
        assert!(t.triangles.iter().all(|tri| !tri.contains(&3)));
        assert!((t.area() - 12.0).abs() < 1e-9);
    }

    #[test]
    fn affine_examples() {
        let s = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(affine_from_triangles(s, s).unwrap(), AffineTransform::IDENTITY);
        let m = affine_from_triangles(s, s.map(|p| [p[0] + 5.0, p[1] - 2.0])).unwrap();
        assert_eq!((m.a, m.b, m.c, m.d, m.tx, m.ty), (1.0, 0.0, 0.0, 1.0, 5.0, -2.0));
        let m = affine_from_triangles(s, [[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]]).unwrap();
        assert_eq!((m.a, m.b, m.c, m.d, m.tx, m.ty), (2.0, 0.0, 0.0, 3.0, 0.0, 0.0));
        assert!(matches!(
            affine_from_triangles([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], s),
            Err(WarpError::DegenerateTriangle)
        ));
    }

    #[test]
    fn affine_maps_vertices_exactly_enough() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let tri = || -> [[f64; 2]; 3] { [0; 3].map(|_| [0.0, 0.0]) };
            let mut s = tri();
            let mut d = tri();
            for k in 0..3 {
                s[k] = [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)];
                d[k] = [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)];
            }
            let Ok(m) = affine_from_triangles(s, d) else { continue };
            for k in 0..3 {
                let p = m.apply(s[k]);
                assert!((p[0] - d[k][0]).abs() < 1e-7 && (p[1] - d[k][1]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn shared_edges_map_continuously() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dst: Vec<[f64; 2]> = (0..60).map(|_| [rng.random_range(0.0..400.0), rng.random_range(0.0..400.0)]).collect();
        let src: Vec<[f64; 2]> = dst
            .iter()
            .map(|p| [p[0] + rng.random_range(-8.0..8.0), p[1] + rng.random_range(-8.0..8.0)])
            .collect();
        let mesh = WarpMesh::new(src, dst).unwrap();
        let mut shared = Vec::new();
        let tris = &mesh.dst.triangles;
        for (i, a) in tris.iter().enumerate() {
            for (j, b) in tris.iter().enumerate().skip(i + 1) {
                let common: Vec<usize> = a.iter().copied().filter(|v| b.contains(v)).collect();
                if common.len() == 2 {
                    shared.push((i, j, common[0], common[1]));
                }
            }
        }
        for k in 0..1000 {
            let (i, j, u, v) = shared[k % shared.len()];
            let t: f64 = rng.random();
            let (pu, pv) = (mesh.dst.vertices[u], mesh.dst.vertices[v]);
            let p = [pu[0] + t * (pv[0] - pu[0]), pu[1] + t * (pv[1] - pu[1])];
            let qi = mesh.transform(i).unwrap().apply(p);
            let qj = mesh.transform(j).unwrap().apply(p);
            assert!((qi[0] - qj[0]).abs() < 1e-9 && (qi[1] - qj[1]).abs() < 1e-9);
        }
    }

    fn fixture() -> (Image, LandmarkSet) {
        let p = PortraitParams {
            width: 200,
            height: 200,
            ..PortraitParams::default()
        };
        (portrait_image(&p), portrait_landmarks(&p))
    }

    fn face_region(lms: &LandmarkSet) -> SoftMask {
        let hull = crate::masking::face_hull(lms, &IndexMap::default(), 1.2).unwrap();
        crate::masking::rasterize_mask(&hull, lms.source_width(), lms.source_height())
    }

    #[test]
    fn identity_landmarks_give_identity_warp() {
        let (img, lms) = fixture();
        let region = face_region(&lms);
        let (out, valid) = warp_region(&img, &lms, &lms, &region, &IndexMap::default()).unwrap();
        for y in 0..200 {
            for x in 0..200 {
                if region.get(x, y) > 0.0 {
                    assert_eq!(valid.get(x, y), region.get(x, y));
                    assert_eq!(out.pixel(x, y), img.pixel(x, y), "({x},{y})");
                } else {
                    assert_eq!(valid.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn integer_translation_is_byte_exact() {
        let (img, lms) = fixture();
        let moved = lms.map_pixels(|p| [p[0] + 10.0, p[1]]).unwrap();
        let region = face_region(&moved);
        let (out, valid) = warp_region(&img, &lms, &moved, &region, &IndexMap::default()).unwrap();
        let mut checked = 0;
        for y in 0..200 {
            for x in 10..200 {
                if valid.get(x, y) > 0.0 {
                    assert_eq!(out.to_rgb8().get_pixel(x, y), img.to_rgb8().get_pixel(x - 10, y));
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn uncovered_pixels_are_invalid() {
        let (img, _) = fixture();
        let mesh = WarpMesh::new(
            vec![[10.0, 10.0], [50.0, 10.0], [10.0, 50.0]],
            vec![[10.0, 10.0], [50.0, 10.0], [10.0, 50.0]],
        )
        .unwrap();
        let region = SoftMask::filled(200, 200, 1.0);
        let (_, valid) = warp_with_mesh(&img, &mesh, &region);
        assert_eq!(valid.get(100, 100), 0.0);
        assert_eq!(valid.get(20, 20), 1.0);
    }

    #[test]
    fn round_trip_is_close_away_from_edges() {
        // Smooth content so bilinear resampling error stays small.
        let img = Image::from_fn(200, 200, |x, y| {
            let (u, v) = (f64::from(x) / 200.0, f64::from(y) / 200.0);
            [
                (0.5 + 0.4 * (3.0 * u).sin() * (2.0 * v).cos()) as f32,
                (0.3 + 0.5 * u * v) as f32,
                (0.6 - 0.3 * (4.0 * v).sin()) as f32,
            ]
        });
        let (_, lms) = fixture();
        let c = [100.0, 100.0];
        let rot = |p: [f64; 2], deg: f64| {
            let (s, co) = deg.to_radians().sin_cos();
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            [c[0] + co * dx - s * dy + 3.0, c[1] + s * dx + co * dy - 2.0]
        };
        let moved = lms.map_pixels(|p| rot(p, 6.0)).unwrap();
        let map = IndexMap::default();
        let fwd = face_region(&moved);
        let (warped, _) = warp_region(&img, &lms, &moved, &fwd, &map).unwrap();
        let back_region = face_region(&lms);
        let (back, valid) = warp_region(&warped, &moved, &lms, &back_region, &map).unwrap();
        let inner = crate::masking::rasterize_mask(
            &crate::masking::face_hull(&lms, &map, 0.8).unwrap(),
            200,
            200,
        );
        for y in 0..200 {
            for x in 0..200 {
                if inner.get(x, y) == 1.0 && valid.get(x, y) > 0.0 {
                    let (a, b) = (back.pixel(x, y), img.pixel(x, y));
                    for k in 0..3 {
                        assert!((a[k] - b[k]).abs() <= 1.0 / 255.0, "({x},{y})");
                    }
                }
            }
        }
    }

    #[test]
    fn parallel_rows_match_sequential_lookup() {
        let (img, lms) = fixture();
        let moved = lms.map_pixels(|p| [p[0] * 1.03 - 2.5, p[1] * 0.98 + 1.25]).unwrap();
        let region = face_region(&moved);
        let mesh = WarpMesh::for_face(&lms, &moved, &region, &IndexMap::default()).unwrap();
        let (out, valid) = warp_with_mesh(&img, &mesh, &region);
        let mut checked = 0;
        for (x, y) in (0..200u32).step_by(7).flat_map(|y| (0..200u32).step_by(5).map(move |x| (x, y))) {
            if region.get(x, y) < 1.0 {
                continue;
            }
            checked += 1;
            let t = mesh.dst.locate([f64::from(x), f64::from(y)]).unwrap();
            let s = mesh.map_point(t, [f64::from(x), f64::from(y)]);
            assert_eq!(out.pixel(x, y), sample_bilinear(&img, s[0], s[1]));
            assert_eq!(valid.get(x, y), 1.0);
        }
        assert!(checked > 40);
    }
}
