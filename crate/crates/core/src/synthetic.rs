//! Procedural portraits with matching 468-point landmark sets.
//!
//! Used for the bundled fixtures, the runnable examples and tests. Faces are
//! built in a face-local frame `(u, v)` where the face oval is the unit
//! circle, then scaled, rotated and placed in the image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::Image;
use crate::landmarks::{IndexMap, LandmarkSet, FACEMESH_POINT_COUNT};

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitParams {
    pub width: u32,
    pub height: u32,
    /// Face center, normalized to the frame.
    pub center: [f64; 2],
    /// Half-width of the face oval, as a fraction of the frame width.
    pub half_width: f64,
    /// Half-height of the face oval, as a fraction of the frame height.
    pub half_height: f64,
    pub roll_degrees: f64,
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub iris: [f32; 3],
    pub lips: [f32; 3],
    pub shirt: [f32; 3],
    pub background_top: [f32; 3],
    pub background_bottom: [f32; 3],
    pub seed: u64,
}

impl Default for PortraitParams {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            center: [0.5, 0.46],
            half_width: 0.2,
            half_height: 0.27,
            roll_degrees: 0.0,
            skin: [0.87, 0.69, 0.58],
            hair: [0.23, 0.15, 0.09],
            iris: [0.40, 0.25, 0.12],
            lips: [0.72, 0.36, 0.38],
            shirt: [0.20, 0.30, 0.52],
            background_top: [0.62, 0.72, 0.58],
            background_bottom: [0.38, 0.46, 0.35],
            seed: 1,
        }
    }
}

impl PortraitParams {
    /// Five distinct subjects used as the bundled fixture set.
    pub fn fixture(index: usize) -> Self {
        let base = Self::default();
        match index % 5 {
            0 => base,
            1 => Self {
                center: [0.47, 0.48],
                half_width: 0.18,
                half_height: 0.25,
                roll_degrees: -4.0,
                skin: [0.55, 0.38, 0.27],
                hair: [0.06, 0.05, 0.05],
                iris: [0.18, 0.11, 0.06],
                lips: [0.45, 0.24, 0.22],
                shirt: [0.85, 0.85, 0.82],
                background_top: [0.75, 0.62, 0.50],
                background_bottom: [0.52, 0.40, 0.30],
                seed: 2,
                ..base
            },
            2 => Self {
                center: [0.53, 0.45],
                half_width: 0.21,
                half_height: 0.29,
                roll_degrees: 3.0,
                skin: [0.95, 0.80, 0.72],
                hair: [0.80, 0.65, 0.35],
                iris: [0.25, 0.45, 0.65],
                lips: [0.85, 0.45, 0.50],
                shirt: [0.12, 0.12, 0.14],
                background_top: [0.55, 0.65, 0.85],
                background_bottom: [0.30, 0.38, 0.60],
                seed: 3,
                ..base
            },
            3 => Self {
                center: [0.5, 0.5],
                half_width: 0.17,
                half_height: 0.23,
                roll_degrees: 1.5,
                skin: [0.76, 0.57, 0.43],
                hair: [0.35, 0.33, 0.32],
                iris: [0.30, 0.40, 0.25],
                lips: [0.62, 0.35, 0.33],
                shirt: [0.55, 0.15, 0.15],
                background_top: [0.85, 0.85, 0.80],
                background_bottom: [0.65, 0.62, 0.58],
                seed: 4,
                ..base
            },
            _ => Self {
                center: [0.49, 0.44],
                half_width: 0.22,
                half_height: 0.28,
                roll_degrees: -2.0,
                skin: [0.66, 0.48, 0.36],
                hair: [0.45, 0.18, 0.08],
                iris: [0.35, 0.20, 0.08],
                lips: [0.60, 0.28, 0.30],
                shirt: [0.30, 0.45, 0.30],
                background_top: [0.40, 0.40, 0.48],
                background_bottom: [0.22, 0.22, 0.30],
                seed: 5,
                ..base
            },
        }
    }

    fn geometry(&self) -> FaceGeometry {
        let (s, c) = self.roll_degrees.to_radians().sin_cos();
        FaceGeometry {
            cx: self.center[0] * f64::from(self.width),
            cy: self.center[1] * f64::from(self.height),
            a: self.half_width * f64::from(self.width),
            b: self.half_height * f64::from(self.height),
            sin: s,
            cos: c,
        }
    }
}

struct FaceGeometry {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    sin: f64,
    cos: f64,
}

impl FaceGeometry {
    fn to_pixel(&self, u: f64, v: f64) -> [f64; 2] {
        let (x, y) = (u * self.a, v * self.b);
        [
            self.cx + self.cos * x - self.sin * y,
            self.cy + self.sin * x + self.cos * y,
        ]
    }

    fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let x = self.cos * dx + self.sin * dy;
        let y = -self.sin * dx + self.cos * dy;
        (x / self.a, y / self.b)
    }
}

fn ring(n: usize, cu: f64, cv: f64, ru: f64, rv: f64, phase: f64) -> impl Iterator<Item = (f64, f64)> {
    (0..n).map(move |k| {
        let t = phase + std::f64::consts::TAU * k as f64 / n as f64;
        (cu + ru * t.cos(), cv + rv * t.sin())
    })
}

/// Face-local coordinates for every landmark index.
fn local_layout(params: &PortraitParams, map: &IndexMap) -> Vec<(f64, f64)> {
    let mut pts: Vec<Option<(f64, f64)>> = vec![None; FACEMESH_POINT_COUNT];
    let mut place = |indices: &[usize], coords: Vec<(f64, f64)>| {
        for (&i, c) in indices.iter().zip(coords) {
            pts[i] = Some(c);
        }
    };
    place(&map.right_eye, ring(map.right_eye.len(), -0.38, -0.15, 0.18, 0.07, 0.0).collect());
    place(&map.left_eye, ring(map.left_eye.len(), 0.38, -0.15, 0.18, 0.07, 0.0).collect());
    place(&map.mouth, ring(map.mouth.len(), 0.0, 0.45, 0.35, 0.1, 0.1).collect());
    place(&map.face_oval, ring(map.face_oval.len(), 0.0, 0.0, 1.0, 1.0, -std::f64::consts::FRAC_PI_2).collect());
    let nose: Vec<(f64, f64)> = (0..8)
        .map(|k| (0.0, -0.12 + 0.04 * k as f64))
        .chain(ring(map.nose.len().saturating_sub(8), 0.0, 0.24, 0.16, 0.07, 0.2))
        .collect();
    place(&map.nose, nose);
    let cheeks: Vec<(f64, f64)> = (0..map.cheeks.len())
        .map(|k| {
            let side = if k % 2 == 0 { -1.0 } else { 1.0 };
            let j = k / 2;
            (side * (0.48 + 0.08 * (j % 3) as f64), 0.02 + 0.09 * (j / 3) as f64)
        })
        .collect();
    place(&map.cheeks, cheeks);
    let brow = |side: f64, n: usize| -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let t = k as f64 / (n.max(2) - 1) as f64;
                let u = side * (0.18 + 0.4 * t);
                (u, -0.36 - 0.06 * (1.0 - (2.0 * t - 1.0).powi(2)))
            })
            .collect()
    };
    place(&map.right_brow, brow(-1.0, map.right_brow.len()));
    place(&map.left_brow, brow(1.0, map.left_brow.len()));

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_1a4d);
    pts.into_iter()
        .map(|p| {
            p.unwrap_or_else(|| {
                // Unassigned indices scatter over the face oval.
                let r = 0.88 * rng.random::<f64>().sqrt();
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                (r * t.cos(), r * t.sin())
            })
        })
        .collect()
}

pub fn portrait_landmarks(params: &PortraitParams) -> LandmarkSet {
    let map = IndexMap::default();
    let g = params.geometry();
    let (w, h) = (f64::from(params.width), f64::from(params.height));
    let points = local_layout(params, &map)
        .into_iter()
        .map(|(u, v)| {
            let p = g.to_pixel(u, v);
            [(p[0] / w).clamp(0.0, 1.0), (p[1] / h).clamp(0.0, 1.0), 0.05 * (u * u + v * v)]
        })
        .collect();
    LandmarkSet::new(points, params.width, params.height).expect("synthetic layout stays in frame")
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f32; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (f64::from(b[0]) - a[0]) * t,
        a[1] + (f64::from(b[1]) - a[1]) * t,
        a[2] + (f64::from(b[2]) - a[2]) * t,
    ]
}

/// Inside-ness of an ellipse with a soft edge of `soft` (in normalized radius).
fn ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64, soft: f64) -> f64 {
    let d = (((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2)).sqrt();
    1.0 - smoothstep(1.0 - soft, 1.0 + soft, d)
}

fn hash_noise(seed: u64, x: u32, y: u32) -> f64 {
    let mut h = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (u64::from(x) << 32 | u64::from(y));
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

pub fn portrait_image(params: &PortraitParams) -> Image {
    let g = params.geometry();
    let px_soft = 1.5 / g.a.min(g.b);
    Image::from_fn(params.width, params.height, |x, y| {
        let (px, py) = (f64::from(x), f64::from(y));
        let (u, v) = g.to_local(px, py);
        let ty = py / f64::from(params.height);
        let top = params.background_top.map(f64::from);
        let mut c = mix(top, params.background_bottom, ty);
        let wave = 0.03 * ((px * 0.05).sin() * (py * 0.035).cos());
        c = c.map(|ch| ch + wave);

        let shoulders = ellipse(u, v, 0.0, 2.75, 2.5, 1.55, px_soft);
        c = mix(c, params.shirt, shoulders);
        let neck = (1.0 - smoothstep(0.42, 0.42 + px_soft, u.abs())) * smoothstep(0.6, 0.7, v) * (1.0 - smoothstep(1.45, 1.5, v));
        let neck_tone = params.skin.map(|s| s * 0.85);
        c = mix(c, neck_tone, neck);
        let hair = ellipse(u, v, 0.0, -0.22, 1.14, 1.08, px_soft);
        c = mix(c, params.hair, hair);

        let face = ellipse(u, v, 0.0, 0.0, 1.0, 1.0, px_soft);
        let shade = 0.9 + 0.1 * (-0.6 * u - 0.4 * v).tanh();
        let skin = params.skin.map(|s| (f64::from(s) * shade) as f32);
        c = mix(c, skin, face);
        let blush = 0.25 * (ellipse(u, v, -0.55, 0.18, 0.2, 0.14, 0.6) + ellipse(u, v, 0.55, 0.18, 0.2, 0.14, 0.6));
        c = mix(c, params.lips, blush * face);

        for side in [-1.0, 1.0] {
            let brow_v = -0.36 - 0.06 * (1.0 - ((u * side - 0.38) / 0.2).powi(2)).max(0.0);
            let brow = (1.0 - smoothstep(0.0, 0.025, (v - brow_v).abs()))
                * (1.0 - smoothstep(0.18, 0.22, (u * side - 0.38).abs()));
            c = mix(c, params.hair, brow * face);
            let sclera = ellipse(u, v, side * 0.38, -0.15, 0.18, 0.07, 0.12);
            c = mix(c, [0.94, 0.93, 0.90], sclera);
            let iris = ellipse(u * g.a, v * g.b, side * 0.38 * g.a, -0.15 * g.b, 0.055 * g.a, 0.055 * g.a, 0.1);
            c = mix(c, params.iris, iris * sclera);
            let pupil = ellipse(u * g.a, v * g.b, side * 0.38 * g.a, -0.15 * g.b, 0.022 * g.a, 0.022 * g.a, 0.15);
            c = mix(c, [0.03, 0.03, 0.03], pupil * sclera);
            let nostril = ellipse(u, v, side * 0.07, 0.26, 0.035, 0.02, 0.3);
            c = mix(c, params.skin.map(|s| s * 0.45), nostril);
        }
        let bridge = (1.0 - smoothstep(0.0, 0.05, u.abs())) * smoothstep(-0.15, -0.05, v) * (1.0 - smoothstep(0.2, 0.26, v));
        c = mix(c, params.skin.map(|s| s * 0.8), 0.5 * bridge * face);

        let lips = ellipse(u, v, 0.0, 0.45, 0.35, 0.1, 0.1);
        c = mix(c, params.lips, lips);
        let seam = (1.0 - smoothstep(0.0, 0.012, (v - 0.45).abs())) * lips;
        c = mix(c, params.lips.map(|s| s * 0.5), seam);

        let n = 0.035 * hash_noise(params.seed, x, y);
        [(c[0] + n) as f32, (c[1] + n) as f32, (c[2] + n) as f32]
    })
    .quantized()
}

/// A smooth studio backdrop: a radial vignette over a cool gray.
pub fn studio_backdrop(width: u32, height: u32) -> Image {
    let (cx, cy) = (f64::from(width) * 0.5, f64::from(height) * 0.4);
    let r = f64::from(width.max(height));
    Image::from_fn(width, height, |x, y| {
        let d = ((f64::from(x) - cx).hypot(f64::from(y) - cy) / r).min(1.0);
        let k = (0.78 - 0.35 * d * d) as f32;
        [k * 0.92, k * 0.95, k]
    })
    .quantized()
}
