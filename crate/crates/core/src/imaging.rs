//! Raster primitives: RGB and single-channel buffers, separable Gaussian
//! blur, Canny edges, bilinear sampling and 8-bit codec boundaries.
//!
//! All intensities are `f32` in `[0, 1]`. Borders are clamp-to-edge for both
//! sampling and convolution.

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageEncoder, ImageReader};
use thiserror::Error;

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Gaussian pre-smoothing applied inside [`canny_edges`].
pub const CANNY_SMOOTHING_SIGMA: f32 = 1.0;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("buffer length {len} does not match {width}x{height}x{channels}")]
    BufferLength {
        len: usize,
        width: u32,
        height: u32,
        channels: usize,
    },
    #[error("codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major RGB raster, three `f32` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

/// Row-major luma raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

/// Per-pixel alpha in `[0, 1]`. Binary masks are the `{0, 1}` special case.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: u32,
    height: u32,
    alpha: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    /// Values are clamped into `[0, 1]`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y).map(clamp01));
            }
        }
        Self { width, height, data }
    }

    /// Values are clamped into `[0, 1]`.
    pub fn from_raw(width: u32, height: u32, mut data: Vec<f32>) -> Result<Self, ImagingError> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(ImagingError::BufferLength {
                len: data.len(),
                width,
                height,
                channels: 3,
            });
        }
        for v in &mut data {
            *v = clamp01(*v);
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = self.index(x, y);
        self.data[i] = clamp01(rgb[0]);
        self.data[i + 1] = clamp01(rgb[1]);
        self.data[i + 2] = clamp01(rgb[2]);
    }

    /// One channel as a contiguous plane.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.data.iter().map(|&v| to_u8(v)).collect();
        image::RgbImage::from_raw(self.width, self.height, raw).expect("buffer sized by construction")
    }

    /// Quantizes to 8 bits and back, as a codec round trip would.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f32::from(to_u8(v)) / 255.0).collect(),
        }
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: u32, height: u32, v: f32) -> Self {
        Self {
            width,
            height,
            data: vec![v; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<f32>) -> Result<Self, ImagingError> {
        if data.len() != width as usize * height as usize {
            return Err(ImagingError::BufferLength {
                len: data.len(),
                width,
                height,
                channels: 1,
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        let i = y as usize * self.width as usize + x as usize;
        self.data[i] = v;
    }
}

impl SoftMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: u32, height: u32, alpha: f32) -> Self {
        Self {
            width,
            height,
            alpha: vec![clamp01(alpha); width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut alpha = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                alpha.push(clamp01(f(x, y)));
            }
        }
        Self { width, height, alpha }
    }

    /// Values are clamped into `[0, 1]`.
    pub fn from_raw(width: u32, height: u32, mut alpha: Vec<f32>) -> Result<Self, ImagingError> {
        if alpha.len() != width as usize * height as usize {
            return Err(ImagingError::BufferLength {
                len: alpha.len(),
                width,
                height,
                channels: 1,
            });
        }
        for a in &mut alpha {
            *a = clamp01(*a);
        }
        Ok(Self { width, height, alpha })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.alpha[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, a: f32) {
        let i = y as usize * self.width as usize + x as usize;
        self.alpha[i] = clamp01(a);
    }

    /// Σα over the frame.
    pub fn sum(&self) -> f64 {
        self.alpha.iter().map(|&a| f64::from(a)).sum()
    }

    /// Number of pixels with α > 0.
    pub fn support(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0.0).count()
    }

    /// Binarizes at `threshold` (inclusive).
    pub fn binarized(&self, threshold: f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            alpha: self
                .alpha
                .iter()
                .map(|&a| if a >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Per-pixel maximum of two masks of equal size.
    pub fn max(&self, other: &SoftMask) -> Result<Self, ImagingError> {
        ensure_dims(self.dimensions(), other.dimensions())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            alpha: self.alpha.iter().zip(&other.alpha).map(|(a, b)| a.max(*b)).collect(),
        })
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.alpha.iter().map(|&v| to_u8(v)).collect();
        image::GrayImage::from_raw(self.width, self.height, raw).expect("buffer sized by construction")
    }
}

/// Single-plane rasters that can be convolved.
pub trait Plane: Sized {
    fn plane_dims(&self) -> (u32, u32);
    fn plane_data(&self) -> &[f32];
    fn with_plane_data(&self, data: Vec<f32>) -> Self;
}

impl Plane for GrayImage {
    fn plane_dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
    fn plane_data(&self) -> &[f32] {
        &self.data
    }
    fn with_plane_data(&self, data: Vec<f32>) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

impl Plane for SoftMask {
    fn plane_dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
    fn plane_data(&self) -> &[f32] {
        &self.alpha
    }
    fn with_plane_data(&self, data: Vec<f32>) -> Self {
        Self {
            width: self.width,
            height: self.height,
            alpha: data.into_iter().map(clamp01).collect(),
        }
    }
}

#[inline]
pub fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

pub(crate) fn ensure_dims(expected: (u32, u32), actual: (u32, u32)) -> Result<(), ImagingError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ImagingError::DimensionMismatch { expected, actual })
    }
}

pub fn to_grayscale(img: &Image) -> GrayImage {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| clamp01(wr * p[0] + wg * p[1] + wb * p[2]))
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Normalized 1-D Gaussian taps, truncated at radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i32;
    let s2 = 2.0 * f64::from(sigma) * f64::from(sigma);
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-(f64::from(i * i)) / s2).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / total) as f32).collect()
}

pub fn gaussian_blur<P: Plane>(img: &P, sigma: f32) -> Result<P, ImagingError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(ImagingError::Parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let (w, h) = img.plane_dims();
    if sigma == 0.0 {
        return Ok(img.with_plane_data(img.plane_data().to_vec()));
    }
    Ok(img.with_plane_data(blur_plane(img.plane_data(), w, h, sigma)))
}

pub(crate) fn blur_plane(src: &[f32], width: u32, height: u32, sigma: f32) -> Vec<f32> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (width as i64, height as i64);
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        let row = &src[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0f64;
            for (k, &t) in kernel.iter().enumerate() {
                let xx = (x + k as i64 - r).clamp(0, w - 1);
                acc += f64::from(t) * f64::from(row[xx as usize]);
            }
            tmp[(y * w + x) as usize] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (k, &t) in kernel.iter().enumerate() {
                let yy = (y + k as i64 - r).clamp(0, h - 1);
                acc += f64::from(t) * f64::from(tmp[(yy * w + x) as usize]);
            }
            out[(y * w + x) as usize] = acc as f32;
        }
    }
    out
}

/// Canny edge map with thresholds on the Sobel magnitude normalized so a unit
/// step scores at most 1.
pub fn canny_edges(img: &GrayImage, low: f32, high: f32) -> Result<SoftMask, ImagingError> {
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
        return Err(ImagingError::Parameter(format!(
            "canny thresholds need 0 <= low <= high <= 1, got low={low} high={high}"
        )));
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let mut edges = SoftMask::new(img.width, img.height);
    if w == 0 || h == 0 {
        return Ok(edges);
    }

    // Work relative to one reference pixel so adding a constant to the whole
    // image yields identical arithmetic downstream.
    let reference = f64::from(img.data[0]);
    let shifted: Vec<f64> = img.data.iter().map(|&v| f64::from(v) - reference).collect();
    let smooth = blur_plane_f64(&shifted, w, h, f64::from(CANNY_SMOOTHING_SIGMA));

    let at = |x: i64, y: i64| -> f64 {
        let xx = x.clamp(0, w as i64 - 1) as usize;
        let yy = y.clamp(0, h as i64 - 1) as usize;
        smooth[yy * w + xx]
    };
    let mut mag = vec![0.0f64; w * h];
    let mut sector = vec![0u8; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            mag[i] = (gx * gx + gy * gy).sqrt() / 4.0;
            sector[i] = gradient_sector(gx, gy);
        }
    }

    // Non-maximum suppression. Ties resolve toward the trailing neighbor so a
    // symmetric ridge yields a single pixel.
    let mut thin = vec![0.0f64; w * h];
    let m = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v <= 0.0 {
                continue;
            }
            let (dx, dy) = match sector[i] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            if v >= m(x - dx, y - dy) && v > m(x + dx, y + dy) {
                thin[i] = v;
            }
        }
    }

    // Hysteresis, 8-connected.
    let (low, high) = (f64::from(low), f64::from(high));
    let mut stack = Vec::new();
    for (i, &v) in thin.iter().enumerate() {
        if v > 0.0 && v >= high && edges.alpha[i] == 0.0 {
            edges.alpha[i] = 1.0;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (jx, jy) = ((j % w) as i64, (j / w) as i64);
                for ny in jy - 1..=jy + 1 {
                    for nx in jx - 1..=jx + 1 {
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let k = ny as usize * w + nx as usize;
                        if edges.alpha[k] == 0.0 && thin[k] > 0.0 && thin[k] >= low {
                            edges.alpha[k] = 1.0;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    Ok(edges)
}

fn gradient_sector(gx: f64, gy: f64) -> u8 {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        0
    } else if angle < 67.5 {
        1
    } else if angle < 112.5 {
        2
    } else {
        3
    }
}

fn blur_plane_f64(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let kernel: Vec<f64> = taps.iter().map(|t| t / total).collect();
    let (wi, hi) = (w as i64, h as i64);
    let mut tmp = vec![0.0; src.len()];
    for y in 0..hi {
        for x in 0..wi {
            let mut acc = 0.0;
            for (k, t) in kernel.iter().enumerate() {
                let xx = (x + k as i64 - radius).clamp(0, wi - 1);
                acc += t * src[(y * wi + xx) as usize];
            }
            tmp[(y * wi + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..hi {
        for x in 0..wi {
            let mut acc = 0.0;
            for (k, t) in kernel.iter().enumerate() {
                let yy = (y + k as i64 - radius).clamp(0, hi - 1);
                acc += t * tmp[(yy * wi + x) as usize];
            }
            out[(y * wi + x) as usize] = acc;
        }
    }
    out
}

/// Bilinear sample with coordinates clamped to the frame.
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> [f32; 3] {
    let maxx = f64::from(img.width.saturating_sub(1));
    let maxy = f64::from(img.height.saturating_sub(1));
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, maxx) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, maxy) };
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let p00 = img.pixel(x0, y0);
    let p10 = img.pixel(x1, y0);
    let p01 = img.pixel(x0, y1);
    let p11 = img.pixel(x1, y1);
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = p00[c] + fx * (p10[c] - p00[c]);
        let bottom = p01[c] + fx * (p11[c] - p01[c]);
        out[c] = top + fy * (bottom - top);
    }
    out
}

/// Peak signal-to-noise ratio in dB over pixels where `weight` is set.
/// Returns infinity for identical inputs.
pub fn psnr(a: &Image, b: &Image, region: Option<&SoftMask>) -> Result<f64, ImagingError> {
    ensure_dims(a.dimensions(), b.dimensions())?;
    if let Some(r) = region {
        ensure_dims(a.dimensions(), r.dimensions())?;
    }
    let mut se = 0.0f64;
    let mut n = 0usize;
    for i in 0..(a.width as usize * a.height as usize) {
        if let Some(r) = region {
            if r.alpha[i] < 0.5 {
                continue;
            }
        }
        for c in 0..3 {
            let d = f64::from(a.data[i * 3 + c]) - f64::from(b.data[i * 3 + c]);
            se += d * d;
        }
        n += 3;
    }
    if n == 0 || se == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / (se / n as f64)).log10())
}

/// Encoded container for the codec boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Png,
    Jpeg { quality: u8 },
}

impl Encoding {
    /// PNG for `.png`, JPEG otherwise.
    pub fn for_path(path: &Path, jpeg_quality: u8) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "png" => Encoding::Png,
            _ => Encoding::Jpeg { quality: jpeg_quality },
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self {
            Encoding::Png => "image/png",
            Encoding::Jpeg { .. } => "image/jpeg",
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Encoding::Png => "png",
            Encoding::Jpeg { .. } => "jpg",
        }
    }
}

pub fn encode_image(img: &Image, encoding: Encoding) -> Result<Vec<u8>, ImagingError> {
    let rgb = img.to_rgb8();
    let mut out = Vec::new();
    match encoding {
        Encoding::Png => {
            image::codecs::png::PngEncoder::new(&mut out).write_image(
                rgb.as_raw(),
                rgb.width(),
                rgb.height(),
                image::ExtendedColorType::Rgb8,
            )?;
        }
        Encoding::Jpeg { quality } => {
            JpegEncoder::new_with_quality(&mut out, quality.clamp(1, 100)).write_image(
                rgb.as_raw(),
                rgb.width(),
                rgb.height(),
                image::ExtendedColorType::Rgb8,
            )?;
        }
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, ImagingError> {
    let reader = ImageReader::new(Cursor::new(bytes)).with_guessed_format()?;
    let dynamic = reader.decode()?;
    Ok(Image::from_rgb8(&dynamic.to_rgb8()))
}

pub fn load_image(path: &Path) -> Result<Image, ImagingError> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

pub fn save_image(img: &Image, path: &Path, jpeg_quality: u8) -> Result<(), ImagingError> {
    let bytes = encode_image(img, Encoding::for_path(path, jpeg_quality))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes a mask as a single-channel PNG.
pub fn save_mask_png(mask: &SoftMask, path: &Path) -> Result<(), ImagingError> {
    mask.to_luma8().save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn encode_mask_png(mask: &SoftMask) -> Result<Vec<u8>, ImagingError> {
    let luma = mask.to_luma8();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        luma.as_raw(),
        luma.width(),
        luma.height(),
        image::ExtendedColorType::L8,
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grayscale_examples() {
        let white = Image::filled(4, 3, [1.0; 3]);
        assert!(to_grayscale(&white).data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let gray = Image::filled(2, 2, [0.37; 3]);
        assert!(to_grayscale(&gray).data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        let red = Image::filled(1, 1, [1.0, 0.0, 0.0]);
        assert!((to_grayscale(&red).data()[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn blur_identity_and_constant() {
        let g = GrayImage::from_fn(9, 7, |x, y| ((x * 7 + y * 3) % 11) as f32 / 11.0);
        assert_eq!(gaussian_blur(&g, 0.0).unwrap(), g);
        let c = GrayImage::filled(12, 10, 0.42);
        let out = gaussian_blur(&c, 2.3).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
        assert!(matches!(gaussian_blur(&c, -1.0), Err(ImagingError::Parameter(_))));
    }

    #[test]
    fn blur_of_impulse_matches_analytic_gaussian() {
        // Oracle: evaluate exp(-(i²+j²)/2σ²) on the truncated support and
        // normalize by the separable 1-D sums.
        let sigma = 1.0f64;
        let r = 3i64;
        let norm: f64 = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).sum();
        let (w, h) = (15u32, 15u32);
        let img = GrayImage::from_fn(w, h, |x, y| if x == 7 && y == 7 { 1.0 } else { 0.0 });
        let out = gaussian_blur(&img, 1.0).unwrap();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (dx, dy) = (x - 7, y - 7);
                let expected = if dx.abs() <= r && dy.abs() <= r {
                    (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / (norm * norm)
                } else {
                    0.0
                };
                let got = f64::from(out.get(x as u32, y as u32));
                assert!((got - expected).abs() < 1e-6, "({x},{y}): {got} vs {expected}");
            }
        }
    }

    #[test]
    fn blur_preserves_mass_away_from_borders() {
        let sigma = 2.0;
        let m = SoftMask::from_fn(40, 40, |x, y| if (14..26).contains(&x) && (12..24).contains(&y) { 1.0 } else { 0.0 });
        let b = gaussian_blur(&m, sigma).unwrap();
        assert!((m.sum() - b.sum()).abs() < 1e-4);
    }

    #[test]
    fn canny_constant_image_is_empty() {
        let g = GrayImage::filled(20, 20, 0.6);
        assert_eq!(canny_edges(&g, 0.1, 0.2).unwrap().support(), 0);
    }

    #[test]
    fn canny_vertical_step_gives_single_column() {
        let g = GrayImage::from_fn(32, 24, |x, _| if x >= 16 { 0.8 } else { 0.1 });
        let e = canny_edges(&g, 0.1, 0.3).unwrap();
        let cols: std::collections::BTreeSet<u32> =
            (0..24).flat_map(|y| (0..32).map(move |x| (x, y))).filter(|&(x, y)| e.get(x, y) > 0.0).map(|(x, _)| x).collect();
        assert_eq!(cols.len(), 1, "columns {cols:?}");
        let c = *cols.iter().next().unwrap();
        assert!((15..=16).contains(&c));
        // Every row carries the edge.
        assert_eq!(e.support(), 24);
    }

    #[test]
    fn canny_step_below_low_threshold_is_empty() {
        // The smoothed Sobel response of a step of height h is a weighted mean
        // of two-pixel differences, so its normalized magnitude is at most h.
        let h = 0.05;
        let g = GrayImage::from_fn(32, 24, |x, _| if x >= 16 { 0.3 + h } else { 0.3 });
        assert_eq!(canny_edges(&g, 0.06, 0.2).unwrap().support(), 0);
        assert!(canny_edges(&g, 0.01, 0.02).unwrap().support() > 0);
    }

    #[test]
    fn canny_rejects_inverted_thresholds() {
        let g = GrayImage::filled(4, 4, 0.0);
        assert!(matches!(canny_edges(&g, 0.5, 0.2), Err(ImagingError::Parameter(_))));
    }

    #[test]
    fn bilinear_examples() {
        let img = Image::from_fn(4, 3, |x, y| [x as f32 * 0.1, y as f32 * 0.2, 0.5]);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(sample_bilinear(&img, f64::from(x), f64::from(y)), img.pixel(x, y));
            }
        }
        let mid = sample_bilinear(&img, 1.5, 1.0);
        let (a, b) = (img.pixel(1, 1), img.pixel(2, 1));
        for c in 0..3 {
            assert!((mid[c] - (a[c] + b[c]) / 2.0).abs() < 1e-7);
        }
        assert_eq!(sample_bilinear(&img, -5.0, 1.3), sample_bilinear(&img, 0.0, 1.3));
    }

    #[test]
    fn codec_round_trip_png_is_lossless_on_quantized_images() {
        let img = Image::from_fn(8, 5, |x, y| [x as f32 / 7.0, y as f32 / 4.0, 0.25]).quantized();
        let back = decode_image(&encode_image(&img, Encoding::Png).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    fn dyadic_gray(w: u32, h: u32, vals: &[u8]) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| f32::from(vals[(y * w + x) as usize % vals.len()]) / 256.0)
    }

    proptest! {
        #[test]
        fn grayscale_idempotent_on_neutral_images(v in 0.0f32..=1.0) {
            let img = Image::filled(3, 3, [v; 3]);
            let g = to_grayscale(&img);
            let again = to_grayscale(&Image::filled(3, 3, [g.data()[0]; 3]));
            prop_assert!((again.data()[0] - g.data()[0]).abs() < 1e-6);
        }

        #[test]
        fn canny_is_binary_and_offset_invariant(vals in prop::collection::vec(0u8..128, 64), k in 0u8..100) {
            let g = dyadic_gray(12, 10, &vals);
            let shifted = GrayImage::from_raw(12, 10, g.data().iter().map(|v| v + f32::from(k) / 256.0).collect()).unwrap();
            let a = canny_edges(&g, 0.05, 0.15).unwrap();
            let b = canny_edges(&shifted, 0.05, 0.15).unwrap();
            prop_assert!(a.alpha().iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn bilinear_matches_lattice(x in 0u32..6, y in 0u32..5) {
            let img = Image::from_fn(6, 5, |x, y| [((x * 13 + y * 7) % 17) as f32 / 17.0, 0.1, 0.9]);
            prop_assert_eq!(sample_bilinear(&img, f64::from(x), f64::from(y)), img.pixel(x, y));
        }
    }
}
