//! Guided-interpolation (seamless cloning) on the pixel grid.
//!
//! For each region pixel `p` with in-frame neighbors `N(p)`:
//!
//! ```text
//! |N(p)|·f_p − Σ_{q ∈ N(p) ∩ Ω} f_q = Σ_{q ∈ N(p)} v_pq + Σ_{q ∈ N(p) \ Ω} f*_q
//! ```
//!
//! The system is assembled once in CSR form and solved per channel with
//! conjugate gradients.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ensure_dims, Image, ImagingError, SoftMask};

#[derive(Debug, Error)]
pub enum PoissonError {
    #[error("region has no interior pixels")]
    EmptyRegion,
    #[error("region component containing pixel ({x}, {y}) has no boundary pixel")]
    UnanchoredComponent { x: u32, y: u32 },
    #[error("conjugate gradient stopped at iteration {} with relative residual {:.3e}", .0.iterations, .0.residual)]
    NotConverged(Box<CgSolution>),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("vector length {actual} does not match system size {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

impl From<ImagingError> for PoissonError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::DimensionMismatch { expected, actual } => PoissonError::DimensionMismatch { expected, actual },
            other => unreachable!("unexpected imaging error in poisson: {other}"),
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; columns are sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Per-channel forward differences: `gx(x, y) ≈ f(x+1, y) − f(x, y)`.
/// Entries on the last column (gx) or row (gy) are unused and zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceField {
    width: u32,
    height: u32,
    gx: [Vec<f64>; 3],
    gy: [Vec<f64>; 3],
}

impl GuidanceField {
    pub fn zero(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            gx: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            gy: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Gradients of `src`.
    pub fn from_image(src: &Image) -> Self {
        let (w, h) = src.dimensions();
        let mut g = Self::zero(w, h);
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                let p = src.pixel(x, y);
                let right = (x + 1 < w).then(|| src.pixel(x + 1, y));
                let down = (y + 1 < h).then(|| src.pixel(x, y + 1));
                for c in 0..3 {
                    if let Some(r) = right {
                        g.gx[c][i] = f64::from(r[c]) - f64::from(p[c]);
                    }
                    if let Some(d) = down {
                        g.gy[c][i] = f64::from(d[c]) - f64::from(p[c]);
                    }
                }
            }
        }
        g
    }

    /// Per edge, the larger-magnitude gradient of `src` and `dst`.
    pub fn mixed(src: &Image, dst: &Image) -> Result<Self, PoissonError> {
        ensure_dims(src.dimensions(), dst.dimensions())?;
        let (mut a, b) = (Self::from_image(src), Self::from_image(dst));
        for c in 0..3 {
            for (s, d) in a.gx[c].iter_mut().zip(&b.gx[c]).chain(a.gy[c].iter_mut().zip(&b.gy[c])) {
                if d.abs() > s.abs() {
                    *s = *d;
                }
            }
        }
        Ok(a)
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Guidance `v_pq` on the edge from `p` to its in-frame neighbor `q`.
    fn edge(&self, c: usize, p: (u32, u32), q: (u32, u32)) -> f64 {
        let idx = |x: u32, y: u32| (y * self.width + x) as usize;
        match (i64::from(q.0) - i64::from(p.0), i64::from(q.1) - i64::from(p.1)) {
            (1, 0) => -self.gx[c][idx(p.0, p.1)],
            (-1, 0) => self.gx[c][idx(q.0, q.1)],
            (0, 1) => -self.gy[c][idx(p.0, p.1)],
            (0, -1) => self.gy[c][idx(q.0, q.1)],
            _ => unreachable!("not a 4-neighbor"),
        }
    }
}

/// Assembled system: unknowns are the pixels with region α ≥ 0.5.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    width: u32,
    height: u32,
    /// Unknown index per pixel.
    index: Vec<Option<usize>>,
    /// Pixel for each unknown, row-major order.
    pixels: Vec<(u32, u32)>,
    pub matrix: CsrMatrix,
    pub rhs: [Vec<f64>; 3],
}

fn neighbors(x: u32, y: u32, w: u32, h: u32) -> impl Iterator<Item = (u32, u32)> {
    let (x, y, w, h) = (i64::from(x), i64::from(y), i64::from(w), i64::from(h));
    [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
        .into_iter()
        .filter(move |&(a, b)| a >= 0 && b >= 0 && a < w && b < h)
        .map(|(a, b)| (a as u32, b as u32))
}

pub fn build_poisson_system(
    region: &SoftMask,
    guidance: &GuidanceField,
    boundary: &Image,
) -> Result<PoissonSystem, PoissonError> {
    let (w, h) = region.dimensions();
    ensure_dims((w, h), guidance.dimensions())?;
    ensure_dims((w, h), boundary.dimensions())?;
    let mut index = vec![None; w as usize * h as usize];
    let mut pixels = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y) >= 0.5 {
                index[(y * w + x) as usize] = Some(pixels.len());
                pixels.push((x, y));
            }
        }
    }
    if pixels.is_empty() {
        return Err(PoissonError::EmptyRegion);
    }
    check_anchored(&index, &pixels, w, h)?;

    let mut rows = Vec::with_capacity(pixels.len());
    let mut rhs = [vec![0.0; pixels.len()], vec![0.0; pixels.len()], vec![0.0; pixels.len()]];
    for (k, &(x, y)) in pixels.iter().enumerate() {
        let mut row = Vec::with_capacity(5);
        let mut degree = 0.0;
        for q in neighbors(x, y, w, h) {
            degree += 1.0;
            for (c, b) in rhs.iter_mut().enumerate() {
                b[k] += guidance.edge(c, (x, y), q);
            }
            match index[(q.1 * w + q.0) as usize] {
                Some(j) => row.push((j, -1.0)),
                None => {
                    let v = boundary.pixel(q.0, q.1);
                    for (c, b) in rhs.iter_mut().enumerate() {
                        b[k] += f64::from(v[c]);
                    }
                }
            }
        }
        row.push((k, degree));
        rows.push(row);
    }
    Ok(PoissonSystem {
        width: w,
        height: h,
        index,
        pixels,
        matrix: CsrMatrix::from_rows(rows),
        rhs,
    })
}

fn check_anchored(index: &[Option<usize>], pixels: &[(u32, u32)], w: u32, h: u32) -> Result<(), PoissonError> {
    let mut seen = vec![false; pixels.len()];
    for start in 0..pixels.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut anchored = false;
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            let (x, y) = pixels[k];
            for q in neighbors(x, y, w, h) {
                match index[(q.1 * w + q.0) as usize] {
                    Some(j) if !seen[j] => {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                    Some(_) => {}
                    None => anchored = true,
                }
            }
        }
        if !anchored {
            let (x, y) = pixels[start];
            return Err(PoissonError::UnanchoredComponent { x, y });
        }
    }
    Ok(())
}

impl PoissonSystem {
    pub fn unknowns(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    pub fn unknown_at(&self, x: u32, y: u32) -> Option<usize> {
        self.index[(y * self.width + x) as usize]
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Solves the three channels concurrently. `x0` supplies per-channel
    /// initial guesses.
    pub fn solve(&self, opts: &CgOptions, x0: Option<&[Vec<f64>; 3]>) -> Result<[CgSolution; 3], PoissonError> {
        let results: Vec<Result<CgSolution, PoissonError>> = (0..3)
            .into_par_iter()
            .map(|c| solve_cg(&self.matrix, &self.rhs[c], opts, x0.map(|g| g[c].as_slice())))
            .collect();
        let mut out = Vec::with_capacity(3);
        for r in results {
            out.push(r?);
        }
        Ok(out.try_into().expect("three channels"))
    }

    /// Gathers the unknown pixels of `img`, one vector per channel.
    pub fn gather(&self, img: &Image) -> [Vec<f64>; 3] {
        let mut out = [Vec::new(), Vec::new(), Vec::new()];
        for &(x, y) in &self.pixels {
            let p = img.pixel(x, y);
            for c in 0..3 {
                out[c].push(f64::from(p[c]));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual `‖r‖ / ‖b‖` at which to stop.
    pub tol: f64,
    /// Defaults to `ceil(10·√n)` when `None`.
    pub max_iter: Option<usize>,
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: None,
            jacobi: false,
        }
    }
}

impl CgOptions {
    pub fn iteration_limit(&self, n: usize) -> usize {
        self.max_iter.unwrap_or_else(|| (10.0 * (n as f64).sqrt()).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
    /// Relative residual after each iteration, starting with the initial guess.
    pub residual_history: Vec<f64>,
    /// `½xᵀAx − bᵀx` after each iteration, starting with the initial guess.
    pub energy_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(x: &[f64], b: &[f64], r: &[f64]) -> f64 {
    // With r = b − Ax: ½xᵀAx − bᵀx = −½xᵀ(b + r).
    -0.5 * x.iter().zip(b).zip(r).map(|((x, b), r)| x * (b + r)).sum::<f64>()
}

/// Conjugate gradients (Jacobi-preconditioned when `opts.jacobi`), starting
/// from `x0` or zero.
pub fn solve_cg(a: &CsrMatrix, b: &[f64], opts: &CgOptions, x0: Option<&[f64]>) -> Result<CgSolution, PoissonError> {
    let n = a.size();
    if b.len() != n {
        return Err(PoissonError::LengthMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    if let Some(g) = x0 {
        if g.len() != n {
            return Err(PoissonError::LengthMismatch {
                expected: n,
                actual: g.len(),
            });
        }
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            residual_history: vec![0.0],
            energy_history: vec![0.0],
        });
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = vec![0.0; n];
    a.mul_vec(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let inv_diag: Option<Vec<f64>> = opts.jacobi.then(|| a.diagonal().iter().map(|d| 1.0 / d).collect());
    let precondition = |r: &[f64]| -> Vec<f64> {
        match &inv_diag {
            Some(m) => r.iter().zip(m).map(|(r, m)| r * m).collect(),
            None => r.to_vec(),
        }
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut residual_history = vec![rel];
    let mut energy_history = vec![energy(&x, b, &r)];
    let limit = opts.iteration_limit(n);
    let mut iterations = 0;
    while rel > opts.tol && iterations < limit {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        rel = dot(&r, &r).sqrt() / bnorm;
        residual_history.push(rel);
        energy_history.push(energy(&x, b, &r));
        if rel <= opts.tol {
            break;
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let solution = CgSolution {
        x,
        iterations,
        residual: rel,
        residual_history,
        energy_history,
    };
    if rel > opts.tol {
        return Err(PoissonError::NotConverged(Box::new(solution)));
    }
    Ok(solution)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CloneOptions {
    pub cg: CgOptions,
    pub mixed_gradients: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    /// Largest iteration count over the channels.
    pub iterations: usize,
    /// Largest final relative residual over the channels.
    pub residual: f64,
    pub unknowns: usize,
}

#[derive(Debug, Clone)]
pub struct CloneOutput {
    pub image: Image,
    pub stats: SolverStats,
    /// Unknown pixels (region α ≥ 0.5).
    pub solved: SoftMask,
}

/// Pastes the gradients of `src` into `dst` over `region` (binarized at 0.5).
///
/// The solve starts from `src` itself, so only the correction toward the
/// boundary data is iterated on. Pixels outside the region are copied from
/// `dst` untouched; solved values are clamped to `[0, 1]`.
pub fn seamless_clone(src: &Image, dst: &Image, region: &SoftMask, opts: &CloneOptions) -> Result<CloneOutput, PoissonError> {
    ensure_dims(dst.dimensions(), src.dimensions())?;
    ensure_dims(dst.dimensions(), region.dimensions())?;
    let guidance = if opts.mixed_gradients {
        GuidanceField::mixed(src, dst)?
    } else {
        GuidanceField::from_image(src)
    };
    let sys = build_poisson_system(region, &guidance, dst)?;
    let start = sys.gather(src);
    let sols = sys.solve(&opts.cg, Some(&start))?;
    let mut image = dst.clone();
    let mut solved = SoftMask::new(dst.width(), dst.height());
    for (k, &(x, y)) in sys.pixels().iter().enumerate() {
        image.set_pixel(x, y, [0, 1, 2].map(|c| sols[c].x[k] as f32));
        solved.set(x, y, 1.0);
    }
    Ok(CloneOutput {
        image,
        stats: SolverStats {
            iterations: sols.iter().map(|s| s.iterations).max().unwrap_or(0),
            residual: sols.iter().map(|s| s.residual).fold(0.0, f64::max),
            unknowns: sys.unknowns(),
        },
        solved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gaussian elimination with partial pivoting.
    #[allow(clippy::needless_range_loop)]
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    /// Region equations written out directly, independent of the CSR builder.
    fn dense_clone_oracle(src: &Image, dst: &Image, region: &SoftMask) -> Image {
        let (w, h) = dst.dimensions();
        let ids: Vec<(u32, u32)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| region.get(x, y) >= 0.5)
            .collect();
        let pos = |x: u32, y: u32| ids.iter().position(|&p| p == (x, y));
        let n = ids.len();
        let mut out = dst.clone();
        for c in 0..3 {
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            for (k, &(x, y)) in ids.iter().enumerate() {
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (qx, qy) = (i64::from(x) + dx, i64::from(y) + dy);
                    if qx < 0 || qy < 0 || qx >= i64::from(w) || qy >= i64::from(h) {
                        continue;
                    }
                    let (qx, qy) = (qx as u32, qy as u32);
                    a[k][k] += 1.0;
                    b[k] += f64::from(src.pixel(x, y)[c]) - f64::from(src.pixel(qx, qy)[c]);
                    match pos(qx, qy) {
                        Some(j) => a[k][j] -= 1.0,
                        None => b[k] += f64::from(dst.pixel(qx, qy)[c]),
                    }
                }
            }
            let x = dense_solve(a, b);
            for (k, &(px, py)) in ids.iter().enumerate() {
                let mut v = out.pixel(px, py);
                v[c] = x[k].clamp(0.0, 1.0) as f32;
                out.set_pixel(px, py, v);
            }
        }
        out
    }

    fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Image {
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn tight() -> CloneOptions {
        CloneOptions {
            cg: CgOptions {
                tol: 1e-10,
                max_iter: Some(10_000),
                jacobi: false,
            },
            mixed_gradients: false,
        }
    }

    fn max_abs(a: &Image, b: &Image) -> f32 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn cg_identity_one_iteration() {
        let b = vec![0.3, -1.0, 2.5];
        let s = solve_cg(&CsrMatrix::identity(3), &b, &CgOptions::default(), None).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.x, b);
    }

    #[test]
    fn cg_two_by_two() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 4.0), (1, 1.0)], vec![(0, 1.0), (1, 3.0)]]);
        let s = solve_cg(&a, &[1.0, 2.0], &CgOptions::default(), None).unwrap();
        assert!((s.x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((s.x[1] - 7.0 / 11.0).abs() < 1e-12);
        assert!(s.iterations <= 2);
    }

    #[test]
    fn cg_zero_rhs_is_zero() {
        let s = solve_cg(&CsrMatrix::identity(4), &[0.0; 4], &CgOptions::default(), None).unwrap();
        assert_eq!(s.x, vec![0.0; 4]);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn cg_reports_non_convergence_with_partial_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let region = SoftMask::from_fn(20, 20, |x, y| if (2..18).contains(&x) && (2..18).contains(&y) { 1.0 } else { 0.0 });
        let img = random_image(&mut rng, 20, 20);
        let sys = build_poisson_system(&region, &GuidanceField::from_image(&img), &img).unwrap();
        let opts = CgOptions {
            tol: 1e-12,
            max_iter: Some(3),
            jacobi: false,
        };
        match solve_cg(&sys.matrix, &sys.rhs[0], &opts, None) {
            Err(PoissonError::NotConverged(partial)) => {
                assert_eq!(partial.iterations, 3);
                assert_eq!(partial.x.len(), sys.unknowns());
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn single_pixel_closed_form() {
        let region = SoftMask::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { 1.0 } else { 0.0 });
        let b = Image::filled(3, 3, [0.25, 0.5, 0.75]);
        let sys = build_poisson_system(&region, &GuidanceField::zero(3, 3), &b).unwrap();
        assert_eq!(sys.matrix.to_dense(), vec![vec![4.0]]);
        assert_eq!(sys.rhs[0], vec![1.0]);
        let s = sys.solve(&CgOptions::default(), None).unwrap();
        assert_eq!([s[0].x[0], s[1].x[0], s[2].x[0]], [0.25, 0.5, 0.75]);
    }

    #[test]
    fn build_errors() {
        let img = Image::new(8, 8);
        let g = GuidanceField::zero(8, 8);
        assert!(matches!(
            build_poisson_system(&SoftMask::new(8, 8), &g, &img),
            Err(PoissonError::EmptyRegion)
        ));
        assert!(matches!(
            build_poisson_system(&SoftMask::filled(8, 8, 1.0), &g, &img),
            Err(PoissonError::UnanchoredComponent { .. })
        ));
        assert!(matches!(
            build_poisson_system(&SoftMask::new(8, 7), &g, &img),
            Err(PoissonError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matrix_is_symmetric_with_bounded_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let region = SoftMask::from_fn(24, 24, |_, _| if rng.random::<f32>() < 0.6 { 1.0 } else { 0.0 });
        let img = Image::new(24, 24);
        match build_poisson_system(&region, &GuidanceField::zero(24, 24), &img) {
            Ok(sys) => {
                assert!(sys.matrix.is_symmetric());
                assert!(sys.matrix.diagonal().iter().all(|d| (1.0..=4.0).contains(d)));
            }
            Err(PoissonError::UnanchoredComponent { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn grid_laplacian_matches_dense_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 10, 10);
        let region = SoftMask::from_fn(10, 10, |x, y| if (1..9).contains(&x) && (1..9).contains(&y) { 1.0 } else { 0.0 });
        let sys = build_poisson_system(&region, &GuidanceField::from_image(&img), &img).unwrap();
        let dense = dense_solve(sys.matrix.to_dense(), sys.rhs[1].clone());
        let s = solve_cg(&sys.matrix, &sys.rhs[1], &CgOptions::default(), None).unwrap();
        let err = s.x.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-5, "max abs error {err}");
    }

    #[test]
    fn clone_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_image(&mut rng, 16, 16);
        let dst = random_image(&mut rng, 16, 16);
        let region = SoftMask::from_fn(16, 16, |x, y| if (4..12).contains(&x) && (4..12).contains(&y) { 1.0 } else { 0.0 });
        let got = seamless_clone(&src, &dst, &region, &CloneOptions::default()).unwrap();
        let want = dense_clone_oracle(&src, &dst, &region);
        assert!(max_abs(&got.image, &want) <= 1e-5);
        for y in 0..16 {
            for x in 0..16 {
                if region.get(x, y) < 0.5 {
                    assert_eq!(got.image.pixel(x, y), dst.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn clone_identical_inputs_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 20, 20);
        let region = SoftMask::from_fn(20, 20, |x, y| if (3..17).contains(&x) && (5..15).contains(&y) { 1.0 } else { 0.0 });
        let out = seamless_clone(&img, &img, &region, &CloneOptions::default()).unwrap();
        assert!(max_abs(&out.image, &img) <= 1e-6);
    }

    #[test]
    fn harmonic_case_is_constant() {
        let src = Image::filled(12, 12, [0.9, 0.1, 0.4]);
        let dst = Image::filled(12, 12, [0.3, 0.6, 0.2]);
        let region = SoftMask::from_fn(12, 12, |x, y| if (2..10).contains(&x) && (3..9).contains(&y) { 1.0 } else { 0.0 });
        let out = seamless_clone(&src, &dst, &region, &tight()).unwrap();
        assert!(max_abs(&out.image, &dst) <= 1e-6);
    }

    #[test]
    fn cg_energy_and_residual_histories() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 30, 30);
        let region = SoftMask::from_fn(30, 30, |x, y| if (2..28).contains(&x) && (2..28).contains(&y) { 1.0 } else { 0.0 });
        let sys = build_poisson_system(&region, &GuidanceField::from_image(&img), &img).unwrap();
        for jacobi in [false, true] {
            let opts = CgOptions {
                jacobi,
                ..CgOptions::default()
            };
            let s = solve_cg(&sys.matrix, &sys.rhs[0], &opts, None).unwrap();
            assert_eq!(s.residual_history.len(), s.iterations + 1);
            for w in s.energy_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "energy rose: {} -> {}", w[0], w[1]);
            }
            // Energy at the solution equals −½ bᵀx.
            let e = -0.5 * dot(&sys.rhs[0], &s.x);
            assert!((s.energy_history.last().unwrap() - e).abs() < 1e-6 * e.abs().max(1.0));
        }
    }

    #[test]
    fn mixed_guidance_picks_stronger_gradient() {
        let src = Image::from_fn(4, 1, |x, _| [x as f32 * 0.1; 3]);
        let dst = Image::from_fn(4, 1, |x, _| [if x >= 2 { 0.9 } else { 0.0 }; 3]);
        let g = GuidanceField::mixed(&src, &dst).unwrap();
        assert!((g.gx[0][0] - 0.1).abs() < 1e-6);
        assert!((g.gx[0][1] - 0.9).abs() < 1e-6);
        assert!((g.gx[0][2] - 0.1).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn maximum_principle(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dst = random_image(&mut rng, 14, 14);
            let region = SoftMask::from_fn(14, 14, |x, y| {
                if (1..13).contains(&x) && (1..13).contains(&y) && rng.random::<f32>() < 0.8 { 1.0 } else { 0.0 }
            });
            let Ok(sys) = build_poisson_system(&region, &GuidanceField::zero(14, 14), &dst) else { return Ok(()) };
            let sols = sys.solve(&CgOptions { tol: 1e-10, max_iter: Some(5000), jacobi: false }, None).unwrap();
            for (c, sol) in sols.iter().enumerate() {
                let bvals: Vec<f32> = (0..14).flat_map(|y| (0..14).map(move |x| (x, y)))
                    .filter(|&(x, y)| sys.unknown_at(x, y).is_none())
                    .map(|(x, y)| dst.pixel(x, y)[c]).collect();
                let lo = f64::from(bvals.iter().copied().fold(f32::INFINITY, f32::min));
                let hi = f64::from(bvals.iter().copied().fold(f32::NEG_INFINITY, f32::max));
                for v in &sol.x {
                    prop_assert!(*v >= lo - 1e-6 && *v <= hi + 1e-6);
                }
            }
        }

        #[test]
        fn linearity(seed in any::<u64>(), a in 0.2f32..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = random_image(&mut rng, 12, 12);
            let dst = random_image(&mut rng, 12, 12);
            let region = SoftMask::from_fn(12, 12, |x, y| if (3..9).contains(&x) && (2..10).contains(&y) { 1.0 } else { 0.0 });
            let scale = |img: &Image| Image::from_raw(12, 12, img.data().iter().map(|v| v * a).collect()).unwrap();
            let g1 = GuidanceField::from_image(&src);
            let g2 = GuidanceField::from_image(&scale(&src));
            let s1 = build_poisson_system(&region, &g1, &dst).unwrap().solve(&tight().cg, None).unwrap();
            let s2 = build_poisson_system(&region, &g2, &scale(&dst)).unwrap().solve(&tight().cg, None).unwrap();
            for c in 0..3 {
                for (u, v) in s1[c].x.iter().zip(&s2[c].x) {
                    prop_assert!((f64::from(a) * u - v).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn translation_invariance(seed in any::<u64>(), dx in 0u32..5, dy in 0u32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = random_image(&mut rng, 20, 20);
            let dst = random_image(&mut rng, 20, 20);
            let inside = |x: u32, y: u32| (4..10).contains(&x) && (5..12).contains(&y);
            let region = SoftMask::from_fn(20, 20, |x, y| if inside(x, y) { 1.0 } else { 0.0 });
            let shift = |img: &Image| Image::from_fn(20, 20, |x, y| img.pixel(x.saturating_sub(dx), y.saturating_sub(dy)));
            let moved_region = SoftMask::from_fn(20, 20, |x, y| {
                if x >= dx && y >= dy && inside(x - dx, y - dy) { 1.0 } else { 0.0 }
            });
            let a = seamless_clone(&src, &dst, &region, &tight()).unwrap();
            let b = seamless_clone(&shift(&src), &shift(&dst), &moved_region, &tight()).unwrap();
            for y in 0..20 {
                for x in 0..20 {
                    if inside(x, y) {
                        let (p, q) = (a.image.pixel(x, y), b.image.pixel(x + dx, y + dy));
                        for c in 0..3 {
                            prop_assert!((p[c] - q[c]).abs() < 1e-5);
                        }
                    }
                }
            }
        }
    }
}
