//! On-device identity reinjection: gate on pose change, warp the original
//! face onto the edited geometry, then blend it in.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{Image, SoftMask};
use crate::landmarks::{detect_landmarks, estimate_pose_delta, IndexMap, LandmarkError, LandmarkProvider, LandmarkSet, PoseDelta};
use crate::masking::{face_hull, rasterize_with_margin, MaskConfig, MaskingError};
use crate::poisson::{seamless_clone, CgOptions, CloneOptions, PoissonError, SolverStats};
use crate::warp::{warp_region, WarpError};

pub const REPROMPT_SUGGESTION: &str =
    "Request a front-facing view: ask the editor to keep the head upright and facing the camera as in the original.";

#[derive(Debug, Error)]
pub enum ReintegrationError {
    #[error("invalid reintegration configuration: {0}")]
    InvalidConfig(String),
    #[error("landmarks: {0}")]
    Landmarks(#[from] LandmarkError),
    #[error("region: {0}")]
    Masking(#[from] MaskingError),
    #[error("warp: {0}")]
    Warp(#[from] WarpError),
    #[error("blend: {0}")]
    Poisson(#[from] PoissonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BlendMode {
    #[default]
    Poisson,
    AlphaOnly,
}

impl std::str::FromStr for BlendMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "poisson" => Ok(BlendMode::Poisson),
            "alpha-only" | "alpha" => Ok(BlendMode::AlphaOnly),
            other => Err(format!("unknown blend mode `{other}` (poisson | alpha-only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReintegrationConfig {
    /// Largest accepted in-plane rotation, degrees.
    pub tau_roll: f64,
    /// Largest accepted post-fit residual over interocular distance.
    pub max_residual: f64,
    pub blend: BlendMode,
    pub solver: CgOptions,
    pub mixed_gradients: bool,
}

impl Default for ReintegrationConfig {
    fn default() -> Self {
        Self {
            tau_roll: 15.0,
            max_residual: 0.08,
            blend: BlendMode::Poisson,
            solver: CgOptions::default(),
            mixed_gradients: false,
        }
    }
}

impl ReintegrationConfig {
    pub fn validate(&self) -> Result<(), ReintegrationError> {
        if !(self.tau_roll > 0.0) {
            return Err(ReintegrationError::InvalidConfig("tau_roll must be > 0".into()));
        }
        if !(self.max_residual > 0.0) {
            return Err(ReintegrationError::InvalidConfig("max_residual must be > 0".into()));
        }
        if !(self.solver.tol > 0.0) {
            return Err(ReintegrationError::InvalidConfig("solver tolerance must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub suggestion: Option<String>,
}

impl Validity {
    pub fn pass() -> Self {
        Self {
            passed: true,
            reason: None,
            suggestion: None,
        }
    }

    pub fn fail(reason: impl Into<String>) -> Self {
        Self {
            passed: false,
            reason: Some(reason.into()),
            suggestion: Some(REPROMPT_SUGGESTION.to_string()),
        }
    }
}

/// Passes iff `|roll| ≤ tau_roll` and `residual ≤ max_residual`.
pub fn check_geometric_validity(delta: &PoseDelta, cfg: &ReintegrationConfig) -> Validity {
    let mut reasons = Vec::new();
    if !(delta.roll.abs() <= cfg.tau_roll) {
        reasons.push(format!("roll {:.2}° exceeds tolerance {:.2}°", delta.roll, cfg.tau_roll));
    }
    if !(delta.residual <= cfg.max_residual) {
        reasons.push(format!(
            "out-of-plane geometry change (residual {:.3} > {:.3})",
            delta.residual, cfg.max_residual
        ));
    }
    if reasons.is_empty() {
        Validity::pass()
    } else {
        Validity::fail(reasons.join("; "))
    }
}

#[derive(Debug, Clone)]
pub struct ReintegrationResult {
    /// The final image, or the edited image untouched when validity failed.
    pub image: Image,
    pub edited_landmarks: Option<LandmarkSet>,
    pub pose_delta: Option<PoseDelta>,
    pub solver: Option<SolverStats>,
    pub validity: Validity,
    pub blend: Option<BlendMode>,
    pub warning: Option<String>,
    /// Pixels that may differ from the edited input.
    pub region: Option<SoftMask>,
    pub region_pixels: usize,
}

impl ReintegrationResult {
    fn rejected(edited: &Image, lms: Option<LandmarkSet>, delta: Option<PoseDelta>, validity: Validity) -> Self {
        Self {
            image: edited.clone(),
            edited_landmarks: lms,
            pose_delta: delta,
            solver: None,
            validity,
            blend: None,
            warning: None,
            region: None,
            region_pixels: 0,
        }
    }
}

/// Binary region on edited geometry that encloses everything the outbound
/// mask could have touched: the hull at `max(1, r)` plus the feather reach
/// (the separable kernel's square footprint, hence √2) and a 2 px rim, so
/// the blend boundary sits on unmasked pixels.
pub fn reintegration_region(
    width: u32,
    height: u32,
    lms: &LandmarkSet,
    mask: &MaskConfig,
    map: &IndexMap,
) -> Result<SoftMask, ReintegrationError> {
    let hull = face_hull(lms, map, mask.hull_expansion * mask.mask_ratio.max(1.0))?;
    Ok(rasterize_with_margin(&hull, width, height, mask.feather_reach() * std::f64::consts::SQRT_2 + 2.0))
}

/// Chebyshev distance (in pixels) from each set pixel to the nearest unset
/// pixel or the frame edge, capped at `cap`.
fn inner_distance(region: &SoftMask, cap: u32) -> Vec<u32> {
    let (w, h) = region.dimensions();
    let mut dist = vec![u32::MAX; w as usize * h as usize];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if region.get(x, y) < 0.5 {
                dist[i] = 0;
                queue.push_back((x, y));
            } else if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                dist[i] = 1;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[(y * w + x) as usize];
        if d >= cap {
            continue;
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
                if nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) {
                    continue;
                }
                let j = (ny as u32 * w + nx as u32) as usize;
                if dist[j] == u32::MAX {
                    dist[j] = d + 1;
                    queue.push_back((nx as u32, ny as u32));
                }
            }
        }
    }
    dist.into_iter().map(|d| d.min(cap)).collect()
}

/// Keeps set pixels whose in-frame 4-neighbors are all set.
fn erode4(mask: &SoftMask) -> SoftMask {
    let (w, h) = mask.dimensions();
    SoftMask::from_fn(w, h, |x, y| {
        let set = |dx: i64, dy: i64| {
            let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
            nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) || mask.get(nx as u32, ny as u32) == 1.0
        };
        if mask.get(x, y) == 1.0 && set(-1, 0) && set(1, 0) && set(0, -1) && set(0, 1) {
            1.0
        } else {
            0.0
        }
    })
}

/// `w·over + (1 − w)·base` with `w = min(1, d / ramp)` from [`inner_distance`].
fn ramp_blend(base: &Image, over: &Image, region: &SoftMask, ramp: u32) -> Image {
    let dist = inner_distance(region, ramp);
    let mut out = base.clone();
    for (i, (o, v)) in out.data_mut().chunks_exact_mut(3).zip(over.data().chunks_exact(3)).enumerate() {
        let d = dist[i];
        if d == 0 {
            continue;
        }
        let wgt = (d as f32 / ramp as f32).min(1.0);
        for c in 0..3 {
            o[c] = (1.0 - wgt) * o[c] + wgt * v[c];
        }
    }
    out
}

/// Reinserts the original face into `edited`.
///
/// `mask` is the configuration that produced the outbound image; the blend
/// region always covers at least its ratio-1 hull.
#[allow(clippy::too_many_arguments)]
pub fn swap_face_back(
    original: &Image,
    original_lms: &LandmarkSet,
    edited: &Image,
    edited_origin: Option<&Path>,
    provider: &dyn LandmarkProvider,
    mask: &MaskConfig,
    cfg: &ReintegrationConfig,
    map: &IndexMap,
) -> Result<ReintegrationResult, ReintegrationError> {
    cfg.validate()?;
    mask.validate()?;
    let edited_lms = match detect_landmarks(edited, edited_origin, provider) {
        Ok(l) => l,
        Err(LandmarkError::NoFaceFound) => {
            return Ok(ReintegrationResult::rejected(
                edited,
                None,
                None,
                Validity::fail("no face found in edited image"),
            ))
        }
        Err(e) => return Err(e.into()),
    };
    let delta = match estimate_pose_delta(original_lms, &edited_lms, map) {
        Ok(d) => d,
        Err(LandmarkError::DegenerateFace(msg)) => {
            return Ok(ReintegrationResult::rejected(
                edited,
                Some(edited_lms),
                None,
                Validity::fail(format!("degenerate face geometry: {msg}")),
            ))
        }
        Err(e) => return Err(e.into()),
    };
    let validity = check_geometric_validity(&delta, cfg);
    if !validity.passed {
        return Ok(ReintegrationResult::rejected(edited, Some(edited_lms), Some(delta), validity));
    }

    let region = reintegration_region(edited.width(), edited.height(), &edited_lms, mask, map)?;
    let (warped, valid) = warp_region(original, original_lms, &edited_lms, &region, map)?;
    // Solve one pixel inside the warped area so every boundary neighbor still
    // carries warped source content for the guidance field.
    let solve = erode4(&valid.binarized(0.5));
    let region_pixels = solve.support();
    if region_pixels == 0 {
        return Ok(ReintegrationResult::rejected(
            edited,
            Some(edited_lms),
            Some(delta),
            Validity::fail("face region lies outside the frame"),
        ));
    }
    let alpha_ramp = mask.feather_reach() as u32 + 2;
    let (image, solver, blend, warning) = match cfg.blend {
        BlendMode::AlphaOnly => (ramp_blend(edited, &warped, &solve, alpha_ramp), None, BlendMode::AlphaOnly, None),
        BlendMode::Poisson => {
            let opts = CloneOptions {
                cg: cfg.solver,
                mixed_gradients: cfg.mixed_gradients,
            };
            match seamless_clone(&warped, edited, &solve, &opts) {
                Ok(out) => (ramp_blend(edited, &out.image, &solve, 3), Some(out.stats), BlendMode::Poisson, None),
                Err(PoissonError::NotConverged(partial)) => {
                    let stats = SolverStats {
                        iterations: partial.iterations,
                        residual: partial.residual,
                        unknowns: solve.support(),
                    };
                    (
                        ramp_blend(edited, &warped, &solve, alpha_ramp),
                        Some(stats),
                        BlendMode::AlphaOnly,
                        Some(format!(
                            "poisson solve did not converge (residual {:.3e} after {} iterations); used alpha blend",
                            partial.residual, partial.iterations
                        )),
                    )
                }
                Err(e) => return Err(e.into()),
            }
        }
    };
    Ok(ReintegrationResult {
        image,
        edited_landmarks: Some(edited_lms),
        pose_delta: Some(delta),
        solver,
        validity,
        blend: Some(blend),
        warning,
        region: Some(solve),
        region_pixels,
    })
}
