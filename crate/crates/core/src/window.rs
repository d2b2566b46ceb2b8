//! Per-point, per-axis window estimation from lesion scale, texture and
//! energy progress.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levelset::DistanceMap;
use crate::texture::{GlobalTexture, LocalContrast, CONTRAST_FLOOR};

pub const MIN_LESION_EXTENT: f64 = 3.0;
pub const ENERGY_RATIO_FLOOR: f64 = 1e-3;
const F1_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionScale {
    pub l_x: f64,
    pub l_y: f64,
}

/// Extents of the tight bounding box of `φ < 0`, floored at 3 px.
pub fn lesion_dims(map: &DistanceMap) -> Result<LesionScale> {
    let (w, h) = (map.width(), map.height());
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (idx, &p) in map.phi().iter().enumerate() {
        if p < 0.0 {
            let (x, y) = (idx % w, idx / w);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if x0 == usize::MAX {
        return Err(Error::collapse(0));
    }
    debug_assert!(x1 < w && y1 < h);
    Ok(LesionScale {
        l_x: ((x1 - x0 + 1) as f64).max(MIN_LESION_EXTENT),
        l_y: ((y1 - y0 + 1) as f64).max(MIN_LESION_EXTENT),
    })
}

/// Unclamped window extent `[l / ln l] · [gh + 1/gc + 1/lc + 1/f]⁻¹`.
pub fn raw_window(l: f64, gh: f64, gc: f64, lc: f64, f_prev_norm: f64) -> f64 {
    let l = l.max(MIN_LESION_EXTENT);
    (l / l.ln()) / (gh + 1.0 / gc + 1.0 / lc + 1.0 / f_prev_norm)
}

/// Nearest odd integer, ties toward the larger one.
pub fn round_odd(raw: f64) -> i64 {
    if !raw.is_finite() {
        return if raw > 0.0 { i64::MAX } else { 1 };
    }
    // Odd integers are 2k + 1; pick k nearest to (raw - 1) / 2, rounding half up.
    let k = ((raw - 1.0) / 2.0 + 0.5).floor();
    (2.0 * k + 1.0).clamp(-(1i64 << 52) as f64, (1i64 << 52) as f64) as i64
}

fn clamp_window(raw: f64, w_min: usize, w_max: usize) -> usize {
    round_odd(raw).clamp(w_min as i64, w_max as i64) as usize
}

/// Half-width of the band around the previous extent inside which a point
/// keeps it. Plain rounding switches at one pixel; the extra half pixel stops
/// a raw value hovering near a rounding boundary from flipping the window
/// back and forth between iterations.
pub const WINDOW_HYSTERESIS: f64 = 1.5;

/// Like rounding to the clamped nearest odd extent, but returns `prev` while
/// `raw` stays within [`WINDOW_HYSTERESIS`] of it.
pub fn sticky_window(raw: f64, prev: usize, bounds: WindowBounds) -> usize {
    let next = clamp_window(raw, bounds.w_min, bounds.w_max);
    let prev_ok = prev % 2 == 1 && (bounds.w_min..=bounds.w_max).contains(&prev);
    let near = (raw.clamp(bounds.w_min as f64, bounds.w_max as f64) - prev as f64).abs() <= WINDOW_HYSTERESIS;
    if prev_ok && near {
        prev
    } else {
        next
    }
}

/// How the contrast terms enter the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastUnits {
    /// Contrasts as normalized by `(N_G − 1)²`, i.e. in `(0, 1]`.
    Normalized,
    /// Contrasts in squared gray levels: the normalized value times `(N_G − 1)²`.
    #[default]
    GrayLevels,
}

impl ContrastUnits {
    pub fn scale(self, levels: usize) -> f64 {
        match self {
            ContrastUnits::Normalized => 1.0,
            ContrastUnits::GrayLevels => {
                let l = levels.saturating_sub(1).max(1) as f64;
                l * l
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowBounds {
    pub w_min: usize,
    pub w_max: usize,
}

impl Default for WindowBounds {
    fn default() -> Self {
        Self { w_min: 5, w_max: 35 }
    }
}

impl WindowBounds {
    pub fn validate(&self) -> Result<()> {
        if self.w_min % 2 == 0 || self.w_max % 2 == 0 || self.w_min < 1 || self.w_min > self.w_max {
            return Err(Error::InvalidConfig(format!(
                "window clamps must be odd with w_min <= w_max, got [{}, {}]",
                self.w_min, self.w_max
            )));
        }
        Ok(())
    }
}

/// Window extents for one point. Texture terms are used as given (the
/// caller applies floors and units); `f_prev_norm` lies in `(0, 1]`.
pub fn estimate_window(
    scale: LesionScale,
    gh: f64,
    gc: f64,
    lc: LocalContrast,
    f_prev_norm: f64,
    bounds: WindowBounds,
) -> (usize, usize) {
    (
        clamp_window(raw_window(scale.l_x, gh, gc, lc.x, f_prev_norm), bounds.w_min, bounds.w_max),
        clamp_window(raw_window(scale.l_y, gh, gc, lc.y, f_prev_norm), bounds.w_min, bounds.w_max),
    )
}

/// First-iteration window: local contrast replaced by the global one and the
/// energy term by 1.
pub fn bootstrap_window(scale: LesionScale, gh: f64, gc: f64, bounds: WindowBounds) -> (usize, usize) {
    estimate_window(scale, gh, gc, LocalContrast { x: gc, y: gc }, 1.0, bounds)
}

/// `clamp(f_j / f_1, 1e-3, 1)`, with `f_1` floored at `1e-6`.
pub fn normalize_energy_trace(f_bar_j: f64, f_bar_1: f64) -> f64 {
    let ratio = f_bar_j / f_bar_1.max(F1_FLOOR);
    if ratio.is_nan() {
        return 1.0;
    }
    ratio.clamp(ENERGY_RATIO_FLOOR, 1.0)
}

/// Texture terms of one lesion, already floored and expressed in the
/// configured contrast units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowEstimator {
    pub gh: f64,
    pub gc: f64,
    pub contrast_scale: f64,
    /// Weight of the energy-progress term.
    pub energy_weight: f64,
    pub bounds: WindowBounds,
}

impl WindowEstimator {
    pub fn new(global: GlobalTexture, units: ContrastUnits, levels: usize, bounds: WindowBounds) -> Self {
        let contrast_scale = units.scale(levels);
        Self {
            gh: global.gh,
            gc: global.gc.max(CONTRAST_FLOOR) * contrast_scale,
            contrast_scale,
            energy_weight: 1.0,
            bounds,
        }
    }

    pub fn with_energy_weight(mut self, w: f64) -> Self {
        self.energy_weight = w;
        self
    }

    /// The energy ratio as seen by the formula: `weight / f` is the added term,
    /// so a zero weight removes it.
    fn weighted(&self, f: f64) -> f64 {
        if self.energy_weight == 1.0 {
            f
        } else {
            f / self.energy_weight
        }
    }

    pub fn bootstrap(&self, scale: LesionScale) -> (usize, usize) {
        let lc = LocalContrast { x: self.gc, y: self.gc };
        estimate_window(scale, self.gh, self.gc, lc, self.weighted(1.0), self.bounds)
    }

    /// `lc` is normalized local contrast as returned by the texture module.
    pub fn estimate(&self, scale: LesionScale, lc: LocalContrast, f_prev_norm: f64) -> (usize, usize) {
        let lc = LocalContrast {
            x: lc.x.max(CONTRAST_FLOOR) * self.contrast_scale,
            y: lc.y.max(CONTRAST_FLOOR) * self.contrast_scale,
        };
        estimate_window(scale, self.gh, self.gc, lc, self.weighted(f_prev_norm), self.bounds)
    }

    /// [`Self::estimate`] with hysteresis around the point's previous extents.
    pub fn estimate_from(
        &self,
        prev: (usize, usize),
        scale: LesionScale,
        lc: LocalContrast,
        f_prev_norm: f64,
    ) -> (usize, usize) {
        let f = self.weighted(f_prev_norm);
        let lcx = lc.x.max(CONTRAST_FLOOR) * self.contrast_scale;
        let lcy = lc.y.max(CONTRAST_FLOOR) * self.contrast_scale;
        (
            sticky_window(raw_window(scale.l_x, self.gh, self.gc, lcx, f), prev.0, self.bounds),
            sticky_window(raw_window(scale.l_y, self.gh, self.gc, lcy, f), prev.1, self.bounds),
        )
    }
}

/// Windows assigned to the contour points of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub iteration: usize,
    pub lesion: LesionScale,
    /// Row-major indices of the contour points.
    pub points: Vec<usize>,
    /// `windows[k]` belongs to `points[k]`.
    pub windows: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn summary(&self) -> WindowStats {
        WindowStats::of(self.iteration, &self.windows)
    }
}

/// Per-iteration min/mean/max of the window extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub iteration: usize,
    pub wx_min: usize,
    pub wx_mean: f64,
    pub wx_max: usize,
    pub wy_min: usize,
    pub wy_mean: f64,
    pub wy_max: usize,
}

impl WindowStats {
    pub fn of(iteration: usize, windows: &[(usize, usize)]) -> Self {
        let n = windows.len().max(1) as f64;
        let xs = windows.iter().map(|w| w.0);
        let ys = windows.iter().map(|w| w.1);
        Self {
            iteration,
            wx_min: xs.clone().min().unwrap_or(0),
            wx_mean: xs.clone().sum::<usize>() as f64 / n,
            wx_max: xs.max().unwrap_or(0),
            wy_min: ys.clone().min().unwrap_or(0),
            wy_mean: ys.clone().sum::<usize>() as f64 / n,
            wy_max: ys.max().unwrap_or(0),
        }
    }
}
