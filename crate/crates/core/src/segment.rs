//! Seed handling, configuration and the segmentation driver.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{evaluate, histogram_bin, mean_energy, point_force, EnergyModelKind, RegionStats, StatsAccumulator};
use crate::error::{Error, Result};
use crate::image::{clahe, crop, normalize, ClaheParams, GrayImage, Point, Roi};
use crate::levelset::{dirac, interior_weight, DistanceMap, LevelSetParams, NarrowBand, NearestGrid};
use crate::texture::{centered_window, global_stats_quantized, local_contrast_quantized, quantize, QuantizedImage};
use crate::window::{
    lesion_dims, normalize_energy_trace, ContrastUnits, WindowBounds, WindowEstimator, WindowPlan, WindowStats,
};

/// Two user-marked points approximating the lesion's long axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedAxis {
    pub p1: Point,
    pub p2: Point,
}

impl SeedAxis {
    pub fn new(p1: Point, p2: Point) -> Result<Self> {
        if ![p1.x, p1.y, p2.x, p2.y].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSeed("non-finite coordinate".into()));
        }
        if p1 == p2 {
            return Err(Error::InvalidSeed("seed endpoints coincide".into()));
        }
        Ok(Self { p1, p2 })
    }

    pub fn length(&self) -> f64 {
        self.p1.distance(self.p2)
    }

    pub fn midpoint(&self) -> Point {
        self.p1.midpoint(self.p2)
    }

    fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        for p in [self.p1, self.p2] {
            if p.x < 0.0 || p.y < 0.0 || p.x > (width - 1) as f64 || p.y > (height - 1) as f64 {
                return Err(Error::InvalidSeed(format!(
                    "point ({}, {}) outside the {width}x{height} image",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for SeedAxis {
    type Err = Error;

    /// Parses `"x1,y1,x2,y2"`.
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidSeed(format!("`{s}`: {e}")))?;
        if v.len() != 4 {
            return Err(Error::InvalidSeed(format!("`{s}`: expected x1,y1,x2,y2")));
        }
        SeedAxis::new(Point::new(v[0], v[1]), Point::new(v[2], v[3]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowMode {
    Adaptive,
    Global,
    Fixed(usize),
}

impl fmt::Display for WindowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowMode::Adaptive => f.write_str("adaptive"),
            WindowMode::Global => f.write_str("global"),
            WindowMode::Fixed(k) => write!(f, "fixed({k})"),
        }
    }
}

impl FromStr for WindowMode {
    type Err = Error;

    /// Accepts `adaptive`, `global`, `fixed(k)` and `fixed:k`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "adaptive" => return Ok(WindowMode::Adaptive),
            "global" => return Ok(WindowMode::Global),
            _ => {}
        }
        let k = s
            .strip_prefix("fixed:")
            .or_else(|| s.strip_prefix("fixed(").and_then(|r| r.strip_suffix(')')))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown window mode `{s}`")))?;
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad fixed window size in `{s}`")))?;
        if k % 2 == 0 || k < 3 {
            return Err(Error::InvalidConfig(format!("fixed window must be odd and >= 3, got {k}")));
        }
        Ok(WindowMode::Fixed(k))
    }
}

impl Serialize for WindowMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WindowMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub model: EnergyModelKind,
    pub mu: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub window_mode: WindowMode,
    pub epsilon: f64,
    pub band_radius: f64,
    /// Distance a unit force moves the zero level in one step.
    pub dt_max: f64,
    pub reinit_interval: usize,
    pub max_iters: usize,
    /// Largest fraction of band points allowed to change sign per converged iteration.
    pub conv_tol: f64,
    /// Largest relative change of the mean energy per converged iteration.
    pub conv_tol_energy: f64,
    pub conv_patience: usize,
    pub n_g: usize,
    pub glcm_d: usize,
    pub hist_bins: usize,
    pub w_min: usize,
    pub w_max: usize,
    pub contrast_units: ContrastUnits,
    /// Weight of the energy-progress term in the window formula; 0 drops it.
    pub energy_weight: f64,
    /// Quantile of pointwise force magnitudes mapped to a unit force (global window only).
    pub force_quantile: f64,
    /// A local force averages contour pixels with a Gaussian of width `window / force_kernel`.
    pub force_kernel: f64,
    pub roi_margin: usize,
    pub clahe: bool,
    pub clahe_tiles: usize,
    pub clahe_clip: f64,
    pub clahe_bins: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        let ls = LevelSetParams::default();
        let cl = ClaheParams::default();
        Self {
            model: EnergyModelKind::LocalPc,
            mu: 0.15,
            lambda1: 2.0,
            lambda2: 2.0,
            window_mode: WindowMode::Adaptive,
            epsilon: ls.epsilon,
            band_radius: ls.band_radius,
            dt_max: 1.5,
            reinit_interval: ls.reinit_interval,
            max_iters: 50,
            conv_tol: 0.002,
            conv_tol_energy: 1e-3,
            conv_patience: 5,
            n_g: 32,
            glcm_d: 1,
            hist_bins: 32,
            w_min: 5,
            w_max: 35,
            contrast_units: ContrastUnits::GrayLevels,
            energy_weight: 0.0,
            force_quantile: 0.5,
            force_kernel: 4.0,
            roi_margin: 10,
            clahe: false,
            clahe_tiles: cl.tiles_x,
            clahe_clip: cl.clip_limit,
            clahe_bins: cl.bins,
        }
    }
}

impl SegConfig {
    pub fn level_set(&self) -> LevelSetParams {
        LevelSetParams {
            epsilon: self.epsilon,
            band_radius: self.band_radius,
            max_step: self.dt_max,
            reinit_interval: self.reinit_interval,
        }
    }

    pub fn clahe_params(&self) -> ClaheParams {
        ClaheParams {
            tiles_x: self.clahe_tiles,
            tiles_y: self.clahe_tiles,
            clip_limit: self.clahe_clip,
            bins: self.clahe_bins,
        }
    }

    pub fn bounds(&self) -> WindowBounds {
        WindowBounds {
            w_min: self.w_min,
            w_max: self.w_max,
        }
    }

    /// The statistics region actually used: the global model ignores the window mode.
    pub fn effective_window_mode(&self) -> WindowMode {
        if self.model.is_global() {
            WindowMode::Global
        } else {
            self.window_mode
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return bad(format!("mu must be >= 0, got {}", self.mu));
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) || !(self.lambda1 + self.lambda2).is_finite() {
            return bad(format!("lambdas must be > 0, got {} and {}", self.lambda1, self.lambda2));
        }
        if self.max_iters < 1 || self.conv_patience < 1 {
            return bad("max_iters and conv_patience must be >= 1".into());
        }
        if !(self.conv_tol >= 0.0 && self.conv_tol_energy >= 0.0) {
            return bad("convergence tolerances must be >= 0".into());
        }
        if self.n_g < 2 || self.n_g > u16::MAX as usize || self.glcm_d < 1 || self.hist_bins < 1 {
            return bad("n_g >= 2, glcm_d >= 1 and hist_bins >= 1 required".into());
        }
        if !(self.energy_weight >= 0.0 && self.energy_weight.is_finite()) {
            return bad(format!("energy_weight must be >= 0, got {}", self.energy_weight));
        }
        if !(self.force_quantile > 0.0 && self.force_quantile <= 1.0) {
            return bad(format!("force_quantile must be in (0, 1], got {}", self.force_quantile));
        }
        if !(self.force_kernel > 0.0 && self.force_kernel.is_finite()) {
            return bad(format!("force_kernel must be > 0, got {}", self.force_kernel));
        }
        if let WindowMode::Fixed(k) = self.window_mode {
            if k % 2 == 0 || k < 3 {
                return bad(format!("fixed window must be odd and >= 3, got {k}"));
            }
        }
        if self.clahe && (self.clahe_tiles < 1 || !(self.clahe_clip > 0.0) || self.clahe_bins < 2) {
            return bad("CLAHE needs tiles >= 1, clip > 0 and bins >= 2".into());
        }
        self.bounds().validate()?;
        self.level_set().validate()
    }

    /// Applies one `key=value` override; `value` is read as JSON when it
    /// parses as such and as a plain string otherwise.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let obj = doc.as_object_mut().expect("config is an object");
        if !obj.contains_key(key) {
            return Err(Error::InvalidConfig(format!("unknown config key `{key}`")));
        }
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        obj.insert(key.to_string(), parsed);
        *self = serde_json::from_value(doc).map_err(|e| Error::InvalidConfig(format!("{key}={value}: {e}")))?;
        Ok(())
    }
}

/// Bounding box of the initial circle, grown by `margin` on every side and
/// clamped to the image.
pub fn make_roi(seed: &SeedAxis, width: usize, height: usize, margin: usize) -> Result<Roi> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("image has zero area".into()));
    }
    seed.check_inside(width, height)?;
    let c = seed.midpoint();
    let r = seed.length() / 2.0;
    let m = margin as f64;
    Roi::from_corners_clamped(
        (c.x - r - m).floor() as i64,
        (c.y - r - m).floor() as i64,
        (c.x + r + m).ceil() as i64,
        (c.y + r + m).ceil() as i64,
        width,
        height,
    )
    .ok_or_else(|| Error::InvalidSeed("empty region of interest".into()))
}

/// Circle through both seed points, in ROI coordinates.
pub fn init_contour(seed: &SeedAxis, roi: Roi, params: LevelSetParams) -> Result<DistanceMap> {
    let c = seed.midpoint();
    let center = Point::new(c.x - roi.x0 as f64, c.y - roi.y0 as f64);
    DistanceMap::circle(roi.width, roi.height, center, seed.length() / 2.0, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

/// Per-iteration traces; also attached to a contour-collapse error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialTrace {
    pub energy_trace: Vec<f64>,
    pub sign_change_trace: Vec<f64>,
    pub window_trace: Vec<WindowStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegResult {
    pub roi: Roi,
    /// Row-major over the ROI; `true` where `φ < 0`.
    #[serde(skip)]
    pub mask: Vec<bool>,
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
    pub sign_change_trace: Vec<f64>,
    pub window_trace: Vec<WindowStats>,
    /// Count of every emitted window extent (both axes), keyed by size.
    pub window_histogram: BTreeMap<usize, u64>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl SegResult {
    /// The mask placed on a `width` x `height` canvas at the ROI offset.
    pub fn full_mask(&self, width: usize, height: usize) -> Vec<bool> {
        let mut out = vec![false; width * height];
        for y in 0..self.roi.height {
            for x in 0..self.roi.width {
                let (cx, cy) = (x + self.roi.x0, y + self.roi.y0);
                if cx < width && cy < height {
                    out[cy * width + cx] = self.mask[y * self.roi.width + x];
                }
            }
        }
        out
    }
}

/// True when the last `patience` iterations each moved fewer than
/// `sign_tol` of the band points across the contour and changed the mean
/// energy by less than `energy_tol` (relative). The first iteration has no
/// predecessor and counts as an unchanged energy.
pub fn converged(sign_fraction: &[f64], energy: &[f64], sign_tol: f64, energy_tol: f64, patience: usize) -> bool {
    let n = sign_fraction.len().min(energy.len());
    if patience == 0 || n < patience {
        return false;
    }
    (n - patience..n).all(|j| {
        let energy_ok = j == 0 || {
            let prev = energy[j - 1];
            (energy[j] - prev).abs() / prev.abs().max(f64::MIN_POSITIVE) < energy_tol
        };
        sign_fraction[j] < sign_tol && energy_ok
    })
}

/// The `q`-quantile of the force magnitudes; forces are divided by it and clipped to `[-1, 1]`.
fn force_scale(mut mags: Vec<f64>, q: f64) -> f64 {
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let k = ((q * (mags.len() - 1) as f64).round() as usize).min(mags.len() - 1);
    let s = mags[k];
    if s > 0.0 {
        s
    } else {
        mags[mags.len() - 1]
    }
}

/// Per-iteration working fields over the ROI.
struct Fields<'a> {
    image: &'a GrayImage,
    bins: &'a [u16],
    h: Vec<f64>,
    delta: Vec<f64>,
}

impl Fields<'_> {
    fn stats(&self, rect: Roi, nbins: usize) -> RegionStats {
        let w = self.image.width();
        let data = self.image.data();
        let mut acc = StatsAccumulator::new(nbins);
        for y in rect.y0..rect.y0 + rect.height {
            let row = y * w;
            for x in rect.x0..rect.x0 + rect.width {
                let i = row + x;
                acc.add(data[i], self.bins[i] as usize, self.h[i]);
            }
        }
        acc.finish()
    }

    /// Pointwise force integrated over the window's contour neighborhood,
    /// weighted by the Dirac and a Gaussian centered on `c`, and divided by the
    /// same integral of its magnitude. The result is in `[-1, 1]`: ±1 when
    /// every contour pixel in the window agrees.
    fn localized_force(&self, rect: Roi, c: (usize, usize), win: (usize, usize), stats: &RegionStats, cfg: &SegConfig, b: f64) -> Option<f64> {
        let w = self.image.width();
        let data = self.image.data();
        let (sx, sy) = (win.0 as f64 / cfg.force_kernel, win.1 as f64 / cfg.force_kernel);
        let (mut sum, mut mass) = (0.0, 0.0f64);
        for y in rect.y0..rect.y0 + rect.height {
            let row = y * w;
            for x in rect.x0..rect.x0 + rect.width {
                let dx = (x as f64 - c.0 as f64) / sx;
                let dy = (y as f64 - c.1 as f64) / sy;
                let d = self.delta[row + x] * (-0.5 * (dx * dx + dy * dy)).exp();
                if d > 0.0 {
                    let f = point_force(cfg.model, data[row + x], stats, b, cfg.lambda1, cfg.lambda2);
                    sum += d * f;
                    mass += d * f.abs();
                }
            }
        }
        (mass > 0.0).then(|| sum / mass)
    }
}

struct Prepared {
    roi: Roi,
    image: GrayImage,
    quantized: QuantizedImage,
    bins: Vec<u16>,
}

fn prepare(image: &GrayImage, seed: &SeedAxis, cfg: &SegConfig) -> Result<Prepared> {
    let roi = make_roi(seed, image.width(), image.height(), cfg.roi_margin)?;
    let (cropped, roi) = crop(image, roi)?;
    let mut roi_image = normalize(cropped.width(), cropped.height(), cropped.data())?;
    if cfg.clahe {
        roi_image = clahe(&roi_image, &cfg.clahe_params())?;
    }
    let quantized = quantize(&roi_image, cfg.n_g)?;
    let bins = roi_image
        .data()
        .iter()
        .map(|&v| histogram_bin(v, cfg.hist_bins) as u16)
        .collect();
    Ok(Prepared {
        roi,
        image: roi_image,
        quantized,
        bins,
    })
}

fn with_trace(err: Error, iteration: usize, trace: &PartialTrace) -> Error {
    match err {
        Error::ContourCollapse { .. } => Error::ContourCollapse {
            iteration,
            trace: Box::new(trace.clone()),
        },
        other => other,
    }
}

/// Windows for the contour points of iteration `j`.
struct WindowPlanner {
    estimator: Option<WindowEstimator>,
    previous: Option<(Vec<usize>, Vec<(usize, usize)>)>,
}

impl WindowPlanner {
    fn plan(
        &self,
        map: &DistanceMap,
        band: &NarrowBand,
        q: &QuantizedImage,
        iteration: usize,
        f_norm: f64,
        cfg: &SegConfig,
    ) -> Result<WindowPlan> {
        let lesion = lesion_dims(map)?;
        let windows = match (cfg.effective_window_mode(), &self.estimator) {
            (WindowMode::Fixed(k), _) => vec![(k, k); band.zls.len()],
            (WindowMode::Global, _) => vec![(map.width(), map.height()); band.zls.len()],
            (WindowMode::Adaptive, Some(est)) => match &self.previous {
                None => vec![est.bootstrap(lesion); band.zls.len()],
                Some((points, windows)) => {
                    let grid = NearestGrid::new(map.width(), map.height(), points);
                    band.zls
                        .par_iter()
                        .map(|&idx| {
                            let (x, y) = map.coords(idx);
                            let prev = windows[grid.nearest(x, y).expect("previous contour is non-empty")];
                            let lc = local_contrast_quantized(q, (x, y), prev, cfg.glcm_d);
                            est.estimate_from(prev, lesion, lc, f_norm)
                        })
                        .collect()
                }
            },
            (WindowMode::Adaptive, None) => unreachable!("adaptive mode always has an estimator"),
        };
        Ok(WindowPlan {
            iteration,
            lesion,
            points: band.zls.clone(),
            windows,
        })
    }
}

/// Segments the lesion marked by `seed` in `image`.
pub fn segment(image: &GrayImage, seed: &SeedAxis, cfg: &SegConfig) -> Result<SegResult> {
    cfg.validate()?;
    let prep = prepare(image, seed, cfg)?;
    let mode = cfg.effective_window_mode();
    let estimator = match mode {
        WindowMode::Adaptive => {
            let g = global_stats_quantized(&prep.quantized, cfg.glcm_d)?;
            Some(WindowEstimator::new(g, cfg.contrast_units, cfg.n_g, cfg.bounds()).with_energy_weight(cfg.energy_weight))
        }
        _ => None,
    };
    let mut map = init_contour(seed, prep.roi, cfg.level_set())?.with_exterior_frame(true);
    let mut planner = WindowPlanner {
        estimator,
        previous: None,
    };

    let mut trace = PartialTrace::default();
    let mut histogram = BTreeMap::new();
    let mut stop = StopReason::MaxIterations;
    let bounds = Roi::new(0, 0, prep.roi.width, prep.roi.height);
    let eps = cfg.epsilon;

    for j in 1..=cfg.max_iters {
        let band = map.band().map_err(|e| with_trace(e, j, &trace))?;
        let f_norm = match trace.energy_trace.first() {
            Some(&f1) => normalize_energy_trace(*trace.energy_trace.last().expect("non-empty"), f1),
            None => 1.0,
        };
        let plan = planner
            .plan(&map, &band, &prep.quantized, j, f_norm, cfg)
            .map_err(|e| with_trace(e, j, &trace))?;

        let fields = Fields {
            image: &prep.image,
            bins: &prep.bins,
            h: map.phi().iter().map(|&p| interior_weight(p, eps)).collect(),
            delta: map.phi().iter().map(|&p| dirac(p, eps)).collect(),
        };
        let global = (mode == WindowMode::Global).then(|| fields.stats(bounds, cfg.hist_bins));
        let data = prep.image.data();
        let evaluated: Vec<_> = band
            .zls
            .par_iter()
            .zip(plan.windows.par_iter())
            .map(|(&idx, &(wx, wy))| {
                let intensity = data[idx];
                match &global {
                    Some(s) => evaluate(cfg.model, intensity, s, cfg.lambda1, cfg.lambda2),
                    None => {
                        let (x, y) = map.coords(idx);
                        let rect = centered_window(x, y, wx, wy, bounds).expect("contour point lies in the ROI");
                        let s = fields.stats(rect, cfg.hist_bins);
                        let mut e = evaluate(cfg.model, intensity, &s, cfg.lambda1, cfg.lambda2);
                        if !e.one_sided {
                            e.force = fields.localized_force(rect, (x, y), (wx, wy), &s, cfg, e.energy).unwrap_or(0.0);
                        }
                        e
                    }
                }
            })
            .collect();
        let energies: Vec<f64> = evaluated.iter().map(|e| e.energy).collect();
        let f_bar = mean_energy(&energies).map_err(|e| with_trace(e, j, &trace))?;
        // Localized forces are already in [-1, 1]; pointwise global forces are
        // brought there by a quantile of their magnitudes.
        let peak = match global {
            Some(_) => force_scale(evaluated.iter().map(|e| e.force.abs()).collect(), cfg.force_quantile),
            None => 1.0,
        };
        let forces: Vec<f64> = evaluated
            .iter()
            .map(|e| if peak > 0.0 { (e.force / peak).clamp(-1.0, 1.0) } else { 0.0 })
            .collect();

        let before: Vec<bool> = band.points.iter().map(|&i| map.is_inside(i)).collect();
        map.evolve_step(&band, &forces, cfg.mu).map_err(|e| {
            trace.energy_trace.push(f_bar);
            with_trace(e, j, &trace)
        })?;
        let flips = band
            .points
            .iter()
            .zip(&before)
            .filter(|(&i, &b)| map.is_inside(i) != b)
            .count();

        for &(wx, wy) in &plan.windows {
            *histogram.entry(wx).or_insert(0u64) += 1;
            *histogram.entry(wy).or_insert(0u64) += 1;
        }
        trace.energy_trace.push(f_bar);
        trace.sign_change_trace.push(flips as f64 / band.points.len().max(1) as f64);
        trace.window_trace.push(plan.summary());
        planner.previous = Some((plan.points, plan.windows));

        if converged(
            &trace.sign_change_trace,
            &trace.energy_trace,
            cfg.conv_tol,
            cfg.conv_tol_energy,
            cfg.conv_patience,
        ) {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok(SegResult {
        roi: prep.roi,
        mask: map.mask(),
        iterations: trace.energy_trace.len(),
        energy_trace: trace.energy_trace,
        sign_change_trace: trace.sign_change_trace,
        window_trace: trace.window_trace,
        window_histogram: histogram,
        converged: stop == StopReason::Converged,
        stop_reason: stop,
    })
}
