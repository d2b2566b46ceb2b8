//! Region statistics and the energy models driving the contour.
//!
//! Every force follows one sign convention: a positive force pulls the point
//! into the interior (the contour inflates there). Each force is the negative
//! derivative of its model's window energy with respect to the interior
//! weight `H` of the point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Roi};
use crate::levelset::{interior_weight, DistanceMap};

/// Floor applied to the mean energy before it is inverted.
pub const ENERGY_FLOOR: f64 = 1e-6;

/// Smallest region mass (in pixels) treated as a populated side of a window.
pub const MIN_REGION_MASS: f64 = 1.0;

/// Floor on histogram probabilities inside the square-root ratios.
const HIST_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnergyModelKind {
    #[serde(rename = "global-pc")]
    GlobalPc,
    #[serde(rename = "local-pc")]
    LocalPc,
    #[serde(rename = "ms")]
    MeanSeparation,
    #[serde(rename = "hs")]
    HistogramSeparation,
}

impl EnergyModelKind {
    pub const ALL: [EnergyModelKind; 4] = [
        EnergyModelKind::GlobalPc,
        EnergyModelKind::LocalPc,
        EnergyModelKind::MeanSeparation,
        EnergyModelKind::HistogramSeparation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnergyModelKind::GlobalPc => "global-pc",
            EnergyModelKind::LocalPc => "local-pc",
            EnergyModelKind::MeanSeparation => "ms",
            EnergyModelKind::HistogramSeparation => "hs",
        }
    }

    pub fn is_global(self) -> bool {
        self == EnergyModelKind::GlobalPc
    }
}

impl fmt::Display for EnergyModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnergyModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global-pc" | "global" => Ok(EnergyModelKind::GlobalPc),
            "local-pc" | "pc" => Ok(EnergyModelKind::LocalPc),
            "ms" | "mean-separation" => Ok(EnergyModelKind::MeanSeparation),
            "hs" | "histogram-separation" => Ok(EnergyModelKind::HistogramSeparation),
            other => Err(Error::InvalidConfig(format!("unknown energy model `{other}`"))),
        }
    }
}

/// Interior (`u`) and exterior (`v`) statistics of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub m_u: f64,
    pub m_v: f64,
    pub a_u: f64,
    pub a_v: f64,
    pub p_u: Vec<f64>,
    pub p_v: Vec<f64>,
    /// Number of pixels in the window.
    pub pixels: usize,
    /// `Σ (I - m_u)² H` over the window.
    pub sq_u: f64,
    /// `Σ (I - m_v)² (1 - H)` over the window.
    pub sq_v: f64,
}

/// Running sums from which [`RegionStats`] are finished.
#[derive(Debug, Clone)]
pub(crate) struct StatsAccumulator {
    s_u: f64,
    s_v: f64,
    i_u: f64,
    i_v: f64,
    i2_u: f64,
    i2_v: f64,
    h_u: Vec<f64>,
    h_v: Vec<f64>,
    pixels: usize,
}

impl StatsAccumulator {
    pub(crate) fn new(bins: usize) -> Self {
        Self {
            s_u: 0.0,
            s_v: 0.0,
            i_u: 0.0,
            i_v: 0.0,
            i2_u: 0.0,
            i2_v: 0.0,
            h_u: vec![0.0; bins],
            h_v: vec![0.0; bins],
            pixels: 0,
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, intensity: f64, bin: usize, h: f64) {
        let g = 1.0 - h;
        self.s_u += h;
        self.s_v += g;
        self.i_u += intensity * h;
        self.i_v += intensity * g;
        let i2 = intensity * intensity;
        self.i2_u += i2 * h;
        self.i2_v += i2 * g;
        self.h_u[bin] += h;
        self.h_v[bin] += g;
        self.pixels += 1;
    }

    pub(crate) fn finish(self) -> RegionStats {
        let mean = |s: f64, t: f64| if s > 0.0 { t / s } else { 0.0 };
        let m_u = mean(self.s_u, self.i_u);
        let m_v = mean(self.s_v, self.i_v);
        let norm = |h: Vec<f64>, s: f64| {
            if s > 0.0 {
                h.into_iter().map(|c| c / s).collect()
            } else {
                h
            }
        };
        RegionStats {
            m_u,
            m_v,
            a_u: self.s_u,
            a_v: self.s_v,
            sq_u: (self.i2_u - 2.0 * m_u * self.i_u + m_u * m_u * self.s_u).max(0.0),
            sq_v: (self.i2_v - 2.0 * m_v * self.i_v + m_v * m_v * self.s_v).max(0.0),
            p_u: norm(self.h_u, self.s_u),
            p_v: norm(self.h_v, self.s_v),
            pixels: self.pixels,
        }
    }
}

#[inline]
pub fn histogram_bin(intensity: f64, bins: usize) -> usize {
    ((intensity * bins as f64) as usize).min(bins - 1)
}

impl RegionStats {
    /// Statistics of explicit samples: `intensities[k]` with interior weight `weights[k]`.
    pub fn from_samples(intensities: &[f64], weights: &[f64], bins: usize) -> Self {
        let mut acc = StatsAccumulator::new(bins);
        for (&i, &h) in intensities.iter().zip(weights) {
            acc.add(i, histogram_bin(i, bins), h);
        }
        acc.finish()
    }

    /// Either side of the window holds less than one pixel of mass.
    pub fn one_sided(&self) -> bool {
        self.a_u < MIN_REGION_MASS || self.a_v < MIN_REGION_MASS
    }

    pub fn bins(&self) -> usize {
        self.p_u.len()
    }
}

/// Statistics of `map`'s interior/exterior split of `image` inside `window`.
pub fn region_stats(image: &GrayImage, map: &DistanceMap, window: Roi, bins: usize) -> Result<RegionStats> {
    if image.width() != map.width() || image.height() != map.height() {
        return Err(Error::DimensionMismatch("image and distance map differ in size".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let window = window
        .clamp_to(image.width(), image.height())
        .ok_or_else(|| Error::InvalidInput("window outside the ROI".into()))?;
    let eps = map.params().epsilon;
    let mut acc = StatsAccumulator::new(bins);
    for y in window.y0..window.y0 + window.height {
        for x in window.x0..window.x0 + window.width {
            let i = image.get(x, y);
            acc.add(i, histogram_bin(i, bins), interior_weight(map.get(x, y), eps));
        }
    }
    Ok(acc.finish())
}

/// Piecewise-constant force `-λ1(I-m_u)² + λ2(I-m_v)²`.
pub fn pc_force(intensity: f64, stats: &RegionStats, lambda1: f64, lambda2: f64) -> f64 {
    if stats.one_sided() {
        return 0.0;
    }
    -lambda1 * (intensity - stats.m_u).powi(2) + lambda2 * (intensity - stats.m_v).powi(2)
}

/// Piecewise-constant energy density of one pixel with interior weight `h`.
pub fn pc_energy(intensity: f64, h: f64, stats: &RegionStats, lambda1: f64, lambda2: f64) -> f64 {
    lambda1 * (intensity - stats.m_u).powi(2) * h + lambda2 * (intensity - stats.m_v).powi(2) * (1.0 - h)
}

/// Piecewise-constant energy summed over the whole window.
pub fn pc_window_energy(stats: &RegionStats, lambda1: f64, lambda2: f64) -> f64 {
    lambda1 * stats.sq_u + lambda2 * stats.sq_v
}

/// Mean-separation force `(m_u - m_v)·[(I-m_u)/A_u + (I-m_v)/A_v]`.
pub fn ms_force(intensity: f64, stats: &RegionStats) -> f64 {
    if stats.one_sided() {
        return 0.0;
    }
    (stats.m_u - stats.m_v) * ((intensity - stats.m_u) / stats.a_u + (intensity - stats.m_v) / stats.a_v)
}

/// `½(1 - (m_u - m_v)²)`: non-negative for intensities in `[0, 1]` and
/// smallest when the means are furthest apart.
pub fn ms_energy(stats: &RegionStats) -> f64 {
    if stats.one_sided() {
        return 0.5;
    }
    0.5 * (1.0 - (stats.m_u - stats.m_v).powi(2))
}

/// Bhattacharyya coefficient `Σ √(p(b) q(b))` of two normalized histograms.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "histograms with {} and {} bins",
            p.len(),
            q.len()
        )));
    }
    for h in [p, q] {
        let sum: f64 = h.iter().sum();
        if h.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "histogram is not normalized (sum {sum})"
            )));
        }
    }
    Ok(bhattacharyya_unchecked(p, q))
}

pub(crate) fn bhattacharyya_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (a * b).sqrt())
        .sum::<f64>()
        .min(1.0)
}

#[inline]
fn sqrt_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 && den == 0.0 {
        0.0
    } else {
        (num / den.max(HIST_FLOOR)).sqrt()
    }
}

/// Histogram-separation force at a pixel falling in histogram bin `bin`:
/// `½[B(λ1/A_u - λ2/A_v) - λ1 √(p_v/p_u)/A_u + λ2 √(p_u/p_v)/A_v]`.
/// With `λ1 = λ2 = λ` this is `-λ ∂B/∂H`. Weighting the overlap term as
/// well keeps the force at zero wherever the two histograms agree, whatever
/// the region sizes.
pub fn hs_force(bin: usize, stats: &RegionStats, b: f64, lambda1: f64, lambda2: f64) -> f64 {
    if stats.one_sided() {
        return 0.0;
    }
    let (pu, pv) = (stats.p_u[bin], stats.p_v[bin]);
    0.5 * (b * (lambda1 / stats.a_u - lambda2 / stats.a_v) - lambda1 * sqrt_ratio(pv, pu) / stats.a_u
        + lambda2 * sqrt_ratio(pu, pv) / stats.a_v)
}

/// Histogram-separation energy of a window: the overlap `B` of its interior
/// and exterior histograms (1 when one side is empty).
pub fn hs_energy(stats: &RegionStats) -> f64 {
    if stats.one_sided() {
        return 1.0;
    }
    bhattacharyya_unchecked(&stats.p_u, &stats.p_v)
}

/// Force and per-pixel-normalized energy of one window under `model`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEnergy {
    pub force: f64,
    pub energy: f64,
    pub one_sided: bool,
}

/// Pointwise force of `model` at a pixel of the given intensity. `b` is the
/// window's histogram overlap and only matters for histogram separation.
pub fn point_force(
    model: EnergyModelKind,
    intensity: f64,
    stats: &RegionStats,
    b: f64,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    match model {
        EnergyModelKind::GlobalPc | EnergyModelKind::LocalPc => pc_force(intensity, stats, lambda1, lambda2),
        EnergyModelKind::MeanSeparation => ms_force(intensity, stats),
        EnergyModelKind::HistogramSeparation => {
            hs_force(histogram_bin(intensity, stats.bins()), stats, b, lambda1, lambda2)
        }
    }
}

/// Energy of a window under `model`, per pixel for the piecewise-constant models.
pub fn window_energy(model: EnergyModelKind, stats: &RegionStats, lambda1: f64, lambda2: f64) -> f64 {
    match model {
        EnergyModelKind::GlobalPc | EnergyModelKind::LocalPc => {
            pc_window_energy(stats, lambda1, lambda2) / stats.pixels.max(1) as f64
        }
        EnergyModelKind::MeanSeparation => ms_energy(stats),
        EnergyModelKind::HistogramSeparation => hs_energy(stats),
    }
}

pub fn evaluate(
    model: EnergyModelKind,
    intensity: f64,
    stats: &RegionStats,
    lambda1: f64,
    lambda2: f64,
) -> PointEnergy {
    let energy = window_energy(model, stats, lambda1, lambda2);
    let b = if model == EnergyModelKind::HistogramSeparation { energy } else { 0.0 };
    PointEnergy {
        force: point_force(model, intensity, stats, b, lambda1, lambda2),
        energy,
        one_sided: stats.one_sided(),
    }
}

/// Average energy over the contour points of one iteration.
pub fn mean_energy(energies: &[f64]) -> Result<f64> {
    if energies.is_empty() {
        return Err(Error::collapse(0));
    }
    Ok(energies.iter().sum::<f64>() / energies.len() as f64)
}
