//! Signed distance maps, the smoothed Heaviside/Dirac pair and narrow-band
//! evolution.
//!
//! Sign convention: `phi < 0` strictly inside the contour, `phi >= 0` outside.
//! The interior weight of a pixel is therefore `heaviside(-phi)`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Point;

/// Smoothed step: 1 above `eps`, 0 below `-eps`, sinusoidal blend between.
#[inline]
pub fn heaviside(phi: f64, eps: f64) -> f64 {
    if phi > eps {
        1.0
    } else if phi < -eps {
        0.0
    } else {
        0.5 * (1.0 + phi / eps + (PI * phi / eps).sin() / PI)
    }
}

/// Derivative of [`heaviside`]: a raised-cosine bump of unit mass on `[-eps, eps]`.
#[inline]
pub fn dirac(phi: f64, eps: f64) -> f64 {
    if phi.abs() > eps {
        0.0
    } else {
        (1.0 + (PI * phi / eps).cos()) / (2.0 * eps)
    }
}

/// Weight of a pixel in the interior region.
#[inline]
pub fn interior_weight(phi: f64, eps: f64) -> f64 {
    heaviside(-phi, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelSetParams {
    /// Heaviside half-width in pixels.
    pub epsilon: f64,
    /// Narrow-band half-width in pixels.
    pub band_radius: f64,
    /// Largest `|Δphi|` allowed in one step.
    pub max_step: f64,
    /// Reinitialize every this many steps.
    pub reinit_interval: usize,
}

impl Default for LevelSetParams {
    fn default() -> Self {
        Self {
            epsilon: 1.5,
            band_radius: 4.0,
            max_step: 0.45,
            reinit_interval: 1,
        }
    }
}

impl LevelSetParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.band_radius >= 1.0
            && self.max_step > 0.0
            && self.reinit_interval >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("level-set parameters {self:?}")))
        }
    }
}

/// Signed distance field over a ROI grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    width: usize,
    height: usize,
    phi: Vec<f64>,
    params: LevelSetParams,
    exterior_frame: bool,
    steps_since_reinit: usize,
}

/// Grid points within the band and the sign-change subset (the contour).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NarrowBand {
    /// Row-major linear indices, ascending.
    pub points: Vec<usize>,
    /// Row-major linear indices of zero-level-set points, ascending.
    pub zls: Vec<usize>,
}

impl DistanceMap {
    pub fn from_phi(width: usize, height: usize, phi: Vec<f64>, params: LevelSetParams) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 || phi.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "phi of length {} for {width}x{height}",
                phi.len()
            )));
        }
        Ok(Self {
            width,
            height,
            phi,
            params,
            exterior_frame: false,
            steps_since_reinit: 0,
        })
    }

    /// Exact signed distance to a circle on a `width` x `height` grid.
    pub fn circle(width: usize, height: usize, center: Point, radius: f64, params: LevelSetParams) -> Result<Self> {
        if !(radius >= 2.0) {
            return Err(Error::InvalidSeed(format!("circle radius {radius} below 2 px")));
        }
        if center.x < 0.0 || center.y < 0.0 || center.x > (width - 1) as f64 || center.y > (height - 1) as f64 {
            return Err(Error::InvalidSeed(format!("circle center {center:?} outside the grid")));
        }
        let mut phi = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                phi.push(Point::new(x as f64, y as f64).distance(center) - radius);
            }
        }
        Self::from_phi(width, height, phi, params)
    }

    /// Keeps the outermost ring of the grid outside the contour.
    pub fn with_exterior_frame(mut self, on: bool) -> Self {
        self.exterior_frame = on;
        if on {
            self.pin_frame();
        }
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn params(&self) -> &LevelSetParams {
        &self.params
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.phi[y * self.width + x]
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub fn is_inside(&self, idx: usize) -> bool {
        self.phi[idx] < 0.0
    }

    /// Binary interior mask (`phi < 0`).
    pub fn mask(&self) -> Vec<bool> {
        self.phi.iter().map(|&v| v < 0.0).collect()
    }

    pub fn inside_count(&self) -> usize {
        self.phi.iter().filter(|&&v| v < 0.0).count()
    }

    fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = self.coords(idx);
        let w = self.width;
        [
            (x > 0).then(|| idx - 1),
            (x + 1 < w).then(|| idx + 1),
            (y > 0).then(|| idx - w),
            (y + 1 < self.height).then(|| idx + w),
        ]
        .into_iter()
        .flatten()
    }

    fn is_zls(&self, idx: usize) -> bool {
        let inside = self.phi[idx] < 0.0;
        self.neighbors4(idx).any(|n| (self.phi[n] < 0.0) != inside)
    }

    /// Collects band points (`|phi| <= band_radius`, plus every contour
    /// point) and the contour points themselves.
    pub fn band(&self) -> Result<NarrowBand> {
        let inside = self.inside_count();
        if inside == 0 || inside == self.phi.len() {
            return Err(Error::collapse(0));
        }
        let r = self.params.band_radius;
        let mut points = Vec::new();
        let mut zls = Vec::new();
        for idx in 0..self.phi.len() {
            let on_contour = self.is_zls(idx);
            if on_contour {
                zls.push(idx);
            }
            if on_contour || self.phi[idx].abs() <= r {
                points.push(idx);
            }
        }
        Ok(NarrowBand { points, zls })
    }

    #[inline]
    fn at_clamped(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.get(x, y)
    }

    /// Mean curvature `div(∇φ/|∇φ|)` from central differences, replicating
    /// edge values beyond the grid.
    pub fn curvature(&self, x: usize, y: usize) -> f64 {
        let (x, y) = (x as i64, y as i64);
        let c = self.at_clamped(x, y);
        let l = self.at_clamped(x - 1, y);
        let r = self.at_clamped(x + 1, y);
        let u = self.at_clamped(x, y - 1);
        let d = self.at_clamped(x, y + 1);
        let px = 0.5 * (r - l);
        let py = 0.5 * (d - u);
        let pxx = r - 2.0 * c + l;
        let pyy = d - 2.0 * c + u;
        let pxy = 0.25
            * (self.at_clamped(x + 1, y + 1) - self.at_clamped(x + 1, y - 1) - self.at_clamped(x - 1, y + 1)
                + self.at_clamped(x - 1, y - 1));
        let g2 = px * px + py * py;
        let g = g2.sqrt().max(1e-8);
        (pxx * py * py - 2.0 * px * py * pxy + pyy * px * px) / (g * g * g)
    }

    /// Central-difference gradient magnitude.
    pub fn gradient_norm(&self, x: usize, y: usize) -> f64 {
        let (x, y) = (x as i64, y as i64);
        let px = 0.5 * (self.at_clamped(x + 1, y) - self.at_clamped(x - 1, y));
        let py = 0.5 * (self.at_clamped(x, y + 1) - self.at_clamped(x, y - 1));
        px.hypot(py)
    }

    /// Discrete contour length `Σ δ(φ)|∇φ|` over the grid.
    pub fn length(&self) -> f64 {
        let eps = self.params.epsilon;
        let mut total = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let d = dirac(self.get(x, y), eps);
                if d > 0.0 {
                    total += d * self.gradient_norm(x, y);
                }
            }
        }
        total
    }

    /// Rebuilds `phi` as a chamfer distance seeded at sub-pixel sign
    /// crossings. The sign of every grid point is preserved.
    pub fn reinitialize(&mut self) {
        let n = self.phi.len();
        let w = self.width;
        let mut dist = vec![f64::INFINITY; n];
        for (idx, slot) in dist.iter_mut().enumerate() {
            let p = self.phi[idx];
            let inside = p < 0.0;
            let (x, y) = self.coords(idx);
            let crossing = |q: f64| {
                if (q < 0.0) != inside {
                    Some((p / (p - q)).abs())
                } else {
                    None
                }
            };
            let horiz = [
                (x > 0).then(|| self.phi[idx - 1]),
                (x + 1 < w).then(|| self.phi[idx + 1]),
            ];
            let vert = [
                (y > 0).then(|| self.phi[idx - w]),
                (y + 1 < self.height).then(|| self.phi[idx + w]),
            ];
            let nearest = |qs: [Option<f64>; 2]| {
                qs.into_iter()
                    .flatten()
                    .filter_map(crossing)
                    .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
            };
            *slot = match (nearest(horiz), nearest(vert)) {
                (Some(dx), Some(dy)) => {
                    let h = dx.hypot(dy);
                    if h > 0.0 {
                        dx * dy / h
                    } else {
                        0.0
                    }
                }
                (Some(d), None) | (None, Some(d)) => d,
                (None, None) => f64::INFINITY,
            };
        }

        let h = self.height;
        // Forward pass.
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut best = dist[i];
                if x > 0 {
                    best = best.min(dist[i - 1] + 1.0);
                }
                if y > 0 {
                    best = best.min(dist[i - w] + 1.0);
                    if x > 0 {
                        best = best.min(dist[i - w - 1] + SQRT_2);
                    }
                    if x + 1 < w {
                        best = best.min(dist[i - w + 1] + SQRT_2);
                    }
                }
                dist[i] = best;
            }
        }
        // Backward pass.
        for y in (0..h).rev() {
            for x in (0..w).rev() {
                let i = y * w + x;
                let mut best = dist[i];
                if x + 1 < w {
                    best = best.min(dist[i + 1] + 1.0);
                }
                if y + 1 < h {
                    best = best.min(dist[i + w] + 1.0);
                    if x + 1 < w {
                        best = best.min(dist[i + w + 1] + SQRT_2);
                    }
                    if x > 0 {
                        best = best.min(dist[i + w - 1] + SQRT_2);
                    }
                }
                dist[i] = best;
            }
        }

        for (p, d) in self.phi.iter_mut().zip(dist) {
            if !d.is_finite() {
                continue;
            }
            *p = if *p < 0.0 { -d.max(f64::MIN_POSITIVE) } else { d };
        }
        self.steps_since_reinit = 0;
    }

    fn pin_frame(&mut self) {
        const FRAME_PHI: f64 = 0.5;
        let (w, h) = (self.width, self.height);
        for x in 0..w {
            for y in [0, h - 1] {
                let p = &mut self.phi[y * w + x];
                *p = p.max(FRAME_PHI);
            }
        }
        for y in 0..h {
            for x in [0, w - 1] {
                let p = &mut self.phi[y * w + x];
                *p = p.max(FRAME_PHI);
            }
        }
    }

    /// One descent step. `zls_forces[k]` is the force at `band.zls[k]`;
    /// positive force inflates the contour. Each band point takes the force
    /// of its nearest contour point. The update `δ(φ)·(μκ − F)` moves a
    /// unit force on the zero level by `max_step`; larger updates are scaled
    /// down so none exceeds it.
    pub fn evolve_step(&mut self, band: &NarrowBand, zls_forces: &[f64], mu: f64) -> Result<StepReport> {
        if zls_forces.len() != band.zls.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} forces for {} contour points",
                zls_forces.len(),
                band.zls.len()
            )));
        }
        if band.zls.is_empty() {
            return Err(Error::collapse(0));
        }
        let eps = self.params.epsilon;
        let nearest = NearestGrid::new(self.width, self.height, &band.zls);
        let raw: Vec<f64> = band
            .points
            .iter()
            .map(|&idx| {
                let delta = dirac(self.phi[idx], eps);
                if delta == 0.0 {
                    return 0.0;
                }
                let (x, y) = self.coords(idx);
                let force = zls_forces[nearest.nearest(x, y).expect("non-empty contour")];
                let smooth = if mu > 0.0 { mu * self.curvature(x, y) } else { 0.0 };
                delta * (smooth - force)
            })
            .collect();
        let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 || !peak.is_finite() {
            return Ok(StepReport { dt: 0.0, moved: false });
        }
        let dt = self.params.max_step / peak.max(dirac(0.0, eps));
        for (&idx, r) in band.points.iter().zip(&raw) {
            self.phi[idx] += dt * r;
        }
        if self.exterior_frame {
            self.pin_frame();
        }
        self.steps_since_reinit += 1;
        if self.steps_since_reinit >= self.params.reinit_interval {
            self.reinitialize();
        }
        let inside = self.inside_count();
        if inside == 0 || inside == self.phi.len() {
            return Err(Error::collapse(0));
        }
        Ok(StepReport { dt, moved: true })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub dt: f64,
    pub moved: bool,
}

/// Exact nearest-point lookup over a sparse set of grid cells. Ties go to
/// the point with the lowest row-major index.
pub(crate) struct NearestGrid {
    width: usize,
    height: usize,
    owner: Vec<u32>,
}

impl NearestGrid {
    const EMPTY: u32 = u32::MAX;

    /// `cells[k]` is the row-major index of point `k`.
    pub(crate) fn new(width: usize, height: usize, cells: &[usize]) -> Self {
        let mut owner = vec![Self::EMPTY; width * height];
        for (k, &c) in cells.iter().enumerate() {
            if owner[c] == Self::EMPTY {
                owner[c] = k as u32;
            }
        }
        Self { width, height, owner }
    }

    pub(crate) fn nearest(&self, x: usize, y: usize) -> Option<usize> {
        let (w, h) = (self.width as i64, self.height as i64);
        let (x, y) = (x as i64, y as i64);
        let mut best: Option<(i64, i64, u32)> = None;
        let max_r = w.max(h);
        let visit = |cx: i64, cy: i64, best: &mut Option<(i64, i64, u32)>| {
            if cx < 0 || cy < 0 || cx >= w || cy >= h {
                return;
            }
            let lin = cy * w + cx;
            let k = self.owner[lin as usize];
            if k == Self::EMPTY {
                return;
            }
            let d2 = (cx - x).pow(2) + (cy - y).pow(2);
            let better = match best {
                None => true,
                Some((bd, bl, _)) => (d2, lin) < (*bd, *bl),
            };
            if better {
                *best = Some((d2, lin, k));
            }
        };
        for r in 0..=max_r {
            if let Some((bd, _, _)) = best {
                if r * r > bd {
                    break;
                }
            }
            if r == 0 {
                visit(x, y, &mut best);
                continue;
            }
            for dx in -r..=r {
                visit(x + dx, y - r, &mut best);
                visit(x + dx, y + r, &mut best);
            }
            for dy in (-r + 1)..r {
                visit(x - r, y + dy, &mut best);
                visit(x + r, y + dy, &mut best);
            }
        }
        best.map(|(_, _, k)| k as usize)
    }
}
