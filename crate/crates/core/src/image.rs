//! Raster type, per-image normalization, CLAHE and ROI cropping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sub-pixel position in image coordinates (`x` along columns, `y` along rows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

/// Single-channel raster with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    spacing: Option<(f64, f64)>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image has zero area".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            spacing: None,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn with_spacing(mut self, spacing: Option<(f64, f64)>) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> Option<(f64, f64)> {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn transpose(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                data.push(self.get(x, y));
            }
        }
        GrayImage {
            width: self.height,
            height: self.width,
            data,
            spacing: self.spacing.map(|(sx, sy)| (sy, sx)),
        }
    }
}

/// Axis-aligned region of interest in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn full(image: &GrayImage) -> Self {
        Self::new(0, 0, image.width(), image.height())
    }

    /// Builds a ROI from inclusive corner coordinates, clamping to a
    /// `width` x `height` parent. Returns `None` if nothing is left.
    pub fn from_corners_clamped(
        x_min: i64,
        y_min: i64,
        x_max: i64,
        y_max: i64,
        width: usize,
        height: usize,
    ) -> Option<Self> {
        let x0 = x_min.max(0);
        let y0 = y_min.max(0);
        let x1 = x_max.min(width as i64 - 1);
        let y1 = y_max.min(height as i64 - 1);
        if x1 < x0 || y1 < y0 {
            return None;
        }
        Some(Self::new(
            x0 as usize,
            y0 as usize,
            (x1 - x0 + 1) as usize,
            (y1 - y0 + 1) as usize,
        ))
    }

    /// Intersection with a `width` x `height` parent.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<Self> {
        Self::from_corners_clamped(
            self.x0 as i64,
            self.y0 as i64,
            self.x0 as i64 + self.width as i64 - 1,
            self.y0 as i64 + self.height as i64 - 1,
            width,
            height,
        )
    }
}

/// Rescales an arbitrary-range raster to `[0, 1]` by its own min and max.
/// A constant raster maps to 0.5 everywhere.
pub fn normalize(width: usize, height: usize, values: &[f64]) -> Result<GrayImage> {
    if values.is_empty() || width * height == 0 {
        return Err(Error::InvalidInput("cannot normalize an empty image".into()));
    }
    if values.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "expected {} samples, got {}",
            width * height,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let data = if hi > lo {
        let range = hi - lo;
        values
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.5; values.len()]
    };
    GrayImage::new(width, height, data)
}

/// Returns the sub-raster under `roi` after clamping it to the image,
/// together with the clamped ROI.
pub fn crop(image: &GrayImage, roi: Roi) -> Result<(GrayImage, Roi)> {
    let roi = roi
        .clamp_to(image.width(), image.height())
        .filter(|r| r.width > 0 && r.height > 0)
        .ok_or_else(|| Error::InvalidInput(format!("ROI {roi:?} has no overlap with the image")))?;
    let mut data = Vec::with_capacity(roi.width * roi.height);
    for y in roi.y0..roi.y0 + roi.height {
        let row = y * image.width();
        data.extend_from_slice(&image.data()[row + roi.x0..row + roi.x0 + roi.width]);
    }
    let out = GrayImage::new(roi.width, roi.height, data)?.with_spacing(image.spacing());
    Ok((out, roi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Fraction of a tile's pixel count allowed in any single histogram bin.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 0.01,
            bins: 256,
        }
    }
}

/// Intensity transfer function of one tile.
#[derive(Debug, Clone)]
enum TileMap {
    /// Degenerate histogram (one occupied bin): leave values alone.
    Identity,
    Lut(Vec<f64>),
}

impl TileMap {
    #[inline]
    fn apply(&self, value: f64, bin: usize) -> f64 {
        match self {
            TileMap::Identity => value,
            TileMap::Lut(lut) => lut[bin],
        }
    }
}

#[inline]
fn bin_of(value: f64, bins: usize) -> usize {
    ((value * bins as f64) as usize).min(bins - 1)
}

/// Clipped histogram of `values` with the excess spread evenly over all bins.
/// Returns `None` for a degenerate (single-bin) histogram.
fn clipped_histogram(values: impl Iterator<Item = f64>, bins: usize, clip_limit: f64) -> Option<Vec<f64>> {
    let mut hist = vec![0.0f64; bins];
    let mut total = 0.0;
    for v in values {
        hist[bin_of(v, bins)] += 1.0;
        total += 1.0;
    }
    if hist.iter().filter(|&&c| c > 0.0).count() <= 1 {
        return None;
    }
    let limit = clip_limit * total;
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / bins as f64;
    hist.iter_mut().for_each(|h| *h += share);
    Some(hist)
}

fn lut_from_histogram(hist: &[f64]) -> Vec<f64> {
    let total: f64 = hist.iter().sum();
    let mut acc = 0.0;
    hist.iter()
        .map(|&h| {
            acc += h;
            (acc / total).clamp(0.0, 1.0)
        })
        .collect()
}

/// Plain global histogram equalization onto a uniform distribution.
pub fn equalize(image: &GrayImage, bins: usize) -> Result<GrayImage> {
    if bins < 2 {
        return Err(Error::InvalidConfig("histogram needs at least 2 bins".into()));
    }
    let map = match clipped_histogram(image.data().iter().copied(), bins, 1.0) {
        None => TileMap::Identity,
        Some(h) => TileMap::Lut(lut_from_histogram(&h)),
    };
    let data = image
        .data()
        .iter()
        .map(|&v| map.apply(v, bin_of(v, bins)))
        .collect();
    Ok(GrayImage::new(image.width(), image.height(), data)?.with_spacing(image.spacing()))
}

/// Tile partition along one axis: tile `i` covers `[i*len/n, (i+1)*len/n)` in
/// continuous coordinates, and pixel `p` (center `p + 0.5`) belongs to the tile
/// containing its center.
struct TileAxis {
    len: usize,
    tiles: usize,
}

impl TileAxis {
    fn tile_of(&self, p: usize) -> usize {
        let t = ((p as f64 + 0.5) * self.tiles as f64 / self.len as f64) as usize;
        t.min(self.tiles - 1)
    }

    fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.len as f64 / self.tiles as f64
    }

    /// Neighbouring tiles bracketing pixel `p` and the weight of the second one.
    fn blend(&self, p: usize) -> (usize, usize, f64) {
        let pos = p as f64 + 0.5;
        let rel = pos * self.tiles as f64 / self.len as f64 - 0.5;
        if rel <= 0.0 {
            return (0, 0, 0.0);
        }
        let i = rel.floor() as usize;
        if i >= self.tiles - 1 {
            return (self.tiles - 1, self.tiles - 1, 0.0);
        }
        let t = (pos - self.center(i)) / (self.center(i + 1) - self.center(i));
        (i, i + 1, t)
    }

    fn min_tile_extent(&self) -> usize {
        let mut counts = vec![0usize; self.tiles];
        for p in 0..self.len {
            counts[self.tile_of(p)] += 1;
        }
        counts.into_iter().min().unwrap_or(0)
    }
}

/// Contrast-limited adaptive histogram equalization with bilinear blending of
/// the four surrounding tile mappings.
pub fn clahe(image: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    if params.tiles_x == 0 || params.tiles_y == 0 {
        return Err(Error::InvalidConfig("CLAHE needs at least one tile per axis".into()));
    }
    if !(params.clip_limit > 0.0 && params.clip_limit <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "clip limit {} outside (0, 1]",
            params.clip_limit
        )));
    }
    if params.bins < 2 {
        return Err(Error::InvalidConfig("histogram needs at least 2 bins".into()));
    }
    let ax = TileAxis {
        len: image.width(),
        tiles: params.tiles_x,
    };
    let ay = TileAxis {
        len: image.height(),
        tiles: params.tiles_y,
    };
    if ax.min_tile_extent() < 2 || ay.min_tile_extent() < 2 {
        return Err(Error::InvalidConfig(format!(
            "{}x{} tiles on a {}x{} image leaves tiles smaller than 2x2",
            params.tiles_x,
            params.tiles_y,
            image.width(),
            image.height()
        )));
    }

    let mut members: Vec<Vec<f64>> = vec![Vec::new(); params.tiles_x * params.tiles_y];
    for y in 0..image.height() {
        let ty = ay.tile_of(y);
        for x in 0..image.width() {
            members[ty * params.tiles_x + ax.tile_of(x)].push(image.get(x, y));
        }
    }
    let maps: Vec<TileMap> = members
        .iter()
        .map(|vals| match clipped_histogram(vals.iter().copied(), params.bins, params.clip_limit) {
            None => TileMap::Identity,
            Some(h) => TileMap::Lut(lut_from_histogram(&h)),
        })
        .collect();

    let x_blend: Vec<_> = (0..image.width()).map(|x| ax.blend(x)).collect();
    let mut data = Vec::with_capacity(image.data().len());
    for y in 0..image.height() {
        let (ty0, ty1, wy) = ay.blend(y);
        for (x, &(tx0, tx1, wx)) in x_blend.iter().enumerate() {
            let v = image.get(x, y);
            let b = bin_of(v, params.bins);
            let m = |ty: usize, tx: usize| maps[ty * params.tiles_x + tx].apply(v, b);
            let top = (1.0 - wx) * m(ty0, tx0) + wx * m(ty0, tx1);
            let bottom = (1.0 - wx) * m(ty1, tx0) + wx * m(ty1, tx1);
            data.push(((1.0 - wy) * top + wy * bottom).clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage::new(image.width(), image.height(), data)?.with_spacing(image.spacing()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn normalize_affine_and_degenerate() {
        let img = normalize(3, 1, &[0.0, 128.0, 255.0]).unwrap();
        assert_abs_diff_eq!(img.data()[1], 128.0 / 255.0, epsilon = 1e-12);
        assert_abs_diff_eq!(img.data()[1], 0.50196, epsilon = 1e-5);
        assert_eq!(img.data()[2], 1.0);

        let wide = normalize(3, 1, &[100.0, 300.0, 500.0]).unwrap();
        assert_eq!(wide.data(), &[0.0, 0.5, 1.0]);

        let flat = normalize(2, 2, &[7.0; 4]).unwrap();
        assert!(flat.data().iter().all(|&v| v == 0.5));

        assert!(matches!(normalize(0, 0, &[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn crop_identity_and_interior() {
        let img = GrayImage::from_fn(4, 4, |x, y| (y * 4 + x) as f64 / 15.0).unwrap();
        let (same, roi) = crop(&img, Roi::full(&img)).unwrap();
        assert_eq!(same, img);
        assert_eq!(roi, Roi::full(&img));

        let (mid, _) = crop(&img, Roi::new(1, 1, 2, 2)).unwrap();
        assert_eq!(mid.data(), &[5.0 / 15.0, 6.0 / 15.0, 9.0 / 15.0, 10.0 / 15.0]);
    }

    #[test]
    fn crop_clamps_overflowing_roi() {
        let img = GrayImage::filled(4, 4, 0.2).unwrap();
        let (out, roi) = crop(&img, Roi::new(2, 3, 10, 10)).unwrap();
        assert_eq!(roi, Roi::new(2, 3, 2, 1));
        assert_eq!((out.width(), out.height()), (2, 1));
        assert!(crop(&img, Roi::new(9, 9, 2, 2)).is_err());
    }

    #[test]
    fn clahe_constant_image_is_identity() {
        let img = GrayImage::filled(32, 32, 0.37).unwrap();
        let out = clahe(&img, &ClaheParams::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn clahe_single_tile_unclipped_is_plain_equalization() {
        let img = GrayImage::from_fn(16, 12, |x, y| ((x * 7 + y * 3) % 23) as f64 / 22.0).unwrap();
        let params = ClaheParams {
            tiles_x: 1,
            tiles_y: 1,
            clip_limit: 1.0,
            bins: 256,
        };
        let a = clahe(&img, &params).unwrap();
        let b = equalize(&img, 256).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn clahe_midway_pixel_averages_neighbouring_tiles() {
        // 7 px wide, two tile columns: centers at 1.75 and 5.25, so the
        // pixel whose center is 3.5 (x = 3) sits exactly halfway.
        let row = [0.1, 0.2, 0.3, 0.5, 0.6, 0.8, 0.9];
        let img = GrayImage::from_fn(7, 2, |x, _| row[x]).unwrap();
        let params = ClaheParams {
            tiles_x: 2,
            tiles_y: 1,
            clip_limit: 1.0,
            bins: 10,
        };
        let out = clahe(&img, &params).unwrap();
        // Left tile holds x in 0..3 (values .1 .2 .3 twice), right tile x in 3..7.
        let left = TileMap::Lut(lut_from_histogram(
            &clipped_histogram([0.1, 0.2, 0.3, 0.1, 0.2, 0.3].into_iter(), 10, 1.0).unwrap(),
        ));
        let right = TileMap::Lut(lut_from_histogram(
            &clipped_histogram([0.5, 0.6, 0.8, 0.9, 0.5, 0.6, 0.8, 0.9].into_iter(), 10, 1.0).unwrap(),
        ));
        let b = bin_of(0.5, 10);
        // Left LUT at bin 5 is 1 (all left mass below), right LUT is 2/8.
        assert_abs_diff_eq!(left.apply(0.5, b), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(right.apply(0.5, b), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(3, 0), 0.625, epsilon = 1e-12);
    }

    #[test]
    fn clahe_rejects_tiny_tiles() {
        let img = GrayImage::filled(10, 10, 0.5).unwrap();
        let params = ClaheParams {
            tiles_x: 8,
            tiles_y: 8,
            ..Default::default()
        };
        assert!(matches!(clahe(&img, &params), Err(Error::InvalidConfig(_))));
    }

    fn raster() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), prop::collection::vec(-500.0f64..500.0, w * h))
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent((w, h, v) in raster()) {
            let once = normalize(w, h, &v).unwrap();
            let twice = normalize(w, h, once.data()).unwrap();
            prop_assert_eq!(once.data(), twice.data());
        }

        #[test]
        fn nested_crops_compose(
            (w, h, v) in raster(),
            a in (0usize..6, 0usize..6, 1usize..10, 1usize..10),
            b in (0usize..6, 0usize..6, 1usize..10, 1usize..10),
        ) {
            let img = normalize(w, h, &v).unwrap();
            let Ok((outer, outer_roi)) = crop(&img, Roi::new(a.0, a.1, a.2, a.3)) else { return Ok(()); };
            let Ok((inner, inner_roi)) = crop(&outer, Roi::new(b.0, b.1, b.2, b.3)) else { return Ok(()); };
            let composed = Roi::new(outer_roi.x0 + inner_roi.x0, outer_roi.y0 + inner_roi.y0, inner_roi.width, inner_roi.height);
            let (direct, _) = crop(&img, composed).unwrap();
            prop_assert_eq!(direct, inner);
        }

        #[test]
        fn clipped_bins_respect_limit(vals in prop::collection::vec(0.0f64..=1.0, 4..300), clip in 0.001f64..1.0) {
            if let Some(h) = clipped_histogram(vals.iter().copied(), 64, clip) {
                let n = vals.len() as f64;
                let total: f64 = h.iter().sum();
                prop_assert!((total - n).abs() < 1e-9);
                // Excess never exceeds the full mass, so the uniform share is at most n / bins.
                let bound = clip * n + n / 64.0;
                prop_assert!(h.iter().all(|&c| c <= bound + 1e-9));
            }
        }
    }
}
