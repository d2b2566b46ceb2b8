//! Gray-level co-occurrence matrices and the two Haralick features the window
//! estimator needs (contrast and homogeneity).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Roi};

/// Lower bound applied to normalized contrasts before they are inverted.
pub const CONTRAST_FLOOR: f64 = 1e-3;

/// Image quantized to `levels` integer gray levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    width: usize,
    height: usize,
    levels: usize,
    data: Vec<u16>,
}

impl QuantizedImage {
    pub fn from_levels(width: usize, height: usize, levels: usize, data: Vec<u16>) -> Result<Self> {
        if levels < 2 || levels > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!("{levels} gray levels")));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch("quantized raster size".into()));
        }
        if data.iter().any(|&v| v as usize >= levels) {
            return Err(Error::InvalidInput("level out of range".into()));
        }
        Ok(Self {
            width,
            height,
            levels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn bounds(&self) -> Roi {
        Roi::new(0, 0, self.width, self.height)
    }
}

pub fn quantize(image: &GrayImage, levels: usize) -> Result<QuantizedImage> {
    if levels < 2 {
        return Err(Error::InvalidConfig(format!(
            "quantization needs at least 2 levels, got {levels}"
        )));
    }
    let top = (levels - 1) as u16;
    let data = image
        .data()
        .iter()
        .map(|&v| ((v * levels as f64).floor() as u16).min(top))
        .collect();
    QuantizedImage::from_levels(image.width(), image.height(), levels, data)
}

/// Pair direction; the second pixel of a pair sits at `(x + d cos θ, y + d sin θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Deg0,
        Direction::Deg90,
        Direction::Deg180,
        Direction::Deg270,
    ];

    pub fn offset(self, d: usize) -> (i64, i64) {
        let d = d as i64;
        match self {
            Direction::Deg0 => (d, 0),
            Direction::Deg90 => (0, d),
            Direction::Deg180 => (-d, 0),
            Direction::Deg270 => (0, -d),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Deg0 => Direction::Deg180,
            Direction::Deg90 => Direction::Deg270,
            Direction::Deg180 => Direction::Deg0,
            Direction::Deg270 => Direction::Deg90,
        }
    }
}

/// Co-occurrence counts for one direction and offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glcm {
    levels: usize,
    counts: Vec<u64>,
    total: u64,
}

impl Glcm {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    #[inline]
    pub fn count(&self, m: usize, n: usize) -> u64 {
        self.counts[m * self.levels + n]
    }

    pub fn transpose(&self) -> Glcm {
        let l = self.levels;
        let mut counts = vec![0; l * l];
        for m in 0..l {
            for n in 0..l {
                counts[n * l + m] = self.counts[m * l + n];
            }
        }
        Glcm {
            levels: l,
            counts,
            total: self.total,
        }
    }

    /// Probabilities summing to one, or `None` when no pairs were counted.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        (self.total > 0).then(|| {
            let t = self.total as f64;
            self.counts.iter().map(|&c| c as f64 / t).collect()
        })
    }
}

/// Iterates in-window pairs `(first, second)` for an offset `(dx, dy)`.
#[inline]
fn for_each_pair(q: &QuantizedImage, rect: Roi, dx: i64, dy: i64, mut f: impl FnMut(u16, u16)) {
    let (x0, y0) = (rect.x0 as i64, rect.y0 as i64);
    let (x1, y1) = (x0 + rect.width as i64, y0 + rect.height as i64);
    let ys = y0.max(y0 - dy)..y1.min(y1 - dy);
    let xs = x0.max(x0 - dx)..x1.min(x1 - dx);
    for y in ys {
        for x in xs.clone() {
            f(
                q.get(x as usize, y as usize),
                q.get((x + dx) as usize, (y + dy) as usize),
            );
        }
    }
}

/// Co-occurrence matrix over `rect` (clamped to the raster); pairs whose
/// second member falls outside `rect` are skipped.
pub fn glcm(q: &QuantizedImage, rect: Roi, theta: Direction, d: usize) -> Glcm {
    let l = q.levels();
    let mut counts = vec![0u64; l * l];
    let mut total = 0;
    if let Some(rect) = rect.clamp_to(q.width(), q.height()) {
        let (dx, dy) = theta.offset(d);
        for_each_pair(q, rect, dx, dy, |a, b| {
            counts[a as usize * l + b as usize] += 1;
            total += 1;
        });
    }
    Glcm {
        levels: l,
        counts,
        total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Haralick {
    /// `Σ P(m,n) / (1 + |m-n|)`.
    pub homogeneity: f64,
    /// `Σ |m-n|² P(m,n)` divided by `(levels-1)²`.
    pub contrast: f64,
}

/// Homogeneity and normalized contrast; an empty matrix yields zeros.
pub fn haralick(m: &Glcm) -> Haralick {
    let Some(p) = m.normalized() else {
        return Haralick {
            homogeneity: 0.0,
            contrast: 0.0,
        };
    };
    let l = m.levels();
    let mut homogeneity = 0.0;
    let mut contrast = 0.0;
    for a in 0..l {
        for b in 0..l {
            let v = p[a * l + b];
            if v == 0.0 {
                continue;
            }
            let diff = a.abs_diff(b) as f64;
            homogeneity += v / (1.0 + diff);
            contrast += diff * diff * v;
        }
    }
    let scale = ((l - 1) * (l - 1)) as f64;
    Haralick {
        homogeneity,
        contrast: contrast / scale,
    }
}

/// Texture summary of the whole ROI: mean homogeneity and mean (floored)
/// normalized contrast over the four directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalTexture {
    pub gh: f64,
    pub gc: f64,
}

pub fn global_stats_quantized(q: &QuantizedImage, d: usize) -> Result<GlobalTexture> {
    if d == 0 {
        return Err(Error::InvalidConfig("GLCM offset must be at least 1".into()));
    }
    let mut gh = 0.0;
    let mut gc = 0.0;
    for theta in Direction::ALL {
        let m = glcm(q, q.bounds(), theta, d);
        if m.total() == 0 {
            return Err(Error::InvalidInput(format!(
                "{}x{} ROI has no pixel pairs at offset {d}",
                q.width(),
                q.height()
            )));
        }
        let h = haralick(&m);
        gh += h.homogeneity;
        gc += h.contrast;
    }
    Ok(GlobalTexture {
        gh: gh / 4.0,
        gc: (gc / 4.0).max(CONTRAST_FLOOR),
    })
}

pub fn global_stats(roi_image: &GrayImage, levels: usize, d: usize) -> Result<GlobalTexture> {
    global_stats_quantized(&quantize(roi_image, levels)?, d)
}

/// Per-axis local contrast around one contour point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalContrast {
    pub x: f64,
    pub y: f64,
}

/// Window of odd extents `(wx, wy)` centred on `(cx, cy)`, clamped to `bounds`.
pub fn centered_window(cx: usize, cy: usize, wx: usize, wy: usize, bounds: Roi) -> Option<Roi> {
    let hx = (wx / 2) as i64;
    let hy = (wy / 2) as i64;
    let (cx, cy) = (cx as i64, cy as i64);
    Roi::from_corners_clamped(
        (cx - hx).max(bounds.x0 as i64),
        (cy - hy).max(bounds.y0 as i64),
        (cx + hx).min((bounds.x0 + bounds.width) as i64 - 1),
        (cy + hy).min((bounds.y0 + bounds.height) as i64 - 1),
        bounds.x0 + bounds.width,
        bounds.y0 + bounds.height,
    )
}

/// Normalized contrast of one direction without materializing the matrix.
/// Equals `haralick(&glcm(q, rect, theta, d)).contrast`.
fn directional_contrast(q: &QuantizedImage, rect: Roi, theta: Direction, d: usize) -> f64 {
    let (dx, dy) = theta.offset(d);
    let mut sum = 0u64;
    let mut n = 0u64;
    for_each_pair(q, rect, dx, dy, |a, b| {
        let diff = a.abs_diff(b) as u64;
        sum += diff * diff;
        n += 1;
    });
    if n == 0 {
        return 0.0;
    }
    let l = (q.levels() - 1) as f64;
    sum as f64 / n as f64 / (l * l)
}

/// LC_x averages the 0° and 180° contrasts, LC_y the 90° and 270° ones, both
/// inside the clamped window; results are floored at [`CONTRAST_FLOOR`].
pub fn local_contrast_quantized(
    q: &QuantizedImage,
    center: (usize, usize),
    window: (usize, usize),
    d: usize,
) -> LocalContrast {
    let Some(rect) = centered_window(center.0, center.1, window.0, window.1, q.bounds()) else {
        return LocalContrast {
            x: CONTRAST_FLOOR,
            y: CONTRAST_FLOOR,
        };
    };
    let axis = |a: Direction, b: Direction| {
        let c = 0.5 * (directional_contrast(q, rect, a, d) + directional_contrast(q, rect, b, d));
        c.max(CONTRAST_FLOOR)
    };
    LocalContrast {
        x: axis(Direction::Deg0, Direction::Deg180),
        y: axis(Direction::Deg90, Direction::Deg270),
    }
}

pub fn local_contrast(
    roi_image: &GrayImage,
    center: (usize, usize),
    window: (usize, usize),
    levels: usize,
    d: usize,
) -> Result<LocalContrast> {
    if window.0 % 2 == 0 || window.1 % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "window extents must be odd, got {}x{}",
            window.0, window.1
        )));
    }
    Ok(local_contrast_quantized(&quantize(roi_image, levels)?, center, window, d))
}
