//! Synthetic lesions with analytically known ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Point};
use crate::segment::SeedAxis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Disk,
    Ellipse,
    /// Disk with a random low-order Fourier perturbation of its radius.
    Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundTexture {
    #[default]
    Flat,
    Stripes,
    Speckle,
}

fn default_background() -> f64 {
    0.35
}

fn default_aspect() -> f64 {
    1.0
}

fn default_texture_amplitude() -> f64 {
    0.08
}

fn default_blob_amplitude() -> f64 {
    0.12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub shape: Shape,
    /// Long-axis length in pixels.
    pub size_px: f64,
    /// Lesion-minus-background intensity gap.
    pub contrast: f64,
    /// Peak-to-peak amplitude of a linear intensity ramp across the lesion.
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub background_texture: BackgroundTexture,
    #[serde(default)]
    pub rng_seed: u64,
    /// Short-to-long axis ratio in `(0, 1]`; ignored for disks.
    #[serde(default = "default_aspect")]
    pub aspect: f64,
    /// Long-axis orientation, counter-clockwise from the x axis.
    #[serde(default)]
    pub angle_deg: f64,
    /// Side of the square canvas; defaults to `size_px + 60`.
    #[serde(default)]
    pub canvas_px: Option<usize>,
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default = "default_texture_amplitude")]
    pub texture_amplitude: f64,
    #[serde(default = "default_blob_amplitude")]
    pub blob_amplitude: f64,
}

impl PhantomSpec {
    pub fn new(shape: Shape, size_px: f64, contrast: f64) -> Self {
        Self {
            shape,
            size_px,
            contrast,
            heterogeneity: 0.0,
            noise_sigma: 0.0,
            background_texture: BackgroundTexture::Flat,
            rng_seed: 0,
            aspect: 1.0,
            angle_deg: 0.0,
            canvas_px: None,
            background: default_background(),
            texture_amplitude: default_texture_amplitude(),
            blob_amplitude: default_blob_amplitude(),
        }
    }

    pub fn canvas(&self) -> usize {
        self.canvas_px.unwrap_or((self.size_px + 60.0).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return bad(format!("contrast {} outside (0, 1]", self.contrast));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        if !(self.size_px >= 4.0) || !self.size_px.is_finite() {
            return bad(format!("lesion size {} below 4 px", self.size_px));
        }
        if !(self.aspect > 0.0 && self.aspect <= 1.0) {
            return bad(format!("aspect {} outside (0, 1]", self.aspect));
        }
        if !(0.0..=1.0).contains(&self.background) || self.heterogeneity < 0.0 || self.texture_amplitude < 0.0 {
            return bad("background in [0, 1], heterogeneity and texture amplitude >= 0 required".into());
        }
        if !(0.0..0.5).contains(&self.blob_amplitude) {
            return bad(format!("blob amplitude {} outside [0, 0.5)", self.blob_amplitude));
        }
        Ok(())
    }
}

/// A generated phantom: image, ground-truth mask and the canonical seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: Vec<bool>,
    pub seed: SeedAxis,
}

/// Closed lesion outline in polar form around the canvas centre.
struct Outline {
    center: Point,
    angle: f64,
    /// Semi-axes before the Fourier perturbation.
    a: f64,
    b: f64,
    /// `(k, amplitude, phase)` radial harmonics.
    harmonics: Vec<(f64, f64, f64)>,
}

impl Outline {
    fn radial_factor(&self, t: f64) -> f64 {
        1.0 + self.harmonics.iter().map(|&(k, a, p)| a * (k * t + p).cos()).sum::<f64>()
    }

    /// Inside test for a point, via the lesion frame where the base shape is a unit circle.
    fn contains(&self, p: Point) -> bool {
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        let (s, c) = self.angle.sin_cos();
        // Image y grows downward, so a counter-clockwise angle flips its sign on y.
        let u = (dx * c - dy * s) / self.a;
        let v = (dx * s + dy * c) / self.b;
        let rho = u.hypot(v);
        rho < self.radial_factor(v.atan2(u))
    }

    fn boundary_point(&self, t: f64) -> Point {
        let r = self.radial_factor(t);
        let (u, v) = (r * self.a * t.cos(), r * self.b * t.sin());
        let (s, c) = self.angle.sin_cos();
        Point::new(self.center.x + u * c + v * s, self.center.y - u * s + v * c)
    }

    fn max_radius(&self) -> f64 {
        let peak = 1.0 + self.harmonics.iter().map(|h| h.1.abs()).sum::<f64>();
        self.a.max(self.b) * peak
    }

    /// Longest chord between boundary samples.
    fn long_axis(&self) -> (Point, Point) {
        if self.harmonics.is_empty() {
            let (s, c) = self.angle.sin_cos();
            let d = Point::new(self.a * c, -self.a * s);
            return (
                Point::new(self.center.x - d.x, self.center.y - d.y),
                Point::new(self.center.x + d.x, self.center.y + d.y),
            );
        }
        let n = 720;
        let pts: Vec<Point> = (0..n).map(|i| self.boundary_point(2.0 * PI * i as f64 / n as f64)).collect();
        let mut best = (0.0, pts[0], pts[1]);
        for i in 0..n {
            for j in i + 1..n {
                let d = pts[i].distance(pts[j]);
                if d > best.0 {
                    best = (d, pts[i], pts[j]);
                }
            }
        }
        (best.1, best.2)
    }
}

/// Smooth random field with zero mean and unit peak magnitude.
fn speckle(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut f: Vec<f64> = (0..n * n).map(|_| normal.sample(rng)).collect();
    for _ in 0..2 {
        let mut g = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let mut s = 0.0;
                let mut c = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        if xx >= 0 && yy >= 0 && (xx as usize) < n && (yy as usize) < n {
                            s += f[yy as usize * n + xx as usize];
                            c += 1.0;
                        }
                    }
                }
                g[y * n + x] = s / c;
            }
        }
        f = g;
    }
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let peak = f.iter().fold(0.0f64, |m, v| m.max((v - mean).abs())).max(1e-12);
    f.into_iter().map(|v| (v - mean) / peak).collect()
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.canvas();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let half = spec.size_px / 2.0;
    let (a, b) = match spec.shape {
        Shape::Disk => (half, half),
        Shape::Ellipse | Shape::Blob => (half, half * spec.aspect),
    };
    let harmonics = match spec.shape {
        Shape::Blob => (2..=5)
            .map(|k| {
                let amp = spec.blob_amplitude * rng.random_range(0.3..1.0) / (k as f64 - 1.0);
                (k as f64, amp, rng.random_range(0.0..2.0 * PI))
            })
            .collect(),
        _ => Vec::new(),
    };
    let c = (n as f64 - 1.0) / 2.0;
    let mut outline = Outline {
        center: Point::new(c, c),
        angle: spec.angle_deg.to_radians(),
        a,
        b,
        harmonics,
    };
    if spec.shape == Shape::Blob {
        // Rescale so the longest chord matches the requested size.
        let (p, q) = outline.long_axis();
        let k = spec.size_px / p.distance(q);
        outline.a *= k;
        outline.b *= k;
    }
    if outline.max_radius() + 2.0 > c {
        return Err(Error::InvalidInput(format!(
            "lesion of size {} does not fit a {n}x{n} canvas",
            spec.size_px
        )));
    }

    let mask: Vec<bool> = (0..n * n)
        .map(|i| outline.contains(Point::new((i % n) as f64, (i / n) as f64)))
        .collect();

    let texture = match spec.background_texture {
        BackgroundTexture::Flat => None,
        BackgroundTexture::Stripes => {
            let period = 6.0;
            let dir = rng.random_range(0.0..PI);
            let (s, co) = dir.sin_cos();
            Some(
                (0..n * n)
                    .map(|i| {
                        let (x, y) = ((i % n) as f64, (i / n) as f64);
                        (2.0 * PI * (x * co + y * s) / period).sin()
                    })
                    .collect::<Vec<_>>(),
            )
        }
        BackgroundTexture::Speckle => Some(speckle(n, &mut rng)),
    };
    let ramp_dir = rng.random_range(0.0..2.0 * PI);
    let (rs, rc) = ramp_dir.sin_cos();
    let span = outline.max_radius().max(1e-9);

    let mut data: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            let tex = texture.as_ref().map_or(0.0, |t| spec.texture_amplitude * t[i]);
            if mask[i] {
                let along = ((x - c) * rc + (y - c) * rs) / span;
                spec.background + spec.contrast + 0.5 * spec.heterogeneity * along + tex
            } else {
                spec.background + tex
            }
        })
        .collect();
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }

    let (p1, p2) = outline.long_axis();
    let clampp = |p: Point| Point::new(p.x.clamp(0.0, (n - 1) as f64), p.y.clamp(0.0, (n - 1) as f64));
    Ok(Phantom {
        image: GrayImage::new(n, n, data)?,
        mask,
        seed: SeedAxis::new(clampp(p1), clampp(p2))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_area() {
        let mut s = PhantomSpec::new(Shape::Disk, 40.0, 0.5);
        s.canvas_px = Some(100);
        let p = generate(&s).unwrap();
        let count = p.mask.iter().filter(|m| **m).count() as f64;
        let area = PI * 400.0;
        assert!((count - area).abs() / area < 0.01, "{count} vs {area}");
    }

    #[test]
    fn flat_noiseless_is_two_valued() {
        for shape in [Shape::Disk, Shape::Ellipse, Shape::Blob] {
            let mut s = PhantomSpec::new(shape, 40.0, 0.3);
            s.aspect = 0.6;
            s.angle_deg = 30.0;
            let p = generate(&s).unwrap();
            let mut values: Vec<u64> = p.image.data().iter().map(|v| v.to_bits()).collect();
            values.sort_unstable();
            values.dedup();
            assert_eq!(values.len(), 2);
            for (v, m) in p.image.data().iter().zip(&p.mask) {
                assert_eq!(*v, if *m { s.background + s.contrast } else { s.background });
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut s = PhantomSpec::new(Shape::Blob, 50.0, 0.2);
        s.noise_sigma = 0.1;
        s.background_texture = BackgroundTexture::Speckle;
        s.heterogeneity = 0.1;
        s.rng_seed = 9;
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let mut t = s.clone();
        t.rng_seed = 10;
        assert_ne!(generate(&s).unwrap().image, generate(&t).unwrap().image);
    }

    #[test]
    fn ellipse_long_axis_and_extent() {
        let mut s = PhantomSpec::new(Shape::Ellipse, 60.0, 0.4);
        s.aspect = 0.5;
        s.angle_deg = 90.0;
        let p = generate(&s).unwrap();
        assert!((p.seed.length() - 60.0).abs() < 1e-9);
        // Vertical long axis.
        assert!((p.seed.p1.x - p.seed.p2.x).abs() < 1e-9);
        let n = s.canvas();
        let rows = (0..n).filter(|y| (0..n).any(|x| p.mask[y * n + x])).count();
        let cols = (0..n).filter(|x| (0..n).any(|y| p.mask[y * n + x])).count();
        assert!((rows as f64 - 60.0).abs() <= 2.0 && (cols as f64 - 30.0).abs() <= 2.0, "{rows} {cols}");
    }

    #[test]
    fn blob_seed_spans_the_shape() {
        let mut s = PhantomSpec::new(Shape::Blob, 70.0, 0.4);
        s.rng_seed = 3;
        s.aspect = 0.8;
        let p = generate(&s).unwrap();
        assert!((p.seed.length() - 70.0).abs() < 0.5, "{}", p.seed.length());
        // Every lesion pixel lies within the seed circle's neighbourhood.
        let (c, r) = (p.seed.midpoint(), p.seed.length() / 2.0);
        let n = s.canvas();
        for (i, &m) in p.mask.iter().enumerate() {
            if m {
                assert!(Point::new((i % n) as f64, (i / n) as f64).distance(c) <= 1.5 * r);
            }
        }
    }

    #[test]
    fn oversized_lesion_rejected() {
        let mut s = PhantomSpec::new(Shape::Disk, 80.0, 0.5);
        s.canvas_px = Some(60);
        assert!(matches!(generate(&s), Err(Error::InvalidInput(_))));
        assert!(generate(&PhantomSpec::new(Shape::Disk, 40.0, 0.0)).is_err());
    }
}
