//! Dice scoring, seed perturbation and method comparison over phantom suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Point;
use crate::phantom::{generate, BackgroundTexture, PhantomSpec, Shape};
use crate::segment::{segment, SegConfig, SeedAxis, WindowMode};
use crate::EnergyModelKind;

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("masks of {} and {} pixels", a.len(), b.len())));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Offset drawn uniformly from a disk of the given diameter.
fn disk_offset(rng: &mut ChaCha8Rng, diameter: f64) -> (f64, f64) {
    let r = 0.5 * diameter * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..std::f64::consts::TAU);
    (r * t.cos(), r * t.sin())
}

/// Moves each endpoint uniformly within a disk of `diameter` pixels,
/// redrawing points that leave the `width` x `height` image (then clamping).
pub fn perturb_seed(seed: &SeedAxis, diameter: f64, rng_seed: u64, width: usize, height: usize) -> Result<SeedAxis> {
    if !(diameter >= 0.0) {
        return Err(Error::InvalidInput(format!("perturbation diameter {diameter} < 0")));
    }
    if diameter == 0.0 {
        return Ok(*seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
    let inside = |p: Point| p.x >= 0.0 && p.y >= 0.0 && p.x <= xmax && p.y <= ymax;
    let mut moved = [seed.p1, seed.p2];
    for p in &mut moved {
        let base = *p;
        let mut q = base;
        for _ in 0..32 {
            let (dx, dy) = disk_offset(&mut rng, diameter);
            q = Point::new(base.x + dx, base.y + dy);
            if inside(q) {
                break;
            }
        }
        *p = Point::new(q.x.clamp(0.0, xmax), q.y.clamp(0.0, ymax));
    }
    SeedAxis::new(moved[0], moved[1])
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(samples: &[f64], resamples: usize, confidence: f64, rng_seed: u64) -> Option<(f64, f64)> {
    if samples.is_empty() || resamples == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Some((at(alpha), at(1.0 - alpha)))
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub config: SegConfig,
}

impl Method {
    pub fn new(name: impl Into<String>, config: SegConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

/// Adaptive windows, fixed 11 and 15 px windows, and the global model.
pub fn default_methods(base: &SegConfig) -> Vec<Method> {
    let with = |mode: WindowMode, model: EnergyModelKind| SegConfig {
        window_mode: mode,
        model,
        ..base.clone()
    };
    let local = if base.model.is_global() { EnergyModelKind::LocalPc } else { base.model };
    vec![
        Method::new("alw", with(WindowMode::Adaptive, local)),
        Method::new("flw11", with(WindowMode::Fixed(11), local)),
        Method::new("flw15", with(WindowMode::Fixed(15), local)),
        Method::new("global-pc", with(WindowMode::Global, EnergyModelKind::GlobalPc)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    #[serde(flatten)]
    pub spec: PhantomSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareOptions {
    /// Perturbed seeds per case in addition to the canonical one.
    pub perturbations: usize,
    pub perturb_diameter: f64,
    pub bootstrap_resamples: usize,
    pub rng_seed: u64,
    /// Paired differences above this magnitude are listed case by case.
    pub large_difference: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            perturbations: 5,
            perturb_diameter: 5.0,
            bootstrap_resamples: 10_000,
            rng_seed: 0,
            large_difference: 0.10,
        }
    }
}

/// One segmentation of one case by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case_id: String,
    pub method: String,
    /// 0 for the canonical seed, `k` for the k-th perturbation.
    pub seed_index: usize,
    pub dice: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Cases with a successful canonical-seed run.
    pub cases: usize,
    pub failures: usize,
    pub mean_dice: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean over cases of the Dice standard deviation across perturbed seeds.
    pub robustness_spread: f64,
    pub converged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub method: String,
    pub baseline: String,
    pub cases: usize,
    pub mean_difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeDifference {
    pub case_id: String,
    pub method: String,
    pub baseline: String,
    pub dice_method: f64,
    pub dice_baseline: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodSummary>,
    /// The first method against every other one.
    pub paired: Vec<PairedDifference>,
    pub large_differences: Vec<LargeDifference>,
    pub runs: Vec<RunRecord>,
}

impl EvalReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Canonical-seed Dice of `method` per case id, failures excluded.
    pub fn canonical_dice(&self, method: &str) -> Vec<(String, f64)> {
        self.runs
            .iter()
            .filter(|r| r.method == method && r.seed_index == 0)
            .filter_map(|r| r.dice.map(|d| (r.case_id.clone(), d)))
            .collect()
    }

    /// Flat per-run table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case_id,method,seed_index,dice,iterations,converged,error\n");
        for r in &self.runs {
            let dice = r.dice.map(|d| format!("{d:.6}")).unwrap_or_default();
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.case_id, r.method, r.seed_index, dice, r.iterations, r.converged, err
            ));
        }
        out
    }
}

/// Runs `method` on one case from a given seed.
pub fn run_case(case: &Case, config: &SegConfig, seed: &SeedAxis) -> Result<(f64, crate::SegResult)> {
    let phantom = generate(&case.spec)?;
    let n = phantom.image.width();
    let res = segment(&phantom.image, seed, config)?;
    let d = dice(&res.full_mask(n, phantom.image.height()), &phantom.mask)?;
    Ok((d, res))
}

fn case_seeds(case: &Case, opts: &CompareOptions, index: usize) -> Result<Vec<SeedAxis>> {
    let phantom = generate(&case.spec)?;
    let (w, h) = (phantom.image.width(), phantom.image.height());
    let mut seeds = vec![phantom.seed];
    for k in 1..=opts.perturbations {
        let s = opts.rng_seed ^ ((index as u64) << 20) ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        seeds.push(perturb_seed(&phantom.seed, opts.perturb_diameter, s, w, h)?);
    }
    Ok(seeds)
}

pub fn compare(suite: &[Case], methods: &[Method], opts: &CompareOptions) -> Result<EvalReport> {
    if suite.is_empty() {
        return Err(Error::InvalidInput("suite has no cases".into()));
    }
    if methods.len() < 2 {
        return Err(Error::InvalidInput("comparison needs at least two methods".into()));
    }
    let mut ids: Vec<&str> = suite.iter().map(|c| c.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("duplicate case ids".into()));
    }
    for m in methods {
        m.config.validate()?;
    }
    let mut order: Vec<usize> = (0..suite.len()).collect();
    order.sort_by(|&a, &b| suite[a].id.cmp(&suite[b].id));
    let seeds: Vec<Vec<SeedAxis>> = order
        .iter()
        .enumerate()
        .map(|(i, &c)| case_seeds(&suite[c], opts, i))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize, usize, usize)> = order
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| {
            let n_seeds = seeds[i].len();
            (0..methods.len()).flat_map(move |m| (0..n_seeds).map(move |s| (i, c, m, s)))
        })
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(i, c, m, s)| {
            let case = &suite[c];
            let method = &methods[m];
            let mut rec = RunRecord {
                case_id: case.id.clone(),
                method: method.name.clone(),
                seed_index: s,
                dice: None,
                iterations: 0,
                converged: false,
                error: None,
            };
            match run_case(case, &method.config, &seeds[i][s]) {
                Ok((d, res)) => {
                    rec.dice = Some(d);
                    rec.iterations = res.iterations;
                    rec.converged = res.converged;
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect();

    let summaries = methods
        .iter()
        .enumerate()
        .map(|(k, m)| summarize(&runs, &m.name, opts, k as u64))
        .collect();
    let mut paired = Vec::new();
    let mut large = Vec::new();
    let reference = &methods[0].name;
    let ref_dice = canonical(&runs, reference);
    for (k, other) in methods.iter().enumerate().skip(1) {
        let other_dice = canonical(&runs, &other.name);
        let diffs: Vec<(String, f64, f64)> = ref_dice
            .iter()
            .filter_map(|(id, a)| other_dice.iter().find(|(j, _)| j == id).map(|(_, b)| (id.clone(), *a, *b)))
            .collect();
        let d: Vec<f64> = diffs.iter().map(|(_, a, b)| a - b).collect();
        let (lo, hi) = bootstrap_ci(&d, opts.bootstrap_resamples, 0.95, opts.rng_seed ^ (0x5EED + k as u64))
            .unwrap_or((f64::NAN, f64::NAN));
        paired.push(PairedDifference {
            method: reference.clone(),
            baseline: other.name.clone(),
            cases: d.len(),
            mean_difference: mean(&d),
            ci_low: lo,
            ci_high: hi,
        });
        for (id, a, b) in diffs {
            if (a - b).abs() > opts.large_difference {
                large.push(LargeDifference {
                    case_id: id,
                    method: reference.clone(),
                    baseline: other.name.clone(),
                    dice_method: a,
                    dice_baseline: b,
                    difference: a - b,
                });
            }
        }
    }
    Ok(EvalReport {
        methods: summaries,
        paired,
        large_differences: large,
        runs,
    })
}

fn canonical(runs: &[RunRecord], method: &str) -> Vec<(String, f64)> {
    runs.iter()
        .filter(|r| r.method == method && r.seed_index == 0)
        .filter_map(|r| r.dice.map(|d| (r.case_id.clone(), d)))
        .collect()
}

fn summarize(runs: &[RunRecord], method: &str, opts: &CompareOptions, salt: u64) -> MethodSummary {
    let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method).collect();
    let dice: Vec<f64> = canonical(runs, method).into_iter().map(|(_, d)| d).collect();
    let failures = mine.iter().filter(|r| r.seed_index == 0 && r.dice.is_none()).count();
    let mut case_ids: Vec<&str> = mine.iter().map(|r| r.case_id.as_str()).collect();
    case_ids.dedup();
    let spreads: Vec<f64> = case_ids
        .iter()
        .filter_map(|id| {
            let d: Vec<f64> = mine
                .iter()
                .filter(|r| r.case_id == *id && r.seed_index > 0)
                .filter_map(|r| r.dice)
                .collect();
            (d.len() >= 2).then(|| std_dev(&d))
        })
        .collect();
    let (lo, hi) = bootstrap_ci(&dice, opts.bootstrap_resamples, 0.95, opts.rng_seed ^ salt).unwrap_or((f64::NAN, f64::NAN));
    let canon: Vec<&&RunRecord> = mine.iter().filter(|r| r.seed_index == 0).collect();
    MethodSummary {
        method: method.to_string(),
        cases: dice.len(),
        failures,
        mean_dice: mean(&dice),
        ci_low: lo,
        ci_high: hi,
        robustness_spread: if spreads.is_empty() { 0.0 } else { mean(&spreads) },
        converged_fraction: canon.iter().filter(|r| r.converged).count() as f64 / canon.len().max(1) as f64,
    }
}

fn case(id: String, spec: PhantomSpec) -> Case {
    Case { id, spec }
}

/// Twelve moderate phantoms: mixed shapes, sizes 40 to 95 px, contrast 0.2 to 0.4.
pub fn standard_suite() -> Vec<Case> {
    let shapes = [Shape::Ellipse, Shape::Blob, Shape::Ellipse, Shape::Blob];
    let textures = [BackgroundTexture::Flat, BackgroundTexture::Speckle, BackgroundTexture::Stripes];
    (0..12)
        .map(|i| {
            let mut s = PhantomSpec::new(shapes[i % 4], 40.0 + 5.0 * i as f64, [0.2, 0.3, 0.4][i % 3]);
            s.aspect = [0.7, 0.8, 0.9][i % 3];
            s.angle_deg = 15.0 * i as f64;
            s.noise_sigma = [0.03, 0.05, 0.08][(i / 3) % 3];
            s.heterogeneity = if i % 4 == 3 { 0.1 } else { 0.0 };
            s.background_texture = textures[i % 3];
            s.texture_amplitude = 0.04;
            s.rng_seed = 100 + i as u64;
            case(format!("std-{i:02}"), s)
        })
        .collect()
}

/// Disks and ellipses with contrast >= 0.3 and noise <= 0.05.
pub fn easy_suite() -> Vec<Case> {
    (0..8)
        .map(|i| {
            let shape = if i % 2 == 0 { Shape::Disk } else { Shape::Ellipse };
            let mut s = PhantomSpec::new(shape, 40.0 + 8.0 * i as f64, [0.3, 0.4, 0.5][i % 3]);
            s.aspect = [0.65, 0.8][i % 2];
            s.angle_deg = 25.0 * i as f64;
            s.noise_sigma = [0.0, 0.02, 0.05][i % 3];
            s.rng_seed = 200 + i as u64;
            case(format!("easy-{i:02}"), s)
        })
        .collect()
}

/// Twenty low-contrast, noisy, heterogeneous phantoms with 40 to 97 px long axes.
pub fn hard_suite() -> Vec<Case> {
    let shapes = [Shape::Ellipse, Shape::Blob];
    let textures = [BackgroundTexture::Flat, BackgroundTexture::Speckle];
    (0..20)
        .map(|i| {
            let mut s = PhantomSpec::new(shapes[i % 2], 40.0 + 3.0 * i as f64, 0.1);
            s.noise_sigma = 0.15;
            s.heterogeneity = 0.05;
            s.aspect = [0.7, 0.75, 0.8][i % 3];
            s.blob_amplitude = 0.06;
            s.angle_deg = 17.0 * i as f64;
            s.background_texture = textures[(i / 2) % 2];
            s.texture_amplitude = 0.03;
            s.rng_seed = 300 + i as u64;
            case(format!("hard-{i:02}"), s)
        })
        .collect()
}

/// Textured phantoms with long axes from 60 to 150 px.
pub fn large_textured_suite() -> Vec<Case> {
    let textures = [BackgroundTexture::Speckle, BackgroundTexture::Stripes];
    (0..8)
        .map(|i| {
            let shape = if i % 2 == 0 { Shape::Blob } else { Shape::Ellipse };
            let mut s = PhantomSpec::new(shape, 60.0 + 12.0 * i as f64 + if i == 7 { 6.0 } else { 0.0 }, 0.3);
            s.aspect = 0.8;
            s.angle_deg = 40.0 * i as f64;
            s.noise_sigma = 0.06;
            s.heterogeneity = 0.1;
            s.background_texture = textures[i % 2];
            s.texture_amplitude = 0.1;
            s.rng_seed = 400 + i as u64;
            case(format!("large-{i:02}"), s)
        })
        .collect()
}

/// Smooth phantoms with long axes from 20 to 40 px.
pub fn small_smooth_suite() -> Vec<Case> {
    (0..6)
        .map(|i| {
            let shape = if i % 2 == 0 { Shape::Disk } else { Shape::Ellipse };
            let mut s = PhantomSpec::new(shape, 20.0 + 4.0 * i as f64, 0.4);
            s.aspect = 0.8;
            s.angle_deg = 30.0 * i as f64;
            s.noise_sigma = 0.01;
            s.rng_seed = 500 + i as u64;
            case(format!("small-{i:02}"), s)
        })
        .collect()
}
