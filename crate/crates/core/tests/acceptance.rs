//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exits non-zero on a failed criterion only when `ALW_STRICT_ACCEPTANCE` is
//! set, so the regular test run reports results without aborting.

use std::collections::BTreeMap;
use std::time::Instant;

use alw_core::energy::bhattacharyya;
use alw_core::eval::{
    compare, default_methods, easy_suite, hard_suite, large_textured_suite, mean, run_case, small_smooth_suite,
    standard_suite, std_dev, Case, CompareOptions, EvalReport, Method,
};
use alw_core::levelset::{dirac, heaviside};
use alw_core::phantom::{generate, BackgroundTexture, PhantomSpec, Shape};
use alw_core::texture::{glcm, Direction, QuantizedImage};
use alw_core::{segment, EnergyModelKind, Roi, SegConfig, WindowMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn glcm_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for trial in 0..200 {
        let levels = if trial % 2 == 0 { 8 } else { 32 };
        let data: Vec<u16> = (0..256).map(|_| rng.random_range(0..levels as u16)).collect();
        let q = QuantizedImage::from_levels(16, 16, levels, data.clone()).unwrap();
        for d in 1..=5usize {
            for theta in Direction::ALL {
                let m = glcm(&q, Roi::new(0, 0, 16, 16), theta, d);
                let (dx, dy) = theta.offset(d);
                let mut brute = vec![0u64; levels * levels];
                for y in 0..16i64 {
                    for x in 0..16i64 {
                        let (u, v) = (x + dx, y + dy);
                        if (0..16).contains(&u) && (0..16).contains(&v) {
                            let a = data[(y * 16 + x) as usize] as usize;
                            let b = data[(v * 16 + u) as usize] as usize;
                            brute[a * levels + b] += 1;
                        }
                    }
                }
                let same = (0..levels).all(|a| (0..levels).all(|b| m.count(a, b) == brute[a * levels + b]));
                if !same {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatching matrices out of 4000, {secs:.2} s (limit 10 s)"),
    )
}

fn heaviside_dirac() -> Outcome {
    let eps = 1.5;
    let h = 1e-5;
    let worst = (0..100)
        .map(|k| -2.0 * eps + 4.0 * eps * (k as f64 + 0.5) / 100.0)
        .map(|p| ((heaviside(p + h, eps) - heaviside(p - h, eps)) / (2.0 * h) - dirac(p, eps)).abs())
        .fold(0.0, f64::max);
    let n = 100_000;
    let (a, b) = (-eps - 1.0, eps + 1.0);
    let step = (b - a) / n as f64;
    let mass: f64 = (0..n).map(|k| dirac(a + (k as f64 + 0.5) * step, eps) * step).sum();
    outcome(
        worst < 1e-3 && (mass - 1.0).abs() < 1e-3,
        format!("max |dH/dphi - delta| {worst:.2e} (limit 1e-3), mass {mass:.6}"),
    )
}

fn bhattacharyya_props() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hist = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let mut bad = 0;
    for _ in 0..1000 {
        let (p, q) = (hist(&mut rng), hist(&mut rng));
        let pq = bhattacharyya(&p, &q).unwrap();
        let qp = bhattacharyya(&q, &p).unwrap();
        let pp = bhattacharyya(&p, &p).unwrap();
        let ok = (0.0..=1.0).contains(&pq) && (pq - qp).abs() < 1e-12 && (pp - 1.0).abs() < 1e-12 && pq < 1.0 - 1e-12;
        bad += usize::from(!ok);
    }
    outcome(bad == 0, format!("{bad} of 1000 pairs violate range, symmetry or identity"))
}

fn local_pc() -> SegConfig {
    SegConfig::default()
}

struct SuiteRun {
    dice: Vec<f64>,
    iterations: Vec<usize>,
    converged: Vec<bool>,
    energy_ratio: Vec<f64>,
    windows: BTreeMap<usize, u64>,
}

fn run_suite(suite: &[Case], cfg: &SegConfig) -> SuiteRun {
    let mut out = SuiteRun {
        dice: vec![],
        iterations: vec![],
        converged: vec![],
        energy_ratio: vec![],
        windows: BTreeMap::new(),
    };
    for case in suite {
        let p = generate(&case.spec).unwrap();
        match run_case(case, cfg, &p.seed) {
            Ok((d, r)) => {
                out.dice.push(d);
                out.iterations.push(r.iterations);
                out.converged.push(r.converged);
                let f20 = r.energy_trace.get(19).or(r.energy_trace.last()).copied().unwrap();
                out.energy_ratio.push(f20 / r.energy_trace[0]);
                for (k, v) in &r.window_histogram {
                    *out.windows.entry(*k).or_insert(0) += v;
                }
            }
            Err(e) => {
                println!("    {} failed: {e}", case.id);
                out.dice.push(0.0);
                out.iterations.push(usize::MAX);
                out.converged.push(false);
                out.energy_ratio.push(f64::INFINITY);
            }
        }
    }
    out
}

fn median_window(h: &BTreeMap<usize, u64>) -> usize {
    let total: u64 = h.values().sum();
    let mut acc = 0;
    for (k, v) in h {
        acc += v;
        if 2 * acc >= total {
            return *k;
        }
    }
    0
}

fn energy_descent(std: &SuiteRun, secs: f64) -> Outcome {
    let worst = std.energy_ratio.iter().cloned().fold(0.0, f64::max);
    let ok = std.energy_ratio.iter().all(|&r| r <= 0.8);
    outcome(
        ok && secs < 120.0,
        format!("max F20/F1 {worst:.3} over {} cases (limit 0.8), {secs:.1} s (limit 120 s)", std.dice.len()),
    )
}

fn convergence_speed(std: &SuiteRun) -> Outcome {
    let fast = std
        .iterations
        .iter()
        .zip(&std.converged)
        .filter(|(&it, &c)| c && it <= 30)
        .count();
    let frac = fast as f64 / std.dice.len() as f64;
    outcome(
        frac >= 0.8,
        format!("{fast}/{} converged within 30 iterations ({:.0}%, need 80%), iterations {:?}", std.dice.len(), 100.0 * frac, std.iterations),
    )
}

fn easy_quality(easy: &SuiteRun) -> Outcome {
    let m = mean(&easy.dice);
    outcome(m >= 0.9, format!("mean Dice {m:.3} over {} easy cases (need >= 0.90)", easy.dice.len()))
}

fn methods_for(model: EnergyModelKind) -> Vec<Method> {
    let base = SegConfig { model, ..SegConfig::default() };
    let mut m = default_methods(&base);
    if model != EnergyModelKind::LocalPc {
        m.retain(|m| m.name != "global-pc");
    }
    m
}

fn dice_of(report: &EvalReport, method: &str) -> f64 {
    report.summary(method).map(|s| s.mean_dice).unwrap_or(f64::NAN)
}

fn alw_vs_flw(reports: &[(EnergyModelKind, EvalReport)]) -> Outcome {
    let mut parts = vec![];
    let mut ok = true;
    for (model, r) in reports {
        let alw = dice_of(r, "alw");
        let flw = dice_of(r, "flw11").max(dice_of(r, "flw15"));
        let gap = alw - flw;
        ok &= gap >= 0.05;
        parts.push(format!("{model}: {alw:.3} vs {flw:.3} (gap {gap:+.3})"));
    }
    outcome(ok, format!("{} (need gap >= 0.05)", parts.join(", ")))
}

fn alw_vs_global(pc: &EvalReport) -> Outcome {
    let gain = pc
        .paired
        .iter()
        .find(|p| p.baseline == "global-pc")
        .map(|p| p.mean_difference)
        .unwrap_or(f64::NAN);
    outcome(
        gain >= 0.05,
        format!(
            "paired gain {gain:+.3} (alw {:.3}, global-pc {:.3}; need >= 0.05)",
            dice_of(pc, "alw"),
            dice_of(pc, "global-pc")
        ),
    )
}

/// Largest per-case standard deviation of the perturbed-seed Dice of `method`.
fn worst_spread(report: &EvalReport, method: &str) -> f64 {
    let mut by_case: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in report.runs.iter().filter(|r| r.method == method && r.seed_index > 0) {
        by_case.entry(&r.case_id).or_default().push(r.dice.unwrap_or(0.0));
    }
    by_case.values().map(|d| std_dev(d)).fold(0.0, f64::max)
}

fn robustness(easy: &EvalReport, hard: &EvalReport) -> Outcome {
    let easy_worst = worst_spread(easy, "alw");
    let spread = |m: &str| hard.summary(m).map(|s| s.robustness_spread).unwrap_or(f64::NAN);
    let (a, f11, f15) = (spread("alw"), spread("flw11"), spread("flw15"));
    outcome(
        easy_worst <= 0.05 && a <= f11 && a <= f15,
        format!("easy worst per-case std {easy_worst:.4} (limit 0.05); hard mean spread alw {a:.4}, flw11 {f11:.4}, flw15 {f15:.4}"),
    )
}

fn offset_insensitivity() -> Outcome {
    let suite = easy_suite();
    let means: Vec<f64> = (1..=5)
        .map(|d| mean(&run_suite(&suite, &SegConfig { glcm_d: d, ..local_pc() }).dice))
        .collect();
    let s = std_dev(&means);
    outcome(s <= 0.02, format!("mean Dice for d = 1..5: {means:.3?}, std {s:.4} (limit 0.02)"))
}

fn window_behavior(large: &SuiteRun, small: &SuiteRun) -> Outcome {
    let total: u64 = large.windows.values().sum();
    let inside: u64 = large.windows.range(9..=35).map(|(_, v)| v).sum();
    let frac = inside as f64 / total.max(1) as f64;
    let (ml, ms) = (median_window(&large.windows), median_window(&small.windows));
    outcome(
        frac >= 0.9 && ms < ml,
        format!("{:.1}% of large-suite windows in [9, 35] (need 90%); median small {ms} vs large {ml}", 100.0 * frac),
    )
}

fn determinism() -> Outcome {
    let case = &standard_suite()[3];
    let p = generate(&case.spec).unwrap();
    let run = || {
        let r = segment(&p.image, &p.seed, &local_pc()).unwrap();
        (r.mask.clone(), serde_json::to_string(&r).unwrap())
    };
    let (m1, j1) = run();
    let (m2, j2) = run();
    let suite: Vec<Case> = standard_suite().into_iter().take(3).collect();
    let opts = CompareOptions {
        perturbations: 2,
        bootstrap_resamples: 500,
        ..CompareOptions::default()
    };
    let report = || {
        let r = compare(&suite, &default_methods(&local_pc()), &opts).unwrap();
        (serde_json::to_string(&r).unwrap(), r.to_csv())
    };
    let (r1, c1) = report();
    let (r2, c2) = report();
    let same = m1 == m2 && j1 == j2 && r1 == r2 && c1 == c2;
    outcome(same, format!("segmentation and comparison outputs identical across two runs: {same}"))
}

fn performance() -> Outcome {
    let mut spec = PhantomSpec::new(Shape::Blob, 107.0, 0.2);
    spec.noise_sigma = 0.05;
    spec.heterogeneity = 0.1;
    spec.background_texture = BackgroundTexture::Speckle;
    spec.rng_seed = 13;
    let p = generate(&spec).unwrap();
    let t = Instant::now();
    let r = segment(&p.image, &p.seed, &local_pc()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        secs < 10.0 && r.roi.width >= 128 && r.roi.height >= 128,
        format!("{}x{} ROI, {} iterations in {secs:.2} s (limit 10 s)", r.roi.width, r.roi.height, r.iterations),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![];
    let mut record = |n, name, o: Outcome| {
        println!("{} {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    record(1, "GLCM oracle", glcm_oracle());
    record(2, "Heaviside/Dirac consistency", heaviside_dirac());
    record(3, "Bhattacharyya properties", bhattacharyya_props());

    let t = Instant::now();
    let std = run_suite(&standard_suite(), &local_pc());
    let secs = t.elapsed().as_secs_f64();
    record(4, "energy descent", energy_descent(&std, secs));
    record(5, "convergence speed", convergence_speed(&std));

    let easy = run_suite(&easy_suite(), &local_pc());
    record(6, "easy-phantom quality", easy_quality(&easy));

    let hard = hard_suite();
    let with_seeds = CompareOptions::default();
    let canonical_only = CompareOptions {
        perturbations: 0,
        ..CompareOptions::default()
    };
    let pc = compare(&hard, &methods_for(EnergyModelKind::LocalPc), &with_seeds).unwrap();
    let ms = compare(&hard, &methods_for(EnergyModelKind::MeanSeparation), &canonical_only).unwrap();
    let hs = compare(&hard, &methods_for(EnergyModelKind::HistogramSeparation), &canonical_only).unwrap();
    let reports = [
        (EnergyModelKind::LocalPc, pc),
        (EnergyModelKind::MeanSeparation, ms),
        (EnergyModelKind::HistogramSeparation, hs),
    ];
    record(7, "ALW beats FLW on hard phantoms", alw_vs_flw(&reports));
    record(8, "ALW beats GlobalPC on hard phantoms", alw_vs_global(&reports[0].1));

    let easy_methods = vec![
        Method::new("alw", local_pc()),
        Method::new("flw15", SegConfig { window_mode: WindowMode::Fixed(15), ..local_pc() }),
    ];
    let easy_seeds = compare(&easy_suite(), &easy_methods, &with_seeds).unwrap();
    record(9, "initialization robustness", robustness(&easy_seeds, &reports[0].1));
    record(10, "GLCM offset insensitivity", offset_insensitivity());

    let large = run_suite(&large_textured_suite(), &local_pc());
    let small = run_suite(&small_smooth_suite(), &local_pc());
    record(11, "window-size behavior", window_behavior(&large, &small));
    record(12, "determinism", determinism());
    record(13, "performance envelope", performance());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() && std::env::var_os("ALW_STRICT_ACCEPTANCE").is_some() {
        std::process::exit(1);
    }
}
