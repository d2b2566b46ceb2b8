use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use alw_core::eval::{compare as run_compare, Case, CompareOptions, EvalReport, Method};
use alw_core::io::{read_image, write_atomic, write_image, write_mask};
use alw_core::phantom::{generate, PhantomSpec};
use alw_core::{EnergyModelKind, Error, SegConfig, SeedAxis, WindowMode};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::config::{self, key_value, loose_json, read_json};
use crate::schema::{self, Schema};
use crate::{Failure, PhantomArgs, SegmentArgs, SuiteArgs, SweepArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const DEFAULT_SUITE: &str = include_str!("../suites/default.json");

fn out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, doc: &Value) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(doc).expect("report serializes");
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn outputs(files: &[(&str, &str)]) -> Value {
    Value::Object(files.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<Map<_, _>>())
}

pub fn segment(args: &SegmentArgs) -> Result<u8, Failure> {
    let cfg = config::load(&args.config)?;
    let seed: SeedAxis = args.seed.parse()?;
    let image = read_image(&args.image)?;
    let (w, h) = (image.width(), image.height());
    out_dir(&args.out)?;

    let (status, result, partial, error, code) = match alw_core::segment(&image, &seed, &cfg) {
        Ok(r) => {
            write_mask(&args.out.join("mask.pgm"), w, h, &r.full_mask(w, h))?;
            let status = if r.converged { "converged" } else { "max-iterations" };
            (status, to_json(&r), Value::Null, Value::Null, 0)
        }
        Err(Error::ContourCollapse { iteration, trace }) => {
            let msg = format!("contour collapsed at iteration {iteration}");
            eprintln!("alw: {msg}");
            ("collapsed", Value::Null, to_json(&trace), json!(msg), 2)
        }
        Err(e) => return Err(e.into()),
    };
    let files: &[(&str, &str)] = if code == 0 {
        &[("mask", "mask.pgm"), ("report", "report.json")]
    } else {
        &[("report", "report.json")]
    };
    let report = json!({
        "command": "segment",
        "version": VERSION,
        "image": { "path": args.image.display().to_string(), "width": w, "height": h },
        "seed": to_json(&seed),
        "config": to_json(&cfg),
        "status": status,
        "result": result,
        "partial_trace": partial,
        "error": error,
        "outputs": outputs(files),
    });
    write_json(&args.out.join("report.json"), &report)?;
    Ok(code)
}

pub fn phantom(args: &PhantomArgs) -> Result<u8, Failure> {
    let mut doc = match &args.spec {
        Some(path) => read_json(path)?,
        None => json!({ "shape": "disk", "size_px": 60.0, "contrast": 0.3 }),
    };
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Failure::usage("phantom description must be a JSON object"))?;
    let flags = [
        ("shape", args.shape.as_ref().map(|s| json!(s))),
        ("size_px", args.size.map(|v| json!(v))),
        ("contrast", args.contrast.map(|v| json!(v))),
        ("noise_sigma", args.noise.map(|v| json!(v))),
        ("rng_seed", args.rng_seed.map(|v| json!(v))),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            obj.insert(k.to_string(), v);
        }
    }
    for kv in &args.set {
        let (k, v) = key_value(kv)?;
        obj.insert(k.to_string(), loose_json(v));
    }
    schema::check(Schema::Spec, &doc, "phantom")?;
    let spec: PhantomSpec = serde_json::from_value(doc).map_err(|e| Failure::usage(format!("phantom: {e}")))?;
    let p = generate(&spec)?;
    let (w, h) = (p.image.width(), p.image.height());
    out_dir(&args.out)?;
    write_image(&args.out.join("image.pgm"), &p.image)?;
    write_mask(&args.out.join("mask.pgm"), w, h, &p.mask)?;
    let report = json!({
        "command": "phantom",
        "version": VERSION,
        "spec": to_json(&spec),
        "seed": to_json(&p.seed),
        "width": w,
        "height": h,
        "lesion_pixels": p.mask.iter().filter(|&&m| m).count(),
        "outputs": outputs(&[("image", "image.pgm"), ("mask", "mask.pgm"), ("report", "report.json")]),
    });
    write_json(&args.out.join("report.json"), &report)?;
    Ok(0)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    cases: Vec<Case>,
    #[serde(default)]
    options: CompareOptions,
}

fn load_suite(args: &SuiteArgs) -> Result<(Vec<Case>, CompareOptions), Failure> {
    let (doc, what) = match &args.suite {
        Some(path) => (read_json(path)?, path.display().to_string()),
        None => (serde_json::from_str(DEFAULT_SUITE).expect("bundled suite is JSON"), "bundled suite".into()),
    };
    schema::check(Schema::Suite, &doc, &what)?;
    let suite: SuiteFile = serde_json::from_value(doc).map_err(|e| Failure::usage(format!("{what}: {e}")))?;
    let mut opts = suite.options;
    if let Some(n) = args.perturbations {
        opts.perturbations = n;
    }
    if let Some(s) = args.rng_seed {
        opts.rng_seed = s;
    }
    Ok((suite.cases, opts))
}

/// `alw`, `global-pc` or `flwK`, all sharing `base` apart from window and model.
fn method(name: &str, base: &SegConfig) -> Result<Method, Failure> {
    let local = if base.model.is_global() { EnergyModelKind::LocalPc } else { base.model };
    let (mode, model) = match name {
        "alw" => (WindowMode::Adaptive, local),
        "global-pc" => (WindowMode::Global, EnergyModelKind::GlobalPc),
        _ => {
            let k = name
                .strip_prefix("flw")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|k| k % 2 == 1 && *k >= 3)
                .ok_or_else(|| Failure::usage(format!("unknown method `{name}` (alw, global-pc or flwK with odd K >= 3)")))?;
            (WindowMode::Fixed(k), local)
        }
    };
    Ok(Method::new(
        name,
        SegConfig {
            window_mode: mode,
            model,
            ..base.clone()
        },
    ))
}

fn methods(list: &str, base: &SegConfig) -> Result<Vec<Method>, Failure> {
    let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.len() < 2 {
        return Err(Failure::usage("--methods needs at least two methods"));
    }
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(Failure::usage("--methods lists a method twice"));
    }
    names.iter().map(|n| method(n, base)).collect()
}

fn case_ids(cases: &[Case]) -> Value {
    let mut ids: Vec<&str> = cases.iter().map(|c| c.id.as_str()).collect();
    ids.sort_unstable();
    json!(ids)
}

fn run(cases: &[Case], methods: &[Method], opts: &CompareOptions) -> Result<EvalReport, Failure> {
    Ok(run_compare(cases, methods, opts)?)
}

pub fn compare(args: &SuiteArgs) -> Result<u8, Failure> {
    let base = config::load(&args.config)?;
    let methods = methods(&args.methods, &base)?;
    let (cases, opts) = load_suite(args)?;
    let report = run(&cases, &methods, &opts)?;
    out_dir(&args.out)?;
    write_atomic(&args.out.join("dice.csv"), report.to_csv().as_bytes())?;
    let doc = json!({
        "command": "compare",
        "version": VERSION,
        "options": to_json(&opts),
        "cases": case_ids(&cases),
        "methods": to_json(&methods),
        "report": to_json(&report),
        "outputs": outputs(&[("report", "report.json"), ("dice", "dice.csv")]),
    });
    write_json(&args.out.join("report.json"), &doc)?;
    Ok(0)
}

pub fn sweep(args: &SweepArgs) -> Result<u8, Failure> {
    let s = &args.suite;
    let base = config::load(&s.config)?;
    let (cases, opts) = load_suite(s)?;
    let mut points = Vec::new();
    let mut csv = String::new();
    for value in &args.values {
        let mut cfg = base.clone();
        cfg.set(&args.param, value)?;
        cfg.validate()?;
        let methods = methods(&s.methods, &cfg)?;
        let report = run(&cases, &methods, &opts)?;
        let table = report.to_csv();
        let mut lines = table.lines();
        let header = lines.next().unwrap_or_default();
        if csv.is_empty() {
            csv.push_str(&format!("value,{header}\n"));
        }
        for line in lines {
            csv.push_str(&format!("{value},{line}\n"));
        }
        points.push(json!({
            "value": to_json(&cfg)[&args.param].clone(),
            "methods": to_json(&methods),
            "report": to_json(&report),
        }));
    }
    out_dir(&s.out)?;
    write_atomic(&s.out.join("dice.csv"), csv.as_bytes())?;
    let doc = json!({
        "command": "sweep",
        "version": VERSION,
        "parameter": args.param,
        "options": to_json(&opts),
        "cases": case_ids(&cases),
        "points": points,
        "outputs": outputs(&[("report", "report.json"), ("dice", "dice.csv")]),
    });
    write_json(&s.out.join("report.json"), &doc)?;
    Ok(0)
}
