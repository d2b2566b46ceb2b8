use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jsonschema::{Resource, Validator};
use serde_json::Value;

fn alw(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_alw"));
    cmd.args(args).env_remove("ALW_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn schema_file(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn report_validator() -> Validator {
    let mut opts = jsonschema::options();
    for name in ["config.schema.json", "suite.schema.json"] {
        let uri = format!("https://alw.local/schemas/{name}");
        opts = opts.with_resource(uri, Resource::from_contents(schema_file(name)).unwrap());
    }
    opts.build(&schema_file("report.schema.json")).unwrap()
}

/// Reads `dir/report.json` and asserts it matches the shipped schema.
fn report(dir: &Path) -> Value {
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let errors: Vec<String> = report_validator().iter_errors(&doc).map(|e| format!("{}: {e}", e.instance_path)).collect();
    assert!(errors.is_empty(), "report violates schema: {errors:?}");
    doc
}

fn no_temp_files(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(!name.ends_with(".tmp"), "leftover {name}");
    }
}

/// Writes a phantom into `dir` and returns its image path and seed argument.
fn phantom(dir: &Path) -> (PathBuf, String) {
    let out = dir.join("phantom");
    let o = alw(
        &["phantom", "--shape", "disk", "--size", "40", "--contrast", "0.4", "--noise", "0.02", "--rng-seed", "3", "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    let s = &r["seed"];
    let seed = format!("{},{},{},{}", s["p1"]["x"], s["p1"]["y"], s["p2"]["x"], s["p2"]["y"]);
    (out.join("image.pgm"), seed)
}

fn small_suite(dir: &Path) -> PathBuf {
    let path = dir.join("suite.json");
    let suite = serde_json::json!({
        "cases": [
            { "id": "b", "shape": "disk", "size_px": 30, "contrast": 0.4, "noise_sigma": 0.02, "rng_seed": 1 },
            { "id": "a", "shape": "ellipse", "size_px": 36, "contrast": 0.3, "aspect": 0.8, "rng_seed": 2 }
        ],
        "options": { "perturbations": 1, "bootstrap_resamples": 200 }
    });
    fs::write(&path, suite.to_string()).unwrap();
    path
}

#[test]
fn segment_happy_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (image, seed) = phantom(tmp.path());
    let out = tmp.path().join("seg");
    let o = alw(
        &["segment", "--image", image.to_str().unwrap(), "--seed", &seed, "--model", "local-pc", "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["status"], "converged");
    assert_eq!(r["config"]["model"], "local-pc");
    let mask = fs::read(out.join("mask.pgm")).unwrap();
    assert!(mask.starts_with(b"P5\n100 100\n255\n"));
    assert!(mask.iter().skip(15).any(|&b| b == 255));
    no_temp_files(&out);
}

#[test]
fn segment_needs_a_seed() {
    let o = alw(&["segment", "--image", "a.pgm"], &[]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("--seed") && err.contains("Usage"), "{err}");
}

#[test]
fn unreadable_image_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = alw(
        &["segment", "--image", "missing.pgm", "--seed", "1,1,20,1", "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing.pgm"));
}

#[test]
fn window_flag_is_echoed_and_beats_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (image, seed) = phantom(tmp.path());
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"window_mode": "fixed:15", "mu": 0.2}"#).unwrap();
    let out = tmp.path().join("seg");
    let o = alw(
        &[
            "segment", "--image", image.to_str().unwrap(), "--seed", &seed, "--config", cfg.to_str().unwrap(),
            "--window", "fixed:11", "--set", "mu=0.1", "--out", out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["config"]["window_mode"], "fixed(11)");
    assert_eq!(r["config"]["mu"], 0.1);
}

#[test]
fn collapse_exits_with_two_and_still_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (image, _) = phantom(tmp.path());
    let out = tmp.path().join("seg");
    let o = alw(
        &["segment", "--image", image.to_str().unwrap(), "--seed", "5,5,15,5", "--set", "mu=50", "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["status"], "collapsed");
    assert!(!r["partial_trace"]["energy_trace"].as_array().unwrap().is_empty());
    assert!(!out.join("mask.pgm").exists());
}

#[test]
fn segment_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (image, seed) = phantom(tmp.path());
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = alw(&["segment", "--image", image.to_str().unwrap(), "--seed", &seed, "--out", out.to_str().unwrap()], &[]);
        assert_eq!(code(&o), 0);
        (fs::read(out.join("mask.pgm")).unwrap(), fs::read(out.join("report.json")).unwrap())
    };
    assert_eq!(run("one"), run("two"));
}

#[test]
fn bundled_suite_uses_the_default_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let o = alw(&["compare", "--perturbations", "0", "--out", out.to_str().unwrap()], &[("ALW_THREADS", "1")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    let names: Vec<&str> = r["report"]["methods"].as_array().unwrap().iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["alw", "flw11", "flw15", "global-pc"]);
    assert!(r["report"]["large_differences"].as_array().unwrap().len() <= 4 * r["cases"].as_array().unwrap().len());
    let csv = fs::read_to_string(out.join("dice.csv")).unwrap();
    assert!(csv.starts_with("case_id,method,seed_index,dice"));
    no_temp_files(&out);
}

#[test]
fn methods_flag_selects_exactly_those() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let out = tmp.path().join("cmp");
    let o = alw(
        &["compare", "--suite", suite.to_str().unwrap(), "--methods", "alw,flw11", "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    let names: Vec<&str> = r["methods"].as_array().unwrap().iter().map(|m| m["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["alw", "flw11"]);
    assert_eq!(r["cases"], serde_json::json!(["a", "b"]));
    // Two cases, two methods, canonical plus one perturbed seed.
    let csv = fs::read_to_string(out.join("dice.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn compare_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let run = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        let o = alw(&["compare", "--suite", suite.to_str().unwrap(), "--out", out.to_str().unwrap()], &[("ALW_THREADS", threads)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (fs::read(out.join("report.json")).unwrap(), fs::read(out.join("dice.csv")).unwrap())
    };
    assert_eq!(run("one", "1"), run("two", "2"));
}

#[test]
fn bad_suites_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = tmp.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let cases = [
        (write("empty.json", ""), "not valid JSON"),
        (write("none.json", r#"{"cases": []}"#), "/cases"),
        (write("bad.json", r#"{"cases": [{"id": "x", "shape": "disk", "size_px": 30}]}"#), "contrast"),
        (write("extra.json", r#"{"cases": [{"id": "x", "shape": "disk", "size_px": 30, "contrast": 0.3, "hue": 1}]}"#), "hue"),
    ];
    for (path, needle) in cases {
        let o = alw(&["compare", "--suite", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()], &[]);
        assert_eq!(code(&o), 1, "{}", path.display());
        assert!(stderr(&o).contains(needle), "{}: {}", path.display(), stderr(&o));
    }
}

#[test]
fn sweep_reports_each_value() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let out = tmp.path().join("sweep");
    let o = alw(
        &[
            "sweep", "--param", "glcm_d", "--values", "1,3", "--suite", suite.to_str().unwrap(), "--methods", "alw,flw11",
            "--perturbations", "0", "--out", out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    let values: Vec<&Value> = r["points"].as_array().unwrap().iter().map(|p| &p["value"]).collect();
    assert_eq!(values, [&serde_json::json!(1), &serde_json::json!(3)]);
    assert_eq!(r["points"][1]["methods"][0]["config"]["glcm_d"], 3);
    let csv = fs::read_to_string(out.join("dice.csv")).unwrap();
    assert!(csv.starts_with("value,case_id"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn sweep_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let o = alw(&["sweep", "--param", "speed", "--values", "1", "--suite", suite.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("speed"));
}

#[test]
fn phantom_report_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ph");
    let o = alw(&["phantom", "--shape", "blob", "--set", "aspect=0.7", "--set", "canvas_px=90", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    assert_eq!((r["width"].as_u64(), r["spec"]["aspect"].as_f64()), (Some(90), Some(0.7)));
    assert!(fs::read(out.join("image.pgm")).unwrap().starts_with(b"P5\n90 90\n65535\n"));
    let bad = alw(&["phantom", "--set", "shape=star", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("/shape"), "{}", stderr(&bad));
}

#[test]
fn thread_cap_must_be_positive() {
    let o = alw(&["compare", "--perturbations", "0"], &[("ALW_THREADS", "0")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ALW_THREADS"));
}

#[test]
fn shipped_schemas_accept_the_defaults() {
    let config = schema_file("config.schema.json");
    let defaults = serde_json::to_value(alw_core::SegConfig::default()).unwrap();
    assert!(jsonschema::validator_for(&config).unwrap().is_valid(&defaults));
    let suite = schema_file("suite.schema.json");
    let bundled: Value = serde_json::from_str(&fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("suites/default.json")).unwrap()).unwrap();
    assert!(jsonschema::validator_for(&suite).unwrap().is_valid(&bundled));
}
