// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn patgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patgen"))
        .current_dir(dir)
        .env_remove("PATGEN_SEED")
        .args(args)
        .output()
        .expect("patgen runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = patgen(dir, args);
    assert!(
        out.status.success(),
        "patgen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const RECT: &str = r#"{"units":"nm","extent":[400,400],"polygons":[[[100,100],[300,100],[300,250],[100,250]]]}"#;

#[test]
fn rectangle_encodes_to_three_by_three_and_decodes_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("rect.json"), RECT).unwrap();
    let msg = ok(d, &["encode", "rect.json", "-o", "enc"]);
    assert!(msg.contains("3x3"), "{msg}");
    let bytes = std::fs::read(d.join("enc/rect.dsqt")).unwrap();
    assert_eq!(&bytes[..4], b"DSQT");
    assert_eq!(bytes.len(), 14 + 9);
    let back = ok(d, &["decode", "enc/rect.dsqt", "enc/rect.csv"]);
    let a: Value = serde_json::from_str(RECT).unwrap();
    let b: Value = serde_json::from_str(&back).unwrap();
    assert_eq!(a, b);
}

#[test]
fn malformed_json_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), "{\"units\": \"nm\",\n \"extent\": [4, }").unwrap();
    let out = patgen(d, &["encode", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:2:"), "{err}");
}

#[test]
fn usage_and_runtime_failures_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(patgen(d, &["sample", "--count", "1"]).status.code(), Some(1));
    assert_eq!(patgen(d, &["decode", "missing.dsqt", "missing.csv"]).status.code(), Some(2));
    std::fs::write(d.join("cfg.json"), r#"{"seed": 1, "sede": 2}"#).unwrap();
    assert_eq!(patgen(d, &["--config", "cfg.json", "stats", "."]).status.code(), Some(1));
}

#[test]
fn drc_exit_status_follows_violations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("rect.json"), RECT).unwrap();
    std::fs::write(
        d.join("loose.json"),
        r#"{"space_min":50,"width_min":20,"area_min":100,"area_max":40000,"extent_nm":400}"#,
    )
    .unwrap();
    std::fs::write(
        d.join("tight.json"),
        r#"{"space_min":50,"width_min":20,"area_min":100,"area_max":20000,"extent_nm":400}"#,
    )
    .unwrap();
    assert_eq!(ok(d, &["drc", "rect.json", "--rules", "loose.json"]), "");
    let out = patgen(d, &["drc", "rect.json", "--rules", "tight.json"]);
    assert_eq!(out.status.code(), Some(1));
    let line: Value = serde_json::from_slice(out.stdout.split(|&b| b == b'\n').next().unwrap()).unwrap();
    assert_eq!(line["rule"], "area");
    assert_eq!(line["measured"], 30000.0);
}

#[test]
fn stats_on_toy_library_matches_library_diversity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toy", "--count", "30", "--seed", "4", "-o", "toy"]);
    let stats: Value = serde_json::from_str(&ok(d, &["stats", "toy", "--histogram", "h.csv"])).unwrap();
    let lib: Vec<_> = patgen_core::toy::toy_library(30, 4).unwrap().into_iter().map(|(_, sq)| sq).collect();
    let want = patgen_core::patops::diversity(&lib).unwrap();
    assert_eq!(stats["size"], 30);
    assert!((stats["diversity_bits"].as_f64().unwrap() - want).abs() < 1e-12);
    let csv = std::fs::read_to_string(d.join("h.csv")).unwrap();
    assert!(csv.starts_with("cx,cy,count\n"));
}

#[test]
fn sample_manifest_counts_calls_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toy", "--count", "8", "--seed", "1", "-o", "toy"]);
    std::fs::write(d.join("cfg.json"), r#"{"schedule": {"K": 20}}"#).unwrap();
    let run = |out: &str, m: &str, jobs: &str| {
        ok(d, &["--config", "cfg.json", "--jobs", jobs, "sample", "--bayes", "toy", "--count", "5", "--m", m, "--seed", "7", "-o", out]);
    };
    run("a", "20", "1");
    run("b", "20", "3");
    run("c", "1", "1");
    let ma = json(&d.join("a/manifest.json"));
    let mc = json(&d.join("c/manifest.json"));
    assert!(ma["samples"].as_array().unwrap().iter().all(|s| s["denoiser_calls"] == 1));
    assert!(mc["samples"].as_array().unwrap().iter().all(|s| s["denoiser_calls"] == 20));
    assert!(ma["samples"][0]["wall_us"].is_u64());
    for i in 0..5 {
        let f = format!("sample_{i:05}.dsqt");
        assert_eq!(std::fs::read(d.join("a").join(&f)).unwrap(), std::fs::read(d.join("b").join(&f)).unwrap());
    }
    ok(d, &["--config", "cfg.json", "sample", "--bayes", "toy", "--count", "0", "-o", "empty"]);
    assert_eq!(json(&d.join("empty/manifest.json"))["samples"], Value::Array(vec![]));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str, seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_patgen"));
        c.current_dir(d).args(["toy", "--count", "3", "-o", out]);
        match seed {
            Some(s) => c.env("PATGEN_SEED", s),
            None => c.env_remove("PATGEN_SEED"),
        };
        assert!(c.status().unwrap().success());
        std::fs::read(d.join(out).join("toy_00000.json")).unwrap()
    };
    let env9 = run("e", Some("9"));
    let mut flag = Command::new(env!("CARGO_BIN_EXE_patgen"));
    assert!(flag.current_dir(d).args(["toy", "--count", "3", "--seed", "9", "-o", "f"]).status().unwrap().success());
    assert_eq!(env9, std::fs::read(d.join("f/toy_00000.json")).unwrap());
    assert_ne!(env9, run("z", None));
}

#[test]
fn toy_batch_legalizes_to_drc_clean_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toy", "--count", "12", "--seed", "2", "-o", "toy"]);
    for strategy in ["R", "D"] {
        let out = format!("leg_{strategy}");
        ok(d, &["--jobs", "2", "legalize", "toy", "--rules", "toy/rules.json", "--strategy", strategy, "-o", &out]);
        let report = json(&d.join(&out).join("report.json"));
        let s = &report["summary"];
        assert_eq!(s["total"], 12);
        assert_eq!(s["legal"], s["drc_clean"]);
        let items = report["items"].as_array().unwrap();
        assert!(items.iter().all(|i| i["solve_us"].is_u64()));
        let layouts: Vec<String> = items
            .iter()
            .filter_map(|i| i["layout"].as_str().map(|f| format!("{out}/{f}")))
            .collect();
        assert!(!layouts.is_empty());
        let mut args = vec!["drc", "--rules", "toy/rules.json"];
        args.extend(layouts.iter().map(String::as_str));
        assert_eq!(ok(d, &args), "");
    }
}

#[test]
fn strategy_e_without_library_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toy", "--count", "2", "--seed", "2", "-o", "toy"]);
    let out = patgen(d, &["legalize", "toy", "--rules", "toy/rules.json", "--strategy", "E", "-o", "leg"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("random init"));
    assert_eq!(json(&d.join("leg/report.json"))["summary"]["legal"], 2);
}

#[test]
fn train_then_sample_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toy", "--count", "6", "--seed", "5", "-o", "toy"]);
    std::fs::write(
        d.join("cfg.json"),
        r#"{"schedule": {"K": 10, "m": 5}, "model": {"hidden": 8, "batch_size": 4}, "seed": 3}"#,
    )
    .unwrap();
    let summary: Value = serde_json::from_str(&ok(
        d,
        &["--config", "cfg.json", "train", "toy", "-o", "m.ckpt", "--iterations", "4", "--losses", "loss.csv"],
    ))
    .unwrap();
    assert_eq!(summary["iterations"], 4);
    assert_eq!(std::fs::read_to_string(d.join("loss.csv")).unwrap().lines().count(), 5);
    ok(d, &["sample", "--checkpoint", "m.ckpt", "--count", "2", "-o", "s"]);
    let m = json(&d.join("s/manifest.json"));
    assert_eq!(m["samples"][0]["denoiser_calls"], 2);
    let t = std::fs::read(d.join("s/sample_00000.dsqt")).unwrap();
    assert_eq!(t.len(), 14 + 16 * 4 * 4);
}

#[test]
fn augment_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toy", "--count", "6", "--seed", "8", "-o", "toy"]);
    let summary: Value = serde_json::from_str(&ok(
        d,
        &["augment", "toy", "--rules", "toy/rules.json", "--seed", "1", "-o", "aug"],
    ))
    .unwrap();
    let n = summary["output"].as_u64().unwrap();
    assert!(n >= 6);
    assert_eq!(std::fs::read_dir(d.join("aug")).unwrap().count() as u64, n);
    ok(d, &["render", "toy/toy_00000.json", "toy/toy_00001.json", "-o", "svg"]);
    let svg = std::fs::read_to_string(d.join("svg/toy_00001.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(std::fs::read_dir(d.join("svg")).unwrap().count(), 2);
}
