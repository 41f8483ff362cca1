use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hedge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hedge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HEDGE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: &str = "[regime]\nkind = \"overlapping_blocks\"\nn = 6\nm = 6\ncount = 5\nblocks = 2\n\n\
                     [train]\nsteps = 8\nbatch = 2\n\n[sample]\nsteps = 16\ncount = 4\n";

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["synth", "--regime", "nope"], &["train"], &["--seed", "x", "synth"]] {
        let out = hedge(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = Command::new(env!("CARGO_BIN_EXE_hedge"))
        .args(["synth", "--out", "x"])
        .current_dir(dir.path())
        .env("HEDGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(hedge(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = hedge(&["train", "missing.txt", "--out", "m"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));
    fs::write(dir.path().join("bad.toml"), "[train]\nstepz = 1\n").unwrap();
    let out = hedge(&["--config", "bad.toml", "synth", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    // Subcommands that write batches need an output directory.
    assert_eq!(hedge(&["synth"], dir.path()).status.code(), Some(1));
}

#[test]
fn evaluate_identical_dirs_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(&hedge(&["--config", "run.toml", "synth", "--out", "real"], dir.path()));
    let out = hedge(&["evaluate", "real", "real", "--out", "eval"], dir.path());
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let metrics = v["metrics"].as_object().unwrap();
    for key in ["delta_rho", "w1_degree", "node_spec_wd", "intersection_wd", "feature_mmd"] {
        assert_eq!(metrics[key].as_f64(), Some(0.0), "{key}");
    }
    assert_eq!(v["provenance"]["config_hash"].as_str().unwrap().len(), 64);
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.toml"), SMALL).unwrap();
    let with = |extra: &[&str]| {
        let mut args = vec!["--config", "run.toml", "--seed", "4"];
        args.extend_from_slice(extra);
        hedge(&args, p)
    };
    ok(&with(&["synth", "--out", "real"]));
    ok(&with(&["train", "real", "--out", "model"]));
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(p.join("model/model.json")).unwrap()).unwrap();
    assert_eq!(sidecar["provenance"]["seed"], 4);
    assert_eq!(fs::read_to_string(p.join("model/train_log.jsonl")).unwrap().lines().count(), 8);

    ok(&with(&["generate", "model", "--out", "gen_a"]));
    ok(&with(&["generate", "model", "--out", "gen_b"]));
    for entry in fs::read_dir(p.join("gen_a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(p.join("gen_a").join(&name)).unwrap(), fs::read(p.join("gen_b").join(&name)).unwrap());
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(p.join("gen_a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["provenance"]["seed"], 4);
    assert!(manifest["provenance"]["version"].is_string());

    ok(&with(&["baseline", "real", "--kind", "hcm-mcmc", "--count", "3", "--out", "hcm"]));
    ok(&with(&["baseline", "real", "--out", "er"]));
    let out = with(&["evaluate", "real", "gen_a"]);
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["metrics"]["gen_count"], 4);

    let out = with(&["validate", "--quick", "--model", "model"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v["report"]["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"equivariance.net"));
}

#[test]
fn subsample_writes_fixed_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let rows: Vec<Vec<u8>> = (0..12)
        .map(|i| (0..10).map(|j| u8::from((i + j) % 3 == 0 || (i * j) % 7 == 1)).collect())
        .collect();
    let big = hedge::IncidenceMatrix::from_rows(&rows).unwrap();
    hedge::datasets::save_incidence(&big, &p.join("big.txt")).unwrap();
    let out = hedge(&["subsample", "big.txt", "--n-sub", "5", "--m-sub", "4", "--count", "6", "--out", "sub"], p);
    ok(&out);
    let files = fs::read_dir(p.join("sub")).unwrap().count();
    assert_eq!(files, 7);
    assert!(fs::read_to_string(p.join("sub/h00000.txt")).unwrap().starts_with("5 4"));
}

#[test]
fn validate_exit_status_tracks_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = hedge(&["validate", "--seed", "7", "--quick"], dir.path());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let passed = v["report"]["passed"].as_bool().unwrap();
    assert_eq!(out.status.success(), passed);
    let checks = v["report"]["checks"].as_array().unwrap();
    for prefix in ["heat.", "law.", "mixture.", "em.", "stability.", "equivariance."] {
        assert!(checks.iter().any(|c| c["name"].as_str().unwrap().starts_with(prefix)), "{prefix}");
    }
    // Skipped checks carry a reason.
    for c in checks.iter().filter(|c| c["status"] == "skip") {
        assert!(!c["note"].as_str().unwrap().is_empty());
    }
}

#[test]
fn ablate_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.toml"), format!("{SMALL}\n[ablate]\nseeds = 2\ntest_count = 4\n")).unwrap();
    let out = hedge(
        &["--config", "run.toml", "ablate", "--variants", "full,ou_only", "--out", "abl"],
        p,
    );
    ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("full") && table.contains("ou_only") && table.contains("±"));
    let v: Value = serde_json::from_str(&fs::read_to_string(p.join("abl/ablation.json")).unwrap()).unwrap();
    assert_eq!(v["ablation"]["runs"].as_array().unwrap().len(), 4);
}
