use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgm_cli::manifest::{read_manifest, sha256_hex};
use sgm_core::pde::Trajectory;

fn sgm(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sgm"));
    cmd.args(args).env("SGM_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "run": {{ "problem": "poisson2d", "seeds": [0, 1], "steps": 300, "eval_every": 50, "eval_resolution": 33,
           "methods": ["uniform", "sgm"] }},
  "cloud": {{ "n_interior": 1500, "n_boundary": 300 }},
  "lrd": {{ "levels": 6, "diam_budget": 0.5 }},
  "sampler": {{ "mode": "sgm", "batch_size": 64, "tau_e": 50, "tau_g": 150, "epoch_target": 400, "mis_seeds": 100 }},
  "network": {{ "width": 16, "depth": 2 }}{extra}
}}"#
    );
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = sgm(args, &[]);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<HashMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    lines.map(|l| header.iter().cloned().zip(l.split(',').map(str::to_string)).collect()).collect()
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{ "run": { "steps": 10, "colour": 1 }, "sampler": { "probe_fraction": 2.0 }, "extras": {} }"#).unwrap();
    let out = sgm(&["train", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["colour", "probe_fraction", "extras"] {
        assert!(err.contains(needle), "missing `{needle}` in {err}");
    }

    let good = small_config(tmp.path(), "");
    let out = sgm(&["train", "--config", good.to_str().unwrap()], &[("SGM_SAMPLER_TAU_E", "\"soon\"")]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = sgm(&["train", "--config", tmp.path().join("missing.json").to_str().unwrap()], &[]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn divergence_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), r#", "optimizer": { "kind": "sgd", "lr": 1000.0 }"#);
    let out_dir = tmp.path().join("out");
    let out = sgm(&["train", "--config", cfg.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("sgm/seed-0/run.json")).unwrap()).unwrap();
    assert_eq!(record["diverged"], true);
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn pipeline_stages_write_hashed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    for stage in ["gen", "graph", "cluster", "er-oracle"] {
        let dir = tmp.path().join(stage);
        run_ok(&[stage, "--config", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap()]);
        let m = read_manifest(&dir).unwrap();
        assert_eq!(m.command, stage);
        assert!(!m.artifacts.is_empty());
        for a in &m.artifacts {
            let bytes = fs::read(dir.join(&a.path)).unwrap();
            assert_eq!(a.sha256, sha256_hex(&bytes), "{stage}: {}", a.path);
            assert_eq!(a.bytes, bytes.len() as u64);
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("er-oracle/er_oracle_summary.json")).unwrap()).unwrap();
    assert!(summary["spearman"].as_f64().unwrap() >= 0.9);
    assert!((summary["foster_sum_exact"].as_f64().unwrap() - 1499.0).abs() < 1e-6);
}

#[test]
fn bench_report_is_consistent_with_its_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let dir = tmp.path().join("bench");
    let out = run_ok(&["bench", "--config", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("# Benchmark report"));

    // Manifest completeness.
    let m = read_manifest(&dir).unwrap();
    let mut on_disk = Vec::new();
    let mut stack = vec![dir.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                on_disk.push(p.strip_prefix(&dir).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    on_disk.sort();
    let listed: Vec<String> = m.artifacts.iter().map(|a| a.path.clone()).collect();
    assert_eq!(listed, on_disk);
    for a in &m.artifacts {
        assert_eq!(a.sha256, sha256_hex(&fs::read(dir.join(&a.path)).unwrap()));
    }
    for f in ["report/report.md", "report/report.json", "report/plots/err_u_vs_wall.svg", "report/plots/err_u_vs_iter.svg"] {
        assert!(listed.iter().any(|p| p == f), "{f} missing");
    }

    // Minimum errors recomputed from the per-run trajectories.
    let mins = csv_rows(&dir.join("report/min_errors.csv"));
    for method in ["uniform", "sgm"] {
        let per_seed: Vec<f64> = (0..2)
            .map(|s| Trajectory::load(dir.join(format!("{method}/seed-{s}/trajectory.csv"))).unwrap().min_errors()[0])
            .collect();
        let row = mins.iter().find(|r| r["method"] == method).unwrap();
        let want = (per_seed[0] + per_seed[1]) / 2.0;
        let got: f64 = row["min_error_mean"].parse().unwrap();
        assert!((got - want).abs() <= 1e-12 * want);
        assert!(!row["min_error_std"].is_empty());
    }

    // Every speedup is the quotient of times listed in the time matrix.
    let times = csv_rows(&dir.join("report/time_to_threshold.csv"));
    let time_of = |method: &str, threshold: &str| -> Option<f64> {
        times
            .iter()
            .find(|r| r["method"] == method && r["threshold"] == threshold && r["output"] == "u")
            .and_then(|r| r["wall_time_s"].parse().ok())
    };
    let speedups = csv_rows(&dir.join("report/speedups.csv"));
    assert_eq!(speedups.len(), 1);
    for r in &speedups {
        let base = time_of(&r["baseline"], &r["threshold"]);
        let meth = time_of(&r["method"], &r["threshold"]);
        assert_eq!(base, r["baseline_wall_time_s"].parse().ok());
        assert_eq!(meth, r["method_wall_time_s"].parse().ok());
        match (base, meth) {
            (Some(b), Some(m)) => {
                let s: f64 = r["speedup"].parse().unwrap();
                assert!((s - b / m).abs() <= 1e-12 * s);
            }
            _ => assert!(r["speedup"].is_empty()),
        }
    }
}

#[test]
fn repeated_runs_write_identical_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let strip = |p: PathBuf| -> Vec<String> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(1);
                f.join(",")
            })
            .collect()
    };
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        run_ok(&["train", "--config", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap()]);
        runs.push(dir);
    }
    for seed in [0, 1] {
        let rel = format!("sgm/seed-{seed}");
        assert_eq!(strip(runs[0].join(&rel).join("trajectory.csv")), strip(runs[1].join(&rel).join("trajectory.csv")));
        assert_eq!(fs::read(runs[0].join(&rel).join("checkpoint.txt")).unwrap(), fs::read(runs[1].join(&rel).join("checkpoint.txt")).unwrap());
    }
}
