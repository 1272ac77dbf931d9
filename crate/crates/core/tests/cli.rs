use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn adprog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adprog"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = adprog(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn dir_arg(d: &Path) -> String {
    d.to_str().unwrap().to_string()
}

fn read_dir_files(d: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![d.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(d).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Data lines of a report, without comments.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        ok(&["synth", "--seed", "7", "--patients", "50", "--report-dir", &dir_arg(d.path())]);
    }
    let (fa, fb) = (read_dir_files(a.path()), read_dir_files(b.path()));
    assert!(fa.contains_key("cohort.csv") && fa.contains_key("truth.csv"));
    assert_eq!(fa, fb);
    for body in fa.values() {
        let text = String::from_utf8_lossy(body);
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("# config-hash: "), "{last}");
    }
}

#[test]
fn missing_config_exits_with_two() {
    let d = TempDir::new().unwrap();
    let out = adprog(&[
        "synth",
        "--config",
        "/nonexistent/run.toml",
        "--report-dir",
        &dir_arg(d.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn config_problems_exit_with_two_and_runtime_problems_with_one() {
    let d = TempDir::new().unwrap();
    let dir = dir_arg(d.path());
    // No seed anywhere.
    assert_eq!(adprog(&["synth", "--report-dir", &dir]).status.code(), Some(2));
    // Unknown key.
    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "seeed = 3\n").unwrap();
    let out = adprog(&["synth", "--config", cfg.to_str().unwrap(), "--report-dir", &dir]);
    assert_eq!(out.status.code(), Some(2));
    // A stage whose input has not been produced.
    assert_eq!(adprog(&["cv", "--seed", "1", "--report-dir", &dir]).status.code(), Some(2));
    // Malformed data is a runtime failure.
    let bad = d.path().join("bad.csv");
    std::fs::write(&bad, "RID,M,ADAS13,DX,f1\n1,0,abc,1,0.5\n").unwrap();
    let out = adprog(&["ingest", "--input", bad.to_str().unwrap(), "--report-dir", &dir]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    // The pipeline stops at its first failing stage with that stage's code.
    let out = adprog(&["pipeline", "--seed", "1", "--input", bad.to_str().unwrap(), "--report-dir", &dir]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.path().join("waterfall.csv").exists());
}

#[test]
fn waterfall_counts_injected_under_visit_patients() {
    let d = TempDir::new().unwrap();
    let dir = dir_arg(d.path());
    ok(&["synth", "--seed", "3", "--patients", "40", "--under-visit", "3", "--report-dir", &dir]);
    let stdout = ok(&["preprocess", "--report-dir", &dir]);
    assert!(stdout.contains("stage,before,after,dropped"));
    let w = rows(&d.path().join("waterfall.csv"));
    assert_eq!(w[0], ["min_visits", "40", "37", "3"]);
    assert!(w[1..].iter().all(|r| r[3] == "0"), "{w:?}");
    let removed = rows(&d.path().join("filter_removed.csv"));
    let ids: Vec<&str> = removed.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(ids, ["S0038", "S0039", "S0040"]);
}

#[test]
fn clean_synthetic_cohort_passes_every_filter() {
    let d = TempDir::new().unwrap();
    let dir = dir_arg(d.path());
    ok(&["synth", "--seed", "5", "--patients", "60", "--report-dir", &dir]);
    ok(&["preprocess", "--report-dir", &dir]);
    for r in rows(&d.path().join("waterfall.csv")) {
        assert_eq!(r[3], "0", "{r:?}");
    }
}

#[test]
fn preprocess_is_idempotent() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let dir = dir_arg(a.path());
    ok(&["synth", "--seed", "9", "--patients", "40", "--under-visit", "2", "--report-dir", &dir]);
    ok(&["preprocess", "--report-dir", &dir]);
    let input = a.path().join("preprocessed.csv");
    let schema = a.path().join("preprocessed_schema.toml");
    ok(&[
        "preprocess",
        "--input",
        input.to_str().unwrap(),
        "--schema",
        schema.to_str().unwrap(),
        "--report-dir",
        &dir_arg(b.path()),
    ]);
    let first = std::fs::read(&input).unwrap();
    let second = std::fs::read(b.path().join("preprocessed.csv")).unwrap();
    assert_eq!(first, second);
    for r in rows(&b.path().join("waterfall.csv")) {
        assert_eq!(r[3], "0");
    }
}

#[test]
fn stages_run_separately_and_emit_reports() {
    let d = TempDir::new().unwrap();
    let dir = dir_arg(d.path());
    let cfg = d.path().join("run.toml");
    std::fs::write(&cfg, "seed = 4\n[synth]\nn_patients = 40\n[cv]\nfolds = 4\n[convert]\nfolds = 4\n").unwrap();
    let c = cfg.to_str().unwrap();
    for stage in ["synth", "preprocess", "stats", "cluster", "cv", "convert"] {
        ok(&[stage, "--config", c, "--report-dir", &dir]);
    }
    for f in [
        "group_stats.csv",
        "window_diff.csv",
        "centroids.csv",
        "mae_folds.csv",
        "mae_summary.csv",
        "forecasts.csv",
        "plot_data/fold_mae.csv",
        "plot_data/trajectories.csv",
        "plot_data/adas_histogram.csv",
        "cox_probabilities.csv",
        "predictions.csv",
        "metrics.csv",
    ] {
        assert!(d.path().join(f).is_file(), "{f} missing");
    }
    assert_eq!(rows(&d.path().join("mae_folds.csv")).len(), 4);
    let summary = rows(&d.path().join("mae_summary.csv"));
    let models: Vec<&str> = summary.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(models, ["sGP", "pGP", "tGP"]);
}

#[test]
fn convert_on_strongly_coupled_cohort() {
    let d = TempDir::new().unwrap();
    let dir = dir_arg(d.path());
    let cfg = d.path().join("coupled.toml");
    std::fs::write(
        &cfg,
        "seed = 11\n[synth]\nn_patients = 200\noffset_sd = 0.0\nnoise_sd = 0.2\nfeature_noise_sd = 0.02\n",
    )
    .unwrap();
    ok(&["pipeline", "--config", cfg.to_str().unwrap(), "--report-dir", &dir]);

    let metrics: BTreeMap<String, String> = rows(&d.path().join("metrics.csv"))
        .into_iter()
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect();
    let count = |k: &str| metrics[k].parse::<f64>().unwrap();
    let (tp, fp, fn_, tn) = (count("tp"), count("fp"), count("fn"), count("tn"));
    let accuracy = count("accuracy");
    assert!(accuracy > 0.9, "accuracy {accuracy}");
    assert!(tp > 0.0, "no conversion detected");
    assert_eq!(accuracy, (tp + tn) / (tp + fp + fn_ + tn));
    assert_eq!(count("precision"), tp / (tp + fp));
    assert_eq!(count("recall"), tp / (tp + fn_));
    assert_eq!(count("f1"), 2.0 * tp / (2.0 * tp + fp + fn_));

    let probs = rows(&d.path().join("cox_probabilities.csv"));
    assert_eq!(probs.len() as f64, tp + fp + fn_ + tn);
    for r in &probs {
        let p: Vec<f64> = r[1..5].iter().map(|v| v.parse().unwrap()).collect();
        assert!(p.windows(2).all(|w| w[0] <= w[1]), "{r:?}");
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
