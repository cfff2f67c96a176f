use std::fs;
use std::path::Path;
use std::process::Command;

use epicast::cli::{cmd_run, cmd_score, cmd_validate, RunOptions, EXIT_CONFIG, EXIT_DATA};
use epicast::forecast::{BinnedForecast, ForecastDoc, PointForecast, Repr};
use epicast::scoring::read_score_csv;
use epicast::series::TargetKind;

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn truth_csv(dir: &Path) -> std::path::PathBuf {
    let mut s = String::from("location,time_index,value\n");
    for t in 1..=10 {
        s.push_str(&format!("A,{t},{}\n", t * 10));
    }
    write(dir, "truth.csv", &s)
}

fn doc(origin_t: i64, k: i64, repr: Repr) -> serde_json::Value {
    ForecastDoc {
        location: "A".into(),
        origin_t,
        target: TargetKind::StepAhead { k },
        repr,
    }
    .to_json()
}

#[test]
fn score_pairs_forecasts_with_truth() {
    let dir = tempfile::tempdir().unwrap();
    let truth = truth_csv(dir.path());
    // truths at t=6,7 are 60,70
    let docs = serde_json::json!([
        doc(5, 1, Repr::Point(PointForecast::new(55.0).unwrap())),
        doc(5, 2, Repr::Point(PointForecast::new(80.0).unwrap())),
    ]);
    let f = write(dir.path(), "naive.json", &docs.to_string());
    let bytes = cmd_score(&[f], &truth, &["mae".into(), "crps".into()], 1).unwrap();
    let reports = read_score_csv(bytes.as_slice()).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        assert_eq!(r.model_id, "naive");
        assert_eq!(r.n, 2);
        assert!((r.aggregate - 7.5).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn score_binned_log_score() {
    let dir = tempfile::tempdir().unwrap();
    let truth = truth_csv(dir.path());
    let b = BinnedForecast::new(vec![0.0, 50.0, 100.0], vec![0.25, 0.75]).unwrap();
    let f = write(dir.path(), "m.json", &doc(1, 1, Repr::Binned(b)).to_string());
    let bytes = cmd_score(&[f], &truth, &["log_score".into()], 1).unwrap();
    let reports = read_score_csv(bytes.as_slice()).unwrap();
    // truth 20 falls in [0, 50)
    assert!((reports[0].aggregate - 0.25f64.ln()).abs() < 1e-12);
}

#[test]
fn score_reports_unmatched_targets() {
    let dir = tempfile::tempdir().unwrap();
    let truth = truth_csv(dir.path());
    let f = write(
        dir.path(),
        "late.json",
        &doc(10, 3, Repr::Point(PointForecast::new(1.0).unwrap())).to_string(),
    );
    let e = cmd_score(&[f], &truth, &["mae".into()], 1).unwrap_err();
    assert_eq!(e.code, EXIT_DATA);
    assert!(e.message.contains("late"), "{e}");
    let f = write(dir.path(), "ok.json", "[]");
    assert_eq!(cmd_score(std::slice::from_ref(&f), &truth, &["mae".into()], 1).unwrap_err().code, EXIT_DATA);
    assert_eq!(cmd_score(&[f], &truth, &["nope".into()], 1).unwrap_err().code, EXIT_CONFIG);
}

#[test]
fn validate_lists_problems_per_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = truth_csv(dir.path());
    let bad = write(dir.path(), "bad.csv", "location,time_index,value\nA,1,1\nA,2,-3\n");
    let vint = write(
        dir.path(),
        "v.csv",
        "location,event_time,report_time,count_delta\nA,3,2,1\n",
    );
    assert!(cmd_validate(std::slice::from_ref(&good)).is_empty());
    let problems = cmd_validate(&[good, bad, vint]);
    assert_eq!(problems.len(), 2, "{problems:?}");
    assert_eq!(problems[0].line, 3);
    assert!(problems[0].file.ends_with("bad.csv"));
    assert!(problems[1].file.ends_with("v.csv"));
}

fn minimal_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let mut s = String::from("location,time_index,value,season\n");
    for t in 1..=40 {
        let v = 50.0 + 20.0 * (t as f64 * std::f64::consts::PI / 5.0).sin() + (t % 3) as f64;
        s.push_str(&format!("A,{t},{v},s{}\n", (t - 1) / 10));
    }
    write(dir, "inc.csv", &s);
    let body = format!(
        r#"{{
  "data": {{"incidence": "inc.csv", "cycle_length": 10}},
  "split": {{"training_seasons": ["s1", "s2"], "testing_seasons": ["s3"]}},
  "models": [{{"id": "med", "spec": {{"family": "seasonal_median", "bin_grid": [0, 50, 100]}}}},
             {{"id": "hw", "spec": {{"family": "holt_winters", "bin_grid": [0, 50, 100]}}}}],
  "metrics": ["mae"]{extra}
}}"#
    );
    write(dir, "config.json", &body)
}

#[test]
fn run_requires_a_seed_and_known_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = minimal_config(dir.path(), "");
    let out = RunOptions {
        out: Some(dir.path().join("out")),
        ..Default::default()
    };
    let e = cmd_run(&cfg, &out).unwrap_err();
    assert_eq!((e.code, e.stage), (EXIT_CONFIG, "load_config"));
    assert!(e.message.contains("seed"));

    let cfg = minimal_config(dir.path(), r#", "seed": 1, "cv_metric": "bogus""#);
    assert_eq!(cmd_run(&cfg, &out).unwrap_err().code, EXIT_CONFIG);

    let cfg = minimal_config(dir.path(), r#", "seed": 1, "baseline": "ghost""#);
    assert_eq!(cmd_run(&cfg, &out).unwrap_err().code, EXIT_CONFIG);

    let cfg = minimal_config(dir.path(), r#", "seed": 1"#);
    let rc = cmd_run(&cfg, &out).unwrap();
    assert!(rc.output_dir.join("scores_test.csv").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rc.output_dir.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], rc.config_sha256);
    assert!(manifest["outputs"]["scores_test.csv"].is_string());
}

#[test]
fn seed_override_changes_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = minimal_config(dir.path(), r#", "seed": 1"#);
    let run = |seed| {
        cmd_run(
            &cfg,
            &RunOptions {
                seed,
                out: Some(dir.path().join("o")),
                jobs: None,
            },
        )
        .unwrap()
        .config_sha256
    };
    assert_eq!(run(None), run(Some(1)));
    assert_ne!(run(None), run(Some(2)));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_epicast");
    let bad = write(dir.path(), "bad.csv", "location,time_index,value\nA,2,1\n");
    let status = Command::new(bin).arg("validate").arg(&bad).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_DATA));

    let cfg = minimal_config(dir.path(), "");
    let status = Command::new(bin)
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&status.stderr).contains("load_config"));

    let status = Command::new(bin)
        .args(["run", "--seed", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
}
