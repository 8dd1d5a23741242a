use std::path::Path;
use std::process::{Command, Output};

use rps::exit;

fn rps(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rps"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

fn synth(dir: &Path, accuracy: &str, seed: &str, out: &str) {
    ok(&rps(
        dir,
        &[
            "synth",
            "--num-classes",
            "3",
            "--num-classifiers",
            "5",
            "--accuracy",
            accuracy,
            "--calibration-size",
            "60",
            "--test-size",
            "20",
            "--seed",
            seed,
            "--out",
            out,
        ],
    ));
}

fn calibrate(dir: &Path, partitions: &str, mode: &str) -> Output {
    rps(
        dir,
        &[
            "calibrate",
            "--calib-votes",
            "d/calib_votes.csv",
            "--calib-labels",
            "d/calib_labels.csv",
            "--calib-features",
            "d/calib_features.csv",
            "--num-classes",
            "3",
            "--alpha",
            "0.1",
            "--partitions",
            partitions,
            "--score-mode",
            mode,
            "--out",
            "cal",
        ],
    )
}

/// Rows of a CSV body as vectors of fields, header dropped.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn synth_is_deterministic_and_perfect_votes_match_labels() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1.0", "3", "a");
    synth(dir.path(), "1.0", "3", "b");
    for f in [
        "calib_votes.csv",
        "calib_labels.csv",
        "calib_features.csv",
        "test_votes.csv",
    ] {
        assert_eq!(
            read(dir.path(), &format!("a/{f}")),
            read(dir.path(), &format!("b/{f}"))
        );
    }
    let votes = rows(&read(dir.path(), "a/calib_votes.csv"));
    let labels = rows(&read(dir.path(), "a/calib_labels.csv"));
    for (v, l) in votes.iter().zip(&labels) {
        assert!(v[1..].iter().all(|c| c == &l[1]));
    }
    synth(dir.path(), "1.0", "4", "c");
    assert_ne!(
        read(dir.path(), "a/calib_labels.csv"),
        read(dir.path(), "c/calib_labels.csv")
    );
}

#[test]
fn single_partition_predict_matches_split_conformal() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "0.6", "8", "d");
    ok(&calibrate(d, "1", "smoothed"));
    ok(&rps(
        d,
        &[
            "predict",
            "--predictor",
            "cal/predictor.json",
            "--votes",
            "d/test_votes.csv",
            "--features",
            "d/test_features.csv",
            "--out",
            "pred",
        ],
    ));

    // Smoothed score recomputed from the vote CSVs.
    let score = |row: &[String], y: usize| -> f64 {
        let mut counts = [0.0f64; 3];
        for v in &row[1..] {
            counts[v.parse::<usize>().unwrap()] += 1.0;
        }
        let k_t = (row.len() - 1) as f64;
        let z: f64 = counts.iter().map(|c| (c / k_t).exp()).sum();
        (counts[y] / k_t).exp() / z
    };
    let cal_votes = rows(&read(d, "d/calib_votes.csv"));
    let cal_labels = rows(&read(d, "d/calib_labels.csv"));
    let mut cal: Vec<f64> = cal_votes
        .iter()
        .zip(&cal_labels)
        .map(|(v, l)| score(v, l[1].parse().unwrap()))
        .collect();
    cal.sort_by(f64::total_cmp);
    let q = cal[(0.1 * (cal.len() as f64 + 1.0)).floor() as usize - 1];

    let preds = rows(&read(d, "pred/predictions.csv"));
    let test = rows(&read(d, "d/test_votes.csv"));
    assert_eq!(preds.len(), 20);
    let mut checked = 0;
    for (p, v) in preds.iter().zip(&test) {
        let members: Vec<usize> = (0..3).filter(|&y| score(v, y) >= q).collect();
        // A score within rounding of the threshold is decided by the exact
        // computation; skip such points.
        if (0..3).any(|y| (score(v, y) - q).abs() < 1e-12 && score(v, y) != q) {
            continue;
        }
        let listed: Vec<String> = members.iter().map(|m| m.to_string()).collect();
        assert_eq!(p[1], listed.join(";"), "point {}", p[0]);
        assert_eq!(p[2], members.len().to_string());
        checked += 1;
    }
    assert!(checked >= 15);
}

#[test]
fn infeasible_calibration_exits_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "0.8", "1", "d");
    let out = calibrate(dir.path(), "12", "smoothed");
    assert_eq!(out.status.code(), Some(exit::INFEASIBLE));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("infeasible calibration"), "{stderr}");
    assert!(stderr.contains("short"), "{stderr}");
    assert!(!dir.path().join("cal/predictor.json").exists());
}

#[test]
fn zero_radius_certificates_are_all_true() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "0.7", "2", "d");
    ok(&calibrate(d, "2", "smoothed"));
    ok(&rps(
        d,
        &[
            "certify",
            "--predictor",
            "cal/predictor.json",
            "--votes",
            "d/test_votes.csv",
            "--features",
            "d/test_features.csv",
            "--out",
            "cert",
        ],
    ));
    let summary = json(d, "cert/summary.json");
    let r = &summary["reliability_ratios"][0];
    assert_eq!((r["r_t"].as_u64(), r["r_c"].as_u64()), (Some(0), Some(0)));
    for key in ["coverage", "size", "robust"] {
        assert_eq!(r[key].as_f64(), Some(1.0));
    }
    let certs = rows(&read(d, "cert/certificates.csv"));
    assert_eq!(certs.len(), 20);
    assert!(certs.iter().all(|c| c[3..] == ["true", "true", "true"]));
}

#[test]
fn certify_grid_is_monotone_and_matches_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "0.8", "5", "d");
    ok(&calibrate(d, "2", "smoothed"));
    ok(&rps(
        d,
        &[
            "certify",
            "--predictor",
            "cal/predictor.json",
            "--votes",
            "d/test_votes.csv",
            "--features",
            "d/test_features.csv",
            "--calib-votes",
            "d/calib_votes.csv",
            "--calib-labels",
            "d/calib_labels.csv",
            "--calib-features",
            "d/calib_features.csv",
            "--max-rt",
            "2",
            "--max-rc",
            "2",
            "--out",
            "cert",
        ],
    ));
    let summary = json(d, "cert/summary.json");
    let ratios = summary["reliability_ratios"].as_array().unwrap();
    assert_eq!(ratios.len(), 9);
    for a in ratios {
        for b in ratios {
            let le = |k: &str| a[k].as_u64() <= b[k].as_u64();
            if le("r_t") && le("r_c") {
                assert!(b["robust"].as_f64() <= a["robust"].as_f64());
            }
        }
    }
    let manifest = json(d, "cert/manifest.json");
    assert_eq!(manifest["command"], "certify");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 6);
    assert!(manifest["config"].get("out").is_none());
}

#[test]
fn training_radius_needs_the_smoothed_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut probs = String::from("point_id,p_0,p_1\n");
    let mut labels = String::from("point_id,label\n");
    let mut feats = String::from("point_id,f_0\n");
    for j in 0..30 {
        let p = (j % 10) as f64 / 10.0;
        probs += &format!("{j},{p},{}\n", 1.0 - p);
        labels += &format!("{j},{}\n", j % 2);
        feats += &format!("{j},{j}\n");
    }
    std::fs::write(d.join("p.csv"), &probs).unwrap();
    std::fs::write(d.join("l.csv"), &labels).unwrap();
    std::fs::write(d.join("f.csv"), &feats).unwrap();
    ok(&rps(
        d,
        &[
            "calibrate",
            "--calib-probabilities",
            "p.csv",
            "--calib-labels",
            "l.csv",
            "--calib-features",
            "f.csv",
            "--alpha",
            "0.1",
            "--score-mode",
            "hps",
            "--out",
            "cal",
        ],
    ));
    let out = rps(
        d,
        &[
            "certify",
            "--predictor",
            "cal/predictor.json",
            "--probabilities",
            "p.csv",
            "--features",
            "f.csv",
            "--max-rt",
            "1",
            "--out",
            "cert",
        ],
    );
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("smoothed"));

    // Calibration radii alone work in any mode.
    ok(&rps(
        d,
        &[
            "certify",
            "--predictor",
            "cal/predictor.json",
            "--probabilities",
            "p.csv",
            "--features",
            "f.csv",
            "--max-rc",
            "1",
            "--out",
            "cert",
        ],
    ));

    // Three-class probabilities against a two-class predictor.
    std::fs::write(d.join("p3.csv"), "point_id,p_0,p_1,p_2\n0,0.2,0.3,0.5\n").unwrap();
    std::fs::write(d.join("f3.csv"), "point_id,f_0\n0,1\n").unwrap();
    let out = rps(
        d,
        &[
            "predict",
            "--predictor",
            "cal/predictor.json",
            "--probabilities",
            "p3.csv",
            "--features",
            "f3.csv",
            "--out",
            "pred",
        ],
    );
    assert_eq!(out.status.code(), Some(exit::CONFIG));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rps(
        dir.path(),
        &[
            "predict",
            "--predictor",
            "nope.json",
            "--votes",
            "v.csv",
            "--features",
            "f.csv",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(exit::IO));
}

/// One partition of nine points, the minimum for alpha = 0.1: deleting one
/// calibration point removes class 0 from the set.
fn write_planted(d: &Path, n: usize) {
    let mut votes = String::from("point_id,clf_0,clf_1,clf_2\n");
    let mut labels = String::from("point_id,label\n");
    let mut feats = String::from("point_id,f_0\n");
    for j in 0..n {
        votes += &format!("{j},0,0,1\n");
        labels += &format!("{j},0\n");
        feats += &format!("{j},{j}\n");
    }
    std::fs::write(d.join("cv.csv"), votes).unwrap();
    std::fs::write(d.join("cl.csv"), labels).unwrap();
    std::fs::write(d.join("cf.csv"), feats).unwrap();
    std::fs::write(d.join("tv.csv"), "point_id,clf_0,clf_1,clf_2\n0,0,0,1\n").unwrap();
    std::fs::write(d.join("tf.csv"), "point_id,f_0\n0,0.5\n").unwrap();
}

fn oracle_files(d: &Path, radii: &str) -> Output {
    rps(
        d,
        &[
            "oracle-check",
            "--calib-votes",
            "cv.csv",
            "--calib-labels",
            "cl.csv",
            "--calib-features",
            "cf.csv",
            "--votes",
            "tv.csv",
            "--features",
            "tf.csv",
            "--num-classes",
            "2",
            "--alpha",
            "0.1",
            "--radii",
            radii,
            "--out",
            "oc",
        ],
    )
}

#[test]
fn oracle_check_reports_planted_attack() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_planted(d, 9);
    ok(&oracle_files(d, "0:0,0:1"));
    let report = json(d, "oc/oracle_report.json");
    assert_eq!(report["soundness_violations"], 0);
    let attacks = report["attacks"].as_array().unwrap();
    assert!(attacks
        .iter()
        .any(|a| a["r_c"] == 1 && a["flag"] == "coverage" && a["certified"] == false));
    assert!(attacks.iter().all(|a| a["r_c"] != 0));
}

#[test]
fn oracle_check_guards_large_instances() {
    let dir = tempfile::tempdir().unwrap();
    write_planted(dir.path(), 40);
    let out = oracle_files(dir.path(), "0:1");
    assert_eq!(out.status.code(), Some(exit::GUARD));
}

#[test]
fn oracle_sweep_passes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&rps(
        d,
        &[
            "oracle-check",
            "--sweep",
            "3",
            "--seed",
            "1",
            "--out",
            "zero",
        ],
    ));
    let zero = json(d, "zero/oracle_report.json");
    assert_eq!(zero["attacks"].as_array().unwrap().len(), 0);
    ok(&rps(
        d,
        &[
            "oracle-check",
            "--sweep",
            "6",
            "--seed",
            "2",
            "--max-rt",
            "2",
            "--max-rc",
            "2",
            "--out",
            "oc",
        ],
    ));
    let report = json(d, "oc/oracle_report.json");
    assert_eq!(report["instances"], 6);
    assert_eq!(report["soundness_violations"], 0);
    assert!(report["bound_checks"].as_u64().unwrap() > 0);
}

#[test]
fn evaluate_from_experiment_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.toml"),
        "seed = 4\nalpha = 0.2\npartitions = 2\nradii = [[0, 0], [1, 1]]\n[synthetic]\n\
         num_classes = 3\nnum_classifiers = 6\naccuracy = 0.8\ncalibration_size = 80\ntest_size = 30\n",
    )
    .unwrap();
    ok(&rps(
        d,
        &["evaluate", "--config", "exp.toml", "--out", "ev"],
    ));
    let report = json(d, "ev/report.json");
    assert_eq!(report["num_points"], 30);
    assert_eq!(report["reliability_ratios"].as_array().unwrap().len(), 2);
    assert_eq!(rows(&read(d, "ev/ratios.csv")).len(), 2);
    assert_eq!(json(d, "ev/manifest.json")["seed"], 4);

    std::fs::write(d.join("bad.toml"), "seed = 1\n").unwrap();
    let out = rps(d, &["evaluate", "--config", "bad.toml", "--out", "x"]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
}
