use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn case14() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/case14.m")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridshield"))
        .args(args)
        .args(["--log-level", "error"])
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 100-sample IEEE 14 dataset with a 10% attack share.
fn small_dataset(dir: &Path) -> PathBuf {
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"case": "{}", "scenario": {{"samples": 100, "attack": {{"fraction_attacked": 0.1}}}},
               "seeds": {{"load": 1, "noise": 2, "attack": 3, "split": 4}}}}"#,
            case14().display()
        ),
    )
    .unwrap();
    let ds = dir.join("ds.csv");
    ok(&["generate", "--config", s(&cfg), "--out", s(&ds)]);
    ds
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(
        code(&["generate", "--case", s(&case14()), "--seed", "1"]),
        2,
        "no --out"
    );
    assert_eq!(
        code(&[
            "generate",
            "--case",
            s(&case14()),
            "--seed",
            "1",
            "--workers",
            "0",
            "--out",
            "x.csv"
        ]),
        2
    );
    assert_eq!(
        code(&["eval", "--dataset", s(&missing), "--seed", "1", "--out", s(dir.path())]),
        2
    );
    assert_eq!(
        code(&[
            "generate",
            "--case",
            s(&missing),
            "--seed",
            "1",
            "--out",
            s(&dir.path().join("g.csv"))
        ]),
        2
    );
    assert!(!dir.path().join("g.csv").exists());

    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"seeds": {"load": 1, "noise": 2, "attack": 3, "split": 4}, "colour": "red"}"#,
    )
    .unwrap();
    assert_eq!(
        code(&["generate", "--config", s(&bad), "--out", s(&dir.path().join("g.csv"))]),
        2
    );
}

#[test]
fn detectors_score_the_test_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let cfg = dir.path().join("cfg.json");
    let (ds, cfg) = (s(&ds), s(&cfg));

    let se = dir.path().join("se.csv");
    ok(&[
        "detect",
        "--method",
        "se",
        "--config",
        cfg,
        "--dataset",
        ds,
        "--out",
        s(&se),
    ]);
    assert_eq!(csv_rows(&se).len(), 70);
    let se_all = dir.path().join("se_all.csv");
    ok(&[
        "detect",
        "--method",
        "se",
        "--all-rows",
        "--dataset",
        ds,
        "--out",
        s(&se_all),
    ]);
    assert_eq!(csv_rows(&se_all).len(), 100);

    let ecd = dir.path().join("ecd.csv");
    let model = dir.path().join("ecd.json");
    ok(&[
        "detect",
        "--method",
        "ecd",
        "--config",
        cfg,
        "--dataset",
        ds,
        "--model",
        s(&model),
        "--out",
        s(&ecd),
    ]);
    let rows = csv_rows(&ecd);
    assert_eq!(rows.len(), 70);
    for r in &rows {
        assert_eq!(
            &r[2] == "1",
            !r[3].is_empty(),
            "label and triggered buses disagree: {r:?}"
        );
    }
    let model: Value = serde_json::from_str(&std::fs::read_to_string(model).unwrap()).unwrap();
    assert_eq!(model["locals"].as_object().unwrap().len(), 14);

    let fused = dir.path().join("fusion.csv");
    ok(&[
        "fuse",
        "--config",
        cfg,
        "--dataset",
        ds,
        "--se-scores",
        s(&se_all),
        "--out",
        s(&fused),
    ]);
    assert_eq!(csv_rows(&fused).len(), 70);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(fused.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta["normalization"], "training");

    // SE scores for a subset of rows cannot stand in for the full table
    assert_eq!(
        code(&[
            "fuse",
            "--config",
            cfg,
            "--dataset",
            ds,
            "--se-scores",
            s(&se),
            "--out",
            s(&fused)
        ]),
        2
    );
}

#[test]
fn eval_writes_reports_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let out = dir.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--dataset",
        s(&ds),
        "--case",
        s(&case14()),
        "--repeats",
        "1",
        "--seed",
        "7",
        "--out",
        s(&out),
    ])
    .stdout;
    assert_eq!(String::from_utf8(stdout).unwrap().lines().count(), 4);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let repeats = report["repeats"].as_array().unwrap();
    assert_eq!(repeats.len(), 1);
    for m in ["se", "ecd", "corrdet", "fusion"] {
        let auc = repeats[0]["methods"][m]["auc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(report["mean"][m]["auc"].as_f64().unwrap(), auc);
    }
    assert!(out.join("roc_mean.csv").is_file() && out.join("roc_repeat_0.csv").is_file());

    let subset = dir.path().join("subset");
    ok(&[
        "eval",
        "--dataset",
        s(&ds),
        "--methods",
        "ecd,corrdet",
        "--repeats",
        "2",
        "--seed",
        "7",
        "--out",
        s(&subset),
    ]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(subset.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"], serde_json::json!(["ecd", "corrdet"]));
    assert_eq!(
        code(&[
            "eval",
            "--dataset",
            s(&ds),
            "--methods",
            "se,pca",
            "--seed",
            "7",
            "--out",
            s(&subset)
        ]),
        2
    );
}

#[test]
fn attack_needs_a_clean_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let again = dir.path().join("again.csv");
    assert_eq!(
        code(&["attack", "--dataset", s(&ds), "--seed", "5", "--out", s(&again)]),
        2
    );

    let clean = dir.path().join("clean.csv");
    let zero = dir.path().join("zero.json");
    std::fs::write(&zero, r#"{"scenario": {"attack": {"fraction_attacked": 0.0}}, "seeds": {"load": 3, "noise": 4, "attack": 5, "split": 6}}"#).unwrap();
    ok(&[
        "generate",
        "--config",
        s(&zero),
        "--case",
        s(&case14()),
        "--samples",
        "60",
        "--out",
        s(&clean),
    ]);
    ok(&[
        "attack",
        "--dataset",
        s(&clean),
        "--seed",
        "5",
        "--fraction",
        "0.25",
        "--out",
        s(&again),
    ]);
    let attacked = gridshield::scenario::load_dataset(&again).unwrap();
    assert_eq!(attacked.samples.iter().filter(|r| r.label == 1).count(), 15);
    assert_eq!(attacked.meta.seeds.attack, 5);
    assert_eq!(
        code(&[
            "attack",
            "--dataset",
            s(&clean),
            "--seed",
            "5",
            "--fraction",
            "1.5",
            "--out",
            s(&again)
        ]),
        2
    );
}
