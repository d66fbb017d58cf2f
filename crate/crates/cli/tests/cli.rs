use std::path::Path;
use std::process::{Command, Output};

fn airhold(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airhold")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = airhold(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let out = airhold(&["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));

    let out = airhold(&["features", "--data", "/no/such.csv", "--graph", "/no/g.json", "--out", "/tmp/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let line = String::from_utf8(out.stderr).unwrap();
    assert_eq!(line.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["error"], "missing_input");
}

#[test]
fn bad_data_is_a_single_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "not,a,flight,file\n1,2,3,4\n").unwrap();
    let out = airhold(&["build-graph", "--data", s(&bad), "--out", s(&dir.path().join("g.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(v["error"], "data");
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "--seed", "3", "--rows", "3000", "--positives", "150", "--airports", "10", "--out", s(&p("all.csv"))]);
    ok(&["split", "--data", s(&p("all.csv")), "--seed", "3", "--train-out", s(&p("train.csv")), "--test-out", s(&p("test.csv"))]);
    ok(&["build-graph", "--data", s(&p("train.csv")), "--out", s(&p("graph.json")), "--edge-features", s(&p("routes.csv"))]);
    ok(&["features", "--data", s(&p("train.csv")), "--graph", s(&p("graph.json")), "--out", s(&p("train_x.csv"))]);
    ok(&["features", "--data", s(&p("test.csv")), "--graph", s(&p("graph.json")), "--out", s(&p("test_x.csv"))]);
    ok(&["train-gbdt", "--features", s(&p("train_x.csv")), "--out-dir", s(&p("models")), "--rounds", "30"]);
    let stdout = ok(&[
        "evaluate",
        "--model-dir",
        s(&p("models")),
        "--features",
        s(&p("test_x.csv")),
        "--report",
        s(&p("report.json")),
        "--csv",
        s(&p("row.csv")),
    ]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "model,accuracy,precision,recall,f1");
    assert!(lines[1].starts_with("gbdt,"));
    assert_eq!(lines[1].split(',').count(), 5);
    assert_eq!(std::fs::read_to_string(p("row.csv")).unwrap(), stdout);

    // Each stage's recorded input digest equals the producer's output digest.
    let graph_out = &json(&p("graph.json.manifest.json"))["outputs"][0];
    let feat_in = &json(&p("train_x.csv.manifest.json"))["inputs"][1];
    assert_eq!(graph_out, feat_in);
    let train_out = &json(&p("train.csv.manifest.json"))["outputs"][0];
    assert_eq!(train_out, &json(&p("graph.json.manifest.json"))["inputs"][0]);
    let models = json(&p("models/manifest.json"));
    assert_eq!(models["command"], "train-gbdt");
    assert_eq!(models["outputs"].as_array().unwrap().len(), 4);

    let training = json(&p("models/training.json"));
    assert_eq!(training["classifier_loss"].as_array().unwrap().len(), 31);
    assert_eq!(training["config"]["rounds"], 30);

    let report = json(&p("report.json"));
    assert_eq!(report["regression"]["histogram"]["actual"].as_array().unwrap().len(), 50);

    let gat_out = ok(&[
        "train-gat",
        "--train",
        s(&p("train.csv")),
        "--test",
        s(&p("test.csv")),
        "--layers",
        "2",
        "--epochs",
        "3",
        "--out",
        s(&p("gat.json")),
    ]);
    assert!(gat_out.lines().nth(1).unwrap().starts_with("gat-2,"));
    let params = json(&p("gat.json"));
    assert_eq!(params["version"], 1);
    assert_eq!(params["config"]["layers"], 2);
}

#[test]
fn small_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |d: &Path| {
        vec![
            "pipeline".to_string(),
            "--seed".into(),
            "11".into(),
            "--rows".into(),
            "2500".into(),
            "--positives".into(),
            "120".into(),
            "--airports".into(),
            "8".into(),
            "--rounds".into(),
            "20".into(),
            "--gat-epochs".into(),
            "2".into(),
            "--out-dir".into(),
            d.to_str().unwrap().to_string(),
        ]
    };
    let run = |d: &Path| {
        let a = args(d);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    run(a.path());
    run(b.path());
    for f in ["report.json", "table.csv", "models/classifier.json", "graph.json", "gat_1.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let table = std::fs::read_to_string(a.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}
