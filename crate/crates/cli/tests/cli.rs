use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sprod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sprod")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sprod(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the parsed single-line error.
fn fails(args: &[&str]) -> (i32, serde_json::Value) {
    let out = sprod(args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap_or_default();
    let value: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {stderr}"));
    (out.status.code().unwrap(), value)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{
            "dataset": {{"synthetic": {{"class_count": 2, "core_dims": 4, "spurious_dims": 4,
                                       "correlation_rate": 0.9, "samples_per_class": 60}}}},
            "methods": ["stage1", "stage3", "mds", {{"name": "knn", "k": 5}}, "energy"],
            "seeds": [0, 1, 2]{extra}
        }}"#
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_fit_score_eval_pipeline() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let listing = ok(&["synth", "--seed", "3", "--out", p(d)]);
    assert_eq!(listing.lines().count(), 4);
    for name in ["train", "id_test", "sp_ood", "nsp_ood"] {
        assert!(d.join(format!("{name}.emb1")).exists());
    }
    let model = d.join("model.json");
    ok(&["fit", "--train", p(&d.join("train.emb1")), "--method", "stage3", "--out", p(&model)]);
    let text = fs::read_to_string(&model).unwrap();
    assert!(text.contains("\"model\": \"prototypes\""));

    let id = d.join("id.csv");
    let ood = d.join("ood.csv");
    ok(&["score", "--model", p(&model), "--input", p(&d.join("id_test.emb1")), "--out", p(&id)]);
    ok(&["score", "--model", p(&model), "--input", p(&d.join("nsp_ood.emb1")), "--out", p(&ood)]);
    let scores = fs::read_to_string(&id).unwrap();
    assert!(scores.starts_with("method,index,score\nsprod-stage3,0,"));

    let metrics: serde_json::Value = serde_json::from_str(&ok(&["eval", "--id", p(&id), "--ood", p(&ood)])).unwrap();
    assert!(metrics["auroc"].as_f64().unwrap() > 0.99);
    assert_eq!(metrics["n_id"], 400);
}

#[test]
fn fit_knn_with_k_and_csv_input() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", p(d), "--format", "csv"]);
    let model = d.join("knn.json");
    ok(&["fit", "--train", p(&d.join("train.csv")), "--method", "knn", "--k", "3", "--out", p(&model)]);
    let out = ok(&["score", "--model", p(&model), "--input", p(&d.join("sp_ood.csv"))]);
    assert!(out.lines().nth(1).unwrap().starts_with("knn,0,-"));
    let (code, err) = fails(&["fit", "--train", p(&d.join("train.csv")), "--method", "stage1", "--k", "3", "--out", p(&model)]);
    assert_eq!((code, err["error"].as_str().unwrap()), (2, "config"));
}

#[test]
fn bench_writes_reports_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "");
    let mut reports = Vec::new();
    for (i, threads) in ["1", "4", "4"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        ok(&["bench", "--config", p(&config), "--out", p(&out), "--threads", threads, "--gnuplot"]);
        assert!(out.join("report.csv").exists());
        assert!(out.join("report.dat").exists());
        let mut report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        report.as_object_mut().unwrap().remove("timings");
        report["config"].as_object_mut().unwrap().remove("output");
        reports.push(report);
        assert_eq!(
            fs::read_to_string(out.join("report.csv")).unwrap(),
            fs::read_to_string(dir.path().join("run0/report.csv")).unwrap()
        );
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[1], reports[2]);
    let main = &reports[0]["blocks"][0];
    assert_eq!(main["rows"].as_array().unwrap().len(), 15);
    assert_eq!(main["aggregates"].as_array().unwrap().len(), 5);
}

#[test]
fn bench_overrides() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), r#", "output": "rel-out""#);
    let stdout = ok(&["bench", "--config", p(&config), "--seed", "9", "--metric", "cosine", "--k", "7"]);
    assert!(stdout.contains("knn(k=7)"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rel-out/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seeds"], serde_json::json!([9]));
    assert_eq!(report["config"]["metric"], "cosine");
}

#[test]
fn ablate_and_lowshot() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "");
    let out = dir.path().join("stages");
    ok(&["ablate", "--kind", "stages", "--config", p(&config), "--out", p(&out)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "ablate-stages");
    assert_eq!(report["blocks"][0]["aggregates"].as_array().unwrap().len(), 5);

    // the default methods include non-prototype ones
    let (code, _) = fails(&["ablate", "--kind", "scoring", "--config", p(&config), "--out", p(&out)]);
    assert_eq!(code, 2);
    let proto = dir.path().join("proto.json");
    fs::write(
        &proto,
        r#"{"dataset": {"synthetic": {"class_count": 2, "core_dims": 4, "spurious_dims": 4,
                                       "correlation_rate": 0.9, "samples_per_class": 60}},
            "methods": ["stage3"], "seeds": [0, 1]}"#,
    )
    .unwrap();
    let out = dir.path().join("scoring");
    ok(&["ablate", "--kind", "scoring", "--config", p(&proto), "--out", p(&out)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pairs"].as_array().unwrap().len(), 4);

    let out = dir.path().join("lowshot");
    // 60 rows at r = 0.9: 6 minority rows per class
    let stdout = ok(&["lowshot", "--config", p(&proto), "--m", "2,4,8", "--out", p(&out)]);
    assert!(stdout.contains("m=8\tskipped"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let keys: Vec<_> = report["blocks"].as_array().unwrap().iter().map(|b| b["key"].as_str().unwrap()).collect();
    assert_eq!(keys, ["full", "m=2", "m=4", "m=8"]);
}

#[test]
fn file_mode_bench() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", p(d)]);
    let config = d.join("files.json");
    fs::write(
        &config,
        r#"{"dataset": {"files": {"train": "train.emb1", "id_test": "id_test.emb1",
                                   "ood": [{"name": "sp", "path": "sp_ood.emb1"}]}},
            "methods": ["stage3", "msp"], "seeds": [0], "output": "out"}"#,
    )
    .unwrap();
    ok(&["bench", "--config", p(&config)]);
    let csv = fs::read_to_string(d.join("out/report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("main,stage3,0,sp,")));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // unknown flag and unknown method: config
    assert_eq!(fails(&["bench", "--nope"]).0, 2);
    let (code, err) = fails(&["fit", "--train", "x.emb1", "--method", "bogus", "--out", "m.json"]);
    assert_eq!((code, err["error"].as_str().unwrap()), (2, "config"));
    // missing config file
    assert_eq!(fails(&["bench", "--config", p(&d.join("missing.json"))]).0, 2);
    // bad spec
    let spec = d.join("spec.json");
    fs::write(&spec, r#"{"class_count": 2, "core_dims": 1, "spurious_dims": 4, "correlation_rate": 0.9, "samples_per_class": 10}"#).unwrap();
    assert_eq!(fails(&["synth", "--config", p(&spec), "--out", p(d)]).0, 2);

    // truncated embedding file: data
    let bad = d.join("bad.emb1");
    fs::write(&bad, b"EMB1").unwrap();
    let (code, err) = fails(&["fit", "--train", p(&bad), "--out", p(&d.join("m.json"))]);
    assert_eq!((code, err["error"].as_str().unwrap()), (3, "data"));

    // singular covariance without a ridge: numeric, report still written
    let config = d.join("mds.json");
    fs::write(
        &config,
        r#"{"dataset": {"synthetic": {"class_count": 2, "core_dims": 4, "spurious_dims": 4,
                                       "correlation_rate": 0.5, "samples_per_class": 2}},
            "methods": [{"name": "mds", "ridge_scale": 0}, "stage1"], "seeds": [0], "output": "mds-out"}"#,
    )
    .unwrap();
    let (code, err) = fails(&["bench", "--config", p(&config)]);
    assert_eq!((code, err["error"].as_str().unwrap()), (4, "numeric"));
    assert!(d.join("mds-out/report.json").exists());
}

#[test]
fn help_and_version_succeed() {
    assert!(ok(&["--help"]).contains("bench"));
    assert!(ok(&["--version"]).starts_with("sprod "));
}
