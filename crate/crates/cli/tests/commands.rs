use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn softlabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softlabel")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn plan_prints_recommendation_and_writes_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("plan");
    let o =
        softlabel(&["plan", scenario("plan-ordinal-ct.json").to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("annotate WITHOUT proposals; post-process: BLEND_ONLY"));
    assert!(text.contains("speedup -> below-threshold"), "{text}");
    assert!(text.contains("workload: 225660 annotations over 2 arm(s)"), "{text}");
    assert!(text.contains("18.05 h per annotator"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("recommendation.json")).unwrap()).unwrap();
    assert_eq!(json["recommendation"]["postprocessing"], "BLEND_ONLY");
    assert_eq!(json["workload"]["expected_annotations"], 225660.0);

    // deterministic
    let again = softlabel(&["plan", scenario("plan-ordinal-ct.json").to_str().unwrap()]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn plan_wald_table() {
    let o = softlabel(&["plan", "--table", "wald"]);
    assert!(o.status.success());
    let widths: Vec<f64> =
        stdout(&o).lines().skip(2).map(|l| l.split_whitespace().last().unwrap().parse().unwrap()).collect();
    assert_eq!(widths.len(), 3);
    for (w, expected) in widths.iter().zip([1.13, 0.62, 0.28]) {
        assert!((w - expected).abs() < 0.01, "{w} vs {expected}");
    }
}

#[test]
fn schema_violations_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(
        tmp.path(),
        "bad.json",
        "{\n  \"strategy\": {\n    \"n_images\": 10,\n    \"expected_speedup\": 2\n  }\n}\n",
    );
    let o = softlabel(&["plan", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing field"), "{}", stderr(&o));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));

    let o = softlabel(&["plan", tmp.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_writes_per_seed_reports_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("run{i}"))).collect();
    for dir in &runs {
        let o = softlabel(&[
            "simulate",
            scenario("simulate-direction.json").to_str().unwrap(),
            "--seeds",
            "10",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<String> =
        std::fs::read_dir(&runs[0]).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.starts_with("report-seed-") && n.ends_with(".json")).count(), 10);
    assert_eq!(names.iter().filter(|n| n.starts_with("report-seed-") && n.ends_with(".csv")).count(), 10);
    assert!(names.contains(&"aggregate.json".to_string()));
    assert!(names.contains(&"aggregate.csv".to_string()));
    assert!(names.contains(&"strategy_sweep.csv".to_string()));
    for n in &names {
        assert_eq!(
            std::fs::read(runs[0].join(n)).unwrap(),
            std::fs::read(runs[1].join(n)).unwrap(),
            "{n} differs between identical runs"
        );
    }
}

#[test]
fn simulate_io_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write(tmp.path(), "occupied", "");
    let o = softlabel(&["simulate", scenario("simulate-direction.json").to_str().unwrap(), "--out", &file]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn delta_sweep_bias_column_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let o =
        softlabel(&["simulate", scenario("bias-sweep.json").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("delta_sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    for w in rows.windows(2) {
        assert!(w[1][1] > w[0][1], "bias not increasing: {csv}");
    }
    for r in &rows {
        assert!((r[1] - r[2]).abs() < 0.02, "measured vs expected: {csv}");
    }
}

const LOG: &str = r#"{"image_id":"a","annotator_id":"x","chosen_class":0,"proposal_shown":null,"timestamp_ms":1,"batch_id":"b1"}
{"image_id":"a","annotator_id":"y","chosen_class":1,"proposal_shown":null,"timestamp_ms":2,"batch_id":"b2"}
{"image_id":"a","annotator_id":"z","chosen_class":1,"proposal_shown":null,"timestamp_ms":3,"batch_id":"b3"}
"#;

#[test]
fn postprocess_raw_frequencies() {
    let tmp = tempfile::tempdir().unwrap();
    let log = write(tmp.path(), "log.jsonl", LOG);
    let cfg = write(tmp.path(), "cfg.json", r#"{"k": 2}"#);
    let o = softlabel(&["postprocess", "--log", &log, "--config", &cfg, "--method", "RAW"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "image_id,p_0,p_1,n_annotations,method\na,0.3333333333333333,0.6666666666666666,3,RAW\n");

    let o = softlabel(&["postprocess", "--log", &log, "--config", &cfg, "--exclude", "x", "--format", "jsonl"]);
    assert!(stdout(&o).contains("\"probs\":[0.0,1.0]"), "{}", stdout(&o));
}

#[test]
fn postprocess_input_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", r#"{"k": 2}"#);
    let mut broken: Vec<&str> = LOG.lines().collect();
    broken.insert(1, "{\"image_id\": \"a\", ");
    let log = write(tmp.path(), "broken.jsonl", &broken.join("\n"));
    let o = softlabel(&["postprocess", "--log", &log, "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let log = write(tmp.path(), "log.jsonl", LOG);
    let o = softlabel(&["postprocess", "--log", &log, "--config", &cfg, "--method", "CLEVERLABEL"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("needs proposals"), "{}", stderr(&o));

    let bogus = write(tmp.path(), "bogus.json", r#"{"k": 2, "colour": "red"}"#);
    let o = softlabel(&["postprocess", "--log", &log, "--config", &bogus]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));
}

#[test]
fn gate_reads_ledger_files() {
    let tmp = tempfile::tempdir().unwrap();
    let ledger = write(
        tmp.path(),
        "l.json",
        r#"{"annotator_id": "ann-7", "status": "TRAINING", "iterations": [
            {"iteration_id": "b1", "with_proposals": false, "macro_f1": 0.55, "macro_accuracy": 0.6, "minutes_spent": 4.0},
            {"iteration_id": "b2", "with_proposals": true, "macro_f1": 0.58, "macro_accuracy": 0.6, "minutes_spent": 3.0}]}"#,
    );
    let o = softlabel(&["gate", "--ledger", &ledger, "--curve"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("ann-7") && row.contains("TRAINING") && row.contains("0.580"), "{text}");
    assert!(text.contains("ann-7 learning curve"), "{text}");
}

#[test]
fn export_of_unknown_campaign_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = softlabel(&["export", "--store-dir", tmp.path().to_str().unwrap(), "--campaign", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}
