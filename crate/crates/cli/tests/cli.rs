use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_garment-synth")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn generate_then_emit_evaluate_decode_preview() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let common = ["--seed", "11", "--out", out];
    let generate = [&common[..], &["generate", "--towel", "1", "--shorts", "0", "--tshirt", "0", "--fold-stages", "1", "--workers", "1"]].concat();
    let text = ok(&generate);
    assert!(text.contains("1 samples"), "{text}");

    let records = jsonl(&dir.path().join("annotations.jsonl"));
    assert_eq!(records.len(), 2);
    assert!(dir.path().join("manifest.json").exists());

    // a second run resumes the finished sample
    assert!(ok(&generate).contains("(1 resumed)"));

    let emitted = dir.path().join("stage2.jsonl");
    let text = ok(&[&common[..], &["emit", "--stage", "2", "--kp-ratio", "0.5", "--output", emitted.to_str().unwrap()]].concat());
    assert!(text.starts_with("2 samples"), "{text}");
    assert_eq!(jsonl(&emitted).len(), 2);

    // perfect predictions from the annotated, visible keypoints
    let mut preds = String::new();
    for r in &records {
        let frame = &r["frame"];
        for k in frame["keypoints"].as_array().unwrap() {
            if k["visible"].as_bool().unwrap() {
                let px = |i: usize| (k["pixel"][i].as_f64().unwrap() + 0.5).floor();
                preds += &format!(
                    "{}\n",
                    serde_json::json!({"frame_id": frame["frame_id"], "category": k["label"], "x": px(0), "y": px(1), "confidence": 0.9})
                );
            }
        }
    }
    let pred_path = dir.path().join("pred.jsonl");
    fs::write(&pred_path, preds).unwrap();
    let report_path = dir.path().join("report.json");
    let table = ok(&[
        "evaluate",
        "--pred",
        pred_path.to_str().unwrap(),
        "--gt",
        dir.path().join("annotations.jsonl").to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert!(table.lines().any(|l| l.starts_with("all") && l.contains("100.0")), "{table}");
    let report: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["overall"]["map_percent"], 100.0);

    let sample_dir = fs::read_dir(dir.path().join("samples")).unwrap().next().unwrap().unwrap().path();
    let scene = sample_dir.join("stage_0.scene.json");
    let actions = records[0]["actions"].as_array().unwrap();
    let answer = format!(
        "<action> {}",
        actions
            .iter()
            .map(|a| format!("{}(({},{}),({},{}))", a["arm"].as_str().unwrap(), a["pick"][0], a["pick"][1], a["place"][0], a["place"][1]))
            .collect::<Vec<_>>()
            .join(";")
    );
    let traj_path = dir.path().join("traj.json");
    ok(&["decode", "--answer", &answer, "--scene", scene.to_str().unwrap(), "--output", traj_path.to_str().unwrap()]);
    let traj: Value = serde_json::from_str(&fs::read_to_string(&traj_path).unwrap()).unwrap();
    assert_eq!(traj["validation"]["violations"].as_array().unwrap().len(), 0);
    assert_eq!(traj["trajectory"]["arms"].as_array().unwrap().len(), actions.len());

    let png = dir.path().join("preview.png");
    assert!(ok(&["preview", "--scene", scene.to_str().unwrap(), "--output", png.to_str().unwrap()]).contains("pixels covered"));
    assert!(fs::metadata(&png).unwrap().len() > 0);

    let exported = dir.path().join("export").join("again.scene.json");
    fs::create_dir_all(exported.parent().unwrap()).unwrap();
    ok(&["export-scene", "--sample", sample_dir.to_str().unwrap(), "--stage", "1", "--output", exported.to_str().unwrap()]);
    assert!(exported.exists());
    assert!(exported.with_file_name("again.obj").exists());
}

#[test]
fn malformed_answer_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("missing.scene.json");
    let out = run(&["decode", "--answer", "<action> LA((1,2),(1,2))", "--scene", scene.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("coincide"), "{err}");
}

#[test]
fn unknown_subcommand_fails() {
    assert!(!run(&["fold-everything"]).status.success());
}
