use std::path::Path;
use std::process::{Command, Output};

use fusetrack::eval::Scenario;

fn fusetrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusetrack")).args(args).output().unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, scenario: &Scenario, out: &str) {
    std::fs::write(dir.join("scenario.json"), serde_json::to_string(scenario).unwrap()).unwrap();
    let o = fusetrack(&["synth", "--scenario", &p(dir, "scenario.json"), "--out", &p(dir, out)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn track(input: &Path, extra: &[&str]) -> Output {
    let base = ["track", "--dets3d", &p(input, "dets.jsonl"), "--rig", &p(input, "rig.json"), "--poses", &p(input, "poses.jsonl")];
    fusetrack(&[&base[..], extra].concat())
}

fn mota(input: &Path, hyp: &str) -> [f64; 2] {
    ["iou2d", "dist3d"].map(|criterion| {
        let o = fusetrack(&["eval", "--gt", &p(input, "gt.jsonl"), "--hyp", &p(input, hyp), "--criterion", criterion, "--json"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["mota"].as_f64().unwrap()
    })
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let o = fusetrack(&["track", "--dets3d", "x.jsonl", "--out", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--rig"), "{}", stderr(&o));
}

#[test]
fn help_and_version_succeed() {
    for flag in ["--help", "--version"] {
        assert_eq!(fusetrack(&[flag]).status.code(), Some(0));
    }
}

#[test]
fn unreadable_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("dets.jsonl"), "{\"frame\": 0, \"type\": \"3d\"\n").unwrap();
    std::fs::write(dir.join("rig.json"), "{}").unwrap();
    let o = fusetrack(&["track", "--dets3d", &p(dir, "dets.jsonl"), "--rig", &p(dir, "rig.json"), "--out", &p(dir, "out")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut s = Scenario::perfect(20, 6, 11);
    s.detection.p_drop3d = 0.2;
    s.detection.position_noise = 0.1;
    synth(dir, &s, "a");
    synth(dir, &s, "b");
    for f in ["dets.jsonl", "poses.jsonl", "gt.jsonl", "rig.json"] {
        let a = std::fs::read(dir.join("a").join(f)).unwrap();
        let b = std::fs::read(dir.join("b").join(f)).unwrap();
        assert!(!a.is_empty() || f == "dets.jsonl");
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn perfect_sequence_scores_one_and_empty_output_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &Scenario::perfect(25, 5, 3), "in");
    let input = dir.join("in");
    let o = track(&input, &["--format", "json", "--out", &p(&input, "hyp")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(mota(&input, "hyp"), [1.0; 2]);

    let mut empty = Scenario::perfect(25, 5, 3);
    empty.detection.p_drop3d = 1.0;
    empty.detection.p_drop2d = 1.0;
    synth(dir, &empty, "blind");
    let blind = dir.join("blind");
    let o = track(&blind, &["--format", "json", "--out", &p(&blind, "hyp")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(mota(&blind, "hyp"), [0.0; 2]);
}

#[test]
fn ablation_disables_the_second_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut s = Scenario::perfect(20, 6, 5);
    s.detection.p_drop3d = 0.4;
    synth(dir, &s, "in");
    let input = dir.join("in");
    let o = track(&input, &["--format", "json", "--out", &p(&input, "hyp"), "--ablation", "no-2d"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stderr(&o);
    assert!(log.contains("stage2 matches 0"), "{log}");
    let o = track(&input, &["--format", "json", "--out", &p(&input, "hyp")]);
    assert!(!stderr(&o).contains("stage2 matches 0"), "{}", stderr(&o));
}

#[test]
fn scene_without_objects_yields_empty_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &Scenario::perfect(10, 0, 0), "in");
    let input = dir.join("in");
    let o = track(&input, &["--out", &p(&input, "kitti")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files: Vec<_> = std::fs::read_dir(input.join("kitti")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1);
    assert!(std::fs::read_to_string(&files[0]).unwrap().trim().is_empty());
}

#[test]
fn dump_config_prints_the_preset() {
    let o = fusetrack(&["--dump-config", "--preset", "kitti"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["metric"], "iou_3d");
}
