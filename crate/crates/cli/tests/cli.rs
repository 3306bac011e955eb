use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use barkspace::audio_io::{write_wav, AudioClip};
use barkspace::container;
use barkspace::projection::{read_points, PointFormat, Quadrant};
use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_barkspace"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A small corpus with a split manifest at `c/split.csv`.
fn corpus(n: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    let n = n.to_string();
    ok(dir.path(), &["--seed", "5", "synth", "--n-events", &n, "--out", "c"]);
    ok(dir.path(), &["--seed", "5", "split", "--manifest", "c/manifest.csv", "--out", "c/split.csv"]);
    dir
}

fn train(dir: &Path, dim: &str, model: &str, out: &str) {
    ok(
        dir,
        &["train", "--manifest", "c/split.csv", "--dim", dim, "--model", model, "--epochs", "2", "--out", out],
    );
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["bogus"])), 1);
    assert_eq!(code(&run(dir.path(), &["train", "--dim", "arousal"])), 1);
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    ok(dir.path(), &["synth", "--n-events", "9", "--out", "c"]);
    let bad_dim = run(
        dir.path(),
        &["train", "--manifest", "c/manifest.csv", "--dim", "dominance", "--out", "m.bdn"],
    );
    assert_eq!(code(&bad_dim), 1);
    let bad_format = run(dir.path(), &["featurize", "--in", "c/manifest.csv", "--out", "f", "--format", "npy"]);
    assert_eq!(code(&bad_format), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let missing = run(dir.path(), &["eval", "--model", "nope.bdn", "--manifest", "nope.csv", "--report", "r.json"]);
    assert_eq!(code(&missing), 2);
    fs::write(dir.path().join("bad.csv"), "path,event_id,arousal,valence\nx.wav,x,loud,positive\n").unwrap();
    let bad = run(
        dir.path(),
        &["train", "--manifest", "bad.csv", "--dim", "arousal", "--out", "m.bdn"],
    );
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("loud"));
}

#[test]
fn bad_config_exits_one() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"segmentation": {"top_db": -3.0}}"#).unwrap();
    fs::write(dir.path().join("a.wav"), []).unwrap();
    let out = run(dir.path(), &["--config", "cfg.json", "segment", "--in", "a.wav", "--out", "s"]);
    assert_eq!(code(&out), 1);
    fs::write(dir.path().join("cfg.json"), r#"{"nonsense": 1}"#).unwrap();
    let out = run(dir.path(), &["--config", "cfg.json", "synth", "--out", "c"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["--seed", "3", "synth", "--n-events", "12", "--out", "a"]);
    ok(dir.path(), &["--seed", "3", "synth", "--n-events", "12", "--out", "b"]);
    ok(dir.path(), &["--seed", "4", "synth", "--n-events", "12", "--out", "c"]);
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "manifest.csv"), read("b", "manifest.csv"));
    assert_eq!(read("a", "synth_0007.wav"), read("b", "synth_0007.wav"));
    assert_ne!(read("a", "synth_0007.wav"), read("c", "synth_0007.wav"));
    assert_eq!(fs::read_to_string(dir.path().join("a/manifest.csv")).unwrap().lines().count(), 13);

    ok(dir.path(), &["segment", "--in", "a", "--out", "segs"]);
    let index = json(&dir.path().join("segs/index.json"));
    let sources: std::collections::BTreeSet<&str> = index
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["source_path"].as_str().unwrap())
        .collect();
    assert_eq!(sources.len(), 12);
}

#[test]
fn split_assigns_every_event_once() {
    let dir = corpus(10);
    let text = fs::read_to_string(dir.path().join("c/split.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",train")).count(), 8);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",test")).count(), 2);

    ok(dir.path(), &["--seed", "5", "split", "--manifest", "c/manifest.csv", "--out", "c/again.csv"]);
    assert_eq!(text, fs::read_to_string(dir.path().join("c/again.csv")).unwrap());

    for ratio in ["1.0", "0", "1.5"] {
        let out = run(
            dir.path(),
            &["split", "--manifest", "c/manifest.csv", "--ratio", ratio, "--out", "x.csv"],
        );
        assert_ne!(code(&out), 0, "ratio {ratio} accepted");
    }
}

#[test]
fn split_output_elsewhere_keeps_paths_valid() {
    let dir = corpus(9);
    fs::create_dir(dir.path().join("other")).unwrap();
    ok(dir.path(), &["split", "--manifest", "c/manifest.csv", "--out", "other/m.csv"]);
    ok(dir.path(), &["featurize", "--in", "other/m.csv", "--out", "f.bdn"]);
}

#[test]
fn training_is_reproducible() {
    let dir = corpus(18);
    train(dir.path(), "arousal", "siamese", "a1.bdn");
    train(dir.path(), "arousal", "siamese", "a2.bdn");
    let a1 = fs::read(dir.path().join("a1.bdn")).unwrap();
    assert_eq!(a1, fs::read(dir.path().join("a2.bdn")).unwrap());
    ok(
        dir.path(),
        &["--seed", "6", "train", "--manifest", "c/split.csv", "--dim", "arousal", "--epochs", "2", "--out", "a3.bdn"],
    );
    assert_ne!(a1, fs::read(dir.path().join("a3.bdn")).unwrap());
}

#[test]
fn training_without_every_class_fails() {
    let dir = corpus(9);
    let text = fs::read_to_string(dir.path().join("c/manifest.csv")).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.contains(",high,")).collect();
    fs::write(dir.path().join("c/nohigh.csv"), kept.join("\n") + "\n").unwrap();
    let out = run(
        dir.path(),
        &["train", "--manifest", "c/nohigh.csv", "--dim", "arousal", "--epochs", "1", "--out", "m.bdn"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no high examples"));
    assert!(!dir.path().join("m.bdn").exists());
}

#[test]
fn eval_report_is_consistent() {
    let dir = corpus(18);
    train(dir.path(), "valence", "baseline", "v.bdn");
    ok(dir.path(), &["eval", "--model", "v.bdn", "--manifest", "c/split.csv", "--split", "all", "--report", "r.json"]);
    let r = json(&dir.path().join("r.json"));
    assert_eq!(r["dimension"], "valence");
    assert_eq!(r["model"], "baseline");
    assert_eq!(r["counts"]["events"], 18);
    let frames = r["counts"]["frames"].as_u64().unwrap();
    let cm_total: u64 = r["confusion"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|row| row.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(cm_total, frames);
    let hist_total: u64 = r["histograms"]
        .as_object()
        .unwrap()
        .values()
        .flat_map(|h| h.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(hist_total, frames);
    assert_eq!(r["bin_edges"].as_array().unwrap().len(), 51);
    let tap = r["tap_percent"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&tap));

    ok(dir.path(), &["eval", "--model", "v.bdn", "--manifest", "c/split.csv", "--report", "t.json"]);
    assert_eq!(json(&dir.path().join("t.json"))["counts"]["events"], 4);
}

#[test]
fn project_writes_points_and_histograms() {
    let dir = corpus(18);
    train(dir.path(), "arousal", "siamese", "a.bdn");
    train(dir.path(), "valence", "siamese", "v.bdn");
    let base = ["project", "--arousal-model", "a.bdn", "--valence-model", "v.bdn"];

    ok(dir.path(), &["eval", "--model", "a.bdn", "--manifest", "c/split.csv", "--report", "r.json"]);
    assert_eq!(json(&dir.path().join("r.json"))["event_tap_percent"], 0.0);

    let mut args = base.to_vec();
    args.extend(["--in", "c/split.csv", "--out", "p.csv", "--hist", "h.json"]);
    ok(dir.path(), &args);
    let points = read_points(dir.path().join("p.csv"), PointFormat::Csv).unwrap();
    assert_eq!(points.len(), 18);
    for p in &points {
        assert_eq!(p.quadrant, Quadrant::from_coords(p.valence, p.arousal));
        assert!(p.n_frames >= 1);
    }
    let h = json(&dir.path().join("h.json"));
    let classes: Vec<&String> = h["valence"]["histograms"].as_object().unwrap().keys().collect();
    assert_eq!(classes, ["negative", "neutral", "positive"]);

    let mut args = base.to_vec();
    args.extend(["--in", "c/split.csv", "--out", "p.json", "--format", "json"]);
    ok(dir.path(), &args);
    assert_eq!(read_points(dir.path().join("p.json"), PointFormat::Json).unwrap(), points);

    // swapped models are refused
    let out = run(
        dir.path(),
        &["project", "--arousal-model", "v.bdn", "--valence-model", "a.bdn", "--in", "c/split.csv", "--out", "x.csv"],
    );
    assert_eq!(code(&out), 2);

    write_wav(dir.path().join("empty.wav"), &AudioClip::new(Vec::new(), 22050).unwrap()).unwrap();
    let mut args = base.to_vec();
    args.extend(["--in", "empty.wav", "--out", "q.csv", "--hist", "qh.json"]);
    ok(dir.path(), &args);
    assert_eq!(
        fs::read_to_string(dir.path().join("q.csv")).unwrap(),
        "event_id,valence,arousal,quadrant,n_frames\n"
    );
    assert_eq!(json(&dir.path().join("qh.json")), serde_json::json!({}));
}

fn two_bursts(path: &Path) {
    let rate = 22050;
    let mut s = vec![0.0; rate as usize * 2];
    for start in [4410usize, 26460] {
        for (i, v) in s[start..start + 6615].iter_mut().enumerate() {
            *v = 0.5 * (2.0 * std::f64::consts::PI * 500.0 * i as f64 / rate as f64).sin();
        }
    }
    write_wav(path, &AudioClip::new(s, rate).unwrap()).unwrap();
}

#[test]
fn segment_finds_bursts() {
    let dir = TempDir::new().unwrap();
    fs::create_dir(dir.path().join("in")).unwrap();
    two_bursts(&dir.path().join("in/bark.wav"));
    ok(dir.path(), &["segment", "--in", "in", "--out", "segs"]);
    let index = json(&dir.path().join("segs/index.json"));
    let index = index.as_array().unwrap();
    assert_eq!(index.len(), 2);
    assert_eq!(index[0]["event_id"], "bark_0000");
    assert_eq!(index[1]["event_id"], "bark_0001");
    for e in index {
        let start = e["start_sample"].as_u64().unwrap();
        let end = e["end_sample"].as_u64().unwrap();
        assert!(end > start);
        assert!(dir.path().join("segs").join(format!("{}.wav", e["event_id"].as_str().unwrap())).exists());
    }
    assert!(index[0]["end_sample"].as_u64().unwrap() < index[1]["start_sample"].as_u64().unwrap());

    fs::create_dir(dir.path().join("empty")).unwrap();
    ok(dir.path(), &["segment", "--in", "empty", "--out", "none"]);
    assert_eq!(json(&dir.path().join("none/index.json")), serde_json::json!([]));
}

#[test]
fn featurize_formats() {
    let dir = TempDir::new().unwrap();
    two_bursts(&dir.path().join("bark.wav"));
    ok(dir.path(), &["featurize", "--in", "bark.wav", "--out", "f.bdn"]);
    let (meta, tensors) = container::decode(&fs::read(dir.path().join("f.bdn")).unwrap()).unwrap();
    let meta: Value = serde_json::from_str(&meta).unwrap();
    let n_frames = meta["events"][0]["n_frames"].as_u64().unwrap() as usize;
    assert_eq!(tensors.len(), n_frames);
    assert_eq!(tensors[0].name, "bark/0000");
    assert_eq!(tensors[0].dims, vec![64, 37]);
    assert!(tensors.iter().flat_map(|t| &t.values).all(|v| (0.0..=1.0).contains(v)));

    ok(dir.path(), &["featurize", "--in", "bark.wav", "--out", "f.csv", "--format", "csv"]);
    let text = fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 3 + 37);
    assert_eq!(lines.count(), 64 * n_frames);
}
