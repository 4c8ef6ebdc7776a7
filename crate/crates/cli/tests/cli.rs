use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use whalepost::ingest::read_trace_file;
use whalepost::{ClassConfig, ClassLabel, EventParams, FrameParams, PostProcessingConfig};

fn whalepost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whalepost")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn synth(root: &Path, preset: &str) -> PathBuf {
    let out = root.join("ds");
    let o = whalepost(&["synth", "--preset", preset, "--seed", "5", "--out", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn exit_codes() {
    assert_eq!(whalepost(&[]).status.code(), Some(1));
    assert_eq!(whalepost(&["--help"]).status.code(), Some(0));
    assert_eq!(whalepost(&["search", "--strategy", "sideways"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = dir.path().join("events.csv");
    let o = whalepost(&["postprocess", "--traces", &s(&missing), "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "# frame_rate=10\ntime,bmabz\n0.0,1.7\n").unwrap();
    let o = whalepost(&["postprocess", "--traces", &s(&bad), "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3"), "line number reported");
    assert!(!out.exists());
}

#[test]
fn plain_threshold_config_yields_runs_of_active_frames() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), "noisy");
    let trace_path = ds.join("traces/casey2017/casey2017_000.csv");
    let open = EventParams { min_gap: 0.05, min_duration: 0.01, max_duration: 1e6 };
    let cfg: PostProcessingConfig = ClassLabel::defaults()
        .into_iter()
        .map(|c| (c, ClassConfig { frame: FrameParams::threshold(0.5), event: open }))
        .collect();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dir.path().join("events.csv");
    let o = whalepost(&["postprocess", "--traces", &s(&trace_path), "--config", &s(&cfg_path), "--out", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let trace = read_trace_file(&trace_path).unwrap();
    let mut expected = Vec::new();
    for (label, row) in trace.classes().iter().zip(trace.rows()) {
        let mut i = 0;
        while i < row.len() {
            if row[i] >= 0.5 {
                let j = (i..row.len()).find(|&j| row[j] < 0.5).unwrap_or(row.len());
                expected.push((label.to_string(), trace.frame_time(i), trace.frame_time(j)));
                i = j;
            } else {
                i += 1;
            }
        }
    }
    let text = fs::read_to_string(&out).unwrap();
    let mut got: Vec<(String, f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f[0], "casey2017_000");
            (f[1].to_string(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    let key = |e: &(String, f64, f64)| (e.0.clone(), (e.1 * 1e6).round() as i64);
    got.sort_by_key(key);
    expected.sort_by_key(key);
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!(g.0, e.0);
        assert!((g.1 - e.1).abs() < 1e-6 && (g.2 - e.2).abs() < 1e-6, "{g:?} vs {e:?}");
    }
}

#[test]
fn pr_curve_has_one_row_per_class_and_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), "clean");
    let out = dir.path().join("pr.tsv");
    let o = whalepost(&[
        "pr-curve",
        "--traces",
        &s(&ds.join("traces")),
        "--annotations",
        &s(&ds.join("annotations.csv")),
        "--out",
        &s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3 * 49 + 1);
}

#[test]
fn evaluate_scores_postprocessed_clean_data_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), "clean");
    let events = dir.path().join("events.csv");
    let o = whalepost(&["postprocess", "--traces", &s(&ds.join("traces")), "--out", &s(&events)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = dir.path().join("eval.json");
    let o = whalepost(&[
        "evaluate",
        "--events",
        &s(&events),
        "--annotations",
        &s(&ds.join("annotations.csv")),
        "--traces",
        &s(&ds.join("traces")),
        "--out",
        &s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["report"]["macro_f1"].as_f64(), Some(1.0));
}

#[test]
fn bpn_demo_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.json");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let o = whalepost(&["bpn-demo", "--seed", "2", "--save-weights", &s(&w), "--out", &s(&a)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = whalepost(&["bpn-demo", "--seed", "2", "--weights", &s(&w), "--out", &s(&b)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
