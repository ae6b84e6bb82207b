use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tacseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("TACSEG_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small dataset: five one-clip demos.
fn synth(dir: &Path, seed: &str) -> PathBuf {
    let data = dir.join("data");
    let out = tacseg(&["synth", "--demos", "5", "--clips", "1", "--seed", seed, "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

/// Every file under `dir` except run manifests, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run_manifest.json" {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn synth_writes_recordings_and_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "7");
    let splits: serde_json::Value = serde_json::from_slice(&fs::read(data.join("splits.json")).unwrap()).unwrap();
    let count = |k: &str| splits[k].as_array().unwrap().len();
    assert_eq!((count("train"), count("val"), count("test")), (3, 1, 1));
    for i in 0..5 {
        let demo = data.join(format!("demo_{i:03}"));
        assert!(demo.join("recording.json").is_file());
        assert!(demo.join("ground_truth.json").is_file());
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(data.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert_eq!(tree(&synth(a.path(), "3")), tree(&synth(b.path(), "3")));
    assert_ne!(tree(&synth(a.path(), "3")), tree(&synth(c.path(), "4")));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let cases: [&[&str]; 4] = [
        &["synth", "--out", p(&out), "--train-frac", "0.9", "--val-frac", "0.2"],
        &["train", "--data", p(&out), "--out", p(&out), "--arch", "vgg"],
        &["train", "--data", p(&out), "--out", p(&out), "--modalities", "camera,lidar"],
        &["ft-filter", "--data", p(&out), "--out", p(&out)],
    ];
    for args in cases {
        let res = tacseg(args);
        assert_eq!(code(&res), 2, "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(code(&tacseg(&["frobnicate"])), 2);
}

#[test]
fn bad_thread_cap_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_tacseg"))
        .args(["synth", "--demos", "1", "--out", p(tmp.path())])
        .env("TACSEG_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&res), 2);
    let res = Command::new(env!("CARGO_BIN_EXE_tacseg"))
        .args(["synth", "--demos", "1", "--clips", "1", "--out", p(tmp.path())])
        .env("TACSEG_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
}

#[test]
fn missing_checkpoint_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "1");
    let res = tacseg(&[
        "ft-filter",
        "--data",
        p(&data),
        "--out",
        p(&tmp.path().join("clean")),
        "--checkpoint",
        p(&tmp.path().join("absent.tsck")),
    ]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing file"));
}

#[test]
fn oracle_filter_keeps_frames_outside_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "2");
    let clean = tmp.path().join("clean");
    let res = tacseg(&["ft-filter", "--data", p(&data), "--out", p(&clean), "--oracle"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let rate = tacseg_core::recdata::Rate::TACTILE;
    let original = tacseg_core::recdata::load_recording(&data.join("demo_000")).unwrap();
    let original = tacseg_core::recdata::synchronize(&original, rate).unwrap();
    let filtered = tacseg_core::recdata::load_recording(&clean.join("demo_000")).unwrap();
    let csv = fs::read_to_string(clean.join("demo_000/intervals.csv")).unwrap();
    let frames = original.frame_count().unwrap();
    let intervals = tacseg_core::wrenchproc::IntervalSet::from_csv(&csv, frames).unwrap();
    assert!(!intervals.is_empty());
    let a = original.stream("ft").unwrap().values();
    let b = filtered.stream("ft").unwrap().values();
    for t in 0..frames {
        let same = a.row(t).iter().zip(b.row(t)).all(|(x, y)| x.to_bits() == y.to_bits());
        assert_eq!(same, !intervals.contains(t), "frame {t}");
    }
    assert!(clean.join("splits.json").is_file());
}

#[test]
fn pipeline_runs_from_an_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |n: &str| tmp.path().join(n);
    let data = synth(tmp.path(), "5");
    let steps: Vec<Vec<String>> = vec![
        vec!["train", "--data", p(&data), "--out", p(&dir("trig")), "--target", "trigger", "--epochs", "2"],
        vec![
            "ft-filter",
            "--data",
            p(&data),
            "--out",
            p(&dir("clean")),
            "--checkpoint",
            p(&dir("trig/model.tsck")),
        ],
        vec![
            "train",
            "--data",
            p(&dir("clean")),
            "--out",
            p(&dir("skill")),
            "--arch",
            "tcn",
            "--epochs",
            "1",
            "--modalities",
            "camera,tactile,ft,pose",
        ],
        vec![
            "eval",
            "--data",
            p(&dir("clean")),
            "--checkpoint",
            p(&dir("skill/model.tsck")),
            "--out",
            p(&dir("eval")),
        ],
        vec![
            "infer",
            "--data",
            p(&dir("clean")),
            "--checkpoint",
            p(&dir("skill/model.tsck")),
            "--out",
            p(&dir("infer")),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in &steps {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let res = tacseg(&refs);
        assert_eq!(code(&res), 0, "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
    }

    assert!(dir("clean/demo_000/intervals.csv").is_file());
    let epochs = fs::read_to_string(dir("skill/epochs.jsonl")).unwrap();
    assert_eq!(epochs.lines().count(), 1);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(dir("eval/metrics.json")).unwrap()).unwrap();
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(metrics["per_class"].as_object().unwrap().len(), 5);
    assert!(metrics["per_class"]["released"]["f1"].is_number());
    let table = fs::read_to_string(dir("eval/f1_table.csv")).unwrap();
    assert!(table.starts_with("class,tcn camera,tactile,ft,pose"));
    let demo = "demo_004";
    assert!(dir(&format!("infer/{demo}.probs.tsm")).is_file());
    assert!(fs::read_to_string(dir(&format!("infer/{demo}.labels.csv"))).unwrap().starts_with("t,class_name"));
    assert!(fs::read_to_string(dir(&format!("infer/{demo}.timeline.svg"))).unwrap().contains("<svg"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir("skill/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["duration_s"].as_f64().unwrap() >= 0.0);

    // a skill checkpoint cannot drive the four-class trigger filter
    let res = tacseg(&[
        "ft-filter",
        "--data",
        p(&data),
        "--out",
        p(&dir("again")),
        "--checkpoint",
        p(&dir("skill/model.tsck")),
    ]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("vocabulary mismatch"));
}

#[test]
fn requested_modality_missing_from_data_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "6");
    for i in 0..5 {
        let path = data.join(format!("demo_{i:03}/recording.json"));
        let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        m["streams"].as_array_mut().unwrap().retain(|s| s["kind"] != "visual_embed");
        fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
    }
    let run = |mods: &str, out: &str| {
        tacseg(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&tmp.path().join(out)),
            "--arch",
            "tcn",
            "--epochs",
            "1",
            "--modalities",
            mods,
        ])
    };
    let res = run("camera,tactile", "a");
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("no visual_embed stream"));
    assert_eq!(code(&run("tactile,ft,pose", "b")), 0);
}
