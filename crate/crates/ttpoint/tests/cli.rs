use std::path::Path;
use std::process::{Command, Output};

use ttpoint::config::RunConfig;
use ttpoint_core::model::ModelConfig;

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny(64, 4);
    cfg.window.num_points = 64;
    cfg.synth.streams_per_class = 3;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.lr0 = 0.01;
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn ttpoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttpoint")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ttpoint(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// metrics.csv without the wall-clock column.
fn metrics_without_time(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_owned())
        .collect()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = tiny_config(d);
    let (data, clips, run, run2) = (d.join("data"), d.join("clips"), d.join("run"), d.join("run2"));

    ok(&["--config", s(&cfg), "--out", s(&data), "synth", "--format", "text"]);
    let manifest = std::fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().next(), Some("file,label,split"));
    assert_eq!(manifest.lines().count(), 13);

    ok(&["--config", s(&cfg), "--out", s(&clips), "preprocess", "--input", s(&data)]);
    assert!(std::fs::read_dir(clips.join("train")).unwrap().count() > 0);
    assert!(std::fs::read_dir(clips.join("test")).unwrap().count() > 0);

    ok(&["--config", s(&cfg), "--seed", "4", "--out", s(&run), "train", "--clips", s(&clips)]);
    ok(&["--config", s(&cfg), "--seed", "4", "--out", s(&run2), "train", "--clips", s(&clips)]);
    let metrics = metrics_without_time(&run.join("metrics.csv"));
    assert_eq!(metrics[0], "epoch,lr,loss,window_acc,voted_acc");
    assert_eq!(metrics.len(), 3);
    assert_eq!(metrics, metrics_without_time(&run2.join("metrics.csv")));
    for f in ["best.ttpt", "last.ttpt"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(run2.join(f)).unwrap(), "{f}");
    }

    let best = run.join("best.ttpt");
    let eval = ok(&["eval", "--checkpoint", s(&best), "--clips", s(&clips.join("test"))]);
    assert!(eval.contains("voted_acc"), "{eval}");

    let csv = d.join("report.csv");
    let report = ok(&["report", "--checkpoint", s(&best), "--csv", s(&csv)]);
    assert!(report.contains("compression ratio"), "{report}");
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("layer,kind,in_dim,out_dim,rows,params,dense_params,macs,dense_macs"));
}

#[test]
fn default_report_describes_reference_model() {
    let out = ok(&["report"]);
    assert!(out.contains("stage4/global0/l2"), "{out}");
    assert!(out.contains("params"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nno_such_field = 1\n").unwrap();
    assert_eq!(ttpoint(&["--config", s(&bad), "report"]).status.code(), Some(2));
    let missing = tmp.path().join("nowhere");
    assert_eq!(ttpoint(&["eval", "--checkpoint", s(&missing), "--clips", s(&missing)]).status.code(), Some(3));
    assert_eq!(ttpoint(&["ablate", "--mode", "sideways", "--input", s(&missing)]).status.code(), Some(2));
}
