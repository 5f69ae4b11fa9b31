use std::path::Path;
use std::process::{Command, Output};

fn lus(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lus"))
        .arg("--work-dir")
        .arg(work)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = lus(dir.path(), &["prepare", "--synthetic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn prepare_is_resumable() {
    let dir = prepared();
    let work = dir.path();
    let clips: Vec<_> = std::fs::read_dir(work.join("clips")).unwrap().flatten().collect();
    assert_eq!(clips.len(), 1);
    let clip_dir = clips[0].path();
    let first: Vec<_> = std::fs::read_dir(&clip_dir).unwrap().flatten().map(|e| e.path()).collect();
    assert_eq!(first.len(), 16);

    std::fs::remove_file(&first[3]).unwrap();
    let o = lus(work, &["prepare"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("clips: 1 processed, 15 reused, 0 failed"), "{}", stdout(&o));

    let o = lus(work, &["prepare"]);
    assert!(stdout(&o).contains("clips: 0 processed, 16 reused"), "{}", stdout(&o));
}

#[test]
fn preprocessing_change_reprocesses_everything() {
    let dir = prepared();
    let cfg = dir.path().join("short.toml");
    std::fs::write(&cfg, "[preprocess]\nmax_frames = 40\n").unwrap();
    let o = lus(dir.path(), &["prepare", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("clips: 16 processed, 0 reused"), "{}", stdout(&o));
    assert_eq!(std::fs::read_dir(dir.path().join("clips")).unwrap().count(), 2);
}

#[test]
fn exclusions_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    // generate, then break one eligible video
    assert!(lus(dir.path(), &["prepare", "--synthetic"]).status.success());
    let fresh = tempfile::tempdir().unwrap();
    let src = dir.path().join("synthetic");
    let videos = fresh.path().join("videos");
    std::fs::create_dir(&videos).unwrap();
    for e in std::fs::read_dir(&src).unwrap().flatten() {
        std::fs::copy(e.path(), videos.join(e.file_name())).unwrap();
    }
    std::fs::write(videos.join("syn_neg_009.y4m"), b"not a video").unwrap();
    let work = fresh.path().join("work");
    let cfg = fresh.path().join("c.toml");
    std::fs::write(&cfg, "[synthetic]\n").unwrap();
    let manifest = videos.join("manifest.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_lus"))
        .args(["prepare", "--work-dir", work.to_str().unwrap(), "--config", cfg.to_str().unwrap()])
        .args(["--manifest", manifest.to_str().unwrap(), "--video-root", videos.to_str().unwrap()])
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    // the synthetic preset regenerates its own videos, but the manifest flag points at the copies
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("15 processed, 0 reused, 1 failed"), "{}", stdout(&o));
    let report = std::fs::read_to_string(work.join("exclusions.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);
    assert!(report.lines().any(|l| l.starts_with("syn_neg_009,") && l.contains(",decode,")));

    // training skips the excluded video instead of failing
    let o = Command::new(env!("CARGO_BIN_EXE_lus"))
        .args(["train", "--work-dir", work.to_str().unwrap(), "--max-epochs", "1"])
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_without_prepare_names_prepare() {
    let dir = tempfile::tempdir().unwrap();
    let o = lus(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lus prepare"), "{}", stderr(&o));
}

#[test]
fn one_epoch_run_then_evaluate_predict_plot() {
    let dir = prepared();
    let w = dir.path();
    let o = lus(w, &["train", "--max-epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("epochs run: 1"));
    let history = std::fs::read_to_string(w.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let o = lus(w, &["evaluate", "--split", "val"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("val: 4 videos"));
    assert!(w.join("reports/val.json").exists() && w.join("reports/val.csv").exists());

    let o = lus(w, &["predict", w.join("synthetic/syn_pos_000.y4m").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let mut parts = line.trim().split(' ');
    assert!(matches!(parts.next(), Some("positive" | "negative")));
    assert!(parts.next().unwrap().starts_with("p=0."));
    let record: serde_json::Value = serde_json::from_str(std::fs::read_to_string(w.join("predictions.jsonl")).unwrap().trim()).unwrap();
    assert!(record["probability"].is_f64());

    let o = lus(w, &["plot"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["accuracy.png", "loss.png", "learning_rate.png", "learning_rate.csv"] {
        assert!(w.join("plots").join(f).exists(), "{f}");
    }
}

#[test]
fn evaluate_without_checkpoint_fails() {
    let dir = prepared();
    let o = lus(dir.path(), &["evaluate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn predict_failures() {
    let dir = prepared();
    let w = dir.path();
    assert!(lus(w, &["train", "--max-epochs", "1"]).status.success());
    let bad = w.join("bad.y4m");
    std::fs::write(&bad, b"garbage").unwrap();
    let o = lus(w, &["predict", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.y4m"));

    let batch = w.join("batch");
    std::fs::create_dir(&batch).unwrap();
    std::fs::copy(&bad, batch.join("a_bad.y4m")).unwrap();
    std::fs::copy(w.join("synthetic/syn_neg_008.y4m"), batch.join("b_ok.y4m")).unwrap();
    let o = lus(w, &["predict", "--json", batch.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let records: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert!(records[0]["error"].is_string());
    assert!(records[1]["label"].is_string());
    assert!(stderr(&o).contains("failed (1 of 2)"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lus(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(lus(dir.path(), &["evaluate", "--split", "train"]).status.code(), Some(1));
    assert_eq!(lus(dir.path(), &["prepare"]).status.code(), Some(1));
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "bogus_key = 1\n").unwrap();
    assert_eq!(lus(dir.path(), &["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(lus(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn inputs_are_not_modified() {
    let dir = prepared();
    let syn = dir.path().join("synthetic");
    let snapshot = |p: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(p)
            .unwrap()
            .flatten()
            .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
            .collect();
        v.sort();
        v
    };
    let before = snapshot(&syn);
    let manifest = syn.join("manifest.csv");
    let other = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lus"))
        .args(["prepare", "--work-dir", other.path().to_str().unwrap(), "--manifest", manifest.to_str().unwrap()])
        .args(["--config", dir.path().join("run.toml").to_str().unwrap()])
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(snapshot(&syn), before);
}
