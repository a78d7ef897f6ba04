use std::path::Path;
use std::process::{Command, Output};

fn avsep(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_avsep")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "avsep {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_separate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    avsep(&["synth-data", "--out", s(&data), "--categories", "2", "--clips-per-category", "2", "--seed", "3"]);
    assert!(data.join("1-chord/000.wav").exists());

    let train_args = [
        "train", "--data", s(&data), "--out", s(&run), "--variant", "fm", "--base-channels", "8",
        "--batch-size", "1", "--steps", "2", "--checkpoint-every", "1",
    ];
    avsep(&train_args);
    let ckpt = run.join("final.ckpt");
    assert!(ckpt.exists() && run.join("step-000002.ckpt").exists());
    let log = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(log.starts_with("step,loss,lr,wall_time"));
    assert_eq!(log.lines().count(), 3);

    avsep(&["train", "--data", s(&data), "--out", s(&run), "--resume", s(&run.join("step-000001.ckpt")), "--steps", "2"]);
    // `--steps` is the total, so the resumed run redoes step 2 exactly.
    let log = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let rows: Vec<Vec<&str>> = log.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3, "{log}");
    assert_eq!(rows[1][..2], rows[2][..2]);

    let sep = dir.path().join("sep");
    let mix = data.join("1-chord/000.wav");
    avsep(&[
        "separate", "--checkpoint", s(&ckpt), "--mixture", s(&mix), "--out", s(&sep), "--category", "1",
        "--category", "2", "--steps", "2", "--dump-spectrograms",
    ]);
    for k in 0..2 {
        assert!(sep.join(format!("source-{k}.wav")).exists());
        assert!(sep.join(format!("source-{k}.spec")).exists());
    }

    let metrics = dir.path().join("metrics.csv");
    let out = avsep(&[
        "evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--mixtures", "2", "--steps", "1", "--out", s(&metrics),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mixture"));
    assert!(std::fs::read_to_string(&metrics).unwrap().lines().count() > 1);

    let sweep = dir.path().join("sweep.csv");
    avsep(&[
        "sweep-steps", "--checkpoint", s(&ckpt), "--data", s(&data), "--mixtures", "1", "--grid", "1,2", "--out", s(&sweep),
    ]);
    assert_eq!(std::fs::read_to_string(&sweep).unwrap().lines().count(), 3);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_avsep"))
        .args(["evaluate", "--checkpoint", s(&dir.path().join("missing.ckpt")), "--data", s(dir.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
