use std::path::Path;
use std::process::Command;

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_premotor"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn session_to_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("synth.toml"), "n_trials = 20\nfs = 100.0\nseed = 2\n").unwrap();
    std::fs::write(d.join("mlr.toml"), "model = \"mlr\"\n").unwrap();
    ok(d, &["headmodel", "--leadfield", "lf.bin", "--atlas", "atlas.txt"]);
    ok(d, &["synth", "--config", "synth.toml", "--leadfield", "lf.bin", "--atlas", "atlas.txt", "--out", "raw.bin"]);
    ok(d, &["preprocess", "--in", "raw.bin", "--out", "pre.bin"]);
    ok(d, &["inverse", "--session", "pre.bin", "--leadfield", "lf.bin", "--atlas", "atlas.txt", "--out", "scouts.bin"]);
    ok(d, &["windows", "--session", "scouts.bin", "--window-ms", "150", "--split", "3", "--proportional", "--out", "ds.bin"]);
    ok(d, &["train", "--dataset", "ds.bin", "--config", "mlr.toml", "--out", "m.bin"]);
    let stdout = ok(d, &["predict", "--model", "m.bin", "--dataset", "ds.bin", "--out", "pred.csv"]);
    assert!(stdout.starts_with("CV x "), "{stdout}");

    let atlas = std::fs::read_to_string(d.join("atlas.txt")).unwrap();
    assert_eq!(atlas.lines().count(), 62);
    let pred = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    let mut lines = pred.lines();
    assert_eq!(lines.next(), Some("trial,pred_x,pred_y,pred_z,true_x,true_y,true_z"));
    // Two test trials of 20, onset..=end at 100 Hz covers 201 rows each.
    assert_eq!(lines.count(), 402);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["headmodel", "--leadfield", "lf.bin", "--atlas", "atlas.txt"]);
    let out = run(d, &["inverse", "--session", "missing.bin", "--leadfield", "lf.bin", "--atlas", "atlas.txt", "--alpha=-2", "--out", "x.bin"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
    let out = run(d, &["windows", "--session", "missing.bin", "--out", "x.bin"]);
    assert!(!out.status.success());
}
