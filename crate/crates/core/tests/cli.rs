use std::path::Path;
use std::process::{Command, Output};

fn opticnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opticnet"))
        .args(args)
        .current_dir(cwd)
        .env("OPTICNET_THREADS", "1")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn audit_prints_the_census() {
    let dir = tempfile::tempdir().unwrap();
    let o = opticnet(&["audit"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("12,378,304"), "{out}");
    assert!(out.contains("5,248"));
    assert!(out.contains("(differs)"));
}

#[test]
fn bad_flags_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = opticnet(&["audit", "--variant", "resnet"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("resnet"));
    let o = opticnet(
        &["train", "--data", "missing-dir", "--epochs", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = opticnet(
        &["train", "--synthetic", "--set", "lerning_rate=1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let o = opticnet(
        &["export-features", "--stage", "5", "--input-size", "32"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = opticnet(
        &[
            "synth",
            "--classes",
            "2",
            "--per-class",
            "4",
            "--size",
            "32",
            "--out",
            "data",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_dir(d.join("data/class_00")).unwrap().count(),
        4
    );

    let o = opticnet(
        &[
            "train",
            "--data",
            "data",
            "--variant",
            "opticnet47",
            "--input-size",
            "32",
            "--epochs",
            "2",
            "--batch-size",
            "4",
            "--run-dir",
            "run",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["log.csv", "best.optn", "report.txt", "run.cfg"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(d.join("run/log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let o = opticnet(
        &["eval", "--checkpoint", "run/best.optn", "--data", "data"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).to_lowercase().contains("accuracy"));

    // Mismatched architecture: checkpoint error naming a layer.
    let o = opticnet(
        &[
            "eval",
            "--checkpoint",
            "run/best.optn",
            "--data",
            "data",
            "--variant",
            "opticnet63",
            "--input-size",
            "32",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("stage1/block/unit3"), "{}", stderr(&o));
}

#[test]
fn zero_epochs_writes_a_header_only_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = opticnet(
        &[
            "train",
            "--synthetic",
            "--synth-classes",
            "2",
            "--synth-per-class",
            "2",
            "--variant",
            "47",
            "--input-size",
            "32",
            "--epochs",
            "0",
            "--run-dir",
            "r",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("r/log.csv")).unwrap();
    assert_eq!(log.trim(), "epoch,lr,train_loss,train_acc,val_loss,val_acc");
}

#[test]
fn config_file_round_trips_through_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("small.cfg"),
        "variant = opticnet47\ninput_size = 32\nepochs = 1\nbatch_size = 4\nsynthetic = true\nsynth_classes = 2\nsynth_per_class = 4\n",
    )
    .unwrap();
    let o = opticnet(&["train", "--config", "small.cfg", "--run-dir", "r"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let saved = std::fs::read_to_string(d.join("r/run.cfg")).unwrap();
    assert!(saved.contains("variant = opticnet47"));
    assert!(saved.contains("input_size = 32"));
    let o = opticnet(&["train", "--config", "missing.cfg"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_layers_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = opticnet(
        &[
            "gradcheck",
            "--suite",
            "layers",
            "--seeds",
            "1",
            "--csv",
            "g.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}

#[test]
fn export_features_writes_three_records() {
    let dir = tempfile::tempdir().unwrap();
    let o = opticnet(
        &[
            "export-features",
            "--stage",
            "2",
            "--variant",
            "47",
            "--input-size",
            "32",
            "--out",
            "f.optn",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let records =
        opticnet::checkpoint::decode(&std::fs::read(dir.path().join("f.optn")).unwrap()).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0].shape.h, 8);
}
