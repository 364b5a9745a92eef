use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use odseg::data::synthetic::write_drishti_fixture;
use odseg::engine::Checkpoint;

fn odseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn audit_exit_codes() {
    let ok = odseg(&["audit", "--skip-mode", "add"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("audited rows: 20"));
    assert_eq!(
        odseg(&["audit", "--skip-mode", "sideways"]).status.code(),
        Some(2)
    );
    assert_eq!(odseg(&["audit", "--side", "100"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "not = [valid").unwrap();
    assert_eq!(odseg(&["audit", "--spec", s(&bad)]).status.code(), Some(2));

    let out = dir.path().join("audit");
    assert_eq!(odseg(&["audit", "--out", s(&out)]).status.code(), Some(0));
    let spec = out.join("spec.toml");
    assert!(out.join("audit.csv").is_file());
    assert_eq!(odseg(&["audit", "--spec", s(&spec)]).status.code(), Some(0));
}

#[test]
fn usage_and_data_errors() {
    assert_eq!(odseg(&[]).status.code(), Some(2));
    assert_eq!(odseg(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = dir.path().join("out");
    let o = odseg(&[
        "train",
        "--dataset-root",
        s(&missing),
        "--out",
        s(&out),
        "--side",
        "32",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists(), "no outputs before data loads");

    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "epochs = 2\nmomentum = 0.9\n").unwrap();
    let o = odseg(&["train", "--dataset-root", s(&missing), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let img = dir.path().join("x.png");
    image::RgbImage::new(8, 8).save(&img).unwrap();
    let o = odseg(&["predict", "--checkpoint", s(&junk), "--image", s(&img)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn train_eval_predict_overlay_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("drishti");
    write_drishti_fixture(&root, 40, 36).unwrap();
    let run = dir.path().join("run");
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        "epochs = 1\nbatch_size = 4\nskip_mode = \"add\"\ninput_side = 32\n",
    )
    .unwrap();

    let o = odseg(&[
        "train",
        "--dataset-root",
        s(&root),
        "--config",
        s(&cfg),
        "--out",
        s(&run),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "checkpoint.ckpt",
        "last.ckpt",
        "history.csv",
        "config.toml",
        "spec.toml",
        "manifest.tsv",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpt = run.join("checkpoint.ckpt");
    assert_eq!(Checkpoint::load(&ckpt).unwrap().meta.epoch, 1);

    let ev = dir.path().join("eval");
    let o = odseg(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset-root",
        s(&root),
        "--out",
        s(&ev),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("51 images"));
    let first = fs::read(ev.join("eval_test.csv")).unwrap();
    odseg(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset-root",
        s(&root),
        "--out",
        s(&ev),
    ]);
    assert_eq!(
        first,
        fs::read(ev.join("eval_test.csv")).unwrap(),
        "evaluation is reproducible"
    );

    let o = odseg(&["report", s(&ev.join("eval_test.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("eval_test.json"));

    let img = root.join("Test/Images/drishtiGS_060.png");
    let pred = dir.path().join("pred");
    let o = odseg(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&img),
        "--out",
        s(&pred),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("CDR"));
    let mask = image::open(pred.join("drishtiGS_060_mask.png")).unwrap();
    assert_eq!((mask.width(), mask.height()), (40, 36));

    let ov = dir.path().join("overlay");
    let ids = "drishtiGS_001,drishtiGS_070";
    let o = odseg(&[
        "overlay",
        "--checkpoint",
        s(&ckpt),
        "--dataset-root",
        s(&root),
        "--ids",
        ids,
        "--out",
        s(&ov),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let panel = image::open(ov.join("overlay_drishtiGS_070.png")).unwrap();
    assert_eq!((panel.width(), panel.height()), (120, 36));

    let ov2 = dir.path().join("overlay2");
    let o = odseg(&[
        "overlay",
        "--checkpoint",
        s(&ckpt),
        "--dataset-root",
        s(&root),
        "--ids",
        "nope",
        "--out",
        s(&ov2),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!ov2.exists());

    let o = odseg(&[
        "train",
        "--dataset-root",
        s(&root),
        "--config",
        s(&cfg),
        "--out",
        s(&run),
        "--overfit-one",
        "nope",
    ]);
    assert_eq!(o.status.code(), Some(3));
}
