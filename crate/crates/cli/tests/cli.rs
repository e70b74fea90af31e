use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 12] = [
    "--set",
    "train.epochs=1",
    "--set",
    "train.batch_size=4",
    "--set",
    "network.base_widths=[4,8]",
    "--set",
    "network.depth=2",
    "--set",
    "eval.iterations=2",
    "--set",
    "train.val_fraction=0.25",
];

fn fanet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fanet"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FANET_DEVICE")
        .output()
        .unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn synth(dir: &Path) -> String {
    let data = dir.join("data");
    assert_ok(&fanet(
        &["synth-gen", "--seed", "3", "--set", "dataset.synthetic.train=8", "--set", "dataset.synthetic.test=3", "--set", "dataset.synthetic.size=16"],
        &data,
    ));
    data.join("manifest.txt").to_string_lossy().into_owned()
}

#[test]
fn train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let run = dir.path().join("run");
    let mut args = vec!["train", "--dataset", manifest.as_str(), "--export-masks"];
    args.extend(TINY);
    assert_ok(&fanet(&args, &run));
    for f in ["config.toml", "checkpoint_best.ckpt", "checkpoint_last.ckpt", "train_log.csv", "mask_store.bin"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert!(fs::read_dir(run.join("masks")).unwrap().count() > 0);
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let ckpt = run.join("checkpoint_best.ckpt").to_string_lossy().into_owned();
    let inferred = dir.path().join("infer");
    assert_ok(&fanet(
        &["infer", "--dataset", manifest.as_str(), "--checkpoint", ckpt.as_str(), "--iterations", "3", "--save-iterations"],
        &inferred,
    ));
    let masks: Vec<_> = fs::read_dir(inferred.join("masks")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(masks.len(), 3);
    for m in &masks {
        let img = image::open(m).unwrap().to_luma8();
        assert!(img.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    }
    let trace = fs::read_to_string(inferred.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3 * 4);

    let scored = dir.path().join("eval");
    assert_ok(&fanet(&["eval", "--dataset", manifest.as_str(), "--checkpoint", ckpt.as_str()], &scored));
    assert!(fs::read_to_string(scored.join("report.csv")).unwrap().contains("F1"));
}

#[test]
fn synthetic_generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        synth(d);
    }
    let manifest = fs::read_to_string(a.join("data/manifest.txt")).unwrap();
    assert_eq!(manifest, fs::read_to_string(b.join("data/manifest.txt")).unwrap());
    for line in manifest.lines().filter(|l| l.starts_with("train\t") || l.starts_with("test\t")) {
        let image = line.split('\t').nth(2).unwrap();
        assert_eq!(fs::read(a.join("data").join(image)).unwrap(), fs::read(b.join("data").join(image)).unwrap());
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let code = |o: Output| o.status.code();
    assert_eq!(code(fanet(&["train", "--dataset", "/nonexistent/manifest.txt"], &out)), Some(2));
    assert_eq!(code(fanet(&["train", "--set", "train.no_such_key=1"], &out)), Some(2));
    assert_eq!(code(fanet(&["train", "--set", "train.epochs=0"], &out)), Some(2));
    assert_eq!(code(fanet(&["frobnicate"], &out)), Some(2));
    let bad_config = dir.path().join("bad.toml");
    fs::write(&bad_config, "[train\nepochs = 3").unwrap();
    assert_eq!(code(fanet(&["train", "--config", bad_config.to_str().unwrap()], &out)), Some(2));
    let gpu = Command::new(env!("CARGO_BIN_EXE_fanet"))
        .args(["synth-gen", "--out"])
        .arg(&out)
        .env("FANET_DEVICE", "cuda")
        .output()
        .unwrap();
    assert_eq!(gpu.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.ckpt");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let o = fanet(
        &["eval", "--set", "dataset.synthetic.train=2", "--set", "dataset.synthetic.test=2", "--set", "dataset.synthetic.size=16", "--checkpoint", bogus.to_str().unwrap()],
        &dir.path().join("o"),
    );
    assert_eq!(o.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}
