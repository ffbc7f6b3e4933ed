use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alphafill")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(dir: &Path) {
    ok(dir, &["synth", "--count", "2", "--width", "24", "--height", "24", "--out-dir", "data"]);
}

#[test]
fn version_is_json() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["--version"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["name"], "alphafill");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn every_subcommand_has_help() {
    let d = tempfile::tempdir().unwrap();
    for cmd in [
        "composite", "pad", "degrade", "aeq-train", "aeq-score", "pretrain", "adapter-train", "inpaint", "bench",
        "grad-check", "synth",
    ] {
        let out = ok(d.path(), &[cmd, "--help"]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("--config"), "{cmd}");
    }
}

#[test]
fn usage_errors_exit_2_and_domain_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path());
    for args in [
        &["frobnicate"][..],
        &["pad", "--bogus"],
        &["pad", "--image", "data/img_0000.png"],
        &["pad", "--image", "data/img_0000.png", "--out", "p.png", "--set", "nope=1"],
        &["pad", "--image", "data/img_0000.png", "--out", "p.png", "--set", "expansion=\"wide\""],
        &["composite", "--image", "data/img_0000.png", "--out", "c.png", "--background", "mauve"],
        &["grad-check", "--target", "everything"],
    ] {
        let out = run(d.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    let out = run(d.path(), &["composite", "--image", "missing.png", "--out", "c.png"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.png"));
    let out = run(d.path(), &["inpaint", "--model", "data/img_0000.png", "--image", "data/img_0000.png",
        "--mask", "data/masks/img_0000.png", "--out", "o.png"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p);
    std::fs::write(p.join("black.json"), r#"{"image": "data/img_0000.png", "background": "black"}"#).unwrap();
    ok(p, &["composite", "--out", "default.png", "--image", "data/img_0000.png"]);
    ok(p, &["composite", "--out", "white.png", "--image", "data/img_0000.png", "--background", "white"]);
    ok(p, &["composite", "--config", "black.json", "--out", "file.png"]);
    ok(p, &["composite", "--config", "black.json", "--out", "flag.png", "--background", "white"]);
    ok(p, &["composite", "--config", "black.json", "--out", "set.png", "--set", "background=\"white\""]);
    let read = |n: &str| std::fs::read(p.join(n)).unwrap();
    assert_eq!(read("default.png"), read("white.png"));
    assert_ne!(read("file.png"), read("white.png"));
    assert_eq!(read("flag.png"), read("white.png"));
    assert_eq!(read("set.png"), read("white.png"));
    let side: serde_json::Value = serde_json::from_slice(&read("flag.png.json")).unwrap();
    assert_eq!(side["command"], "composite");
    assert_eq!(side["config"]["background"], "white");
}

#[test]
fn synth_writes_a_runnable_suite() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p);
    let out = ok(p, &["bench", "--manifest", "data/suite.json", "--model", "grey-fill", "--out-dir", "b"]);
    let aggs: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(aggs.as_array().unwrap().len(), 2);
    for f in ["report.csv", "report.json", "psnr.svg", "ssim.svg", "config.json"] {
        assert!(p.join("b").join(f).exists(), "{f}");
    }
}

#[test]
fn degrade_writes_image_and_label() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p);
    ok(p, &["degrade", "--image", "data/img_0001.png", "--out", "d.png", "--label-out", "l.png", "--mode",
        "solid-fill-dilate", "--dilation", "5"]);
    let img = alphafill::rgba::load_png(p.join("d.png")).unwrap();
    assert_eq!(img.dims(), (24, 24));
    assert!(p.join("l.png").exists() && p.join("d.png.json").exists());
}

#[test]
fn grad_check_reports_each_target() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["grad-check", "--target", "aeq", "--per-tensor", "2"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["aeq"]["passed"], true);
    assert!(v.get("adapter").is_none());
}
