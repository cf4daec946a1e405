use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smokecascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smokecascade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let video = dir.join(name);
    let o = smokecascade(&[
        "fixture", "--out", p(&video), "--seed", seed, "--width", "320", "--height", "180", "--frames", "40",
        "--smoky", "1", "--smoke-only", "1", "--decoys", "1", "--video-id", name,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    video
}

#[test]
fn run_then_evaluate_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let video = fixture(dir.path(), "cam_a", "3");
    let out = dir.path().join("out");
    let o = smokecascade(&["run", "--video", p(&video), "--out", p(&out), "--no-refiner"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("cam_a:"));
    let verdicts = out.join("cam_a.verdicts.jsonl");
    assert_eq!(fs::read_to_string(&verdicts).unwrap().lines().count(), 40);
    assert!(out.join("cam_a.detections.jsonl").exists());

    let report = dir.path().join("report.json");
    let o = smokecascade(&[
        "evaluate", "--verdicts", p(&out), "--video", p(&video), "--thresholds", "0.2,0.5", "--out", p(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let c = &json["counts"];
    let total = ["tp", "fp", "tn", "fn"].iter().map(|k| c[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(total, 40);
    assert_eq!(json["sweep"].as_array().unwrap().len(), 2);
    assert!(c["tp"].as_u64().unwrap() > 0);

    let overlays = dir.path().join("overlays");
    let o = smokecascade(&["render", "--video", p(&video), "--verdicts", p(&verdicts), "--out", p(&overlays)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let n = fs::read_dir(&overlays).unwrap().count();
    assert!(n > 0 && n < 40);
}

#[test]
fn evaluate_rejects_mismatched_video_ids() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture(dir.path(), "cam_a", "1");
    let b = fixture(dir.path(), "cam_b", "2");
    let out = dir.path().join("out");
    let o = smokecascade(&["run", "--video", p(&a), "--out", p(&out), "--no-refiner"]);
    assert!(o.status.success());
    let report = dir.path().join("report.json");
    let o = smokecascade(&["evaluate", "--verdicts", p(&out), "--video", p(&b), "--out", p(&report)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("cam_a") && err.contains("cam_b"), "{err}");
    assert!(!report.exists());
}

#[test]
fn budget_reports_the_light_detector() {
    let o = smokecascade(&["budget"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let params: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("parameters:"))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((1_100_000..=1_300_000).contains(&params), "{text}");
    assert!(text.contains("GFLOPs"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(smokecascade(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(smokecascade(&[]).status.code(), Some(1));
    assert_eq!(smokecascade(&["evaluate", "--verdicts", "x", "--agg", "median"]).status.code(), Some(1));
    let help = smokecascade(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("train-refiner"));
}

#[test]
fn every_subcommand_documents_its_flags() {
    let cases: &[(&str, &[&str])] = &[
        ("fixture", &["--out", "--seed", "--script", "--frames", "--smoky", "--smoke-only", "--decoys"]),
        ("detect", &["--video", "--out", "--config", "--smoke-thresh"]),
        ("match", &["--video", "--out", "--l-dist"]),
        ("collect-clips", &["--video", "--out", "--k"]),
        ("train-refiner", &["--clips", "--out", "--refiner", "--epochs", "--lr", "--until-accuracy"]),
        ("run", &["--video", "--out", "--refiner", "--no-matching", "--no-refiner", "--jobs", "--seed"]),
        ("evaluate", &["--verdicts", "--segments", "--video", "--agg", "--thresholds", "--out"]),
        ("render", &["--video", "--verdicts", "--detections", "--out"]),
        ("budget", &["--arch", "--size"]),
    ];
    for (cmd, flags) in cases {
        let o = smokecascade(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let text = stdout(&o);
        for f in *flags {
            assert!(text.contains(f), "{cmd} help lacks {f}:\n{text}");
        }
    }
}

#[test]
fn missing_inputs_exit_two_and_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = smokecascade(&["run", "--video", p(&dir.path().join("nope")), "--out", p(&out), "--no-refiner"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());

    let o = smokecascade(&["budget", "--arch", p(&dir.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_commands_remove_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let video = fixture(dir.path(), "cam_a", "1");
    let out = dir.path().join("out");
    let o = smokecascade(&["run", "--video", p(&video), "--out", p(&out), "--no-refiner"]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(video.join("frame_000039.png"), b"not a png").unwrap();
    let overlays = dir.path().join("overlays");
    let o = smokecascade(&[
        "render", "--video", p(&video), "--verdicts", p(&out.join("cam_a.verdicts.jsonl")), "--out", p(&overlays),
    ]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!overlays.exists());

    let rerun = dir.path().join("rerun");
    let o = smokecascade(&["run", "--video", p(&video), "--out", p(&rerun), "--no-refiner"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!rerun.exists());
}

#[test]
fn refiner_settings_are_checked_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let video = fixture(dir.path(), "cam_a", "1");
    let clips = dir.path().join("clips");
    let o = smokecascade(&["collect-clips", "--video", p(&video), "--out", p(&clips)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("clips"));
    let ckpt = dir.path().join("models/head.ckpt");
    let o = smokecascade(&[
        "train-refiner", "--clips", p(&clips), "--out", p(&ckpt), "--width", "2", "--epochs", "1", "--refiner",
        "prefix3d", "--k", "12",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!dir.path().join("models").exists());
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let video = fixture(dir.path(), "cam_a", "5");
    let cfg = dir.path().join("cascade.toml");
    fs::write(&cfg, "refiner_enabled = false\nsmoke_threshold = 1.0\n").unwrap();
    let out = dir.path().join("out");
    let o = smokecascade(&["run", "--config", p(&cfg), "--video", p(&video), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("cam_a: 0/40"));

    fs::write(&cfg, "refiner_enabled = false\nsmoke_treshold = 0.3\n").unwrap();
    let o = smokecascade(&["run", "--config", p(&cfg), "--video", p(&video), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("smoke_treshold"));
}
