use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepam::cascade::{ArchConfig, CascadeModel, Task};
use deepam::image::{load_image, save_image, Image};
use deepam::nn::Checkpoint;
use deepam::synth::{degrade_depth, derive_seed};

fn deepam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepam")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = deepam(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn clean_dir(root: &Path) -> PathBuf {
    let dir = root.join("clean");
    std::fs::create_dir_all(&dir).unwrap();
    for k in 0..3 {
        let img = Image::from_fn(40, 40, |y, x| {
            let base = if (x + 5 * k) % 16 < 8 { 70.0 } else { 180.0 };
            (base + 25.0 * ((y + k) as f64 * 0.3).sin()).round()
        });
        save_image(&img, dir.join(format!("img{k}.pgm"))).unwrap();
    }
    dir
}

#[test]
fn synth_without_noise_copies_clean_and_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let input = clean_dir(t.path());
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth", "--in", s(&input), "--out", s(out), "--sigma", "0", "--seed", "3", "--count", "20", "--patch-size", "16"]);
    }
    assert_eq!(load_image(a.join("pairs/img1_input.pfm")).unwrap(), load_image(a.join("pairs/img1_clean.pfm")).unwrap());
    assert_eq!(std::fs::read(a.join("patches.damp")).unwrap(), std::fs::read(b.join("patches.damp")).unwrap());
    // re-running from the snapshot reproduces the patch set
    let c = t.path().join("c");
    ok(&["synth", "--config", s(&a.join("config.resolved")), "--out", s(&c)]);
    assert_eq!(std::fs::read(a.join("patches.damp")).unwrap(), std::fs::read(c.join("patches.damp")).unwrap());
}

#[test]
fn synth_depth_inputs_are_degraded_ground_truth() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    ok(&["synth", "--task", "sr-depth", "--scenes", "2", "--scene-size", "32", "--factor", "4", "--out", s(&out), "--count", "6", "--patch-size", "16"]);
    let depth = load_image(out.join("pairs/scene001_clean.pfm")).unwrap();
    let input = load_image(out.join("pairs/scene001_input.pfm")).unwrap();
    let expected = degrade_depth(&depth, 4).unwrap();
    // PFM stores f32
    assert!(input.data().iter().zip(expected.data()).all(|(a, b)| (a - b).abs() < 1e-3));
    assert_eq!(load_image(out.join("pairs/scene001_guide.pfm")).unwrap().channels(), 3);
}

#[test]
fn unreadable_inputs_are_listed() {
    let t = tempfile::tempdir().unwrap();
    let input = clean_dir(t.path());
    std::fs::write(input.join("broken.pgm"), b"P5\n9 9\n255\n").unwrap();
    let out = deepam(&["synth", "--in", s(&input), "--out", s(&t.path().join("o"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.pgm"));
}

fn tiny_patches(root: &Path) -> PathBuf {
    let out = root.join("set");
    let input = clean_dir(root);
    ok(&["synth", "--in", s(&input), "--out", s(&out), "--seed", "1", "--count", "12", "--patch-size", "12"]);
    out.join("patches.damp")
}

const TINY: [&str; 8] = ["--arch", "tiny", "--batch", "4", "--lr", "0.01", "--quiet", "true"];

#[test]
fn zero_epochs_saves_the_initialization() {
    let t = tempfile::tempdir().unwrap();
    let data = tiny_patches(t.path());
    let out = t.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--epochs", "0", "--seed", "7", "--out", s(&out)];
    args.extend(TINY);
    ok(&args);
    let saved = Checkpoint::load(out.join("model.damw")).unwrap();
    let init = CascadeModel::new(ArchConfig::tiny(Task::Denoise), derive_seed(7, 0)).unwrap().to_checkpoint(false, &[]);
    for (name, values) in &init.tensors {
        let got = saved.tensor(name).unwrap();
        assert!(values.iter().zip(got).all(|(a, b)| (*a as f32) as f64 == *b), "{name}");
    }
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let t = tempfile::tempdir().unwrap();
    let data = tiny_patches(t.path());
    let run = |out: &Path, epochs: &str, resume: Option<&Path>| {
        let mut args = vec!["train", "--data", s(&data), "--epochs", epochs, "--seed", "2", "--out", s(out)];
        args.extend(TINY);
        if let Some(r) = resume {
            args.extend(["--resume", s(r)]);
        }
        ok(&args);
    };
    let (full, part) = (t.path().join("full"), t.path().join("part"));
    run(&full, "3", None);
    run(&part, "1", None);
    run(&part, "3", Some(&part.join("epoch_001.damw")));
    let tail = |p: &Path| {
        std::fs::read_to_string(p.join("train_log.csv")).unwrap().lines().filter(|l| l.starts_with("2,")).map(String::from).collect::<Vec<_>>()
    };
    assert_eq!(tail(&full), tail(&part));
    assert_eq!(std::fs::read(full.join("model.damw")).unwrap(), std::fs::read(part.join("model.damw")).unwrap());
    assert!(full.join("epoch_003.damw").exists() && full.join("last.damw").exists());
}

#[test]
fn denoise_report_and_task_mismatch() {
    let t = tempfile::tempdir().unwrap();
    let data = tiny_patches(t.path());
    let run = t.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--epochs", "1", "--out", s(&run)];
    args.extend(TINY);
    ok(&args);
    let model = run.join("model.damw");
    let noisy = t.path().join("set/pairs/img0_input.pfm");
    let clean = t.path().join("set/pairs/img0_clean.pfm");
    let out = t.path().join("restored.pfm");
    let report = t.path().join("report.csv");
    ok(&["denoise", "--model", s(&model), "--in", s(&noisy), "--out", s(&out), "--truth", s(&clean), "--report", s(&report)]);
    assert_eq!(load_image(&out).unwrap().shape(), load_image(&noisy).unwrap().shape());
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().next(), Some("psnr,ssim,bmp"));
    assert!(t.path().join("restored.pfm.config.resolved").exists());
    let res = deepam(&["srdepth", "--model", s(&model), "--in", s(&noisy), "--guide", s(&noisy), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("trained for denoise"));
}

#[test]
fn baseline_trace_backends_and_huge_lambda() {
    let t = tempfile::tempdir().unwrap();
    let input = clean_dir(t.path()).join("img2.pgm");
    let fft = t.path().join("fft.pfm");
    let pcg = t.path().join("pcg.pfm");
    ok(&["baseline", "--reg", "l1", "--lambda", "5", "--in", s(&input), "--out", s(&fft)]);
    ok(&["baseline", "--reg", "l1", "--lambda", "5", "--backend", "pcg", "--in", s(&input), "--out", s(&pcg)]);
    let trace = std::fs::read_to_string(t.path().join("fft.pfm.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 8);
    let (a, b) = (load_image(&fft).unwrap(), load_image(&pcg).unwrap());
    let (h, w, _) = a.shape();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            assert!((a.get(0, y, x) - b.get(0, y, x)).abs() < 1e-4 * 255.0);
        }
    }
    let big = t.path().join("big.pfm");
    ok(&["baseline", "--lambda", "1e7", "--in", s(&input), "--out", s(&big)]);
    let (f, u) = (load_image(&input).unwrap(), load_image(&big).unwrap());
    assert!(f.data().iter().zip(u.data()).all(|(p, q)| (p - q).abs() < 0.05));
    // the resolved snapshot repeats the run exactly
    let again = t.path().join("again.pfm");
    ok(&["baseline", "--config", s(&t.path().join("fft.pfm.config.resolved")), "--out", s(&again), "--trace", s(&t.path().join("t2.csv"))]);
    assert_eq!(std::fs::read(&fft).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn invalid_schedule_and_missing_files_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let input = clean_dir(t.path()).join("img0.pgm");
    let out = t.path().join("o.pfm");
    let bad = deepam(&["baseline", "--schedule", "10,0.5,100", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!out.exists());
    let missing = deepam(&["baseline", "--in", s(&t.path().join("nope.pgm")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(4));
    assert_eq!(deepam(&["train", "--bogus"]).status.code(), Some(2));
}

#[test]
fn gradcheck_tiny_passes_and_reports_truncation() {
    let stdout = ok(&["gradcheck", "--scale", "tiny", "--seed", "1"]);
    assert!(stdout.contains("negative control"));
    assert!(stdout.contains("truncated backward"));
    let loose = deepam(&["gradcheck", "--scale", "tiny", "--tol", "1e-12"]);
    assert_eq!(loose.status.code(), Some(3));
}

#[test]
fn bench_solver_schema() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("bench.csv");
    ok(&["bench-solver", "--size", "32x24", "--trials", "2", "--seed", "4", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("trial,height,width,iterations_to_1e-5,residual_at_10,direct_rel_diff,pcg10_seconds,pcg_seconds,direct_seconds")
    );
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 9);
        assert!(cols[5].parse::<f64>().unwrap() < 1e-5);
    }
    let hist = std::fs::read_to_string(t.path().join("bench.history.csv")).unwrap();
    assert!(hist.starts_with("trial,iteration,relative_residual\n0,0,1.000000e0"));
}
