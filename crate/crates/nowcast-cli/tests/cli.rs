//! End-to-end tests driving the compiled `nowcast` binary: artifact
//! existence and shapes, byte-level determinism of reruns, seed
//! precedence, and exit codes for usage errors.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nowcast"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn nowcast");
    assert!(
        out.status.success(),
        "nowcast {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small square sequence long enough for one offset-4 window.
fn synth(dir: &Path, seed: u64, frames: u32) -> PathBuf {
    let path = dir.join(format!("s{seed}.w4cf"));
    run_ok(&[
        "synth",
        "--seed",
        &seed.to_string(),
        "--frames",
        &frames.to_string(),
        "--rows",
        "8",
        "--cols",
        "8",
        "--out",
        path.to_str().unwrap(),
    ]);
    path
}

fn tiny_train(dir: &Path, data: &Path) -> PathBuf {
    let ckpt = dir.join("ckpt");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--arch",
        "miniature",
        "--epochs",
        "1",
        "--batch-size",
        "2",
        "--windows",
        "2",
        "--seed",
        "7",
    ]);
    ckpt
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), 7, 6);
    let b = dir.path().join("again.w4cf");
    run_ok(&["synth", "--seed", "7", "--frames", "6", "--rows", "8", "--cols", "8", "--out", b.to_str().unwrap()]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = synth(dir.path(), 8, 6);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn synth_env_seed_matches_flag_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let via_flag = synth(dir.path(), 21, 5);

    let via_env = dir.path().join("env.w4cf");
    let out = bin()
        .env("NOWCAST_SEED", "21")
        .args(["synth", "--frames", "5", "--rows", "8", "--cols", "8", "--out", via_env.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&via_flag).unwrap(), std::fs::read(&via_env).unwrap());

    // An explicit --seed beats the environment.
    let flag_beats_env = dir.path().join("fbe.w4cf");
    let out = bin()
        .env("NOWCAST_SEED", "99")
        .args(["synth", "--seed", "21", "--frames", "5", "--rows", "8", "--cols", "8", "--out", flag_beats_env.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&via_flag).unwrap(), std::fs::read(&flag_beats_env).unwrap());
}

#[test]
fn zero_frames_is_a_usage_error() {
    let out = bin()
        .args(["synth", "--seed", "1", "--frames", "0", "--out", "x.w4cf"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "train",
            "--data",
            dir.path().join("nope.w4cf").to_str().unwrap(),
            "--out",
            dir.path().join("ckpt").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_writes_checkpoint_and_losses() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 7, 24);
    let ckpt = tiny_train(dir.path(), &data);
    for k in 1..=4 {
        assert!(ckpt.join(format!("model_offset{k}.w4cp")).exists());
    }
    assert!(ckpt.join("manifest.txt").exists());
    let loss = std::fs::read_to_string(ckpt.join("loss.csv")).unwrap();
    assert!(loss.starts_with("offset,epoch,loss\n"));
    assert_eq!(loss.lines().count(), 1 + 4); // header + 4 offsets x 1 epoch
}

#[test]
fn forecast_pipeline_artifacts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 7, 24);
    let ckpt = tiny_train(dir.path(), &data);

    let fc = |out: &Path| {
        run_ok(&[
            "forecast",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    };
    let out1 = dir.path().join("fc1");
    let out2 = dir.path().join("fc2");
    fc(&out1);
    fc(&out2);

    for name in ["bt_norm.w4cf", "rain.w4cf", "cumulative.w4cf", "cdf.csv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert!(!a.is_empty(), "{name} empty");
        assert_eq!(a, b, "{name} not byte-reproducible");
    }

    let cdf = std::fs::read_to_string(out1.join("cdf.csv")).unwrap();
    assert!(cdf.starts_with("roi_id,threshold_mm,probability\n"));
    let last = cdf.lines().last().unwrap();
    assert!(last.ends_with("1.000000"), "CDF must end at probability 1: {last}");
}

#[test]
fn forecast_persistence_baseline_repeats_last_frame() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 7, 24);
    let ckpt = tiny_train(dir.path(), &data);
    let out = dir.path().join("fp");
    run_ok(&[
        "forecast",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--baseline",
        "persistence",
    ]);
    let seq = nowcast::io::load_frames(&out.join("bt_norm.w4cf")).unwrap();
    assert_eq!(seq.len(), 16);
    for f in &seq.frames()[1..] {
        assert_eq!(f.data(), seq.frames()[0].data());
    }
}

#[test]
fn events_csv_from_forecast_rain() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 7, 24);
    let ckpt = tiny_train(dir.path(), &data);
    let out = dir.path().join("fc");
    run_ok(&[
        "forecast",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--baseline",
        "persistence",
    ]);
    let csv = dir.path().join("events.csv");
    run_ok(&[
        "events",
        "--rain",
        out.join("rain.w4cf").to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--sequence-id",
        "case-7",
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with(nowcast::events::EVENTS_CSV_HEADER));
}

#[test]
fn eval_writes_metrics_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let pred = synth(dir.path(), 5, 16);
    let truth = synth(dir.path(), 6, 16);
    let out = dir.path().join("ev");
    run_ok(&[
        "eval",
        "--pred",
        pred.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,lead_time,value\n"));
    assert!(metrics.contains("rmse,16,"));
    assert!(metrics.contains("pod_0.5,1,"));
    // 8x8 frames are below the SSIM window, so no ssim rows or plot.
    assert!(!metrics.contains("ssim"));
    assert!(out.join("rmse.ppm").exists());
}

#[test]
fn eval_comparison_experiment_orders_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    run_ok(&[
        "eval",
        "--experiment",
        "comparison",
        "--exp-windows",
        "30",
        "--exp-epochs",
        "10",
        "--exp-lr",
        "4e-3",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(text.starts_with("model,scope,index,rmse_kelvin,ssim\n"));
    let rmse_of = |model: &str, lead: usize| -> f64 {
        let prefix = format!("{model},lead,{lead},");
        let line = text.lines().find(|l| l.starts_with(&prefix)).unwrap();
        line.split(',').nth(3).unwrap().parse().unwrap()
    };
    for lead in 1..=16 {
        assert!(
            rmse_of("convgru", lead) < rmse_of("persistence", lead),
            "lead {lead}: convgru {} !< persistence {}",
            rmse_of("convgru", lead),
            rmse_of("persistence", lead)
        );
    }
}

#[test]
fn calibrate_recovers_known_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    let (alpha, beta) = (0.02, 1.4);
    let mut text = String::from("t_kelvin,r_mm_h\n");
    for i in 0..40 {
        let t = 210.0 + f64::from(i) * 2.0;
        let r = alpha * (300.0f64 - t).powf(beta);
        text.push_str(&format!("{t},{r}\n"));
    }
    std::fs::write(&pairs, text).unwrap();
    let out = run_ok(&["calibrate", "--pairs", pairs.to_str().unwrap()]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let grab = |key: &str| -> f64 {
        stdout
            .lines()
            .find(|l| l.starts_with(key))
            .unwrap()
            .split('=')
            .nth(1)
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    assert!((grab("alpha") - alpha).abs() < 1e-6);
    assert!((grab("beta") - beta).abs() < 1e-6);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("nowcast.conf");
    std::fs::write(&cfg, "seed = 21\n# comment\n").unwrap();
    let via_cfg = dir.path().join("cfg.w4cf");
    run_ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "synth",
        "--frames",
        "5",
        "--rows",
        "8",
        "--cols",
        "8",
        "--out",
        via_cfg.to_str().unwrap(),
    ]);
    let direct = synth(dir.path(), 21, 5);
    assert_eq!(std::fs::read(&via_cfg).unwrap(), std::fs::read(&direct).unwrap());
}
