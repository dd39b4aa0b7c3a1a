//! Command-line front end for the nowcasting pipeline: synthesize data,
//! train and fine-tune the cascade, run forecasts through the rainfall
//! transform, detect extreme events, and evaluate.

mod config;
mod plot;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nowcast::events::{
    export_events_csv, extract_events, label_components_18, select_top_events, threshold_volume,
    EVENT_THRESHOLD_MM_H, FRAME_MINUTES,
};
use nowcast::experiments::{
    run_comparison, run_transfer, ComparisonConfig, TransferConfig,
};
use nowcast::forecast::{
    cascade_predict, fine_tune, load_cascade, persistence_predict, save_cascade, train_cascade,
    CascadeModel, TrainConfig, CASCADE_OFFSETS,
};
use nowcast::grid::{stack_to_volume, Field2D, FrameSequence, Unit};
use nowcast::io::{gen_synthetic, load_frames, make_windows, save_frames, TrainingWindow};
use nowcast::neural::{Arch, CellKind};
use nowcast::preprocess::{denormalize_bt, preprocess_frame, PreprocessConfig};
use nowcast::rainfall::{
    bt_to_rain, calibrate_transform, cumulative_rain, roi_average, to_threshold_cdf,
    upsample_by, write_cdf_csv, RegionOfInterest, TransformCoeffs, UPSAMPLE_FACTOR,
};
use nowcast::verify::{bias, contingency, pod_far_f1, rmse, ssim, SsimConfig, SSIM_WINDOW};

use config::{load_config, resolve_seed, FileConfig};

#[derive(Parser)]
#[command(name = "nowcast", version, about = "Satellite-to-rainfall nowcasting pipeline")]
struct Cli {
    /// Plain-text `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides NOWCAST_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap the worker thread count.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic advecting-blob brightness-temperature file.
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        frames: u32,
        #[arg(long, default_value_t = 252, value_parser = clap::value_parser!(u32).range(1..))]
        rows: u32,
        #[arg(long, default_value_t = 252, value_parser = clap::value_parser!(u32).range(1..))]
        cols: u32,
        /// Output file, or a directory to receive a generated name.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the 4-model staggered cascade on a frame file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cell: Option<String>,
        /// standard | desk | miniature
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Cap the number of training windows per offset.
        #[arg(long)]
        windows: Option<usize>,
    },
    /// Continue training an existing checkpoint on new data.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        windows: Option<usize>,
    },
    /// Run the full forecast pipeline from 4 observed frames.
    Forecast {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// First input frame index within the data file.
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// `persistence` to bypass the learned cascade.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Extract extreme events from a 16-frame rain-rate file.
    Events {
        #[arg(long)]
        rain: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        sequence_id: Option<String>,
    },
    /// Score predictions against truth, or run a scripted experiment.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `comparison` or `transfer`.
        #[arg(long)]
        experiment: Option<String>,
        /// Windows per offset for --experiment runs.
        #[arg(long)]
        exp_windows: Option<usize>,
        #[arg(long)]
        exp_epochs: Option<usize>,
        #[arg(long)]
        exp_lr: Option<f64>,
    },
    /// Fit power-law coefficients from (kelvin, mm/h) sample pairs.
    Calibrate {
        /// CSV of `t_kelvin,r_mm_h` rows.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let file_cfg = load_config(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &file_cfg)?;
    match cli.cmd {
        Cmd::Synth { frames, rows, cols, out } => cmd_synth(seed, frames, rows, cols, &out),
        Cmd::Train { data, out, cell, arch, epochs, batch_size, lr, windows } => cmd_train(
            &file_cfg, seed, &data, &out, cell, arch, epochs, batch_size, lr, windows,
        ),
        Cmd::Finetune { ckpt, data, out, epochs, batch_size, lr, windows } => {
            cmd_finetune(&file_cfg, seed, &ckpt, &data, &out, epochs, batch_size, lr, windows)
        }
        Cmd::Forecast { ckpt, data, out, start, baseline } => {
            cmd_forecast(&file_cfg, &ckpt, &data, &out, start, baseline.as_deref())
        }
        Cmd::Events { rain, out, top, sequence_id } => {
            cmd_events(&file_cfg, &rain, &out, top, sequence_id)
        }
        Cmd::Eval { pred, truth, out, experiment, exp_windows, exp_epochs, exp_lr } => cmd_eval(
            seed,
            pred.as_deref(),
            truth.as_deref(),
            &out,
            experiment.as_deref(),
            exp_windows,
            exp_epochs,
            exp_lr,
        ),
        Cmd::Calibrate { pairs, out } => cmd_calibrate(&pairs, out.as_deref()),
    }
}

fn preprocess_config(cfg: &FileConfig, frame_rows: usize, frame_cols: usize) -> PreprocessConfig {
    let d = PreprocessConfig::default();
    PreprocessConfig {
        norm_divisor: cfg.norm_divisor.unwrap_or(d.norm_divisor),
        // Without an explicit pad size, keep the native frame size so
        // desk-scale data is not blown up to the satellite grid.
        pad_to: cfg.pad_to.unwrap_or(frame_rows.max(frame_cols)),
        mask_fill: cfg.mask_fill.unwrap_or(d.mask_fill),
    }
}

fn parse_cell(cfg: &FileConfig, flag: Option<String>) -> Result<CellKind> {
    let name = flag.or_else(|| cfg.cell.clone()).unwrap_or_else(|| "convgru".into());
    Ok(CellKind::parse(&name)?)
}

fn parse_arch(cfg: &FileConfig, flag: Option<String>) -> Result<Arch> {
    let name = flag.or_else(|| cfg.arch.clone()).unwrap_or_else(|| "desk".into());
    match name.as_str() {
        "standard" => Ok(Arch::standard()),
        "desk" => Ok(nowcast::experiments::desk_arch()),
        "miniature" => Ok(Arch::miniature()),
        other => bail!("unknown arch '{other}' (expected standard, desk, or miniature)"),
    }
}

fn train_config(
    cfg: &FileConfig,
    seed: u64,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: epochs.or(cfg.epochs).unwrap_or(d.epochs),
        batch_size: batch_size.or(cfg.batch_size).unwrap_or(d.batch_size),
        lr: lr.or(cfg.lr).unwrap_or(d.lr),
        seed,
    }
}

fn preprocess_seq(seq: &FrameSequence, pre: &PreprocessConfig) -> Result<FrameSequence> {
    Ok(FrameSequence::new(
        seq.frames()
            .iter()
            .map(|f| preprocess_frame(f, pre))
            .collect::<nowcast::Result<Vec<_>>>()?,
    )?)
}

fn offset_windows(
    seq: &FrameSequence,
    cap: Option<usize>,
) -> Result<Vec<Vec<TrainingWindow>>> {
    let mut out = Vec::with_capacity(4);
    for k in CASCADE_OFFSETS {
        let mut w = make_windows(seq, k)?;
        if let Some(n) = cap {
            w.truncate(n);
        }
        if w.is_empty() {
            bail!(
                "data yields no training windows at offset {k} ({} frames, {} needed)",
                seq.len(),
                4 + 4 * k as usize
            );
        }
        out.push(w);
    }
    Ok(out)
}

fn cmd_synth(seed: u64, frames: u32, rows: u32, cols: u32, out: &Path) -> Result<()> {
    let seq = gen_synthetic(seed, frames as usize, rows as usize, cols as usize)?;
    let path = if out.is_dir() {
        out.join(format!("synth-seed{seed}-f{frames}.w4cf"))
    } else {
        out.to_path_buf()
    };
    save_frames(&seq, &path)?;
    println!(
        "wrote {} frames of {rows}x{cols} kelvin to {}",
        seq.len(),
        path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &FileConfig,
    seed: u64,
    data: &Path,
    out: &Path,
    cell: Option<String>,
    arch: Option<String>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    windows: Option<usize>,
) -> Result<()> {
    let seq = load_frames(data).with_context(|| format!("loading {}", data.display()))?;
    let pre = preprocess_config(cfg, seq.rows(), seq.cols());
    let prepped = preprocess_seq(&seq, &pre)?;
    let cell = parse_cell(cfg, cell)?;
    let arch = parse_arch(cfg, arch)?;
    let tc = train_config(cfg, seed, epochs, batch_size, lr);
    let wins = offset_windows(&prepped, windows)?;
    let (cascade, losses) = train_cascade(&wins, arch, cell, &tc)?;
    save_cascade(&cascade, &pre, out)?;
    write_loss_csv(&out.join("loss.csv"), &losses)?;
    println!(
        "trained {} cascade ({} epochs, {} windows/offset) into {}",
        cell.as_str(),
        tc.epochs,
        wins[0].len(),
        out.display()
    );
    Ok(())
}

fn write_loss_csv(path: &Path, losses: &[Vec<f64>]) -> Result<()> {
    let mut text = String::from("offset,epoch,loss\n");
    for (k, per_epoch) in losses.iter().enumerate() {
        for (e, loss) in per_epoch.iter().enumerate() {
            text.push_str(&format!("{},{},{loss:.8}\n", CASCADE_OFFSETS[k], e + 1));
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_finetune(
    cfg: &FileConfig,
    seed: u64,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    windows: Option<usize>,
) -> Result<()> {
    let seq = load_frames(data)?;
    let pre = preprocess_config(cfg, seq.rows(), seq.cols());
    let cascade = load_cascade(ckpt, &pre)?;
    let prepped = preprocess_seq(&seq, &pre)?;
    let tc = train_config(cfg, seed, epochs, batch_size, lr);
    let wins = offset_windows(&prepped, windows)?;
    let mut tuned = Vec::with_capacity(4);
    let mut losses = Vec::with_capacity(4);
    for (model, w) in cascade.models.iter().zip(&wins) {
        let t = fine_tune(model, w, &tc)?;
        losses.push(t.epoch_losses);
        tuned.push(t.params);
    }
    let tuned: [_; 4] = tuned.try_into().expect("four models");
    save_cascade(&CascadeModel::new(tuned)?, &pre, out)?;
    write_loss_csv(&out.join("loss.csv"), &losses)?;
    println!("fine-tuned cascade from {} into {}", ckpt.display(), out.display());
    Ok(())
}

fn cmd_forecast(
    cfg: &FileConfig,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    start: usize,
    baseline: Option<&str>,
) -> Result<()> {
    let seq = load_frames(data)?;
    if seq.rows() != seq.cols() {
        bail!("forecast expects square frames, got {}x{}", seq.rows(), seq.cols());
    }
    if start + 4 > seq.len() {
        bail!("start {start} + 4 input frames exceeds {} available", seq.len());
    }
    let pre = preprocess_config(cfg, seq.rows(), seq.cols());
    let input = FrameSequence::new(seq.frames()[start..start + 4].to_vec())?;
    let prepped = preprocess_seq(&input, &pre)?;
    let size = seq.rows();

    let bt_norm = match baseline {
        None => {
            let cascade = load_cascade(ckpt, &pre)?;
            cascade_predict(&cascade, &prepped, size)?
        }
        Some("persistence") => {
            let cropped = FrameSequence::new(
                prepped
                    .frames()
                    .iter()
                    .map(|f| nowcast::preprocess::crop_center(f, size))
                    .collect::<nowcast::Result<Vec<_>>>()?,
            )?;
            FrameSequence::new(persistence_predict(&cropped, 16))?
        }
        Some(other) => bail!("unknown baseline '{other}' (expected persistence)"),
    };

    std::fs::create_dir_all(out)?;
    save_frames(&bt_norm, &out.join("bt_norm.w4cf"))?;

    let coeffs = transform_coeffs(cfg)?;
    let rain: Vec<Field2D> = bt_norm
        .frames()
        .iter()
        .map(|f| {
            let kelvin = denormalize_bt(f, &pre)?;
            upsample_by(&bt_to_rain(&kelvin, &coeffs)?, UPSAMPLE_FACTOR)
        })
        .collect::<nowcast::Result<_>>()?;
    save_frames(&FrameSequence::new(rain.clone())?, &out.join("rain.w4cf"))?;

    let cumulative = cumulative_rain(&rain)?;
    save_frames(&FrameSequence::new(vec![cumulative.clone()])?, &out.join("cumulative.w4cf"))?;

    let rois = if cfg.rois.is_empty() {
        vec![RegionOfInterest::new(0, 0, cumulative.rows(), cumulative.cols())?]
    } else {
        cfg.rois.clone()
    };
    let rows: Vec<_> = rois
        .iter()
        .enumerate()
        .map(|(i, roi)| {
            let avg = roi_average(&cumulative, roi)?;
            Ok((i as u32, to_threshold_cdf(avg)?))
        })
        .collect::<nowcast::Result<_>>()?;
    let mut buf = Vec::new();
    write_cdf_csv(&mut buf, &rows)?;
    std::fs::write(out.join("cdf.csv"), buf)?;

    println!(
        "forecast complete: 16 frames, rain grid {}x{}, {} ROI(s), outputs in {}",
        cumulative.rows(),
        cumulative.cols(),
        rois.len(),
        out.display()
    );
    Ok(())
}

fn transform_coeffs(cfg: &FileConfig) -> Result<TransformCoeffs> {
    let d = TransformCoeffs::default();
    Ok(TransformCoeffs::new(cfg.alpha.unwrap_or(d.alpha), cfg.beta.unwrap_or(d.beta))?)
}

fn cmd_events(
    cfg: &FileConfig,
    rain: &Path,
    out: &Path,
    top: Option<usize>,
    sequence_id: Option<String>,
) -> Result<()> {
    let seq = load_frames(rain)?;
    let volume = stack_to_volume(&seq);
    let labels = label_components_18(&threshold_volume(&volume, EVENT_THRESHOLD_MM_H));
    let events = extract_events(&labels, &volume, FRAME_MINUTES)?;
    let k = top.or(cfg.top_events).unwrap_or(5);
    let selected = select_top_events(&events, k);
    let sid = sequence_id
        .or_else(|| cfg.sequence_id.clone())
        .unwrap_or_else(|| "seq-0".into());
    export_events_csv(&selected, &sid, out)?;
    println!(
        "{} component(s), {} exported to {}",
        labels.n_labels,
        selected.len(),
        out.display()
    );
    Ok(())
}

fn ssim_config(truth: &FrameSequence) -> SsimConfig {
    if truth.unit() == Unit::Kelvin {
        return SsimConfig::kelvin();
    }
    let max = truth
        .frames()
        .iter()
        .flat_map(|f| f.data())
        .fold(0.0f32, |a, &b| a.max(b));
    SsimConfig { data_range: f64::from(max).max(1.0) }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    seed: u64,
    pred: Option<&Path>,
    truth: Option<&Path>,
    out: &Path,
    experiment: Option<&str>,
    exp_windows: Option<usize>,
    exp_epochs: Option<usize>,
    exp_lr: Option<f64>,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match experiment {
        Some("comparison") => {
            let mut c = ComparisonConfig::default();
            if let Some(w) = exp_windows {
                c.windows_per_offset = w;
            }
            if let Some(e) = exp_epochs {
                c.epochs = e;
            }
            if let Some(lr) = exp_lr {
                c.lr = lr;
            }
            let report = run_comparison(seed, &c)?;
            std::fs::write(out.join("comparison.csv"), report.to_csv())?;
            println!("comparison report written to {}", out.join("comparison.csv").display());
            return Ok(());
        }
        Some("transfer") => {
            let mut c = TransferConfig::default();
            if let Some(w) = exp_windows {
                c.windows = w;
            }
            if let Some(e) = exp_epochs {
                c.epochs = e;
                c.fine_tune_epochs = e.div_ceil(2);
            }
            if let Some(lr) = exp_lr {
                c.lr = lr;
            }
            let report = run_transfer(seed, &c)?;
            std::fs::write(out.join("transfer.csv"), report.to_csv())?;
            println!("transfer report written to {}", out.join("transfer.csv").display());
            return Ok(());
        }
        Some(other) => bail!("unknown experiment '{other}' (expected comparison or transfer)"),
        None => {}
    }

    let (pred, truth) = match (pred, truth) {
        (Some(p), Some(t)) => (load_frames(p)?, load_frames(t)?),
        _ => bail!("eval needs --pred and --truth (or --experiment)"),
    };
    if pred.len() != truth.len() {
        bail!("prediction has {} frames, truth has {}", pred.len(), truth.len());
    }
    let scfg = ssim_config(&truth);
    let can_ssim = truth.rows() >= SSIM_WINDOW && truth.cols() >= SSIM_WINDOW;
    let mut csv = String::from("metric,lead_time,value\n");
    let mut rmse_curve = Vec::new();
    let mut ssim_curve = Vec::new();
    for (lead0, (p, t)) in pred.frames().iter().zip(truth.frames()).enumerate() {
        let lead = lead0 + 1;
        let r = rmse(p, t)?;
        rmse_curve.push(r);
        csv.push_str(&format!("rmse,{lead},{r:.6}\n"));
        csv.push_str(&format!("bias,{lead},{:.6}\n", bias(p, t)?));
        if can_ssim {
            let s = ssim(p, t, &scfg)?;
            ssim_curve.push(s);
            csv.push_str(&format!("ssim,{lead},{s:.6}\n"));
        }
        for thr in [0.5f32, 1.0] {
            let (pod, far, f1) = pod_far_f1(&contingency(p, t, thr)?);
            for (name, v) in [("pod", pod), ("far", far), ("f1", f1)] {
                let value = v.map_or_else(|| "undefined".into(), |x| format!("{x:.6}"));
                csv.push_str(&format!("{name}_{thr},{lead},{value}\n"));
            }
        }
    }
    std::fs::write(out.join("metrics.csv"), csv)?;
    plot::write_line_plot(
        &out.join("rmse.ppm"),
        &[plot::Series { values: &rmse_curve, rgb: [200, 40, 40] }],
    )?;
    if can_ssim {
        plot::write_line_plot(
            &out.join("ssim.ppm"),
            &[plot::Series { values: &ssim_curve, rgb: [40, 40, 200] }],
        )?;
    }
    println!("metrics for {} leads written to {}", pred.len(), out.display());
    Ok(())
}

fn cmd_calibrate(pairs: &Path, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(pairs)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((a, b)) = line.split_once(',') else {
            bail!("line {}: expected `t_kelvin,r_mm_h`", i + 1);
        };
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(t), Ok(r)) => samples.push((t, r)),
            // Tolerate a single header row.
            _ if i == 0 => continue,
            _ => bail!("line {}: bad numbers '{line}'", i + 1),
        }
    }
    let coeffs = calibrate_transform(&samples)?;
    let text = format!("alpha = {:.8}\nbeta = {:.8}\n", coeffs.alpha, coeffs.beta);
    print!("{text}");
    if let Some(p) = out {
        std::fs::write(p, text)?;
    }
    Ok(())
}
