//! Command-line entry points over the library workflows.
//!
//! Subcommands: `priors` (learn anchor priors from labels), `infer` (run
//! the detection pipeline on a serialized feature map), `postopt` (re-run
//! orientation refinement over existing result files), `eval` (average
//! precision report), `bench` (depth-aware convolution timing and
//! multiply-add parity), and `selftest` (invariant battery).
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Output
//! files are written atomically; a failing run never leaves partial files.

use crate::anchors::{compute_priors, generate_templates, parse_prior_table, span_anchors,
    write_prior_table, AnchorGrid, GroundTruth};
use crate::eval::{evaluate_dirs, EvalConfig, InterpPoints};
use crate::geometry::{project_center, wrap_angle};
use crate::inference::{
    optimize_theta, params::load_params, run_pipeline, Detection, PipelineConfig, PostOptConfig,
};
use crate::kitti::{
    parse_calib_file, parse_label_file, write_atomic, write_label_file, write_results, RunConfig,
};
use crate::nnops::{
    conv2d, depth_aware_conv, depth_aware_conv_reference, flop_count, ConvOp,
    DepthAwareKernelSet, Tensor,
};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "monorpn",
    about = "Monocular 3D region-proposal detection toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-template 3D anchor priors from labels and calibration.
    Priors {
        /// Directory of KITTI label files (*.txt).
        #[arg(long)]
        labels: PathBuf,
        /// Directory of KITTI calibration files matching the label stems.
        #[arg(long)]
        calib: PathBuf,
        /// Output prior table path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the detection pipeline on a serialized feature map.
    Infer {
        /// Feature tensor container ([channels, height, width]).
        #[arg(long)]
        features: PathBuf,
        /// Head parameter directory.
        #[arg(long)]
        params: PathBuf,
        /// Calibration file with the P2 record.
        #[arg(long)]
        calib: PathBuf,
        /// Anchor prior table from `priors`.
        #[arg(long)]
        priors: PathBuf,
        /// Output result file (KITTI submission format).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-run orientation refinement over existing result files.
    Postopt {
        /// Directory of result files.
        #[arg(long)]
        results: PathBuf,
        /// Directory of calibration files matching the result stems.
        #[arg(long)]
        calib: PathBuf,
        /// Output directory for refined result files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate result files against ground truth labels.
    Eval {
        /// Directory of result files.
        #[arg(long)]
        results: PathBuf,
        /// Directory of ground-truth label files.
        #[arg(long)]
        labels: PathBuf,
        /// Write the aligned text report here (also printed).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the machine-readable table here.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Interpolate at 40 recall points instead of 11.
        #[arg(long)]
        forty_point: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time depth-aware convolution and report multiply-add parity.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input/output channel count of the benchmark layer.
        #[arg(long, default_value_t = 16)]
        channels: usize,
        /// Repetitions per timing.
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Run the built-in invariant battery.
    Selftest,
}

enum CliError {
    Usage(String),
    Data(String),
}

fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Parses `argv` (excluding the program name handling of `std::env`) and
/// runs the selected subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Priors { labels, calib, out, config } => {
            cmd_priors(&labels, &calib, &out, config.as_deref())
        }
        Command::Infer { features, params, calib, priors, out, config } => {
            cmd_infer(&features, &params, &calib, &priors, &out, config.as_deref())
        }
        Command::Postopt { results, calib, out, config } => {
            cmd_postopt(&results, &calib, &out, config.as_deref())
        }
        Command::Eval { results, labels, out, table, forty_point, config } => cmd_eval(
            &results,
            &labels,
            out.as_deref(),
            table.as_deref(),
            forty_point,
            config.as_deref(),
        ),
        Command::Bench { config, channels, reps } => cmd_bench(config.as_deref(), channels, reps),
        Command::Selftest => {
            return if crate::selftest::run() { 0 } else { 2 };
        }
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

pub fn run_from_env() -> i32 {
    run(std::env::args_os())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p).map_err(data),
        None => Ok(RunConfig::default()),
    }
}

fn sorted_txt_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
        .collect();
    files.sort();
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().to_string()
}

fn read_calib_for(calib_dir: &Path, id: &str) -> Result<crate::CameraCalibration, CliError> {
    let path = calib_dir.join(format!("{id}.txt"));
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_calib_file(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn feat_dims(cfg: &RunConfig) -> Result<(usize, usize), CliError> {
    if cfg.stride <= 0.0 {
        return Err(CliError::Data(format!("stride {} must be positive", cfg.stride)));
    }
    let w = (cfg.image_width as f64 / cfg.stride).floor() as usize;
    let h = (cfg.image_height as f64 / cfg.stride).floor() as usize;
    if w == 0 || h == 0 {
        return Err(CliError::Data(format!(
            "image {}x{} too small for stride {}",
            cfg.image_width, cfg.image_height, cfg.stride
        )));
    }
    Ok((w, h))
}

fn cmd_priors(
    labels_dir: &Path,
    calib_dir: &Path,
    out: &Path,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let templates = generate_templates(
        cfg.anchor_base,
        cfg.anchor_rate,
        cfg.anchor_scales,
        &cfg.anchor_ratios,
    )
    .map_err(data)?;
    let (feat_w, feat_h) = feat_dims(&cfg)?;
    let spanned = span_anchors(&templates, feat_w, feat_h, cfg.stride);

    let mut gts: Vec<GroundTruth> = Vec::new();
    let mut behind_camera = 0usize;
    let label_files = sorted_txt_files(labels_dir)?;
    if label_files.is_empty() {
        return Err(CliError::Data(format!(
            "no label files under {}",
            labels_dir.display()
        )));
    }
    for path in &label_files {
        let id = file_stem(path);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let objects = parse_label_file(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let calib = read_calib_for(calib_dir, &id)?;
        for obj in objects {
            if obj.is_dont_care() {
                continue;
            }
            let Some(class) = cfg.class_index(&obj.class_name) else {
                continue;
            };
            match project_center(&calib, &obj.center()) {
                Ok(pc) => gts.push(GroundTruth {
                    class,
                    box2d: obj.bbox,
                    z_p: pc.z,
                    dims: obj.dims(),
                    theta_obs: obj.alpha,
                }),
                Err(_) => behind_camera += 1,
            }
        }
    }
    let (filled, report) =
        compute_priors(&templates, &spanned, &gts, cfg.match_iou).map_err(data)?;
    let table = write_prior_table(&filled, &report).map_err(data)?;
    write_atomic(out, &table).map_err(data)?;
    let fallbacks = report.iter().filter(|s| s.fallback).count();
    println!(
        "priors: {} templates from {} ground truths ({} files); {} fallback templates; {} objects behind camera",
        filled.len(),
        gts.len(),
        label_files.len(),
        fallbacks,
        behind_camera
    );
    Ok(())
}

fn cmd_infer(
    features: &Path,
    params_dir: &Path,
    calib_path: &Path,
    priors: &Path,
    out: &Path,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let features = crate::nnops::load_tensor(features).map_err(data)?;
    if features.rank() != 3 {
        return Err(CliError::Data(format!(
            "feature tensor must be [channels, height, width], got {:?}",
            features.shape()
        )));
    }
    let params = load_params(params_dir).map_err(data)?;
    let prior_text = std::fs::read_to_string(priors)
        .map_err(|e| CliError::Data(format!("{}: {e}", priors.display())))?;
    let (templates, _) = parse_prior_table(&prior_text).map_err(data)?;
    let calib_text = std::fs::read_to_string(calib_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", calib_path.display())))?;
    let calib = parse_calib_file(&calib_text).map_err(data)?;
    let grid = AnchorGrid::new(templates, features.shape()[2], features.shape()[1], cfg.stride);
    let pipeline_cfg = PipelineConfig {
        score_thresh: cfg.score_thresh,
        nms_iou: cfg.nms_iou,
        post_opt: cfg
            .post_opt
            .then_some(PostOptConfig { sigma: cfg.sigma, beta: cfg.beta, gamma: cfg.gamma }),
    };
    let dets = run_pipeline(&features, &params, &grid, &calib, &pipeline_cfg).map_err(data)?;
    let text = write_results(&dets, &calib, &cfg.classes).map_err(data)?;
    write_atomic(out, &text).map_err(data)?;
    println!("infer: {} detections -> {}", dets.len(), out.display());
    Ok(())
}

fn cmd_postopt(
    results_dir: &Path,
    calib_dir: &Path,
    out_dir: &Path,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let post = PostOptConfig { sigma: cfg.sigma, beta: cfg.beta, gamma: cfg.gamma };
    std::fs::create_dir_all(out_dir).map_err(data)?;
    let files = sorted_txt_files(results_dir)?;
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no result files under {}",
            results_dir.display()
        )));
    }
    let mut refined = 0usize;
    let mut passed_through = 0usize;
    for path in &files {
        let id = file_stem(path);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut objects = parse_label_file(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let calib = read_calib_for(calib_dir, &id)?;
        for (i, obj) in objects.iter_mut().enumerate() {
            let center = obj.center();
            let Ok(pc) = project_center(&calib, &center) else {
                passed_through += 1;
                continue;
            };
            let det = Detection {
                class: cfg.class_index(&obj.class_name).unwrap_or(1),
                score: obj.score.unwrap_or(0.0),
                anchor: i,
                box2d: obj.bbox,
                center_p: pc,
                dims: obj.dims(),
                theta_obs: wrap_angle(obj.rotation_y - center.x.atan2(center.z)),
                center_cam: center,
            };
            match optimize_theta(&det, &calib, &post) {
                Ok(r) => {
                    obj.rotation_y = r.yaw;
                    obj.alpha = r.theta_obs;
                    refined += 1;
                }
                Err(_) => passed_through += 1,
            }
        }
        write_atomic(&out_dir.join(format!("{id}.txt")), &write_label_file(&objects))
            .map_err(data)?;
    }
    println!(
        "postopt: refined {refined} boxes across {} files ({passed_through} passed through)",
        files.len()
    );
    Ok(())
}

fn cmd_eval(
    results: &Path,
    labels: &Path,
    out: Option<&Path>,
    table: Option<&Path>,
    forty_point: bool,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let eval_cfg = EvalConfig {
        classes: cfg.classes.clone(),
        iou_overrides: Vec::new(),
        points: if forty_point || cfg.eval_forty_point {
            InterpPoints::Forty
        } else {
            InterpPoints::Eleven
        },
    };
    let report = evaluate_dirs(results, labels, &eval_cfg).map_err(data)?;
    let text = report.text_table();
    print!("{text}");
    if let Some(path) = out {
        write_atomic(path, &text).map_err(data)?;
    }
    if let Some(path) = table {
        write_atomic(path, &report.machine_table()).map_err(data)?;
    }
    Ok(())
}

fn cmd_bench(config: Option<&Path>, channels: usize, reps: usize) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    if channels == 0 || reps == 0 {
        return Err(CliError::Usage("channels and reps must be positive".into()));
    }
    let (w, h) = feat_dims(&cfg)?;
    let bins = cfg.bins.min(h).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let input = Tensor::from_fn(vec![channels, h, w], |_| rng.gen_range(-1.0..1.0));
    let banks: Vec<Tensor> = (0..bins)
        .map(|_| Tensor::from_fn(vec![channels, channels, 3, 3], |_| rng.gen_range(-0.3..0.3)))
        .collect();
    let bias: Vec<f64> = (0..channels).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let ks = DepthAwareKernelSet::new(banks, bias.clone()).map_err(data)?;

    let time = |f: &dyn Fn() -> Result<Tensor, CliError>| -> Result<(f64, Tensor), CliError> {
        let mut out = f()?;
        let start = Instant::now();
        for _ in 0..reps {
            out = f()?;
        }
        Ok((start.elapsed().as_secs_f64() * 1e3 / reps as f64, out))
    };
    let (t_plain, _) = time(&|| conv2d(&input, &ks.banks()[0], &bias, 1, 1, 1).map_err(data))?;
    let (t_ref, out_ref) = time(&|| depth_aware_conv_reference(&input, &ks, 1, 1).map_err(data))?;
    let (t_fast, out_fast) = time(&|| depth_aware_conv(&input, &ks, 1, 1).map_err(data))?;

    let standard = ConvOp::Standard {
        in_channels: channels,
        out_channels: channels,
        out_h: h,
        out_w: w,
        kernel_h: 3,
        kernel_w: 3,
    };
    let depth_aware = ConvOp::DepthAware {
        in_channels: channels,
        out_channels: channels,
        out_h: h,
        out_w: w,
        kernel_h: 3,
        kernel_w: 3,
        bins,
    };
    println!("bench: {channels}x{h}x{w} features, 3x3 kernels, {bins} bins, {reps} reps");
    println!(
        "multiply-adds   standard {:>14}   depth-aware {:>14}   parity {}",
        flop_count(&standard),
        flop_count(&depth_aware),
        flop_count(&standard) == flop_count(&depth_aware)
    );
    println!("conv2d                   {t_plain:>9.3} ms");
    println!("depth-aware (reference)  {t_ref:>9.3} ms");
    println!(
        "depth-aware (unfold)     {t_fast:>9.3} ms   overhead vs conv2d {:+.1}%",
        (t_fast / t_plain - 1.0) * 100.0
    );
    println!("paths bit-identical      {}", out_fast.bits_eq(&out_ref));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["monorpn", "no-such-command"]), 1);
        assert_eq!(run(["monorpn"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["monorpn", "--help"]), 0);
    }

    #[test]
    fn missing_data_exits_two() {
        assert_eq!(
            run([
                "monorpn",
                "eval",
                "--results",
                "/nonexistent/res",
                "--labels",
                "/nonexistent/gt"
            ]),
            2
        );
    }
}
