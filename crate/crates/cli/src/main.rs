//! `s3im`: train neural fields with the multiplex objective, evaluate
//! checkpoints, score image directories, and verify gradients.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::ArrayD;

use s3im::dataio::{
    csv_float, load_checkpoint, load_ray_data, read_ppm, save_checkpoint, write_csv_log,
    write_ppm, write_scene_dir, ImageBuffer,
};
use s3im::field::Task;
use s3im::gradcheck::{run_all, DEFAULT_TOLERANCE};
use s3im::losses::{BaseLoss, LossConfig};
use s3im::metrics::{msssim_eval, psnr, s3im, SsimConstants, WindowSpec};
use s3im::sampler::{patch_shape, PatchStreams, PixelBatch, PixelMeta};
use s3im::scene::SyntheticScene;
use s3im::tensor::DiffTensor;
use s3im::train::{evaluate_field, Dataset, LrSchedule, TrainConfig, Trainer};

#[derive(Parser)]
#[command(
    name = "s3im",
    version,
    about = "Multiplex training for neural fields with stochastic structural similarity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a field and write log.csv, final.ckpt, renders, config.txt.
    Train(TrainArgs),
    /// Render a checkpoint's test split and report PSNR / SSIM.
    Eval(EvalArgs),
    /// Score two directories of identically named PPM images.
    Metrics(MetricsArgs),
    /// Verify every differentiable path against central differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic box scene as a toy-nerf dataset directory.
    MakeScene(MakeSceneArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    /// Fit a single image as a coordinate field.
    Image2d,
    /// Fit a synthetic radiance field from posed views.
    ToyNerf,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Image2d => Task::Image2d,
            TaskArg::ToyNerf => Task::ToyNerf,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaseLossArg {
    Mse,
    L1,
}

#[derive(Args)]
struct TrainArgs {
    /// Which field to train.
    #[arg(long, value_enum)]
    task: TaskArg,
    /// PPM image (image2d) or scene directory (toy-nerf).
    #[arg(long)]
    data: PathBuf,
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Weight of the stochastic-similarity term; 0 trains the base loss alone.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Stochastic patches averaged per step.
    #[arg(long = "M", default_value_t = 10)]
    m: usize,
    /// Similarity kernel size; the stride always equals it.
    #[arg(long, default_value_t = 4)]
    kernel: usize,
    /// Pixels or rays per minibatch.
    #[arg(long, default_value_t = 4096)]
    batch: usize,
    /// Optimization steps.
    #[arg(long, default_value_t = 2000)]
    iters: u64,
    /// Run seed; every random stream derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Fraction of training pixels (image2d) or train images (toy-nerf) kept.
    #[arg(long = "train-frac", default_value_t = 1.0)]
    train_frac: f64,
    /// Std of Gaussian noise added to training targets, clamped to [0, 1].
    #[arg(long = "noise-std", default_value_t = 0.0)]
    noise_std: f64,
    /// Ablation: score one contiguous crop instead of stochastic patches.
    #[arg(long = "local-patch-baseline", default_value_t = false)]
    local_patch_baseline: bool,
    /// Point-wise base loss.
    #[arg(long = "base-loss", value_enum, default_value_t = BaseLossArg::Mse)]
    base_loss: BaseLossArg,
    /// Steps between test-set evaluations.
    #[arg(long = "eval-period", default_value_t = 250)]
    eval_period: u64,
    /// Multiplicative lr decay factor; requires --lr-decay-every.
    #[arg(long = "lr-decay-gamma")]
    lr_decay_gamma: Option<f64>,
    /// Steps per decay period; requires --lr-decay-gamma.
    #[arg(long = "lr-decay-every")]
    lr_decay_every: Option<u64>,
    /// Hidden width; defaults to 128 (image2d) or 96 (toy-nerf).
    #[arg(long)]
    hidden: Option<usize>,
    /// Hidden layer count.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Positional-encoding octaves for coordinates; defaults to the
    /// task preset (10 for image2d, 6 for toy-nerf).
    #[arg(long = "pe-freqs")]
    pe_freqs: Option<usize>,
    /// Toy-nerf only: override the scene's per-ray sample count.
    #[arg(long = "samples-per-ray")]
    samples_per_ray: Option<usize>,
    /// Record real elapsed milliseconds in log.csv (off keeps reruns
    /// byte-identical).
    #[arg(long = "log-timing", default_value_t = false)]
    log_timing: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// The dataset the checkpoint was trained on.
    #[arg(long)]
    data: PathBuf,
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Directory of reference PPM images.
    #[arg(long = "ref")]
    ref_dir: PathBuf,
    /// Directory of test PPM images with identical names.
    #[arg(long = "test")]
    test_dir: PathBuf,
    /// Destination CSV.
    #[arg(long)]
    out: PathBuf,
    /// Pixels per stochastic-similarity chunk; incomplete tails are dropped.
    #[arg(long = "s3im-batch", default_value_t = 4096)]
    s3im_batch: usize,
    /// Stochastic patches averaged per chunk.
    #[arg(long = "s3im-M", default_value_t = 10)]
    s3im_m: usize,
    /// Seed for the patch permutations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the check-point configurations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct MakeSceneArgs {
    /// Scene seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square image side in pixels, 4 to 128.
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    /// Camera count, 3 to 12.
    #[arg(long, default_value_t = 8)]
    cameras: usize,
    /// Quadrature samples per ray.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
}

/// Exit-code carrier: `Usage` maps to 2, `Runtime` to 1.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

type CliResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime(err: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(err.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::MakeScene(args) => cmd_make_scene(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn load_dataset(task: Task, data: &Path, samples_per_ray: Option<usize>) -> Result<Dataset, Failure> {
    match task {
        Task::Image2d => {
            if samples_per_ray.is_some() {
                return Err(usage("--samples-per-ray applies to --task toy-nerf only"));
            }
            let img = read_ppm(data).map_err(|e| usage(format!("--data: {e}")))?;
            Ok(Dataset::Image2d(img.into_array()))
        }
        Task::ToyNerf => {
            let mut rays = load_ray_data(data).map_err(|e| usage(format!("--data: {e}")))?;
            if let Some(n) = samples_per_ray {
                if n < 2 {
                    return Err(usage("--samples-per-ray must be at least 2"));
                }
                rays.n_samples = n;
            }
            Ok(Dataset::ToyNerf(rays))
        }
    }
}

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let task = Task::from(args.task);
    let mut config = TrainConfig::defaults(task);

    if args.kernel == 0 {
        return Err(usage("--kernel must be positive"));
    }
    let window =
        WindowSpec::s3im_with_kernel(args.kernel).map_err(|e| usage(format!("--kernel: {e}")))?;
    let base = match args.base_loss {
        BaseLossArg::Mse => BaseLoss::Mse,
        BaseLossArg::L1 => BaseLoss::L1,
    };
    config.loss = LossConfig::new(base, args.lambda, args.m, window)
        .map_err(|e| usage(format!("--lambda/--M: {e}")))?;

    config.batch = args.batch;
    config.iterations = args.iters;
    config.seed = args.seed;
    config.adam.lr = args.lr;
    config.eval_period = args.eval_period;
    config.train_fraction = args.train_frac;
    config.noise_std = args.noise_std;
    config.local_patch_baseline = args.local_patch_baseline;
    config.log_timing = args.log_timing;
    config.hidden_layers = args.layers;
    if let Some(h) = args.hidden {
        config.hidden_dim = h;
    }
    if let Some(p) = args.pe_freqs {
        config.pe.pos_freqs = p;
    }
    config.schedule = match (args.lr_decay_gamma, args.lr_decay_every) {
        (None, None) => None,
        (Some(gamma), Some(period)) => Some(LrSchedule { gamma, period }),
        _ => {
            return Err(usage(
                "--lr-decay-gamma and --lr-decay-every must be given together",
            ))
        }
    };

    if config.loss.lambda > 0.0 || config.local_patch_baseline {
        patch_shape(config.batch, config.loss.window.kernel)
            .map_err(|e| usage(format!("--batch/--kernel: {e}")))?;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

/// Every resolved setting, one `key: value` line each, so a run can be
/// reproduced from its output directory alone.
fn render_config(args: &TrainArgs, config: &TrainConfig, dataset: &Dataset) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k}: {v}");
    };
    line("task", config.task.name().to_string());
    line("data", args.data.display().to_string());
    line("out", args.out.display().to_string());
    line("base-loss", match config.loss.base {
        BaseLoss::Mse => "mse".to_string(),
        BaseLoss::L1 => "l1".to_string(),
    });
    line("lambda", config.loss.lambda.to_string());
    line("M", config.loss.m.to_string());
    line("kernel", config.loss.window.kernel.to_string());
    line("batch", config.batch.to_string());
    line("iters", config.iterations.to_string());
    line("seed", config.seed.to_string());
    line("lr", config.adam.lr.to_string());
    line(
        "lr-decay-gamma",
        config
            .schedule
            .map_or("none".to_string(), |s| s.gamma.to_string()),
    );
    line(
        "lr-decay-every",
        config
            .schedule
            .map_or("none".to_string(), |s| s.period.to_string()),
    );
    line("eval-period", config.eval_period.to_string());
    line("train-frac", config.train_fraction.to_string());
    line("noise-std", config.noise_std.to_string());
    line("local-patch-baseline", config.local_patch_baseline.to_string());
    line("log-timing", config.log_timing.to_string());
    line("hidden", config.hidden_dim.to_string());
    line("layers", config.hidden_layers.to_string());
    line("pos-freqs", config.pe.pos_freqs.to_string());
    line("dir-freqs", config.pe.dir_freqs.to_string());
    if let Dataset::ToyNerf(rays) = dataset {
        line("samples-per-ray", rays.n_samples.to_string());
    }
    out
}

fn write_render(dir: &Path, index: usize, image: &ArrayD<f64>) -> Result<(), Failure> {
    let buffer = ImageBuffer::from_array(image.clone()).map_err(runtime)?;
    write_ppm(dir.join(format!("render_{index:03}.ppm")), &buffer).map_err(runtime)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let config = resolve_config(&args)?;
    let dataset = load_dataset(config.task, &args.data, args.samples_per_ray)?;

    let mut trainer = Trainer::new(config.clone(), &dataset).map_err(|e| usage(e.to_string()))?;
    for w in &trainer.warnings {
        eprintln!("warning: {w}");
    }

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(runtime)?;
    fs::write(
        args.out.join("config.txt"),
        render_config(&args, &config, &dataset),
    )
    .map_err(runtime)?;

    let total = config.iterations;
    let log = trainer
        .run_with(|r| {
            println!(
                "iter {:>7}/{total}  train mse {:.4e}  s3im term {:.4}  test psnr {:.2} dB  ssim {:.4}",
                r.iter, r.train_mse, r.train_s3im, r.test_psnr, r.test_ssim
            );
        })
        .map_err(runtime)?;

    write_csv_log(args.out.join("log.csv"), &log).map_err(runtime)?;
    save_checkpoint(args.out.join("final.ckpt"), &trainer.model).map_err(runtime)?;
    for (i, img) in log.final_images.iter().enumerate() {
        write_render(&args.out, i, img)?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let model =
        load_checkpoint(&args.checkpoint).map_err(|e| usage(format!("--checkpoint: {e}")))?;
    let dataset = load_dataset(model.task, &args.data, None)?;
    let record = evaluate_field(&model, &dataset).map_err(runtime)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(runtime)?;
    let mut csv = String::from("image,psnr,ssim\n");
    for (i, (p, s)) in record.per_image.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{}", csv_float(*p), csv_float(*s));
    }
    let _ = writeln!(csv, "mean,{},{}", csv_float(record.psnr), csv_float(record.ssim));
    fs::write(args.out.join("metrics.csv"), csv).map_err(runtime)?;
    for (i, img) in record.images.iter().enumerate() {
        write_render(&args.out, i, img)?;
    }
    println!(
        "test images: {}  mean psnr {:.4} dB  mean ssim {:.6}",
        record.images.len(),
        record.psnr,
        record.ssim
    );
    Ok(())
}

fn ppm_names(dir: &Path, flag: &str) -> Result<BTreeSet<String>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| usage(format!("{flag}: {}: {e}", dir.display())))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(runtime)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ppm") {
            names.insert(name);
        }
    }
    if names.is_empty() {
        return Err(usage(format!("{flag}: no .ppm files in {}", dir.display())));
    }
    Ok(names)
}

/// Mean over complete `batch`-pixel chunks of both images flattened;
/// the tail that cannot fill a chunk is dropped.
fn s3im_of_pair(
    pred: &ArrayD<f64>,
    target: &ArrayD<f64>,
    batch: usize,
    m: usize,
    seed: u64,
) -> Result<f64, Failure> {
    let dims = pred.shape().to_vec();
    let n = dims[0] * dims[1];
    let flat_pred = pred
        .to_shape((n, 3))
        .map_err(|e| runtime(anyhow::anyhow!("{e}")))?
        .to_owned();
    let flat_target = target
        .to_shape((n, 3))
        .map_err(|e| runtime(anyhow::anyhow!("{e}")))?
        .to_owned();
    let window = WindowSpec::s3im_with_kernel(4).map_err(runtime)?;
    let constants = SsimConstants::default();
    let chunks = n / batch;
    if chunks == 0 {
        return Err(usage(format!(
            "--s3im-batch: {batch} pixels per chunk exceeds the {n}-pixel image"
        )));
    }
    let mut total = 0.0;
    for k in 0..chunks {
        let lo = k * batch;
        let hi = lo + batch;
        let p = flat_pred.slice(ndarray::s![lo..hi, ..]).to_owned();
        let t = flat_target.slice(ndarray::s![lo..hi, ..]).to_owned();
        let meta: Vec<PixelMeta> = (lo..hi)
            .map(|i| PixelMeta {
                image: 0,
                row: i / dims[1],
                col: i % dims[1],
            })
            .collect();
        let batch_pair = PixelBatch::new(
            DiffTensor::constant(p.into_dyn()),
            t.into_dyn(),
            meta,
        )
        .map_err(runtime)?;
        let streams = PatchStreams::new(seed, k as u64);
        let outcome = s3im(&batch_pair, m, &window, &constants, &streams).map_err(runtime)?;
        total += outcome.value.item().map_err(runtime)?;
    }
    Ok(total / chunks as f64)
}

fn cmd_metrics(args: MetricsArgs) -> CliResult {
    if args.s3im_m == 0 {
        return Err(usage("--s3im-M must be positive"));
    }
    patch_shape(args.s3im_batch, 4).map_err(|e| usage(format!("--s3im-batch: {e}")))?;

    let ref_names = ppm_names(&args.ref_dir, "--ref")?;
    let test_names = ppm_names(&args.test_dir, "--test")?;
    if ref_names != test_names {
        let only_ref: Vec<_> = ref_names.difference(&test_names).cloned().collect();
        let only_test: Vec<_> = test_names.difference(&ref_names).cloned().collect();
        return Err(usage(format!(
            "--ref/--test name sets differ (only in ref: [{}]; only in test: [{}])",
            only_ref.join(", "),
            only_test.join(", ")
        )));
    }

    let mut rows = Vec::new();
    let (mut sum_p, mut sum_s, mut sum_x) = (0.0, 0.0, 0.0);
    for name in &ref_names {
        let reference = read_ppm(args.ref_dir.join(name))
            .map_err(|e| usage(format!("--ref: {e}")))?
            .into_array();
        let test = read_ppm(args.test_dir.join(name))
            .map_err(|e| usage(format!("--test: {e}")))?
            .into_array();
        if reference.shape() != test.shape() {
            return Err(usage(format!(
                "--ref/--test: {name} sizes differ ({:?} vs {:?})",
                reference.shape(),
                test.shape()
            )));
        }
        let p = psnr(&test, &reference, 1.0).map_err(runtime)?;
        let s = msssim_eval(&test, &reference).map_err(runtime)?;
        let x = s3im_of_pair(&test, &reference, args.s3im_batch, args.s3im_m, args.seed)?;
        sum_p += p;
        sum_s += s;
        sum_x += x;
        rows.push(format!(
            "{name},{},{},{}",
            csv_float(p),
            csv_float(s),
            csv_float(x)
        ));
    }
    let count = ref_names.len() as f64;
    rows.push(format!(
        "mean,{},{},{}",
        csv_float(sum_p / count),
        csv_float(sum_s / count),
        csv_float(sum_x / count)
    ));

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
    }
    let body = format!("image,psnr,ssim,s3im\n{}\n", rows.join("\n"));
    fs::write(&args.out, body).map_err(runtime)?;
    println!(
        "image pairs scored: {}; results in {}",
        ref_names.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult {
    if !(args.tolerance > 0.0) {
        return Err(usage("--tolerance must be positive"));
    }
    let reports = run_all(args.seed).map_err(runtime)?;
    let mut failures = Vec::new();
    for r in &reports {
        let ok = r.passes(args.tolerance);
        println!(
            "{:<24} max rel err {:.3e}  {}",
            r.name,
            r.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failures.push(r.name);
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(anyhow::anyhow!(
            "gradient checks failed: {}",
            failures.join(", ")
        )))
    }
}

fn cmd_make_scene(args: MakeSceneArgs) -> CliResult {
    let scene = SyntheticScene::generate_with(args.seed, args.resolution, args.cameras, args.samples)
        .map_err(|e| usage(format!("--resolution/--cameras/--samples: {e}")))?;
    write_scene_dir(&args.out, &scene).map_err(runtime)?;
    println!(
        "wrote {} views of {} boxes at {}x{} px to {}",
        args.cameras,
        scene.boxes.len(),
        args.resolution,
        args.resolution,
        args.out.display()
    );
    Ok(())
}
