//! The multiplex training loop.
//!
//! One step: draw a minibatch without replacement, render it through
//! the field, evaluate `base + lambda * (1 - S3IM)`, run a single
//! backward pass, apply one Adam update. Around that sit the data
//! protocols (train/test split, train-fraction subsampling, Gaussian
//! corruption of training targets) and periodic full-image evaluation.
//!
//! Everything that consumes randomness draws from a stream derived
//! from the run seed and a purpose tag, so a standard (`lambda = 0`)
//! run and a multiplex run with the same seed consume identical
//! minibatch sequences, and reruns are bit-identical.

use ndarray::{Array2, ArrayD, IxDyn};

use crate::field::{
    image_colors, pixel_coords, positional_encode, render_rays, FieldModel, PeConfig, RaySample,
    Task,
};
use crate::losses::{multiplex_loss, l1_color_loss, mse_loss, BaseLoss, LossComponents, LossConfig};
use crate::metrics::{msssim_eval, psnr, ssim_map_diff};
use crate::rng::{purpose, StreamRng};
use crate::sampler::{
    crop_indices, crop_origin, make_local_patch, minibatch_indices, patch_shape, PatchStreams,
    PixelBatch, PixelMeta,
};
use crate::scene::{camera_pixel_rays, Camera, SyntheticScene};
use crate::tensor::{DiffTensor, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Multiplicative decay: effective lr after `k` whole periods is
/// `lr * gamma^k`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub gamma: f64,
    pub period: u64,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub task: Task,
    pub loss: LossConfig,
    pub batch: usize,
    pub iterations: u64,
    pub adam: AdamParams,
    pub schedule: Option<LrSchedule>,
    pub eval_period: u64,
    pub seed: u64,
    /// Fraction of the training data kept (sparse-input protocol).
    pub train_fraction: f64,
    /// Std of the Gaussian corruption added to training targets.
    pub noise_std: f64,
    /// Ablation: score one contiguous crop instead of stochastic
    /// patches.
    pub local_patch_baseline: bool,
    /// When set, log records carry real elapsed milliseconds; off by
    /// default so identical runs produce identical logs.
    pub log_timing: bool,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub pe: PeConfig,
}

impl TrainConfig {
    pub fn defaults(task: Task) -> TrainConfig {
        let (hidden_dim, pe) = match task {
            Task::Image2d => (128, PeConfig::image2d_default()),
            Task::ToyNerf => (96, PeConfig::toy_nerf_default()),
        };
        TrainConfig {
            task,
            loss: LossConfig::standard_defaults(0.0),
            batch: 4096,
            iterations: 2000,
            adam: AdamParams::default(),
            schedule: None,
            eval_period: 250,
            seed: 0,
            train_fraction: 1.0,
            noise_std: 0.0,
            local_patch_baseline: false,
            log_timing: false,
            hidden_dim,
            hidden_layers: 4,
            pe,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        if self.eval_period == 0 {
            return Err(Error::Config("eval period must be positive".into()));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.adam.lr
            )));
        }
        for (name, beta) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        if !(self.adam.eps > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        if let Some(s) = &self.schedule {
            if !(s.gamma > 0.0 && s.gamma <= 1.0) || s.period == 0 {
                return Err(Error::Config(format!(
                    "lr schedule needs gamma in (0, 1] and a positive period, got {} / {}",
                    s.gamma, s.period
                )));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "noise std must be non-negative, got {}",
                self.noise_std
            )));
        }
        if self.loss.lambda > 0.0 || self.local_patch_baseline {
            // The batch must tile a square patch compatible with the
            // SSIM window.
            patch_shape(self.batch, self.loss.window.kernel)?;
        }
        if self.local_patch_baseline && self.loss.lambda == 0.0 {
            return Err(Error::Config(
                "the local-patch baseline needs lambda > 0".into(),
            ));
        }
        if self.local_patch_baseline
            && self.task == Task::Image2d
            && self.train_fraction < 1.0
        {
            return Err(Error::Config(
                "the local-patch baseline on image2d needs the full pixel grid (train fraction 1)"
                    .into(),
            ));
        }
        Ok(())
    }

    fn lr_at(&self, iteration: u64) -> f64 {
        match &self.schedule {
            None => self.adam.lr,
            Some(s) => self.adam.lr * s.gamma.powi((iteration / s.period) as i32),
        }
    }
}

/// Test-image indices are the multiples of 10, the rest train.
pub fn split_train_test(n_images: usize) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for i in 0..n_images {
        if i % 10 == 0 {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

/// Keeps `ceil(fraction * n)` of `n` items, uniformly at random,
/// returned in ascending order.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let keep = (fraction * n as f64).ceil() as usize;
    let mut rng = StreamRng::new(seed, &[purpose::SUBSET]);
    let mut perm = rng.permutation(n);
    perm.truncate(keep);
    perm.sort_unstable();
    Ok(perm)
}

/// Adds clamped Gaussian noise in place. `std = 0` is an exact
/// identity (no stream draws).
pub fn corrupt_image(img: &mut ArrayD<f64>, std: f64, rng: &mut StreamRng) {
    if std == 0.0 {
        return;
    }
    for v in img.iter_mut() {
        *v = (*v + std * rng.normal()).clamp(0.0, 1.0);
    }
}

/// Ray dataset: per-camera reference images plus the camera geometry
/// needed to regenerate the rays.
#[derive(Debug, Clone)]
pub struct RayData {
    pub images: Vec<ArrayD<f64>>,
    pub cameras: Vec<Camera>,
    pub resolution: usize,
    pub t_near: f64,
    pub t_far: f64,
    pub n_samples: usize,
}

impl RayData {
    pub fn from_scene(scene: &SyntheticScene) -> Result<RayData> {
        Ok(RayData {
            images: scene.reference_images()?,
            cameras: scene.cameras.clone(),
            resolution: scene.resolution,
            t_near: scene.t_near,
            t_far: scene.t_far,
            n_samples: scene.n_samples,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Dataset {
    /// Single `(H, W, 3)` target image fitted pixel-wise.
    Image2d(ArrayD<f64>),
    ToyNerf(RayData),
}

/// Prepared training pool after split / subsample / corruption.
enum Pool {
    Pixels {
        /// Positional encodings of the kept pixels, `(n, enc)`.
        encoded: Array2<f64>,
        targets: Array2<f64>,
        meta: Vec<PixelMeta>,
        /// Full corrupted image, kept for the local-patch baseline.
        local_target: Option<ArrayD<f64>>,
        h: usize,
        w: usize,
    },
    Rays {
        rays: Vec<RaySample>,
        targets: Array2<f64>,
        meta: Vec<PixelMeta>,
        /// Corrupted train images in kept order, for local crops.
        images: Vec<ArrayD<f64>>,
        resolution: usize,
    },
}

impl Pool {
    fn len(&self) -> usize {
        match self {
            Pool::Pixels { meta, .. } | Pool::Rays { meta, .. } => meta.len(),
        }
    }
}

/// Clean evaluation targets.
enum EvalSet {
    Image {
        target: ArrayD<f64>,
    },
    Rays {
        refs: Vec<ArrayD<f64>>,
        cameras: Vec<Camera>,
        resolution: usize,
        t_near: f64,
        t_far: f64,
        n_samples: usize,
    },
}

/// What one optimizer step saw and produced.
pub struct StepReport {
    /// 0-based index of the step just taken.
    pub iteration: u64,
    pub lr: f64,
    pub components: LossComponents,
    /// Pool indices of the minibatch, in draw order.
    pub batch_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iter: u64,
    pub train_mse: f64,
    /// Unweighted `1 - S3IM` component; 0 when the run is standard.
    pub train_s3im: f64,
    pub test_psnr: f64,
    pub test_ssim: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
    /// Rendered test images at the final evaluation.
    pub final_images: Vec<ArrayD<f64>>,
}

pub struct EvalRecord {
    pub psnr: f64,
    pub ssim: f64,
    /// `(psnr, ssim)` per test image, in split order.
    pub per_image: Vec<(f64, f64)>,
    pub images: Vec<ArrayD<f64>>,
}

pub struct TrainOutcome {
    pub model: FieldModel,
    pub log: RunLog,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: FieldModel,
    pub warnings: Vec<String>,
    adam: AdamState,
    pool: Pool,
    eval: EvalSet,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Trainer> {
        config.validate()?;
        let model = FieldModel::new(
            config.task,
            config.pe,
            config.hidden_dim,
            config.hidden_layers,
            config.seed,
        )?;
        let mut warnings = Vec::new();
        let pool = match (config.task, dataset) {
            (Task::Image2d, Dataset::Image2d(target)) => {
                build_pixel_pool(&config, target)?
            }
            (Task::ToyNerf, Dataset::ToyNerf(data)) => {
                build_ray_pool(&config, data, &mut warnings)?
            }
            _ => {
                return Err(Error::Config(
                    "dataset kind does not match the configured task".into(),
                ))
            }
        };
        let eval = build_eval_set(config.task, dataset)?;
        if pool.len() < config.batch {
            return Err(Error::Config(format!(
                "batch size {} exceeds the {}-sample training pool",
                config.batch,
                pool.len()
            )));
        }
        if config.local_patch_baseline {
            let side = patch_shape(config.batch, config.loss.window.kernel)?.side;
            let (h, w) = match &pool {
                Pool::Pixels { h, w, .. } => (*h, *w),
                Pool::Rays { resolution, .. } => (*resolution, *resolution),
            };
            if side > h || side > w {
                return Err(Error::Config(format!(
                    "local {side}x{side} crop does not fit a {h}x{w} training image"
                )));
            }
        }
        let adam = AdamState::new(&model);
        Ok(Trainer {
            config,
            model,
            warnings,
            adam,
            pool,
            eval,
            iteration: 0,
        })
    }

    /// One optimization step: sample, render, loss, backward, update.
    pub fn step(&mut self) -> Result<StepReport> {
        let it = self.iteration;
        let cfg = &self.config;
        let mut batch_rng = StreamRng::new(cfg.seed, &[purpose::BATCH, it]);
        let indices = minibatch_indices(&mut batch_rng, self.pool.len(), cfg.batch)?;

        let tape = Tape::new();
        let params = self.model.params(Some(&tape));
        let batch = match &self.pool {
            Pool::Pixels {
                encoded,
                targets,
                meta,
                ..
            } => {
                let x = gather_rows_plain(encoded, &indices);
                let predicted = image_colors(&params, &DiffTensor::constant(x.into_dyn()))?;
                let target = gather_rows_plain(targets, &indices);
                let meta = indices.iter().map(|&i| meta[i]).collect();
                PixelBatch::new(predicted, target.into_dyn(), meta)?
            }
            Pool::Rays {
                rays,
                targets,
                meta,
                ..
            } => {
                let selected: Vec<RaySample> = indices.iter().map(|&i| rays[i]).collect();
                let rendered = render_rays(&params, cfg.pe, &selected)?;
                let target = gather_rows_plain(targets, &indices);
                let meta = indices.iter().map(|&i| meta[i]).collect();
                PixelBatch::new(rendered.colors, target.into_dyn(), meta)?
            }
        };

        let loss = if cfg.local_patch_baseline {
            self.local_patch_loss(&params, &batch, it)?
        } else {
            multiplex_loss(&batch, &cfg.loss, &PatchStreams::new(cfg.seed, it))?
        };

        let grad_map = loss.total.backward()?;
        let mut grads = Vec::new();
        for p in params.ordered() {
            grads.push(grad_map.grad(p)?);
        }
        let lr = cfg.lr_at(it);
        self.adam
            .update(&mut self.model, &grads, lr, &self.config.adam)?;
        self.iteration += 1;
        Ok(StepReport {
            iteration: it,
            lr,
            components: loss.components,
            batch_indices: indices,
        })
    }

    /// Ablation objective: base loss on the minibatch plus
    /// `lambda * (1 - SSIM)` of one random contiguous crop.
    fn local_patch_loss(
        &self,
        params: &crate::field::ModelParams,
        batch: &PixelBatch,
        it: u64,
    ) -> Result<crate::losses::MultiplexLoss> {
        let cfg = &self.config;
        let side = patch_shape(cfg.batch, cfg.loss.window.kernel)?.side;
        let mut rng = StreamRng::new(cfg.seed, &[purpose::PATCH, it]);

        let patch = match &self.pool {
            Pool::Pixels {
                encoded,
                local_target,
                h,
                w,
                ..
            } => {
                let image = local_target
                    .as_ref()
                    .expect("local target exists when the baseline is on");
                let origin = crop_origin(&mut rng, *h, *w, side)?;
                // Full grid guaranteed by validate(), so pool index ==
                // pixel index.
                let pix = crop_indices(origin, *w, side);
                let x = gather_rows_plain(encoded, &pix);
                let predicted = image_colors(params, &DiffTensor::constant(x.into_dyn()))?;
                make_local_patch(&predicted, image, origin, side)?
            }
            Pool::Rays {
                rays,
                images,
                resolution,
                ..
            } => {
                let img_idx = rng.below(images.len() as u64) as usize;
                let origin = crop_origin(&mut rng, *resolution, *resolution, side)?;
                let pix = crop_indices(origin, *resolution, side);
                let selected: Vec<RaySample> = pix
                    .iter()
                    .map(|&p| rays[img_idx * resolution * resolution + p])
                    .collect();
                let rendered = render_rays(params, cfg.pe, &selected)?;
                make_local_patch(&rendered.colors, &images[img_idx], origin, side)?
            }
        };

        let base = match cfg.loss.base {
            BaseLoss::Mse => mse_loss(batch)?,
            BaseLoss::L1 => l1_color_loss(batch)?,
        };
        let map = ssim_map_diff(
            &patch.predicted_patch,
            &DiffTensor::constant(patch.target_patch.clone()),
            &cfg.loss.window,
            &cfg.loss.constants,
        )?;
        let s3 = DiffTensor::scalar(1.0).sub(&map.mean_all())?;
        let base_value = base.item()?;
        let s3_value = s3.item()?;
        let total = base.add(&s3.mul_scalar(cfg.loss.lambda))?;
        Ok(crate::losses::MultiplexLoss {
            components: LossComponents {
                base: base_value,
                s3im: Some(s3_value),
                total: total.item()?,
            },
            total,
        })
    }

    /// Renders every test image and reports mean PSNR / mean SSIM.
    pub fn evaluate(&self) -> Result<EvalRecord> {
        evaluate_model(&self.model, &self.eval)
    }

    /// Runs the configured number of steps with periodic evaluation.
    pub fn run(&mut self) -> Result<RunLog> {
        self.run_with(|_| {})
    }

    /// As `run`, invoking `observer` on each log record as it lands.
    pub fn run_with<F>(&mut self, mut observer: F) -> Result<RunLog>
    where
        F: FnMut(&LogRecord),
    {
        let start = std::time::Instant::now();
        let mut records = Vec::new();
        let mut final_images = Vec::new();
        let total = self.config.iterations;
        for it in 0..total {
            let report = self.step()?;
            let done = it + 1 == total;
            if (it + 1) % self.config.eval_period == 0 || done {
                let eval = self.evaluate()?;
                let wall_ms = if self.config.log_timing {
                    start.elapsed().as_millis() as u64
                } else {
                    0
                };
                let record = LogRecord {
                    iter: it + 1,
                    train_mse: report.components.base,
                    train_s3im: report.components.s3im.unwrap_or(0.0),
                    test_psnr: eval.psnr,
                    test_ssim: eval.ssim,
                    wall_ms,
                };
                observer(&record);
                records.push(record);
                if done {
                    final_images = eval.images;
                }
            }
        }
        Ok(RunLog {
            records,
            final_images,
        })
    }
}

/// Clean test targets for a dataset: the full image for the 2-D task,
/// the divisible-by-10 test cameras for the ray task.
fn build_eval_set(task: Task, dataset: &Dataset) -> Result<EvalSet> {
    match (task, dataset) {
        (Task::Image2d, Dataset::Image2d(target)) => {
            let dims = target.shape();
            if dims.len() != 3 || dims[2] != 3 {
                return Err(Error::ShapeMismatch {
                    op: "image_dataset",
                    lhs: dims.to_vec(),
                    rhs: vec![0, 0, 3],
                });
            }
            Ok(EvalSet::Image {
                target: target.clone(),
            })
        }
        (Task::ToyNerf, Dataset::ToyNerf(data)) => {
            if data.images.is_empty() || data.cameras.len() != data.images.len() {
                return Err(Error::Config(format!(
                    "{} cameras for {} images",
                    data.cameras.len(),
                    data.images.len()
                )));
            }
            let (_, test_idx) = split_train_test(data.images.len());
            Ok(EvalSet::Rays {
                refs: test_idx.iter().map(|&i| data.images[i].clone()).collect(),
                cameras: test_idx.iter().map(|&i| data.cameras[i]).collect(),
                resolution: data.resolution,
                t_near: data.t_near,
                t_far: data.t_far,
                n_samples: data.n_samples,
            })
        }
        _ => Err(Error::Config(
            "dataset kind does not match the configured task".into(),
        )),
    }
}

fn evaluate_model(model: &FieldModel, eval: &EvalSet) -> Result<EvalRecord> {
    let params = model.params(None);
    match eval {
        EvalSet::Image { target } => {
            let dims = target.shape();
            let rendered = crate::field::render_image_field(model, dims[0], dims[1])?;
            let p = psnr(&rendered, target, 1.0)?;
            let s = msssim_eval(&rendered, target)?;
            Ok(EvalRecord {
                psnr: p,
                ssim: s,
                per_image: vec![(p, s)],
                images: vec![rendered],
            })
        }
        EvalSet::Rays {
            refs,
            cameras,
            resolution,
            t_near,
            t_far,
            n_samples,
        } => {
            let mut psnrs = Vec::new();
            let mut ssims = Vec::new();
            let mut images = Vec::new();
            for (cam, reference) in cameras.iter().zip(refs) {
                let rays = camera_pixel_rays(cam, *resolution, *t_near, *t_far, *n_samples)?;
                let img = render_ray_image(&params, model.pe, &rays, *resolution)?;
                psnrs.push(psnr(&img, reference, 1.0)?);
                ssims.push(msssim_eval(&img, reference)?);
                images.push(img);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            Ok(EvalRecord {
                psnr: mean(&psnrs),
                ssim: mean(&ssims),
                per_image: psnrs.iter().copied().zip(ssims.iter().copied()).collect(),
                images,
            })
        }
    }
}

/// Evaluates a trained model against a dataset's test targets using
/// the same split and metric path as training-time evaluation.
pub fn evaluate_field(model: &FieldModel, dataset: &Dataset) -> Result<EvalRecord> {
    let eval = build_eval_set(model.task, dataset)?;
    evaluate_model(model, &eval)
}

/// Convenience wrapper: build, run, return model and log.
pub fn train(config: TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, dataset)?;
    let log = trainer.run()?;
    Ok(TrainOutcome {
        model: trainer.model,
        log,
    })
}

fn build_pixel_pool(config: &TrainConfig, target: &ArrayD<f64>) -> Result<Pool> {
    let dims = target.shape();
    if dims.len() != 3 || dims[2] != 3 {
        return Err(Error::ShapeMismatch {
            op: "image_dataset",
            lhs: dims.to_vec(),
            rhs: vec![0, 0, 3],
        });
    }
    if target.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Config(
            "image targets must lie in [0, 1]".into(),
        ));
    }
    let (h, w) = (dims[0], dims[1]);
    let kept = subsample_indices(h * w, config.train_fraction, config.seed)?;

    // Corrupt the kept training targets; evaluation stays clean.
    let mut noise = StreamRng::new(config.seed, &[purpose::NOISE]);
    let mut targets = Array2::zeros((kept.len(), 3));
    let mut meta = Vec::with_capacity(kept.len());
    for (i, &p) in kept.iter().enumerate() {
        let (r, c) = (p / w, p % w);
        for ch in 0..3 {
            targets[[i, ch]] = target[[r, c, ch]];
        }
        if config.noise_std > 0.0 {
            for ch in 0..3 {
                targets[[i, ch]] =
                    (targets[[i, ch]] + config.noise_std * noise.normal()).clamp(0.0, 1.0);
            }
        }
        meta.push(PixelMeta {
            image: 0,
            row: r,
            col: c,
        });
    }

    let coords = pixel_coords(h, w);
    let kept_coords = gather_rows_plain(&coords, &kept);
    let encoded = positional_encode(&kept_coords, config.pe.pos_freqs);

    let local_target = if config.local_patch_baseline {
        // Full grid (enforced by validate), so the kept targets tile
        // the whole corrupted image.
        let mut img = target.clone();
        for (i, &p) in kept.iter().enumerate() {
            let (r, c) = (p / w, p % w);
            for ch in 0..3 {
                img[[r, c, ch]] = targets[[i, ch]];
            }
        }
        Some(img)
    } else {
        None
    };

    Ok(Pool::Pixels {
        encoded,
        targets,
        meta,
        local_target,
        h,
        w,
    })
}

fn build_ray_pool(
    config: &TrainConfig,
    data: &RayData,
    warnings: &mut Vec<String>,
) -> Result<Pool> {
    let n = data.images.len();
    if n == 0 {
        return Err(Error::Config("ray dataset has no images".into()));
    }
    if data.cameras.len() != n {
        return Err(Error::Config(format!(
            "{} cameras for {} images",
            data.cameras.len(),
            n
        )));
    }
    let res = data.resolution;
    for img in &data.images {
        if img.shape() != [res, res, 3] {
            return Err(Error::ShapeMismatch {
                op: "ray_dataset",
                lhs: img.shape().to_vec(),
                rhs: vec![res, res, 3],
            });
        }
    }
    if n < 10 {
        warnings.push(format!(
            "only {n} images; the divisible-by-10 rule leaves a single test image"
        ));
    }
    let (train_idx, _) = split_train_test(n);
    if train_idx.is_empty() {
        return Err(Error::Config(
            "every image landed in the test split; need more than one image".into(),
        ));
    }
    let kept_rel = subsample_indices(train_idx.len(), config.train_fraction, config.seed)?;
    let kept: Vec<usize> = kept_rel.iter().map(|&i| train_idx[i]).collect();

    let mut rays = Vec::new();
    let mut meta = Vec::new();
    let mut images = Vec::new();
    for &img_idx in &kept {
        let mut img = data.images[img_idx].clone();
        let mut noise = StreamRng::new(config.seed, &[purpose::NOISE, img_idx as u64]);
        corrupt_image(&mut img, config.noise_std, &mut noise);
        let mut cam_rays = camera_pixel_rays(
            &data.cameras[img_idx],
            res,
            data.t_near,
            data.t_far,
            data.n_samples,
        )?;
        for (p, ray) in cam_rays.iter_mut().enumerate() {
            let (r, c) = (p / res, p % res);
            ray.target = [img[[r, c, 0]], img[[r, c, 1]], img[[r, c, 2]]];
            meta.push(PixelMeta {
                image: img_idx,
                row: r,
                col: c,
            });
        }
        rays.extend(cam_rays);
        images.push(img);
    }
    let mut targets = Array2::zeros((rays.len(), 3));
    for (i, ray) in rays.iter().enumerate() {
        for ch in 0..3 {
            targets[[i, ch]] = ray.target[ch];
        }
    }

    Ok(Pool::Rays {
        rays,
        targets,
        meta,
        images,
        resolution: res,
    })
}

/// Renders one camera's rays (in chunks) into an image array.
fn render_ray_image(
    params: &crate::field::ModelParams,
    pe: PeConfig,
    rays: &[RaySample],
    resolution: usize,
) -> Result<ArrayD<f64>> {
    let mut img = ArrayD::zeros(IxDyn(&[resolution, resolution, 3]));
    let chunk = 1024;
    let mut start = 0;
    while start < rays.len() {
        let end = (start + chunk).min(rays.len());
        let rendered = render_rays(params, pe, &rays[start..end])?;
        let colors = rendered.colors.value();
        for i in start..end {
            for c in 0..3 {
                img[[i / resolution, i % resolution, c]] = colors[[i - start, c]];
            }
        }
        start = end;
    }
    Ok(img)
}

fn gather_rows_plain(src: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), src.dim().1));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&src.row(r));
    }
    out
}

pub struct AdamState {
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(model: &FieldModel) -> AdamState {
        let mut m = Vec::new();
        for i in 0..model.weights.len() {
            m.push(ArrayD::zeros(model.weights[i].shape()));
            m.push(ArrayD::zeros(model.biases[i].shape()));
        }
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One bias-corrected Adam update over all parameters.
    pub fn update(
        &mut self,
        model: &mut FieldModel,
        grads: &[ArrayD<f64>],
        lr: f64,
        p: &AdamParams,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - p.beta1.powi(self.t as i32);
        let bc2 = 1.0 - p.beta2.powi(self.t as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut err = None;
        model.visit_params_mut(|i, arr| {
            let g = &grads[i];
            if g.shape() != arr.shape() {
                err = Some(Error::ShapeMismatch {
                    op: "adam_update",
                    lhs: g.shape().to_vec(),
                    rhs: arr.shape().to_vec(),
                });
                return;
            }
            let m = &mut ms[i];
            let v = &mut vs[i];
            for ((w, &gi), (mi, vi)) in arr
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = p.beta1 * *mi + (1.0 - p.beta1) * gi;
                *vi = p.beta2 * *vi + (1.0 - p.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + p.eps);
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
