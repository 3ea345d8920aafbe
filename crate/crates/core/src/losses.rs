//! Training objectives: point-wise color losses, the stochastic
//! similarity loss, and their weighted combination.
//!
//! The squared norm in the MSE loss sums over the 3 channels before
//! averaging over rays, so a report that wants the per-element MSE used
//! by PSNR must divide by 3. The multiplex total is
//! `base + lambda * (1 - S3IM)`; with `lambda = 0` the combination
//! short-circuits and the returned total IS the base loss tensor, so
//! standard and multiplex runs are comparable bit for bit. Minibatch
//! sampling lives on its own derived rng stream, so skipping the patch
//! term never shifts the batch sequence.

use crate::metrics::{s3im, SsimConstants, WindowSpec};
use crate::sampler::{PatchStreams, PixelBatch};
use crate::tensor::DiffTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseLoss {
    Mse,
    L1,
}

/// Everything the multiplex objective needs besides the batch itself.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub base: BaseLoss,
    pub lambda: f64,
    /// Stochastic patch repetitions per step.
    pub m: usize,
    pub window: WindowSpec,
    pub constants: SsimConstants,
}

impl LossConfig {
    pub fn new(base: BaseLoss, lambda: f64, m: usize, window: WindowSpec) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {lambda}"
            )));
        }
        if m == 0 {
            return Err(Error::Config("patch repetitions M must be >= 1".into()));
        }
        Ok(LossConfig {
            base,
            lambda,
            m,
            window,
            constants: SsimConstants::default(),
        })
    }

    /// MSE base, uniform 4x4 window, M = 10.
    pub fn standard_defaults(lambda: f64) -> Self {
        Self::new(BaseLoss::Mse, lambda, 10, WindowSpec::s3im_default())
            .expect("defaults are valid")
    }
}

/// `(1/|R|) Σ_r ||pred(r) − target(r)||²` with the channel-sum norm.
pub fn mse_loss(batch: &PixelBatch) -> Result<DiffTensor> {
    let target = DiffTensor::constant(batch.target.clone());
    let diff = batch.predicted.sub(&target)?;
    Ok(diff.square().sum_all().div_scalar(batch.len() as f64))
}

/// `(1/|R|) Σ_r ||pred(r) − target(r)||₁`; subgradient 0 at exact fits.
pub fn l1_color_loss(batch: &PixelBatch) -> Result<DiffTensor> {
    let target = DiffTensor::constant(batch.target.clone());
    let diff = batch.predicted.sub(&target)?;
    Ok(diff.abs().sum_all().div_scalar(batch.len() as f64))
}

/// `1 − S3IM`, in `[0, 2]`.
pub fn s3im_loss(
    batch: &PixelBatch,
    cfg: &LossConfig,
    streams: &PatchStreams,
) -> Result<DiffTensor> {
    let est = s3im(batch, cfg.m, &cfg.window, &cfg.constants, streams)?;
    DiffTensor::scalar(1.0).sub(&est.value)
}

/// Scalar components of one multiplex evaluation, for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossComponents {
    pub base: f64,
    /// Unweighted `1 − S3IM` term; `None` when `lambda = 0` and the
    /// patch machinery never ran.
    pub s3im: Option<f64>,
    pub total: f64,
}

pub struct MultiplexLoss {
    pub total: DiffTensor,
    pub components: LossComponents,
}

/// `base + lambda * (1 − S3IM)` with both components reported.
pub fn multiplex_loss(
    batch: &PixelBatch,
    cfg: &LossConfig,
    streams: &PatchStreams,
) -> Result<MultiplexLoss> {
    let base = match cfg.base {
        BaseLoss::Mse => mse_loss(batch)?,
        BaseLoss::L1 => l1_color_loss(batch)?,
    };
    let base_value = base.item()?;
    if cfg.lambda == 0.0 {
        // No patch sampling at all: the total IS the base loss node.
        return Ok(MultiplexLoss {
            components: LossComponents {
                base: base_value,
                s3im: None,
                total: base_value,
            },
            total: base,
        });
    }
    let s3 = s3im_loss(batch, cfg, streams)?;
    let s3_value = s3.item()?;
    let total = base.add(&s3.mul_scalar(cfg.lambda))?;
    Ok(MultiplexLoss {
        components: LossComponents {
            base: base_value,
            s3im: Some(s3_value),
            total: total.item()?,
        },
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::PixelMeta;
    use crate::tensor::Tape;
    use ndarray::{ArrayD, IxDyn};

    fn meta(b: usize) -> Vec<PixelMeta> {
        (0..b)
            .map(|i| PixelMeta {
                image: 0,
                row: i,
                col: 0,
            })
            .collect()
    }

    fn batch(pred: ArrayD<f64>, target: ArrayD<f64>) -> PixelBatch {
        let b = pred.shape()[0];
        PixelBatch::new(DiffTensor::constant(pred), target, meta(b)).unwrap()
    }

    #[test]
    fn mse_channel_sum_convention() {
        let pred = ArrayD::from_elem(IxDyn(&[1, 3]), 1.0);
        let target = ArrayD::zeros(IxDyn(&[1, 3]));
        let b = batch(pred, target);
        assert!((mse_loss(&b).unwrap().item().unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn l1_basics() {
        let mut pred = ArrayD::zeros(IxDyn(&[1, 3]));
        pred[[0, 0]] = 0.5;
        let target = ArrayD::zeros(IxDyn(&[1, 3]));
        let b = batch(pred, target);
        assert!((l1_color_loss(&b).unwrap().item().unwrap() - 0.5).abs() < 1e-15);

        let same = ArrayD::from_elem(IxDyn(&[4, 3]), 0.25);
        let b = batch(same.clone(), same);
        assert_eq!(l1_color_loss(&b).unwrap().item().unwrap(), 0.0);
        assert_eq!(mse_loss(&b).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn mse_gradient_is_scaled_error() {
        let tape = Tape::new();
        let pred = tape.leaf(ArrayD::from_elem(IxDyn(&[4, 3]), 0.75));
        let target = ArrayD::from_elem(IxDyn(&[4, 3]), 0.5);
        let b = PixelBatch::new(pred.clone(), target, meta(4)).unwrap();
        let loss = mse_loss(&b).unwrap();
        let g = loss.backward().unwrap().grad(&pred).unwrap();
        // d/dp (1/B) Σ (p−t)² = 2(p−t)/B.
        for &v in g.iter() {
            assert!((v - 2.0 * 0.25 / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn checkerboard_patch_loss() {
        // 16 pixels alternating 0/1 against the inverse: any shuffle
        // keeps the anti-correlation, so the loss is the closed form
        // 1 − (−0.25 + C3)/(0.25 + C3) for every seed.
        let pred: Vec<f64> = (0..16).flat_map(|i| [i as f64 % 2.0; 3]).collect();
        let target: Vec<f64> = pred.iter().map(|v| 1.0 - v).collect();
        let b = batch(
            ArrayD::from_shape_vec(IxDyn(&[16, 3]), pred).unwrap(),
            ArrayD::from_shape_vec(IxDyn(&[16, 3]), target).unwrap(),
        );
        let cfg = LossConfig::standard_defaults(1.0);
        let expect = 1.0 - (-0.25 + 4.5e-4) / (0.25 + 4.5e-4);
        for seed in [1, 77, 4096] {
            let loss = s3im_loss(&b, &cfg, &PatchStreams::new(seed, 0)).unwrap();
            assert!((loss.item().unwrap() - expect).abs() < 1e-12);
            assert!((loss.item().unwrap() - 1.99641).abs() < 1e-5);
        }
    }

    #[test]
    fn perfect_prediction_zero_loss() {
        let mut vals = ArrayD::zeros(IxDyn(&[16, 3]));
        for (i, v) in vals.iter_mut().enumerate() {
            *v = (i % 7) as f64 / 7.0;
        }
        let b = batch(vals.clone(), vals);
        let cfg = LossConfig::standard_defaults(2.0);
        let loss = s3im_loss(&b, &cfg, &PatchStreams::new(5, 0)).unwrap();
        assert!(loss.item().unwrap().abs() < 1e-12);
    }

    #[test]
    fn multiplex_decomposition() {
        let mut rng = crate::rng::StreamRng::new(8, &[]);
        let pred: Vec<f64> = (0..64 * 3).map(|_| rng.uniform()).collect();
        let target: Vec<f64> = (0..64 * 3).map(|_| rng.uniform()).collect();
        let b = batch(
            ArrayD::from_shape_vec(IxDyn(&[64, 3]), pred).unwrap(),
            ArrayD::from_shape_vec(IxDyn(&[64, 3]), target).unwrap(),
        );
        let cfg = LossConfig::standard_defaults(2.0);
        let streams = PatchStreams::new(3, 11);
        let out = multiplex_loss(&b, &cfg, &streams).unwrap();
        let c = out.components;
        assert!((c.total - (c.base + 2.0 * c.s3im.unwrap())).abs() < 1e-15);

        // The s3im component must agree with the standalone loss on the
        // same streams.
        let alone = s3im_loss(&b, &cfg, &streams).unwrap().item().unwrap();
        assert_eq!(c.s3im.unwrap(), alone);
    }

    #[test]
    fn lambda_zero_is_exactly_base() {
        let mut rng = crate::rng::StreamRng::new(9, &[]);
        let pred: Vec<f64> = (0..16 * 3).map(|_| rng.uniform()).collect();
        let target: Vec<f64> = (0..16 * 3).map(|_| rng.uniform()).collect();
        let b = batch(
            ArrayD::from_shape_vec(IxDyn(&[16, 3]), pred).unwrap(),
            ArrayD::from_shape_vec(IxDyn(&[16, 3]), target).unwrap(),
        );
        let cfg = LossConfig::standard_defaults(0.0);
        let out = multiplex_loss(&b, &cfg, &PatchStreams::new(3, 0)).unwrap();
        let base = mse_loss(&b).unwrap();
        // Bit-identical, not merely close.
        assert_eq!(out.total.item().unwrap(), base.item().unwrap());
        assert!(out.components.s3im.is_none());
    }

    #[test]
    fn total_is_linear_in_lambda() {
        let mut rng = crate::rng::StreamRng::new(10, &[]);
        let pred: Vec<f64> = (0..16 * 3).map(|_| rng.uniform()).collect();
        let target: Vec<f64> = (0..16 * 3).map(|_| rng.uniform()).collect();
        let b = batch(
            ArrayD::from_shape_vec(IxDyn(&[16, 3]), pred).unwrap(),
            ArrayD::from_shape_vec(IxDyn(&[16, 3]), target).unwrap(),
        );
        let streams = PatchStreams::new(4, 2);
        let at = |lambda: f64| {
            let cfg = LossConfig::standard_defaults(lambda);
            multiplex_loss(&b, &cfg, &streams).unwrap().components
        };
        let (c1, c2) = (at(1.0), at(2.0));
        assert!((c2.total - c2.base - 2.0 * (c1.total - c1.base)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(LossConfig::new(BaseLoss::Mse, -0.5, 10, WindowSpec::s3im_default()).is_err());
        assert!(LossConfig::new(BaseLoss::Mse, f64::NAN, 10, WindowSpec::s3im_default()).is_err());
        assert!(LossConfig::new(BaseLoss::Mse, 1.0, 0, WindowSpec::s3im_default()).is_err());
    }
}
