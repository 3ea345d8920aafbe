//! Central-difference verification of every differentiable path.
//!
//! Each check rebuilds the same scalar loss twice: once on tape leaves
//! for analytic gradients, then element by element on perturbed
//! constants for `(f(x+h) - f(x-h)) / 2h`. Reported is the worst
//! relative error, with the denominator floored at 1e-3 so gradients
//! near zero compare absolutely.

use ndarray::{Array2, ArrayD, IxDyn};

use crate::field::{render_rays, ModelParams, PeConfig, RaySample};
use crate::losses::{multiplex_loss, BaseLoss, LossConfig};
use crate::metrics::{s3im, ssim_window_diff, SsimConstants, WindowSpec};
use crate::rng::StreamRng;
use crate::sampler::{PatchStreams, PixelBatch, PixelMeta};
use crate::tensor::{DiffTensor, Tape};
use crate::Result;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares analytic gradients of `build` (a scalar function of the
/// parameter arrays) against central differences over every element.
pub fn check<F>(name: &'static str, params: &[ArrayD<f64>], build: F) -> Result<CheckReport>
where
    F: Fn(&[DiffTensor]) -> Result<DiffTensor>,
{
    let tape = Tape::new();
    let leaves: Vec<DiffTensor> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&leaves)?;
    let grads = loss.backward()?;
    let analytic: Vec<ArrayD<f64>> = leaves
        .iter()
        .map(|l| grads.grad(l).map(|g| g.as_standard_layout().into_owned()))
        .collect::<Result<_>>()?;

    let eval = |ps: &[ArrayD<f64>]| -> Result<f64> {
        let consts: Vec<DiffTensor> = ps.iter().map(|p| DiffTensor::constant(p.clone())).collect();
        build(&consts)?.item()
    };

    let mut work: Vec<ArrayD<f64>> = params.to_vec();
    let mut max_rel = 0.0f64;
    for k in 0..params.len() {
        for i in 0..params[k].len() {
            let orig = work[k].as_slice().expect("standard layout")[i];
            work[k].as_slice_mut().expect("standard layout")[i] = orig + STEP;
            let plus = eval(&work)?;
            work[k].as_slice_mut().expect("standard layout")[i] = orig - STEP;
            let minus = eval(&work)?;
            work[k].as_slice_mut().expect("standard layout")[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[k].as_slice().expect("standard layout")[i];
            max_rel = max_rel.max(rel_err(a, numeric));
        }
    }
    Ok(CheckReport {
        name,
        max_rel_err: max_rel,
    })
}

/// Values in `(-1, 1)` nudged away from the kinks of relu / abs / the
/// clamp bounds, so finite differences stay one-sided-free.
fn smooth_values(rng: &mut StreamRng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let mut v = rng.uniform() * 2.0 - 1.0;
        for kink in [0.0, -0.8, 0.8] {
            if (v - kink).abs() < 0.01 {
                v += 0.05;
            }
        }
        v
    })
}

fn unit_values(rng: &mut StreamRng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| 0.05 + 0.9 * rng.uniform())
}

fn meta_for(n: usize) -> Vec<PixelMeta> {
    (0..n)
        .map(|i| PixelMeta {
            image: 0,
            row: i / 8,
            col: i % 8,
        })
        .collect()
}

fn check_elementwise(seed: u64) -> Result<CheckReport> {
    let mut rng = StreamRng::new(seed, &[1]);
    let x = smooth_values(&mut rng, &[2, 3]);
    check("elementwise", &[x], |p| {
        let x = &p[0];
        let pos = x.square().add_scalar(0.5);
        let mix = x
            .sin()
            .mul(&x.cos())?
            .add(&x.exp().div(&pos.sqrt()?)?)?
            .add(&pos.ln()?)?
            .add(&x.sigmoid().mul(&x.softplus())?)?
            .add(&x.relu())?
            .add(&x.abs())?
            .add(&x.clamp(-0.8, 0.8)?.square())?
            .sub(&x.neg().mul_scalar(0.25))?;
        Ok(mix.mean_all())
    })
}

fn check_matmul_gather(seed: u64) -> Result<CheckReport> {
    let mut rng = StreamRng::new(seed, &[2]);
    let a = smooth_values(&mut rng, &[3, 4]);
    let b = smooth_values(&mut rng, &[4, 2]);
    check("matmul_gather", &[a, b], |p| {
        let prod = p[0].matmul(&p[1])?;
        // Duplicated row exercises gradient accumulation in gather.
        let picked = prod.gather_rows(&[2, 0, 2])?;
        Ok(picked.reshape(&[6])?.square().sum_all())
    })
}

fn check_ssim_window(seed: u64) -> Result<CheckReport> {
    let mut rng = StreamRng::new(seed, &[3]);
    let a = unit_values(&mut rng, &[25]);
    let b = unit_values(&mut rng, &[25]);
    let weights = WindowSpec::gaussian(5, 1, 1.5)?.weights();
    let c = SsimConstants::default();
    check("ssim_window", &[a, b], move |p| {
        ssim_window_diff(&p[0], &p[1], &weights, &c)
    })
}

fn check_s3im(seed: u64) -> Result<CheckReport> {
    let mut rng = StreamRng::new(seed, &[4]);
    let pred = unit_values(&mut rng, &[16, 3]);
    let target = unit_values(&mut rng, &[16, 3]);
    let window = WindowSpec::uniform(2, 2)?;
    let c = SsimConstants::default();
    let streams = PatchStreams::new(seed, 0);
    check("s3im", &[pred], move |p| {
        let batch = PixelBatch::new(p[0].clone(), target.clone(), meta_for(16))?;
        Ok(s3im(&batch, 3, &window, &c, &streams)?.value)
    })
}

fn check_volume_render(seed: u64) -> Result<CheckReport> {
    let mut rng = StreamRng::new(seed, &[5]);
    let density = ArrayD::from_shape_fn(IxDyn(&[2, 4]), |_| 0.5 + 1.5 * rng.uniform());
    let colors = unit_values(&mut rng, &[8, 3]);
    let target = unit_values(&mut rng, &[2, 3]);
    let deltas = Array2::from_elem((2, 4), 0.25);
    check("volume_render", &[density, colors], move |p| {
        let out = crate::field::volume_render_batch(&p[0], &p[1], &deltas)?;
        let diff = out.colors.sub(&DiffTensor::constant(target.clone()))?;
        Ok(diff.square().sum_all())
    })
}

/// Six tiny parameter arrays standing in for a 2-hidden-layer model.
fn tiny_model_params(
    rng: &mut StreamRng,
    dims: &[usize],
) -> Vec<ArrayD<f64>> {
    let mut out = Vec::new();
    for w in dims.windows(2) {
        let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
        out.push(ArrayD::from_shape_fn(IxDyn(&[w[0], w[1]]), |_| {
            (rng.uniform() * 2.0 - 1.0) * bound
        }));
        out.push(ArrayD::from_shape_fn(IxDyn(&[1, w[1]]), |_| {
            rng.uniform() * 0.1
        }));
    }
    out
}

fn params_from_slice(p: &[DiffTensor]) -> ModelParams {
    ModelParams {
        weights: p.iter().step_by(2).cloned().collect(),
        biases: p.iter().skip(1).step_by(2).cloned().collect(),
    }
}

fn check_image_field(seed: u64) -> Result<CheckReport> {
    let mut rng = StreamRng::new(seed, &[6]);
    let dims = [6, 7, 3];
    let params = tiny_model_params(&mut rng, &dims);
    let inputs = smooth_values(&mut rng, &[16, 6]);
    let target = unit_values(&mut rng, &[16, 3]);
    let cfg = LossConfig::new(BaseLoss::Mse, 1.0, 2, WindowSpec::uniform(2, 2)?)?;
    let streams = PatchStreams::new(seed, 0);
    check("image_field_multiplex", &params, move |p| {
        let mp = params_from_slice(p);
        let colors = mp.forward(&DiffTensor::constant(inputs.clone()))?.sigmoid();
        let batch = PixelBatch::new(colors, target.clone(), meta_for(16))?;
        Ok(multiplex_loss(&batch, &cfg, &streams)?.total)
    })
}

fn check_radiance(seed: u64) -> Result<CheckReport> {
    let mut rng = StreamRng::new(seed, &[7]);
    let pe = PeConfig {
        pos_freqs: 1,
        dir_freqs: 1,
    };
    let input_dim = 3 * 3 + 3 * 3;
    let dims = [input_dim, 6, 4];
    let params = tiny_model_params(&mut rng, &dims);
    let mut rays = Vec::new();
    let mut target = ArrayD::zeros(IxDyn(&[16, 3]));
    for i in 0..16 {
        let dir = if i % 2 == 0 {
            [0.0, 0.0, 1.0]
        } else {
            [1.0, 0.0, 0.0]
        };
        rays.push(RaySample::new(
            [rng.uniform() * 0.4, rng.uniform() * 0.4, 0.0],
            dir,
            0.0,
            1.0,
            3,
            [0.0; 3],
        )?);
        for c in 0..3 {
            target[[i, c]] = 0.1 + 0.8 * rng.uniform();
        }
    }
    let cfg = LossConfig::new(BaseLoss::Mse, 1.0, 2, WindowSpec::uniform(2, 2)?)?;
    let streams = PatchStreams::new(seed, 1);
    check("radiance_multiplex", &params, move |p| {
        let mp = params_from_slice(p);
        let rendered = render_rays(&mp, pe, &rays)?;
        let batch = PixelBatch::new(rendered.colors, target.clone(), meta_for(16))?;
        Ok(multiplex_loss(&batch, &cfg, &streams)?.total)
    })
}

/// The full named suite. Every differentiable surface appears: raw
/// elementwise ops, matmul and gather, the SSIM window statistics, the
/// S3IM estimator through its permutations, the quadrature, and both
/// field tasks end to end through the multiplex objective.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_elementwise(seed)?,
        check_matmul_gather(seed)?,
        check_ssim_window(seed)?,
        check_s3im(seed)?,
        check_volume_render(seed)?,
        check_image_field(seed)?,
        check_radiance(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_default_tolerance() {
        let reports = run_all(11).unwrap();
        assert!(reports.len() >= 6);
        for r in &reports {
            assert!(
                r.passes(DEFAULT_TOLERANCE),
                "{} at {:.3e}",
                r.name,
                r.max_rel_err
            );
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = run_all(3).unwrap();
        let b = run_all(3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.max_rel_err, y.max_rel_err);
        }
    }

    #[test]
    fn square_example_matches_both_oracles() {
        // d/dx sum(x^2) at (0.3, -0.7) is (0.6, -1.4).
        let x = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.3, -0.7]).unwrap();
        let tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let grads = leaf.square().sum_all().backward().unwrap();
        let g = grads.grad(&leaf).unwrap();
        assert!((g[[0]] - 0.6).abs() < 1e-15);
        assert!((g[[1]] + 1.4).abs() < 1e-15);

        let report = check("square", &[x], |p| Ok(p[0].square().sum_all())).unwrap();
        assert!(report.max_rel_err < 1e-8);
    }

    #[test]
    fn impossible_tolerance_fails() {
        let reports = run_all(5).unwrap();
        assert!(reports.iter().any(|r| !r.passes(1e-12)));
    }
}
