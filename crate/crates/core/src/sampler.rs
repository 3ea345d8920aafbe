//! Pixel minibatches and stochastic patches.
//!
//! A training step draws `B` pixels with replacement from the pooled
//! training pixels. The stochastic similarity term then reinterprets
//! that unordered minibatch as images: each round shuffles the batch
//! with a fresh Fisher-Yates permutation and lays it out row-major as a
//! square `side x side` pseudo-image, where `side = sqrt(B)`. The same
//! permutation is applied to the rendered and the ground-truth side, so
//! corresponding pixels stay paired while all spatial structure is
//! synthetic.
//!
//! The contiguous-crop helpers back the local-patch ablation, which
//! swaps the shuffled pseudo-image for a real crop of one image.

use ndarray::ArrayD;

use crate::rng::{purpose, StreamRng};
use crate::tensor::DiffTensor;
use crate::{Error, Result};

/// Provenance of one sampled pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelMeta {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// The minibatch: rendered colors (differentiable), ground truth, and
/// per-pixel provenance.
pub struct PixelBatch {
    pub predicted: DiffTensor,
    pub target: ArrayD<f64>,
    pub meta: Vec<PixelMeta>,
}

impl PixelBatch {
    /// Validates the pairing: equal leading dimension, 3 channels on
    /// both sides, targets inside the unit color range.
    pub fn new(predicted: DiffTensor, target: ArrayD<f64>, meta: Vec<PixelMeta>) -> Result<Self> {
        let ps = predicted.shape().to_vec();
        let ts = target.shape().to_vec();
        if ps.len() != 2 || ts.len() != 2 || ps != ts {
            return Err(Error::ShapeMismatch {
                op: "pixel_batch",
                lhs: ps,
                rhs: ts,
            });
        }
        if ps[0] == 0 {
            return Err(Error::BatchShape {
                batch: 0,
                reason: "batch is empty".into(),
            });
        }
        if meta.len() != ps[0] {
            return Err(Error::BatchShape {
                batch: ps[0],
                reason: format!("{} meta entries for {} pixels", meta.len(), ps[0]),
            });
        }
        if target.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain {
                op: "pixel_batch",
                detail: "target colors must lie in [0, 1]".into(),
            });
        }
        Ok(PixelBatch {
            predicted,
            target,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }
}

/// One shuffled pseudo-image pair plus the permutation that made it.
pub struct StochasticPatch {
    pub permutation: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub predicted_patch: DiffTensor,
    pub target_patch: ArrayD<f64>,
}

/// Geometry of the square patch assembled from a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchShape {
    pub side: usize,
    pub kernel: usize,
}

impl PatchShape {
    /// Blocks per patch edge under a stride-`kernel` tiling.
    pub fn blocks(&self) -> usize {
        self.side / self.kernel
    }
}

/// Validates that `batch` pixels tile a square patch compatible with a
/// `kernel x kernel`, stride-`kernel` window.
pub fn patch_shape(batch: usize, kernel: usize) -> Result<PatchShape> {
    if kernel == 0 {
        return Err(Error::Config("kernel must be positive".into()));
    }
    if batch == 0 {
        return Err(Error::BatchShape {
            batch,
            reason: "batch is empty".into(),
        });
    }
    let side = batch.isqrt();
    if side * side != batch {
        return Err(Error::BatchShape {
            batch,
            reason: "not a perfect square".into(),
        });
    }
    if side % kernel != 0 {
        return Err(Error::BatchShape {
            batch,
            reason: format!("patch side {side} is not a multiple of kernel {kernel}"),
        });
    }
    Ok(PatchShape { side, kernel })
}

/// Splittable source of the per-round shuffles: one run seed, one
/// iteration, a fresh stream per round `m`. Keeping rounds on derived
/// streams (rather than one shared cursor) means the shuffle sequence
/// for round `m` never depends on how many rounds ran before it.
#[derive(Debug, Clone, Copy)]
pub struct PatchStreams {
    pub seed: u64,
    pub iteration: u64,
}

impl PatchStreams {
    pub fn new(seed: u64, iteration: u64) -> Self {
        PatchStreams { seed, iteration }
    }

    pub fn for_round(&self, m: u64) -> StreamRng {
        StreamRng::new(self.seed, &[purpose::PATCH, self.iteration, m])
    }
}

/// Draws one permutation and assembles the paired stochastic patch.
pub fn make_patch(batch: &PixelBatch, rng: &mut StreamRng, kernel: usize) -> Result<StochasticPatch> {
    let perm = rng.permutation(batch.len());
    make_patch_from_permutation(batch, &perm, kernel)
}

/// Deterministic core of [`make_patch`]: applies a caller-supplied
/// permutation to both sides of the batch.
pub fn make_patch_from_permutation(
    batch: &PixelBatch,
    perm: &[usize],
    kernel: usize,
) -> Result<StochasticPatch> {
    let shape = patch_shape(batch.len(), kernel)?;
    if perm.len() != batch.len() {
        return Err(Error::BatchShape {
            batch: batch.len(),
            reason: format!("permutation has length {}", perm.len()),
        });
    }
    let predicted_patch = assemble(&batch.predicted, perm, shape)?;
    let target_patch = assemble(&DiffTensor::constant(batch.target.clone()), perm, shape)?;
    Ok(StochasticPatch {
        permutation: perm.to_vec(),
        height: shape.side,
        width: shape.side,
        predicted_patch,
        target_patch: target_patch.into_value(),
    })
}

/// Applies `perm` to a `(B, C)` tensor and lays it out as
/// `(side, side, C)`.
fn assemble(pixels: &DiffTensor, perm: &[usize], shape: PatchShape) -> Result<DiffTensor> {
    let channels = pixels.shape()[1];
    pixels
        .gather_rows(perm)?
        .reshape(&[shape.side, shape.side, channels])
}

/// A real contiguous crop, the non-stochastic baseline patch.
pub struct LocalPatch {
    pub origin: (usize, usize),
    pub side: usize,
    pub predicted_patch: DiffTensor,
    pub target_patch: ArrayD<f64>,
}

/// Pairs a rendered crop with the matching region of `image`.
///
/// `predicted` holds the rendered colors of the crop pixels in row-major
/// order, shape `(side*side, 3)`; `image` is the full `(H, W, 3)` ground
/// truth. Both sides keep their true spatial layout.
pub fn make_local_patch(
    predicted: &DiffTensor,
    image: &ArrayD<f64>,
    origin: (usize, usize),
    side: usize,
) -> Result<LocalPatch> {
    let dims = image.shape();
    if dims.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "local_patch",
            lhs: dims.to_vec(),
            rhs: vec![0, 0, 3],
        });
    }
    let (h, w, channels) = (dims[0], dims[1], dims[2]);
    let (r0, c0) = origin;
    if side == 0 || r0 + side > h || c0 + side > w {
        return Err(Error::Config(format!(
            "{side}x{side} crop at ({r0}, {c0}) exceeds a {h}x{w} image"
        )));
    }
    if predicted.shape() != [side * side, channels] {
        return Err(Error::ShapeMismatch {
            op: "local_patch",
            lhs: predicted.shape().to_vec(),
            rhs: vec![side * side, channels],
        });
    }
    let region = image.slice(ndarray::s![r0..r0 + side, c0..c0 + side, ..]);
    Ok(LocalPatch {
        origin,
        side,
        predicted_patch: predicted.reshape(&[side, side, channels])?,
        target_patch: region.to_owned().into_dyn(),
    })
}

/// Uniformly random top-left corner for a `side x side` crop inside an
/// `h x w` image.
pub fn crop_origin(rng: &mut StreamRng, h: usize, w: usize, side: usize) -> Result<(usize, usize)> {
    if side == 0 || side > h || side > w {
        return Err(Error::Config(format!(
            "{side}x{side} crop does not fit a {h}x{w} image"
        )));
    }
    let row = rng.below((h - side + 1) as u64) as usize;
    let col = rng.below((w - side + 1) as u64) as usize;
    Ok((row, col))
}

/// Row-major flat pixel indices of the crop at `origin` within one
/// `h x w` image.
pub fn crop_indices(origin: (usize, usize), w: usize, side: usize) -> Vec<usize> {
    let (r0, c0) = origin;
    let mut out = Vec::with_capacity(side * side);
    for r in r0..r0 + side {
        for c in c0..c0 + side {
            out.push(r * w + c);
        }
    }
    out
}

/// `batch` distinct pixel indices drawn uniformly from `0..pool`
/// (without replacement within one step; steps draw independently).
pub fn minibatch_indices(rng: &mut StreamRng, pool: usize, batch: usize) -> Result<Vec<usize>> {
    if batch == 0 {
        return Err(Error::BatchShape {
            batch,
            reason: "batch is empty".into(),
        });
    }
    if batch > pool {
        return Err(Error::Config(format!(
            "cannot draw {batch} distinct pixels from a pool of {pool}"
        )));
    }
    // Partial Fisher-Yates: after `batch` swaps the prefix is a uniform
    // ordered sample.
    let mut scratch: Vec<usize> = (0..pool).collect();
    for i in 0..batch {
        let j = i + rng.below((pool - i) as u64) as usize;
        scratch.swap(i, j);
    }
    scratch.truncate(batch);
    Ok(scratch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn ramp_batch(b: usize) -> PixelBatch {
        let n = (b * 3) as f64;
        let data: Vec<f64> = (0..b * 3).map(|i| i as f64 / n).collect();
        let target = ArrayD::from_shape_vec(IxDyn(&[b, 3]), data).unwrap();
        let predicted = DiffTensor::constant(target.clone());
        let meta = (0..b)
            .map(|i| PixelMeta {
                image: 0,
                row: i,
                col: 0,
            })
            .collect();
        PixelBatch::new(predicted, target, meta).unwrap()
    }

    #[test]
    fn patch_shape_guards() {
        let p = patch_shape(4096, 4).unwrap();
        assert_eq!((p.side, p.blocks()), (64, 16));
        assert_eq!(patch_shape(1024, 4).unwrap().side, 32);
        assert!(matches!(patch_shape(1000, 4), Err(Error::BatchShape { .. })));
        // 25 pixels form a 5x5 patch, but 5 is not a multiple of 4.
        assert!(matches!(patch_shape(25, 4), Err(Error::BatchShape { .. })));
        assert!(patch_shape(25, 5).is_ok());
    }

    #[test]
    fn batch_validation() {
        let target = ArrayD::from_elem(IxDyn(&[4, 3]), 0.5);
        let predicted = DiffTensor::constant(target.clone());
        assert!(PixelBatch::new(predicted.clone(), target.clone(), vec![]).is_err());

        let meta: Vec<PixelMeta> = (0..4)
            .map(|i| PixelMeta {
                image: 0,
                row: 0,
                col: i,
            })
            .collect();
        let out_of_range = ArrayD::from_elem(IxDyn(&[4, 3]), 1.5);
        assert!(PixelBatch::new(predicted, out_of_range, meta).is_err());
    }

    #[test]
    fn identity_permutation_is_row_major_reshape() {
        let batch = ramp_batch(16);
        let perm: Vec<usize> = (0..16).collect();
        let patch = make_patch_from_permutation(&batch, &perm, 4).unwrap();
        assert_eq!((patch.height, patch.width), (4, 4));
        for i in 0..16 {
            for ch in 0..3 {
                assert_eq!(
                    patch.predicted_patch.value()[[i / 4, i % 4, ch]],
                    batch.target[[i, ch]],
                );
            }
        }
    }

    #[test]
    fn pairing_is_preserved_under_any_permutation() {
        let batch = ramp_batch(64);
        let mut rng = StreamRng::new(21, &[purpose::PATCH, 0, 0]);
        let patch = make_patch(&batch, &mut rng, 4).unwrap();
        // predicted == target going in, so the patches must agree cell
        // for cell even though both were shuffled.
        let diff = patch
            .predicted_patch
            .value()
            .iter()
            .zip(patch.target_patch.iter())
            .all(|(a, b)| a == b);
        assert!(diff);
        let mut sorted = patch.permutation.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn permutations_are_bijections_at_scale() {
        for &b in &[16usize, 1024, 4096] {
            let mut rng = StreamRng::new(b as u64, &[purpose::PATCH]);
            for _ in 0..10_000 {
                let p = rng.permutation(b);
                let mut seen = vec![false; b];
                for &i in &p {
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
    }

    #[test]
    fn permutation_positions_are_uniform() {
        let b = 16;
        let draws = 10_000;
        let mut counts = vec![vec![0u32; b]; b];
        let mut rng = StreamRng::new(77, &[purpose::PATCH]);
        for _ in 0..draws {
            let p = rng.permutation(b);
            for (pos, &idx) in p.iter().enumerate() {
                counts[pos][idx] += 1;
            }
        }
        for row in &counts {
            for &c in row {
                let freq = c as f64 / draws as f64;
                assert!((freq - 1.0 / b as f64).abs() < 0.01, "freq {freq}");
            }
        }
    }

    #[test]
    fn gradient_routes_one_pixel_to_one_cell() {
        use crate::tensor::Tape;

        let b = 16;
        let target = ArrayD::from_elem(IxDyn(&[b, 3]), 0.5);
        let tape = Tape::new();
        let predicted = tape.leaf(ArrayD::from_elem(IxDyn(&[b, 3]), 0.25));
        let meta = (0..b)
            .map(|i| PixelMeta {
                image: 0,
                row: i,
                col: 0,
            })
            .collect();
        let batch = PixelBatch::new(predicted.clone(), target, meta).unwrap();
        let mut rng = StreamRng::new(3, &[purpose::PATCH, 5, 0]);
        let patch = make_patch(&batch, &mut rng, 4).unwrap();

        // Weight a single patch position; the gradient must land on
        // exactly the pixel the permutation placed there.
        let mut weight = ArrayD::zeros(IxDyn(&[4, 4, 3]));
        weight[[2, 1, 0]] = 1.0;
        let root = patch
            .predicted_patch
            .mul(&DiffTensor::constant(weight))
            .unwrap()
            .sum_all();
        let g = root.backward().unwrap().grad(&predicted).unwrap();
        let hot = patch.permutation[2 * 4 + 1];
        for r in 0..b {
            for c in 0..3 {
                let expect = if r == hot && c == 0 { 1.0 } else { 0.0 };
                assert_eq!(g[[r, c]], expect);
            }
        }
    }

    #[test]
    fn local_patch_slices_the_image() {
        let mut img = ArrayD::zeros(IxDyn(&[8, 8, 3]));
        for r in 0..8 {
            for c in 0..8 {
                for ch in 0..3 {
                    img[[r, c, ch]] = (r * 8 + c) as f64 / 100.0 + ch as f64;
                }
            }
        }
        let predicted = DiffTensor::constant(ArrayD::from_elem(IxDyn(&[16, 3]), 0.1));
        let lp = make_local_patch(&predicted, &img, (2, 3), 4).unwrap();
        assert_eq!(lp.target_patch.shape(), &[4, 4, 3]);
        assert_eq!(lp.target_patch[[0, 0, 0]], img[[2, 3, 0]]);
        assert_eq!(lp.target_patch[[3, 3, 2]], img[[5, 6, 2]]);

        // Full-image crop reproduces the image.
        let full_pred = DiffTensor::constant(ArrayD::from_elem(IxDyn(&[64, 3]), 0.1));
        let full = make_local_patch(&full_pred, &img, (0, 0), 8).unwrap();
        assert_eq!(full.target_patch, img);

        assert!(make_local_patch(&predicted, &img, (6, 6), 4).is_err());
    }

    #[test]
    fn crops_stay_inside_image() {
        let mut rng = StreamRng::new(5, &[purpose::BATCH]);
        for _ in 0..200 {
            let (r, c) = crop_origin(&mut rng, 48, 64, 32).unwrap();
            assert!(r + 32 <= 48 && c + 32 <= 64);
        }
        assert!(crop_origin(&mut rng, 16, 64, 32).is_err());

        let ix = crop_indices((1, 2), 8, 2);
        assert_eq!(ix, vec![10, 11, 18, 19]);
    }

    #[test]
    fn minibatch_is_distinct_within_a_step() {
        let mut rng = StreamRng::new(9, &[purpose::BATCH, 0]);
        let ix = minibatch_indices(&mut rng, 10_000, 4096).unwrap();
        assert_eq!(ix.len(), 4096);
        assert!(ix.iter().all(|&i| i < 10_000));
        let mut uniq = ix.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 4096);

        // Exhausting the pool yields a permutation of it.
        let mut all = minibatch_indices(&mut rng, 64, 64).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());

        assert!(minibatch_indices(&mut rng, 16, 17).is_err());
    }

    #[test]
    fn patch_rounds_differ_but_reproduce() {
        let streams = PatchStreams::new(11, 0);
        let batch = ramp_batch(64);
        let p0 = make_patch(&batch, &mut streams.for_round(0), 4).unwrap();
        let p1 = make_patch(&batch, &mut streams.for_round(1), 4).unwrap();
        assert_ne!(p0.permutation, p1.permutation);
        let again = make_patch(&batch, &mut streams.for_round(1), 4).unwrap();
        assert_eq!(again.permutation, p1.permutation);
    }
}
