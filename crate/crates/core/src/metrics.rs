//! Image similarity metrics: PSNR, windowed SSIM, evaluation-grade
//! mean-SSIM, and the stochastic estimator built on shuffled patches.
//!
//! Two computation paths exist. The plain-`f64` path serves evaluation
//! (PSNR and Gaussian mean-SSIM on rendered images). The [`DiffTensor`]
//! path serves training; it uses the algebraic identity
//! `c·s = (2σ_ab + C2) / (σ_a² + σ_b² + C2)`, exact because `C3 = C2/2`
//! by construction, so no square root of a variance ever enters the
//! graph. The plain path evaluates the literal three-factor product,
//! which doubles as an independent check of that identity.

use ndarray::ArrayD;

use crate::sampler::{make_patch, patch_shape, PatchStreams, PixelBatch};
use crate::tensor::DiffTensor;
use crate::{Error, Result};

/// Stabilizing constants of the similarity comparisons.
#[derive(Debug, Clone, Copy)]
pub struct SsimConstants {
    pub k1: f64,
    pub k2: f64,
    /// Data range of the inputs (1 for unit-range color).
    pub l: f64,
}

impl SsimConstants {
    pub fn new(k1: f64, k2: f64, l: f64) -> Result<Self> {
        if k1 <= 0.0 || k2 <= 0.0 || l <= 0.0 {
            return Err(Error::Config(format!(
                "SSIM constants must be positive, got K1={k1}, K2={k2}, L={l}"
            )));
        }
        Ok(SsimConstants { k1, k2, l })
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.l) * (self.k1 * self.l)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.l) * (self.k2 * self.l)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }
}

impl Default for SsimConstants {
    fn default() -> Self {
        SsimConstants {
            k1: 0.01,
            k2: 0.03,
            l: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Uniform,
    Gaussian,
}

/// Window geometry and weighting for local statistics.
#[derive(Debug, Clone)]
pub struct WindowSpec {
    pub kind: WindowKind,
    pub kernel: usize,
    pub stride: usize,
    /// Standard deviation of the Gaussian taps; unused for uniform.
    pub std: f64,
}

impl WindowSpec {
    pub fn uniform(kernel: usize, stride: usize) -> Result<Self> {
        Self::check_geometry(kernel, stride)?;
        Ok(WindowSpec {
            kind: WindowKind::Uniform,
            kernel,
            stride,
            std: 0.0,
        })
    }

    pub fn gaussian(kernel: usize, stride: usize, std: f64) -> Result<Self> {
        Self::check_geometry(kernel, stride)?;
        if std <= 0.0 {
            return Err(Error::Config(format!(
                "gaussian window std must be positive, got {std}"
            )));
        }
        Ok(WindowSpec {
            kind: WindowKind::Gaussian,
            kernel,
            stride,
            std,
        })
    }

    /// Stochastic-patch preset: uniform 4x4 blocks, stride 4.
    pub fn s3im_default() -> Self {
        Self::uniform(4, 4).expect("preset is valid")
    }

    /// Uniform non-overlapping tiling for an arbitrary kernel.
    pub fn s3im_with_kernel(kernel: usize) -> Result<Self> {
        Self::uniform(kernel, kernel)
    }

    /// Evaluation preset: 11x11 Gaussian, std 1.5, stride 1.
    pub fn evaluation() -> Self {
        Self::gaussian(11, 1, 1.5).expect("preset is valid")
    }

    /// Flattened window weights in row-major tap order, unit sum.
    pub fn weights(&self) -> Vec<f64> {
        match self.kind {
            WindowKind::Uniform => {
                let n = self.kernel * self.kernel;
                vec![1.0 / n as f64; n]
            }
            WindowKind::Gaussian => {
                let taps = gaussian_taps(self.kernel, self.std);
                let mut w = Vec::with_capacity(self.kernel * self.kernel);
                for ti in &taps {
                    for tj in &taps {
                        w.push(ti * tj);
                    }
                }
                let sum: f64 = w.iter().sum();
                for v in &mut w {
                    *v /= sum;
                }
                w
            }
        }
    }

    fn check_geometry(kernel: usize, stride: usize) -> Result<()> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "window kernel and stride must be positive, got {kernel} and {stride}"
            )));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps centered on the kernel midpoint.
fn gaussian_taps(kernel: usize, std: f64) -> Vec<f64> {
    let center = (kernel as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..kernel)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * std * std)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Weighted first and second moments of one window pair.
#[derive(Debug, Clone, Copy)]
pub struct LocalStats {
    pub mu_a: f64,
    pub mu_b: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub cov: f64,
}

impl LocalStats {
    /// Two-pass weighted statistics; `w` must be normalized.
    pub fn from_windows(a: &[f64], b: &[f64], w: &[f64]) -> LocalStats {
        let mut mu_a = 0.0;
        let mut mu_b = 0.0;
        for i in 0..a.len() {
            mu_a += w[i] * a[i];
            mu_b += w[i] * b[i];
        }
        let mut var_a = 0.0;
        let mut var_b = 0.0;
        let mut cov = 0.0;
        for i in 0..a.len() {
            let da = a[i] - mu_a;
            let db = b[i] - mu_b;
            var_a += w[i] * da * da;
            var_b += w[i] * db * db;
            cov += w[i] * da * db;
        }
        LocalStats {
            mu_a,
            mu_b,
            sigma_a: var_a.sqrt(),
            sigma_b: var_b.sqrt(),
            cov,
        }
    }

    /// Literal three-factor similarity: luminance, contrast, structure.
    pub fn ssim(&self, c: &SsimConstants) -> f64 {
        let (c1, c2, c3) = (c.c1(), c.c2(), c.c3());
        let l = (2.0 * self.mu_a * self.mu_b + c1) / (self.mu_a * self.mu_a + self.mu_b * self.mu_b + c1);
        let con = (2.0 * self.sigma_a * self.sigma_b + c2)
            / (self.sigma_a * self.sigma_a + self.sigma_b * self.sigma_b + c2);
        let s = (self.cov + c3) / (self.sigma_a * self.sigma_b + c3);
        l * con * s
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::WeightNormalization { sum });
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse(a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::Domain {
            op: "mse",
            detail: "empty arrays".into(),
        });
    }
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n as f64)
}

/// Peak signal-to-noise ratio in decibels; identical inputs give the
/// positive-infinity sentinel.
pub fn psnr(test: &ArrayD<f64>, reference: &ArrayD<f64>, l: f64) -> Result<f64> {
    if l <= 0.0 {
        return Err(Error::Config(format!("data range must be positive, got {l}")));
    }
    let err = mse(test, reference)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (l * l / err).log10())
}

/// Similarity of one flattened window pair under normalized weights.
pub fn ssim_window(a: &[f64], b: &[f64], w: &[f64], c: &SsimConstants) -> Result<f64> {
    if a.len() != b.len() || a.len() != w.len() {
        return Err(Error::ShapeMismatch {
            op: "ssim_window",
            lhs: vec![a.len()],
            rhs: vec![b.len().max(w.len())],
        });
    }
    check_weights(w)?;
    Ok(LocalStats::from_windows(a, b, w).ssim(c))
}

/// Differentiable [`ssim_window`]: same value through the merged
/// contrast-structure form, gradients flow through `a`.
pub fn ssim_window_diff(
    a: &DiffTensor,
    b: &DiffTensor,
    w: &[f64],
    c: &SsimConstants,
) -> Result<DiffTensor> {
    if a.shape() != b.shape() || a.value().len() != w.len() {
        return Err(Error::ShapeMismatch {
            op: "ssim_window",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    check_weights(w)?;
    let flat = [w.len()];
    let a = a.reshape(&flat)?;
    let b = b.reshape(&flat)?;
    let wt = DiffTensor::constant(ArrayD::from_shape_vec(ndarray::IxDyn(&flat), w.to_vec()).expect("length matches"));
    let mu_a = a.mul(&wt)?.sum_all();
    let mu_b = b.mul(&wt)?.sum_all();
    let ea2 = a.square().mul(&wt)?.sum_all();
    let eb2 = b.square().mul(&wt)?.sum_all();
    let eab = a.mul(&b)?.mul(&wt)?.sum_all();
    let var_a = ea2.sub(&mu_a.square())?;
    let var_b = eb2.sub(&mu_b.square())?;
    let cov = eab.sub(&mu_a.mul(&mu_b)?)?;
    merged_ssim(&mu_a, &mu_b, &var_a, &var_b, &cov, c)
}

/// `l·c·s` with the contrast and structure factors merged; exact
/// because `C3 = C2/2`.
fn merged_ssim(
    mu_a: &DiffTensor,
    mu_b: &DiffTensor,
    var_a: &DiffTensor,
    var_b: &DiffTensor,
    cov: &DiffTensor,
    c: &SsimConstants,
) -> Result<DiffTensor> {
    let (c1, c2) = (c.c1(), c.c2());
    let l_num = mu_a.mul(mu_b)?.mul_scalar(2.0).add_scalar(c1);
    let l_den = mu_a.square().add(&mu_b.square())?.add_scalar(c1);
    let cs_num = cov.mul_scalar(2.0).add_scalar(c2);
    let cs_den = var_a.add(var_b)?.add_scalar(c2);
    l_num.div(&l_den)?.mul(&cs_num.div(&cs_den)?)
}

/// Per-window, per-channel scores and their mean.
#[derive(Debug, Clone)]
pub struct SsimMap {
    /// Shape `(rows, cols, channels)` of window positions.
    pub scores: ArrayD<f64>,
    pub mean: f64,
}

/// Slides the window over both images (valid positions only, no
/// padding) and scores each channel independently.
pub fn ssim_map(
    pred: &ArrayD<f64>,
    target: &ArrayD<f64>,
    window: &WindowSpec,
    c: &SsimConstants,
) -> Result<SsimMap> {
    let (h, w_dim, channels) = check_image_pair(pred, target, window)?;
    let k = window.kernel;
    let s = window.stride;
    let weights = window.weights();
    let rows = (h - k) / s + 1;
    let cols = (w_dim - k) / s + 1;
    let mut scores = ArrayD::zeros(ndarray::IxDyn(&[rows, cols, channels]));
    let mut wa = vec![0.0; k * k];
    let mut wb = vec![0.0; k * k];
    for ri in 0..rows {
        for ci in 0..cols {
            let (r0, c0) = (ri * s, ci * s);
            for ch in 0..channels {
                let mut t = 0;
                for dr in 0..k {
                    for dc in 0..k {
                        wa[t] = pred[[r0 + dr, c0 + dc, ch]];
                        wb[t] = target[[r0 + dr, c0 + dc, ch]];
                        t += 1;
                    }
                }
                scores[[ri, ci, ch]] = LocalStats::from_windows(&wa, &wb, &weights).ssim(c);
            }
        }
    }
    let mean = scores.sum() / scores.len() as f64;
    Ok(SsimMap { scores, mean })
}

/// Differentiable block-tiled similarity map for uniform windows with
/// `stride == kernel`. Inputs are `(H, W, C)`; the result is the
/// `(H/K, W/K, C)` per-block map. Blocks are carved out with a single
/// reshape, so the whole map costs a handful of tape nodes.
pub fn ssim_map_diff(
    pred: &DiffTensor,
    target: &DiffTensor,
    window: &WindowSpec,
    c: &SsimConstants,
) -> Result<DiffTensor> {
    if window.kind != WindowKind::Uniform || window.stride != window.kernel {
        return Err(Error::Config(
            "differentiable ssim_map supports uniform windows with stride == kernel".into(),
        ));
    }
    let (h, w, channels) = check_image_pair(pred.value(), target.value(), window)?;
    let k = window.kernel;
    let (hb, wb) = (h / k, w / k);
    let blocked_a = pred.reshape(&[hb, k, wb, k, channels])?;
    let blocked_b = target.reshape(&[hb, k, wb, k, channels])?;
    let inner = [1usize, 3];
    let mu_a = blocked_a.mean_axes(&inner)?;
    let mu_b = blocked_b.mean_axes(&inner)?;
    let ea2 = blocked_a.square().mean_axes(&inner)?;
    let eb2 = blocked_b.square().mean_axes(&inner)?;
    let eab = blocked_a.mul(&blocked_b)?.mean_axes(&inner)?;
    let var_a = ea2.sub(&mu_a.square())?;
    let var_b = eb2.sub(&mu_b.square())?;
    let cov = eab.sub(&mu_a.mul(&mu_b)?)?;
    merged_ssim(&mu_a, &mu_b, &var_a, &var_b, &cov, c)
}

/// Evaluation-grade mean SSIM: 11x11 Gaussian window, std 1.5, stride 1.
pub fn msssim_eval(pred: &ArrayD<f64>, target: &ArrayD<f64>) -> Result<f64> {
    Ok(ssim_map(pred, target, &WindowSpec::evaluation(), &SsimConstants::default())?.mean)
}

fn check_image_pair(
    pred: &ArrayD<f64>,
    target: &ArrayD<f64>,
    window: &WindowSpec,
) -> Result<(usize, usize, usize)> {
    if pred.shape() != target.shape() || pred.ndim() != 3 {
        return Err(Error::ShapeMismatch {
            op: "ssim_map",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let (h, w, channels) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    let k = window.kernel;
    if h < k || w < k {
        return Err(Error::ImageTooSmall { h, w, window: k });
    }
    if window.stride == k && (h % k != 0 || w % k != 0) {
        return Err(Error::Config(format!(
            "{h}x{w} image does not tile exactly with kernel {k} at stride {k}"
        )));
    }
    if channels == 0 {
        return Err(Error::Domain {
            op: "ssim_map",
            detail: "zero channels".into(),
        });
    }
    Ok((h, w, channels))
}

/// Stochastic structural similarity of one batch: the average over `m`
/// shuffled-patch rounds plus each round's individual score.
pub struct S3imOutcome {
    /// Scalar estimator value; differentiable when the batch is.
    pub value: DiffTensor,
    pub per_round: Vec<f64>,
}

/// The estimator `(1/M) Σ_m mean-SSIM(Patch_m(pred), Patch_m(target))`
/// with per-round shuffles drawn from derived streams.
pub fn s3im(
    batch: &PixelBatch,
    m: usize,
    window: &WindowSpec,
    c: &SsimConstants,
    streams: &PatchStreams,
) -> Result<S3imOutcome> {
    if m == 0 {
        return Err(Error::Config("patch repetitions M must be >= 1".into()));
    }
    patch_shape(batch.len(), window.kernel)?;
    let mut acc: Option<DiffTensor> = None;
    let mut per_round = Vec::with_capacity(m);
    for round in 0..m {
        let mut rng = streams.for_round(round as u64);
        let patch = make_patch(batch, &mut rng, window.kernel)?;
        let target_t = DiffTensor::constant(patch.target_patch.clone());
        let mean = ssim_map_diff(&patch.predicted_patch, &target_t, window, c)?.mean_all();
        per_round.push(mean.item()?);
        acc = Some(match acc {
            Some(a) => a.add(&mean)?,
            None => mean,
        });
    }
    let value = acc.expect("m >= 1").div_scalar(m as f64);
    Ok(S3imOutcome { value, per_round })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use crate::sampler::PixelMeta;
    use ndarray::IxDyn;

    fn const_image(h: usize, w: usize, v: f64) -> ArrayD<f64> {
        ArrayD::from_elem(IxDyn(&[h, w, 3]), v)
    }

    fn random_image(h: usize, w: usize, rng: &mut StreamRng) -> ArrayD<f64> {
        let data: Vec<f64> = (0..h * w * 3).map(|_| rng.uniform()).collect();
        ArrayD::from_shape_vec(IxDyn(&[h, w, 3]), data).unwrap()
    }

    fn batch_from_pixels(pred: Vec<f64>, target: Vec<f64>) -> PixelBatch {
        let b = pred.len() / 3;
        let predicted =
            DiffTensor::constant(ArrayD::from_shape_vec(IxDyn(&[b, 3]), pred).unwrap());
        let target = ArrayD::from_shape_vec(IxDyn(&[b, 3]), target).unwrap();
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
    fn psnr_basics() {
        let a = const_image(4, 4, 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);

        let b = const_image(4, 4, 0.6);
        // Uniform error 0.1 -> MSE 0.01 -> 20 dB.
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);

        let z = const_image(2, 2, 0.0);
        let f = const_image(2, 2, 255.0);
        assert!((psnr(&z, &f, 255.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_window_oracles() {
        let c = SsimConstants::default();
        let w = vec![0.25; 4];

        let a = [0.3, 0.5, 0.2, 0.9];
        assert!((ssim_window(&a, &a, &w, &c).unwrap() - 1.0).abs() < 1e-15);

        // Zero-variance pair 0 vs 1: c and s collapse to 1, leaving
        // C1/(1 + C1).
        let zeros = [0.0; 4];
        let ones = [1.0; 4];
        let expect = 1e-4 / 1.0001;
        assert!((ssim_window(&zeros, &ones, &w, &c).unwrap() - expect).abs() < 1e-12);

        // Anti-correlated checkerboard.
        let cb = [0.0, 1.0, 0.0, 1.0];
        let inv = [1.0, 0.0, 1.0, 0.0];
        let got = ssim_window(&cb, &inv, &w, &c).unwrap();
        let expect = (-0.25 + 4.5e-4) / (0.25 + 4.5e-4);
        assert!((got - expect).abs() < 1e-12);
        assert!((got + 0.99641).abs() < 1e-5);
    }

    #[test]
    fn ssim_window_rejects_unnormalized_weights() {
        let c = SsimConstants::default();
        let w = vec![0.3; 4];
        assert!(matches!(
            ssim_window(&[0.0; 4], &[0.0; 4], &w, &c),
            Err(Error::WeightNormalization { .. })
        ));
    }

    #[test]
    fn ssim_window_symmetry() {
        let c = SsimConstants::default();
        let spec = WindowSpec::uniform(3, 3).unwrap();
        let w = spec.weights();
        let mut rng = StreamRng::new(31, &[]);
        for _ in 0..50 {
            let a: Vec<f64> = (0..9).map(|_| rng.uniform()).collect();
            let b: Vec<f64> = (0..9).map(|_| rng.uniform()).collect();
            let ab = ssim_window(&a, &b, &w, &c).unwrap();
            let ba = ssim_window(&b, &a, &w, &c).unwrap();
            assert!((ab - ba).abs() < 1e-15);
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&ab));
        }
    }

    #[test]
    fn diff_window_matches_plain() {
        let c = SsimConstants::default();
        let spec = WindowSpec::uniform(4, 4).unwrap();
        let w = spec.weights();
        let mut rng = StreamRng::new(32, &[]);
        for _ in 0..20 {
            let a: Vec<f64> = (0..16).map(|_| rng.uniform()).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.uniform()).collect();
            let plain = ssim_window(&a, &b, &w, &c).unwrap();
            let at = DiffTensor::constant(ArrayD::from_shape_vec(IxDyn(&[16]), a).unwrap());
            let bt = DiffTensor::constant(ArrayD::from_shape_vec(IxDyn(&[16]), b).unwrap());
            let diff = ssim_window_diff(&at, &bt, &w, &c).unwrap().item().unwrap();
            // Merged c·s identity: equal up to rounding.
            assert!((plain - diff).abs() < 1e-13, "{plain} vs {diff}");
        }
    }

    #[test]
    fn gaussian_taps_normalized() {
        let w = WindowSpec::evaluation().weights();
        assert_eq!(w.len(), 121);
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Center tap dominates.
        assert!(w[60] > w[0]);
    }

    #[test]
    fn ssim_map_tiling_counts() {
        let c = SsimConstants::default();
        let spec = WindowSpec::uniform(4, 4).unwrap();
        let mut rng = StreamRng::new(40, &[]);
        let img = random_image(8, 8, &mut rng);
        let map = ssim_map(&img, &img, &spec, &c).unwrap();
        assert_eq!(map.scores.shape(), &[2, 2, 3]);
        assert!((map.mean - 1.0).abs() < 1e-12);

        let eleven = ssim_map(
            &random_image(12, 13, &mut rng),
            &random_image(12, 13, &mut rng),
            &WindowSpec::evaluation(),
            &c,
        )
        .unwrap();
        assert_eq!(eleven.scores.shape(), &[2, 3, 3]);
    }

    #[test]
    fn ssim_map_rejects_bad_geometry() {
        let c = SsimConstants::default();
        let spec = WindowSpec::uniform(4, 4).unwrap();
        let small = const_image(3, 8, 0.5);
        assert!(matches!(
            ssim_map(&small, &small, &spec, &c),
            Err(Error::ImageTooSmall { .. })
        ));
        let ragged = const_image(10, 8, 0.5);
        assert!(ssim_map(&ragged, &ragged, &spec, &c).is_err());
    }

    #[test]
    fn diff_map_matches_plain_map() {
        let c = SsimConstants::default();
        let spec = WindowSpec::uniform(4, 4).unwrap();
        let mut rng = StreamRng::new(41, &[]);
        let a = random_image(16, 16, &mut rng);
        let b = random_image(16, 16, &mut rng);
        let plain = ssim_map(&a, &b, &spec, &c).unwrap();
        let diff = ssim_map_diff(
            &DiffTensor::constant(a),
            &DiffTensor::constant(b),
            &spec,
            &c,
        )
        .unwrap();
        assert_eq!(diff.shape(), plain.scores.shape());
        for (x, y) in diff.value().iter().zip(plain.scores.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_shift_luminance() {
        // a = 0.4, b = 0.6 everywhere: contrast and structure are 1,
        // so mean SSIM is the closed-form luminance ratio.
        let a = const_image(16, 16, 0.4);
        let b = const_image(16, 16, 0.6);
        let got = msssim_eval(&a, &b).unwrap();
        let expect = (2.0 * 0.4 * 0.6 + 1e-4) / (0.16 + 0.36 + 1e-4);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn s3im_perfect_prediction_is_one() {
        let mut rng = StreamRng::new(50, &[]);
        let pix: Vec<f64> = (0..16 * 3).map(|_| rng.uniform()).collect();
        let batch = batch_from_pixels(pix.clone(), pix);
        let streams = PatchStreams::new(123, 7);
        let out = s3im(
            &batch,
            10,
            &WindowSpec::s3im_default(),
            &SsimConstants::default(),
            &streams,
        )
        .unwrap();
        assert!((out.value.item().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(out.per_round.len(), 10);
    }

    #[test]
    fn s3im_is_mean_of_rounds() {
        let mut rng = StreamRng::new(51, &[]);
        let pred: Vec<f64> = (0..64 * 3).map(|_| rng.uniform()).collect();
        let target: Vec<f64> = (0..64 * 3).map(|_| rng.uniform()).collect();
        let batch = batch_from_pixels(pred, target);
        let streams = PatchStreams::new(9, 0);
        let spec = WindowSpec::s3im_default();
        let c = SsimConstants::default();
        let out = s3im(&batch, 10, &spec, &c, &streams).unwrap();
        let mean = out.per_round.iter().sum::<f64>() / 10.0;
        assert!((out.value.item().unwrap() - mean).abs() < 1e-15);

        // M = 1 equals the single round's map mean exactly.
        let one = s3im(&batch, 1, &spec, &c, &streams).unwrap();
        assert_eq!(one.value.item().unwrap(), one.per_round[0]);
    }

    #[test]
    fn s3im_variance_shrinks_with_m() {
        let mut rng = StreamRng::new(52, &[]);
        let pred: Vec<f64> = (0..64 * 3).map(|_| rng.uniform()).collect();
        let target: Vec<f64> = (0..64 * 3).map(|_| rng.uniform()).collect();
        let batch = batch_from_pixels(pred, target);
        let spec = WindowSpec::s3im_default();
        let c = SsimConstants::default();
        let variance = |m: usize| {
            let vals: Vec<f64> = (0..200)
                .map(|seed| {
                    let streams = PatchStreams::new(seed, 0);
                    s3im(&batch, m, &spec, &c, &streams)
                        .unwrap()
                        .value
                        .item()
                        .unwrap()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
        };
        assert!(variance(10) <= variance(1));
    }
}
