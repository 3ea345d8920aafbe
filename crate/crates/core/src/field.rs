//! Desk-scale coordinate networks and the volume-rendering quadrature.
//!
//! Two tasks share one MLP shape: `image2d` maps encoded (x, y) pixel
//! centers to sigmoid RGB, `toy-nerf` maps encoded (position,
//! direction) to sigmoid RGB plus a softplus density that is composited
//! along rays with the standard alpha quadrature
//! `C = Σ_i T_i (1 − exp(−σ_i δ_i)) c_i`, `T_i = exp(−Σ_{j<i} σ_j δ_j)`.
//!
//! Model weights live as plain arrays; [`FieldModel::params`] turns
//! them into tape leaves for a training step or untracked constants for
//! evaluation, so the same forward code serves both paths.

use std::rc::Rc;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::rng::{purpose, StreamRng};
use crate::tensor::{DiffTensor, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Image2d,
    ToyNerf,
}

impl Task {
    pub fn tag(self) -> u8 {
        match self {
            Task::Image2d => 0,
            Task::ToyNerf => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Task> {
        match tag {
            0 => Ok(Task::Image2d),
            1 => Ok(Task::ToyNerf),
            other => Err(Error::Config(format!("unknown task tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Image2d => "image2d",
            Task::ToyNerf => "toy-nerf",
        }
    }

    fn coord_dim(self) -> usize {
        match self {
            Task::Image2d => 2,
            Task::ToyNerf => 3,
        }
    }

    fn output_dim(self) -> usize {
        match self {
            Task::Image2d => 3,
            Task::ToyNerf => 4,
        }
    }
}

/// Positional-encoding frequency counts per coordinate group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeConfig {
    pub pos_freqs: usize,
    /// Direction frequencies; must be 0 for the image task.
    pub dir_freqs: usize,
}

impl PeConfig {
    pub fn image2d_default() -> Self {
        PeConfig {
            pos_freqs: 10,
            dir_freqs: 0,
        }
    }

    pub fn toy_nerf_default() -> Self {
        PeConfig {
            pos_freqs: 6,
            dir_freqs: 2,
        }
    }
}

/// Lifts each coordinate to `[p, sin(2^k π p), cos(2^k π p)]` for
/// `k = 0..freqs`, so a `(B, D)` input becomes `(B, D(1 + 2 freqs))`.
/// Layout per row: the raw coordinates, then sin/cos pairs per octave.
pub fn positional_encode(coords: &Array2<f64>, freqs: usize) -> Array2<f64> {
    let (b, d) = coords.dim();
    let mut out = Array2::zeros((b, d * (1 + 2 * freqs)));
    for r in 0..b {
        for c in 0..d {
            out[[r, c]] = coords[[r, c]];
        }
        let mut col = d;
        for k in 0..freqs {
            let scale = (1u64 << k) as f64 * std::f64::consts::PI;
            for c in 0..d {
                out[[r, col + c]] = (scale * coords[[r, c]]).sin();
                out[[r, col + d + c]] = (scale * coords[[r, c]]).cos();
            }
            col += 2 * d;
        }
    }
    out
}

/// MLP parameters: the `Θ` being optimized.
#[derive(Debug, Clone)]
pub struct FieldModel {
    pub task: Task,
    pub pe: PeConfig,
    /// Full dimension chain, input through output.
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    /// Row vectors, shape `(1, out)`.
    pub biases: Vec<Array2<f64>>,
}

impl FieldModel {
    /// Fresh model with Xavier-uniform weights
    /// (`±sqrt(6/(fan_in+fan_out))`) and zero biases, drawn from the
    /// per-layer init streams of `seed`.
    pub fn new(
        task: Task,
        pe: PeConfig,
        hidden_dim: usize,
        hidden_layers: usize,
        seed: u64,
    ) -> Result<FieldModel> {
        if hidden_dim == 0 || hidden_layers == 0 {
            return Err(Error::Config(format!(
                "model needs positive hidden size and depth, got {hidden_dim}x{hidden_layers}"
            )));
        }
        if task == Task::Image2d && pe.dir_freqs != 0 {
            return Err(Error::Config(
                "image2d has no view direction; dir_freqs must be 0".into(),
            ));
        }
        let mut layer_dims = vec![Self::input_dim(task, pe)];
        layer_dims.extend(std::iter::repeat_n(hidden_dim, hidden_layers));
        layer_dims.push(task.output_dim());

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[i], layer_dims[i + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = StreamRng::new(seed, &[purpose::INIT, i as u64]);
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                (rng.uniform() * 2.0 - 1.0) * bound
            });
            weights.push(w);
            biases.push(Array2::zeros((1, fan_out)));
        }
        Ok(FieldModel {
            task,
            pe,
            layer_dims,
            weights,
            biases,
        })
    }

    /// Encoded input width for a task/encoding combination.
    pub fn input_dim(task: Task, pe: PeConfig) -> usize {
        let pos = task.coord_dim() * (1 + 2 * pe.pos_freqs);
        let dir = match task {
            Task::Image2d => 0,
            Task::ToyNerf => 3 * (1 + 2 * pe.dir_freqs),
        };
        pos + dir
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Instantiates the parameters for one pass: tracked leaves when a
    /// tape is given, untracked constants otherwise.
    pub fn params(&self, tape: Option<&Rc<Tape>>) -> ModelParams {
        let lift = |a: &Array2<f64>| {
            let dyn_a = a.clone().into_dyn();
            match tape {
                Some(t) => t.leaf(dyn_a),
                None => DiffTensor::constant(dyn_a),
            }
        };
        ModelParams {
            weights: self.weights.iter().map(lift).collect(),
            biases: self.biases.iter().map(lift).collect(),
        }
    }

    /// Applies `f` to every parameter array paired with its tracked
    /// counterpart, in the fixed (weight, bias) per-layer order used by
    /// checkpoints and the optimizer.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(usize, &mut Array2<f64>)) {
        let mut i = 0;
        for layer in 0..self.weights.len() {
            f(i, &mut self.weights[layer]);
            i += 1;
            f(i, &mut self.biases[layer]);
            i += 1;
        }
    }
}

/// Per-pass instantiation of the model parameters.
pub struct ModelParams {
    pub weights: Vec<DiffTensor>,
    pub biases: Vec<DiffTensor>,
}

impl ModelParams {
    /// Parameters in (weight, bias) per-layer order.
    pub fn ordered(&self) -> Vec<&DiffTensor> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for i in 0..self.weights.len() {
            out.push(&self.weights[i]);
            out.push(&self.biases[i]);
        }
        out
    }

    /// Raw last-layer outputs: relu between layers, no head activation.
    pub fn forward(&self, x: &DiffTensor) -> Result<DiffTensor> {
        let b = x.shape()[0];
        let ones = DiffTensor::constant(ArrayD::from_elem(IxDyn(&[b, 1]), 1.0));
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (i, (w, bias)) in self.weights.iter().zip(&self.biases).enumerate() {
            let lifted_bias = ones.matmul(bias)?;
            h = h.matmul(w)?.add(&lifted_bias)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Sigmoid color head of the image task.
pub fn image_colors(params: &ModelParams, encoded: &DiffTensor) -> Result<DiffTensor> {
    Ok(params.forward(encoded)?.sigmoid())
}

/// Splits raw `(B, 4)` radiance outputs into sigmoid RGB `(B, 3)` and
/// softplus density `(B, 1)`.
pub fn radiance_heads(raw: &DiffTensor) -> Result<(DiffTensor, DiffTensor)> {
    if raw.shape().len() != 2 || raw.shape()[1] != 4 {
        return Err(Error::ShapeMismatch {
            op: "radiance_heads",
            lhs: raw.shape().to_vec(),
            rhs: vec![0, 4],
        });
    }
    let sel_rgb = DiffTensor::constant(
        ArrayD::from_shape_vec(
            IxDyn(&[4, 3]),
            vec![
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, //
                0.0, 0.0, 0.0,
            ],
        )
        .expect("static shape"),
    );
    let sel_d = DiffTensor::constant(
        ArrayD::from_shape_vec(IxDyn(&[4, 1]), vec![0.0, 0.0, 0.0, 1.0]).expect("static shape"),
    );
    let rgb = raw.matmul(&sel_rgb)?.sigmoid();
    let density = raw.matmul(&sel_d)?.softplus();
    Ok((rgb, density))
}

/// One camera ray with its integration bounds and supervision target.
#[derive(Debug, Clone, Copy)]
pub struct RaySample {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
    pub n_samples: usize,
    pub target: [f64; 3],
}

impl RaySample {
    pub fn new(
        origin: [f64; 3],
        dir: [f64; 3],
        t_near: f64,
        t_far: f64,
        n_samples: usize,
        target: [f64; 3],
    ) -> Result<RaySample> {
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "ray direction must be unit length, |d| = {norm}"
            )));
        }
        if !(t_near < t_far) {
            return Err(Error::Config(format!(
                "ray bounds must satisfy t_near < t_far, got [{t_near}, {t_far}]"
            )));
        }
        if n_samples < 2 {
            return Err(Error::Config(format!(
                "rays need at least 2 samples, got {n_samples}"
            )));
        }
        Ok(RaySample {
            origin,
            dir,
            t_near,
            t_far,
            n_samples,
            target,
        })
    }
}

/// Deterministic stratified sample positions: the midpoint of each of
/// the `n` equal bins of `[t_near, t_far]`, so every segment length is
/// `(t_far − t_near)/n` including the tail.
pub fn midpoints(t_near: f64, t_far: f64, n: usize) -> (Vec<f64>, f64) {
    let delta = (t_far - t_near) / n as f64;
    let ts = (0..n).map(|i| t_near + (i as f64 + 0.5) * delta).collect();
    (ts, delta)
}

/// Output of the quadrature: composited colors and per-sample alpha
/// weights, both differentiable.
pub struct RenderedRays {
    /// `(R, 3)` colors.
    pub colors: DiffTensor,
    /// `(R, N)` weights `w_i = T_i (1 − exp(−σ_i δ_i))`.
    pub weights: DiffTensor,
}

/// Batched quadrature. `density` is `(R, N)`, `colors_flat` is
/// `(R·N, 3)` in ray-major order, `deltas` is `(R, N)` of positive
/// segment lengths.
pub fn volume_render_batch(
    density: &DiffTensor,
    colors_flat: &DiffTensor,
    deltas: &Array2<f64>,
) -> Result<RenderedRays> {
    let ds = density.shape().to_vec();
    if ds.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "volume_render",
            lhs: ds,
            rhs: vec![0, 0],
        });
    }
    let (r, n) = (ds[0], ds[1]);
    if colors_flat.shape() != [r * n, 3] || deltas.dim() != (r, n) {
        return Err(Error::ShapeMismatch {
            op: "volume_render",
            lhs: colors_flat.shape().to_vec(),
            rhs: vec![r * n, 3],
        });
    }
    if deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Domain {
            op: "volume_render",
            detail: "segment lengths must be positive".into(),
        });
    }
    if density.value().iter().any(|&s| s < 0.0) {
        return Err(Error::Domain {
            op: "volume_render",
            detail: "densities must be non-negative".into(),
        });
    }

    let tau = density.mul(&DiffTensor::constant(deltas.clone().into_dyn()))?;
    let alpha = DiffTensor::scalar(1.0).sub(&tau.neg().exp())?;
    // Strictly upper-triangular ones turn a matmul into the exclusive
    // prefix sums that feed the transmittance.
    let upper = DiffTensor::constant(ArrayD::from_shape_fn(IxDyn(&[n, n]), |ix| {
        if ix[0] < ix[1] {
            1.0
        } else {
            0.0
        }
    }));
    let trans = tau.matmul(&upper)?.neg().exp();
    let weights = trans.mul(&alpha)?;

    let w3 = weights
        .reshape(&[r * n, 1])?
        .matmul(&DiffTensor::constant(ArrayD::ones(IxDyn(&[1, 3]))))?;
    let colors = w3
        .mul(colors_flat)?
        .reshape(&[r, n, 3])?
        .sum_axes(&[1])?;
    Ok(RenderedRays { colors, weights })
}

/// Single rendered ray: composited color and diagnostic weights.
pub struct RenderedRay {
    pub color: DiffTensor,
    pub weights: DiffTensor,
}

/// One-ray quadrature over explicit samples: `densities` is `(N,)`,
/// `colors` is `(N, 3)`, `deltas` gives the `N` positive segment
/// lengths.
pub fn volume_render(
    densities: &DiffTensor,
    colors: &DiffTensor,
    deltas: &[f64],
) -> Result<RenderedRay> {
    let n = deltas.len();
    if densities.shape() != [n] || colors.shape() != [n, 3] {
        return Err(Error::ShapeMismatch {
            op: "volume_render",
            lhs: densities.shape().to_vec(),
            rhs: vec![n],
        });
    }
    let deltas2 = Array2::from_shape_vec((1, n), deltas.to_vec()).expect("length checked");
    let out = volume_render_batch(&densities.reshape(&[1, n])?, colors, &deltas2)?;
    Ok(RenderedRay {
        color: out.colors.reshape(&[3])?,
        weights: out.weights.reshape(&[n])?,
    })
}

/// Plain-`f64` quadrature sharing the exp-of-partial-sums form of the
/// tensor path. Scene reference images are produced with this exact
/// function, which is what makes them reproducible bit for bit.
pub fn quadrature_plain(density: &[f64], colors: &[[f64; 3]], deltas: &[f64]) -> ([f64; 3], Vec<f64>) {
    let mut optical_depth = 0.0f64;
    let mut color = [0.0; 3];
    let mut weights = Vec::with_capacity(density.len());
    for i in 0..density.len() {
        let tau = density[i] * deltas[i];
        let trans = (-optical_depth).exp();
        let alpha = 1.0 - (-tau).exp();
        let w = trans * alpha;
        for c in 0..3 {
            color[c] += w * colors[i][c];
        }
        weights.push(w);
        optical_depth += tau;
    }
    (color, weights)
}

/// Renders a batch of rays through the radiance MLP. All rays must
/// share one sample count so the batch keeps a rectangular layout.
pub fn render_rays(params: &ModelParams, pe: PeConfig, rays: &[RaySample]) -> Result<RenderedRays> {
    if rays.is_empty() {
        return Err(Error::Config("no rays to render".into()));
    }
    let n = rays[0].n_samples;
    if rays.iter().any(|r| r.n_samples != n) {
        return Err(Error::Config(
            "all rays in a batch must share n_samples".into(),
        ));
    }
    let r_count = rays.len();
    let mut pos = Array2::zeros((r_count * n, 3));
    let mut dir = Array2::zeros((r_count * n, 3));
    let mut deltas = Array2::zeros((r_count, n));
    for (ri, ray) in rays.iter().enumerate() {
        let (ts, delta) = midpoints(ray.t_near, ray.t_far, n);
        for (si, &t) in ts.iter().enumerate() {
            let row = ri * n + si;
            for c in 0..3 {
                pos[[row, c]] = ray.origin[c] + t * ray.dir[c];
                // Unit directions live in [-1, 1]; shift into the
                // encoder's [0, 1] domain.
                dir[[row, c]] = (ray.dir[c] + 1.0) / 2.0;
            }
            deltas[[ri, si]] = delta;
        }
    }
    let input = encode_radiance_input(&pos, &dir, pe);
    let raw = params.forward(&DiffTensor::constant(input.into_dyn()))?;
    let (rgb, density) = radiance_heads(&raw)?;
    let density_rn = density.reshape(&[r_count, n])?;
    volume_render_batch(&density_rn, &rgb, &deltas)
}

/// Concatenated positional encodings of sample positions and mapped
/// directions.
pub fn encode_radiance_input(pos: &Array2<f64>, dir: &Array2<f64>, pe: PeConfig) -> Array2<f64> {
    let pe_pos = positional_encode(pos, pe.pos_freqs);
    let pe_dir = positional_encode(dir, pe.dir_freqs);
    let (b, pw) = pe_pos.dim();
    let dw = pe_dir.dim().1;
    let mut input = Array2::zeros((b, pw + dw));
    for r in 0..b {
        for c in 0..pw {
            input[[r, c]] = pe_pos[[r, c]];
        }
        for c in 0..dw {
            input[[r, pw + c]] = pe_dir[[r, c]];
        }
    }
    input
}

/// Pixel-center coordinates of an `h x w` grid in row-major pixel
/// order; each row is `(x, y) = ((col+0.5)/w, (row+0.5)/h)`.
pub fn pixel_coords(h: usize, w: usize) -> Array2<f64> {
    let mut out = Array2::zeros((h * w, 2));
    for r in 0..h {
        for c in 0..w {
            out[[r * w + c, 0]] = (c as f64 + 0.5) / w as f64;
            out[[r * w + c, 1]] = (r as f64 + 0.5) / h as f64;
        }
    }
    out
}

/// Evaluates the image field over the full pixel grid in chunks,
/// returning an `(h, w, 3)` image.
pub fn render_image_field(model: &FieldModel, h: usize, w: usize) -> Result<ArrayD<f64>> {
    let params = model.params(None);
    let coords = pixel_coords(h, w);
    let mut out = ArrayD::zeros(IxDyn(&[h, w, 3]));
    let chunk = 4096;
    let total = h * w;
    let mut start = 0;
    while start < total {
        let end = (start + chunk).min(total);
        let slice = coords.slice(ndarray::s![start..end, ..]).to_owned();
        let encoded = positional_encode(&slice, model.pe.pos_freqs);
        let colors = image_colors(&params, &DiffTensor::constant(encoded.into_dyn()))?;
        let values = colors.value();
        for i in start..end {
            for c in 0..3 {
                out[[i / w, i % w, c]] = values[[i - start, c]];
            }
        }
        start = end;
    }
    Ok(out)
}
