//! Procedural desk-scale volumetric scenes.
//!
//! A scene is a handful of non-overlapping axis-aligned colored boxes
//! inside the unit cube, viewed by orthographic pixel-grid cameras
//! aligned with the coordinate axes. Reference images come from the
//! same plain quadrature every time, which is what makes them
//! byte-reproducible from the seed alone.

use ndarray::ArrayD;

use crate::field::{midpoints, quadrature_plain, RaySample};
use crate::rng::{purpose, StreamRng};
use crate::{Error, Result};

/// Axis-aligned box with homogeneous density and color. Membership is
/// half-open: `min <= p < max` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub density: f64,
    pub color: [f64; 3],
}

impl Box3 {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] < self.max[i])
    }

    fn overlaps(&self, other: &Box3) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }
}

/// Orthographic axis-aligned camera. `origin` is the center of the
/// image plane; the pixel grid spans the unit square centered there in
/// the two axes orthogonal to `dir` (ascending axis order, no flips).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

impl Camera {
    /// View axis index and the two in-plane axes in ascending order.
    fn axes(&self) -> (usize, usize, usize) {
        let axis = (0..3)
            .find(|&i| self.dir[i] != 0.0)
            .expect("camera direction is an axis direction");
        let others: Vec<usize> = (0..3).filter(|&i| i != axis).collect();
        (axis, others[0], others[1])
    }
}

/// The pixel-grid rays of one camera in row-major order, targets left
/// black. One ray per pixel of a `resolution x resolution` image.
pub fn camera_pixel_rays(
    cam: &Camera,
    resolution: usize,
    t_near: f64,
    t_far: f64,
    n_samples: usize,
) -> Result<Vec<RaySample>> {
    let r = resolution;
    let (_, u_axis, v_axis) = cam.axes();
    let mut rays = Vec::with_capacity(r * r);
    for row in 0..r {
        for col in 0..r {
            let mut origin = cam.origin;
            origin[u_axis] += (col as f64 + 0.5) / r as f64 - 0.5;
            origin[v_axis] += (row as f64 + 0.5) / r as f64 - 0.5;
            rays.push(RaySample::new(
                origin,
                cam.dir,
                t_near,
                t_far,
                n_samples,
                [0.0; 3],
            )?);
        }
    }
    Ok(rays)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub resolution: usize,
    pub boxes: Vec<Box3>,
    pub cameras: Vec<Camera>,
    pub t_near: f64,
    pub t_far: f64,
    pub n_samples: usize,
}

const MAX_RESOLUTION: usize = 128;
const MAX_CAMERAS: usize = 12;

/// Face-camera order: first three cover three distinct axes.
const FACE_DIRS: [[f64; 3]; 6] = [
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, -1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
];

impl SyntheticScene {
    /// Builds a deterministic scene with the default 32 samples/ray.
    pub fn generate(seed: u64, resolution: usize, camera_count: usize) -> Result<SyntheticScene> {
        Self::generate_with(seed, resolution, camera_count, 32)
    }

    pub fn generate_with(
        seed: u64,
        resolution: usize,
        camera_count: usize,
        n_samples: usize,
    ) -> Result<SyntheticScene> {
        if !(4..=MAX_RESOLUTION).contains(&resolution) {
            return Err(Error::Config(format!(
                "scene resolution must be in [4, {MAX_RESOLUTION}], got {resolution}"
            )));
        }
        if !(3..=MAX_CAMERAS).contains(&camera_count) {
            return Err(Error::Config(format!(
                "camera count must be in [3, {MAX_CAMERAS}], got {camera_count}"
            )));
        }
        if n_samples < 2 {
            return Err(Error::Config(format!(
                "scenes need at least 2 samples per ray, got {n_samples}"
            )));
        }

        let mut rng = StreamRng::new(seed, &[purpose::SCENE]);
        let target_boxes = 3 + rng.below(3) as usize;
        let mut boxes: Vec<Box3> = Vec::new();
        let mut attempts = 0;
        while boxes.len() < target_boxes && attempts < 64 * target_boxes {
            attempts += 1;
            let mut min = [0.0; 3];
            let mut max = [0.0; 3];
            for i in 0..3 {
                let side = 0.15 + rng.uniform() * 0.20;
                let lo = 0.05 + rng.uniform() * (0.90 - side);
                min[i] = lo;
                max[i] = lo + side;
            }
            let candidate = Box3 {
                min,
                max,
                density: 10.0 + rng.uniform() * 30.0,
                color: [
                    0.1 + rng.uniform() * 0.9,
                    0.1 + rng.uniform() * 0.9,
                    0.1 + rng.uniform() * 0.9,
                ],
            };
            if boxes.iter().all(|b| !b.overlaps(&candidate)) {
                boxes.push(candidate);
            }
        }

        let mut cameras = Vec::with_capacity(camera_count);
        for i in 0..camera_count {
            let dir = FACE_DIRS[i % 6];
            let axis = (0..3).find(|&a| dir[a] != 0.0).expect("axis direction");
            let mut origin = [0.5; 3];
            origin[axis] = if dir[axis] > 0.0 { 0.0 } else { 1.0 };
            if i >= 6 {
                // Offset duplicates: shift the window along the first
                // in-plane axis for a genuinely different view. The
                // 1/8 sliver falling outside the cube is empty space
                // and renders black.
                let u_axis = (0..3).find(|&a| a != axis).expect("in-plane axis");
                origin[u_axis] += 0.125;
            }
            cameras.push(Camera { origin, dir });
        }

        Ok(SyntheticScene {
            seed,
            resolution,
            boxes,
            cameras,
            t_near: 0.0,
            t_far: 1.0,
            n_samples,
        })
    }

    /// Analytic volume lookup: first containing box wins, empty space
    /// is transparent black.
    pub fn density_color(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        for b in &self.boxes {
            if b.contains(p) {
                return (b.density, b.color);
            }
        }
        (0.0, [0.0; 3])
    }

    /// The `resolution^2` rays of one camera in row-major pixel order,
    /// with targets filled from the analytic reference rendering.
    pub fn camera_rays(&self, cam: &Camera) -> Result<Vec<RaySample>> {
        let mut rays =
            camera_pixel_rays(cam, self.resolution, self.t_near, self.t_far, self.n_samples)?;
        for ray in &mut rays {
            ray.target = self.reference_color(ray);
        }
        Ok(rays)
    }

    /// Analytic quadrature along one ray, the exact function that
    /// produces reference pixels.
    pub fn reference_color(&self, ray: &RaySample) -> [f64; 3] {
        let (ts, delta) = midpoints(ray.t_near, ray.t_far, ray.n_samples);
        let mut density = Vec::with_capacity(ts.len());
        let mut colors = Vec::with_capacity(ts.len());
        for &t in &ts {
            let p = [
                ray.origin[0] + t * ray.dir[0],
                ray.origin[1] + t * ray.dir[1],
                ray.origin[2] + t * ray.dir[2],
            ];
            let (d, c) = self.density_color(p);
            density.push(d);
            colors.push(c);
        }
        let deltas = vec![delta; ts.len()];
        quadrature_plain(&density, &colors, &deltas).0
    }

    /// Reference image of one camera, shape `(res, res, 3)`.
    pub fn render_reference(&self, cam: &Camera) -> Result<ArrayD<f64>> {
        let r = self.resolution;
        let rays = self.camera_rays(cam)?;
        let mut img = ArrayD::zeros(ndarray::IxDyn(&[r, r, 3]));
        for (i, ray) in rays.iter().enumerate() {
            for c in 0..3 {
                img[[i / r, i % r, c]] = ray.target[c];
            }
        }
        Ok(img)
    }

    /// Reference images for every camera, in camera order.
    pub fn reference_images(&self) -> Result<Vec<ArrayD<f64>>> {
        self.cameras
            .iter()
            .map(|cam| self.render_reference(cam))
            .collect()
    }

    /// Per-camera ray datasets (targets included), in camera order.
    pub fn dataset(&self) -> Result<Vec<Vec<RaySample>>> {
        self.cameras
            .iter()
            .map(|cam| self.camera_rays(cam))
            .collect()
    }
}
