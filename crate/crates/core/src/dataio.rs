//! Bit-exact file handling: PPM images, CSV run logs, binary
//! checkpoints, and scene directories.
//!
//! Every writer is a pure function of its input (no timestamps), so
//! identical runs produce byte-identical artifacts. The PPM writer
//! emits a canonical header; `write . read . write` is the identity
//! from the first write onward.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};

use crate::field::{PeConfig, Task};
use crate::scene::{Camera, SyntheticScene};
use crate::train::{RayData, RunLog};
use crate::{Error, Result};

/// Row-major RGB image with unit-range float values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    /// Shape `(height, width, 3)`.
    pub pixels: ArrayD<f64>,
}

impl ImageBuffer {
    pub fn from_array(pixels: ArrayD<f64>) -> Result<ImageBuffer> {
        let dims = pixels.shape().to_vec();
        if dims.len() != 3 || dims[2] != 3 || dims[0] == 0 || dims[1] == 0 {
            return Err(Error::ShapeMismatch {
                op: "image_buffer",
                lhs: dims,
                rhs: vec![0, 0, 3],
            });
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(
                "image values must lie in [0, 1]".into(),
            ));
        }
        Ok(ImageBuffer {
            height: dims[0],
            width: dims[1],
            pixels,
        })
    }

    pub fn into_array(self) -> ArrayD<f64> {
        self.pixels
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Skips whitespace runs and `#` comments, then parses one decimal
/// integer token.
fn ppm_int(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err(path, "expected an integer in the PPM header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "unreadable integer in the PPM header"))
}

/// Reads a binary P6 image with maxval 255. Header comments and
/// arbitrary whitespace are tolerated; values load as `byte / 255`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(format_err(path, "not a binary P6 PPM"));
    }
    let mut pos = 2;
    let width = ppm_int(&bytes, &mut pos, path)?;
    let height = ppm_int(&bytes, &mut pos, path)?;
    let maxval = ppm_int(&bytes, &mut pos, path)?;
    if maxval != 255 {
        return Err(format_err(
            path,
            format!("unsupported maxval {maxval}; only 255 is handled"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero image dimension"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing separator after maxval"));
    }
    pos += 1;
    let need = width * height * 3;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(format_err(
            path,
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(format_err(path, "trailing data after pixel payload"));
    }
    let mut pixels = ArrayD::zeros(IxDyn(&[height, width, 3]));
    for (v, &b) in pixels.iter_mut().zip(payload) {
        *v = (f64::from(b) / 255.0).clamp(0.0, 1.0);
    }
    Ok(ImageBuffer {
        width,
        height,
        pixels,
    })
}

/// Writes the canonical P6 form: `P6\n{w} {h}\n255\n` then bytes,
/// rounding half away from zero.
pub fn write_ppm(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let mut out = Vec::with_capacity(20 + img.width * img.height * 3);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", img.width, img.height).as_bytes());
    for &v in img.pixels.iter() {
        out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Canonical CSV float: 9 significant digits of scientific notation.
pub fn csv_float(v: f64) -> String {
    // `{:e}` renders the infinite PSNR sentinel as a bare `inf`.
    format!("{v:.8e}")
}

/// One CSV row per log record, floats at 9 significant digits.
pub fn write_csv_log(path: impl AsRef<Path>, log: &RunLog) -> Result<()> {
    let mut out = String::from("iter,train_mse,train_s3im,test_psnr,test_ssim,wall_ms\n");
    for r in &log.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter,
            csv_float(r.train_mse),
            csv_float(r.train_s3im),
            csv_float(r.test_psnr),
            csv_float(r.test_ssim),
            r.wall_ms
        ));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"S3IMCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary model snapshot: magic, version, task tag, encoding config,
/// layer dimensions, then the little-endian weight payload (per layer:
/// weights row-major, then bias) with a trailing CRC32 of the payload.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &crate::field::FieldModel) -> Result<()> {
    let mut head = Vec::new();
    head.extend_from_slice(CHECKPOINT_MAGIC);
    head.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    head.push(model.task.tag());
    head.extend_from_slice(&(model.pe.pos_freqs as u32).to_le_bytes());
    head.extend_from_slice(&(model.pe.dir_freqs as u32).to_le_bytes());
    head.extend_from_slice(&(model.layer_dims.len() as u32).to_le_bytes());
    for &d in &model.layer_dims {
        head.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let mut payload = Vec::with_capacity(model.param_count() * 8);
    for i in 0..model.weights.len() {
        for &v in model.weights[i].iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        for &v in model.biases[i].iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&payload);
    let mut out = head;
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    fs::write(path.as_ref(), out)?;
    Ok(())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.path, "checkpoint ends prematurely"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<crate::field::FieldModel> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(format_err(path, "bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let task = Task::from_tag(r.take(1)?[0])?;
    let pe = PeConfig {
        pos_freqs: r.u32()? as usize,
        dir_freqs: r.u32()? as usize,
    };
    let dim_count = r.u32()? as usize;
    if dim_count < 2 {
        return Err(format_err(path, "layer chain needs at least 2 dims"));
    }
    let mut layer_dims = Vec::with_capacity(dim_count);
    for _ in 0..dim_count {
        layer_dims.push(r.u32()? as usize);
    }
    let param_count: usize = layer_dims
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum();
    let payload = r.take(param_count * 8)?;
    let crc_stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(format_err(path, "trailing data after checksum"));
    }
    if crc32fast::hash(payload) != crc_stored {
        return Err(format_err(path, "payload checksum mismatch"));
    }

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut offset = 0;
    let float_at = |i: usize| {
        f64::from_le_bytes(payload[i * 8..(i + 1) * 8].try_into().expect("len 8"))
    };
    for w in layer_dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let wmat = ndarray::Array2::from_shape_fn((fan_in, fan_out), |(r, c)| {
            float_at(offset + r * fan_out + c)
        });
        offset += fan_in * fan_out;
        let bias =
            ndarray::Array2::from_shape_fn((1, fan_out), |(_, c)| float_at(offset + c));
        offset += fan_out;
        weights.push(wmat);
        biases.push(bias);
    }
    let model = crate::field::FieldModel {
        task,
        pe,
        layer_dims,
        weights,
        biases,
    };
    if crate::field::FieldModel::input_dim(task, pe) != model.layer_dims[0] {
        return Err(format_err(
            path,
            "layer dims do not match the encoding config",
        ));
    }
    Ok(model)
}

/// Scene geometry as stored in the manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub cameras: Vec<Camera>,
    pub t_near: f64,
    pub t_far: f64,
    pub n_samples: usize,
}

/// Line-oriented manifest: one `camera ox oy oz dx dy dz` per camera,
/// then `bounds tn tf N`.
pub fn write_scene_manifest(path: impl AsRef<Path>, manifest: &SceneManifest) -> Result<()> {
    let mut out = String::new();
    for cam in &manifest.cameras {
        out.push_str(&format!(
            "camera {} {} {} {} {} {}\n",
            cam.origin[0], cam.origin[1], cam.origin[2], cam.dir[0], cam.dir[1], cam.dir[2]
        ));
    }
    out.push_str(&format!(
        "bounds {} {} {}\n",
        manifest.t_near, manifest.t_far, manifest.n_samples
    ));
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn read_scene_manifest(path: impl AsRef<Path>) -> Result<SceneManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut cameras = Vec::new();
    let mut bounds = None;
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            ["camera", rest @ ..] if rest.len() == 6 => {
                let mut v = [0.0; 6];
                for (slot, tok) in v.iter_mut().zip(rest) {
                    *slot = tok
                        .parse()
                        .map_err(|_| format_err(path, format!("bad number `{tok}`")))?;
                }
                cameras.push(Camera {
                    origin: [v[0], v[1], v[2]],
                    dir: [v[3], v[4], v[5]],
                });
            }
            ["bounds", tn, tf, n] => {
                if bounds.is_some() {
                    return Err(format_err(path, "duplicate bounds line"));
                }
                let parse = |tok: &str| -> Result<f64> {
                    tok.parse()
                        .map_err(|_| format_err(path, format!("bad number `{tok}`")))
                };
                let samples: usize = n
                    .parse()
                    .map_err(|_| format_err(path, format!("bad sample count `{n}`")))?;
                bounds = Some((parse(tn)?, parse(tf)?, samples));
            }
            _ => return Err(format_err(path, format!("unrecognized line `{line}`"))),
        }
    }
    let (t_near, t_far, n_samples) =
        bounds.ok_or_else(|| format_err(path, "missing bounds line"))?;
    if cameras.is_empty() {
        return Err(format_err(path, "no camera lines"));
    }
    Ok(SceneManifest {
        cameras,
        t_near,
        t_far,
        n_samples,
    })
}

fn view_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("view_{index:03}.ppm"))
}

/// Writes a scene's reference images (`view_NNN.ppm`) and its
/// `scene.txt` manifest into `dir`.
pub fn write_scene_dir(dir: impl AsRef<Path>, scene: &SyntheticScene) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, img) in scene.reference_images()?.into_iter().enumerate() {
        write_ppm(view_path(dir, i), &ImageBuffer::from_array(img)?)?;
    }
    write_scene_manifest(
        dir.join("scene.txt"),
        &SceneManifest {
            cameras: scene.cameras.clone(),
            t_near: scene.t_near,
            t_far: scene.t_far,
            n_samples: scene.n_samples,
        },
    )
}

/// Loads a scene directory back into a trainable ray dataset. Image
/// resolution comes from the PPM files; targets carry the 8-bit
/// quantization of the stored references.
pub fn load_ray_data(dir: impl AsRef<Path>) -> Result<RayData> {
    let dir = dir.as_ref();
    let manifest = read_scene_manifest(dir.join("scene.txt"))?;
    let mut images = Vec::with_capacity(manifest.cameras.len());
    let mut resolution = 0;
    for i in 0..manifest.cameras.len() {
        let path = view_path(dir, i);
        let img = read_ppm(&path)?;
        if img.width != img.height {
            return Err(format_err(&path, "scene views must be square"));
        }
        if i == 0 {
            resolution = img.width;
        } else if img.width != resolution {
            return Err(format_err(&path, "scene views differ in resolution"));
        }
        images.push(img.into_array());
    }
    Ok(RayData {
        images,
        cameras: manifest.cameras,
        resolution,
        t_near: manifest.t_near,
        t_far: manifest.t_far,
        n_samples: manifest.n_samples,
    })
}
