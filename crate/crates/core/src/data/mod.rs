//! Procedural camouflage scenes and their on-disk layout.
//!
//! A scene is a smooth random blob (the object) pasted onto a textured
//! background. `difficulty` moves the object's color and texture toward the
//! background's; at 1 the two differ only by a faint darkening along the
//! object contour.

pub mod pnm;

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

pub use pnm::{read_image, write_image};

/// Spatial sizes must survive five stride-2 stages.
pub const SIZE_MULTIPLE: usize = 32;
/// Mean foreground/background offset per RGB channel at difficulty 0.
pub const BASE_CONTRAST: f64 = 0.3;
/// Darkening applied to contour pixels at every difficulty.
pub const CONTOUR_SHADE: f64 = 0.04;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[3,H,W]`, quantized to 8-bit levels so disk round trips are exact.
    pub image: Tensor,
    /// `[1,H,W]` in {0, 1}.
    pub mask: Tensor,
    /// `[1,H,W]` inner contour of `mask`.
    pub boundary: Tensor,
    pub seed: u64,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        let s = self.mask.shape();
        (s[1], s[2])
    }

    pub fn hflip(&self) -> Sample {
        Sample {
            image: hflip(&self.image),
            mask: hflip(&self.mask),
            boundary: hflip(&self.boundary),
            seed: self.seed,
        }
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.mean()
    }
}

/// Mirrors the last axis of a `[C,H,W]` or `[H,W]` tensor.
pub fn hflip(t: &Tensor) -> Tensor {
    let w = *t.shape().last().unwrap_or(&1);
    let mut out = t.clone();
    for (dst, src) in out.data_mut().chunks_mut(w).zip(t.data().chunks(w)) {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    out
}

/// Mask pixels with at least one in-image 4-neighbor outside the mask.
/// Accepts `[H,W]` or `[1,H,W]`; the output has the same shape.
pub fn boundary_from_mask(mask: &Tensor) -> Result<Tensor> {
    let (h, w) = match *mask.shape() {
        [h, w] | [1, h, w] => (h, w),
        ref s => return Err(Error::invalid("boundary_from_mask", format!("expected [H,W] or [1,H,W], got {s:?}"))),
    };
    let m = mask.data();
    let on = |y: usize, x: usize| m[y * w + x] >= 0.5;
    let mut out = Tensor::zeros(mask.shape());
    let d = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            if !on(y, x) {
                continue;
            }
            let edge = (y > 0 && !on(y - 1, x))
                || (y + 1 < h && !on(y + 1, x))
                || (x > 0 && !on(y, x - 1))
                || (x + 1 < w && !on(y, x + 1));
            if edge {
                d[y * w + x] = 1.0;
            }
        }
    }
    Ok(out)
}

// Stream labels, so adding a draw to one stage never shifts another.
const SHAPE_STREAM: u64 = 1;
const COLOR_STREAM: u64 = 2;
const TEXTURE_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;

/// Sum of plane waves with random direction, frequency (cycles per image) and phase.
struct Waves(Vec<(f64, f64, f64, f64)>);

impl Waves {
    fn random(rng: &mut impl Rng, count: usize, freq: (f64, f64), amp: f64) -> Self {
        Waves(
            (0..count)
                .map(|_| {
                    let angle = rng.gen_range(0.0..TAU);
                    let f = rng.gen_range(freq.0..freq.1);
                    let phase = rng.gen_range(0.0..TAU);
                    let a = amp * rng.gen_range(0.5..1.0);
                    (f * libm::cos(angle), f * libm::sin(angle), phase, a)
                })
                .collect(),
        )
    }

    /// `u`, `v` in image-normalized coordinates.
    fn at(&self, u: f64, v: f64) -> f64 {
        self.0.iter().map(|&(fy, fx, phase, a)| a * libm::sin(TAU * (fy * u + fx * v) + phase)).sum()
    }

    fn lerp(&self, other: &Waves, t: f64) -> Waves {
        Waves(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), a.2 + t * (b.2 - a.2), a.3 + t * (b.3 - a.3)))
                .collect(),
        )
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn random_mask(seed: u64, h: usize, w: usize) -> Vec<bool> {
    let mut rng = substream(seed, SHAPE_STREAM);
    let cy = rng.gen_range(0.3..0.7);
    let cx = rng.gen_range(0.3..0.7);
    let ry = rng.gen_range(0.15..0.35);
    let rx = rng.gen_range(0.15..0.35);
    let waves = Waves::random(&mut rng, 4, (0.5, 2.5), 0.35);
    let fraction = rng.gen_range(0.08..0.40);

    let field: Vec<f64> = (0..h * w)
        .map(|i| {
            let u = (i / w) as f64 / h as f64;
            let v = (i % w) as f64 / w as f64;
            let r2 = ((u - cy) / ry).powi(2) + ((v - cx) / rx).powi(2);
            waves.at(u, v) - r2
        })
        .collect();
    // threshold at the (1 - fraction) quantile so coverage is exact up to ties
    let mut sorted = field.clone();
    sorted.sort_by(f64::total_cmp);
    let keep = ((fraction * (h * w) as f64) as usize).max(1);
    let threshold = sorted[h * w - keep];
    field.iter().map(|&f| f >= threshold).collect()
}

/// One scene. `difficulty` lies in `[0, 1]`; `H` and `W` must be positive
/// multiples of 32.
pub fn generate_sample(seed: u64, (h, w): (usize, usize), difficulty: f64) -> Result<Sample> {
    if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
        return Err(Error::Config(format!(
            "sample size {h}x{w} must be a positive multiple of {SIZE_MULTIPLE} in both dimensions"
        )));
    }
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::Config(format!("difficulty must lie in [0, 1], got {difficulty}")));
    }
    let t = difficulty;

    let inside = random_mask(seed, h, w);
    let mask = Tensor::new(&[1, h, w], inside.iter().map(|&b| b as u8 as f64).collect())?;
    let boundary = boundary_from_mask(&mask)?;

    let mut rng = substream(seed, COLOR_STREAM);
    let bg: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.3..0.7));
    let fg: [f64; 3] = std::array::from_fn(|c| {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let easy = bg[c] + sign * BASE_CONTRAST;
        easy + t * (bg[c] - easy)
    });

    let mut rng = substream(seed, TEXTURE_STREAM);
    let bg_tex: Vec<Waves> = (0..3).map(|_| Waves::random(&mut rng, 3, (3.0, 8.0), 0.05)).collect();
    let fg_easy: Vec<Waves> = (0..3).map(|_| Waves::random(&mut rng, 3, (8.0, 16.0), 0.05)).collect();
    let fg_tex: Vec<Waves> = fg_easy.iter().zip(&bg_tex).map(|(f, b)| f.lerp(b, t)).collect();

    let mut noise = substream(seed, NOISE_STREAM);
    let edge = boundary.data();
    let mut image = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for p in 0..h * w {
            let u = (p / w) as f64 / h as f64;
            let v = (p % w) as f64 / w as f64;
            let base = if inside[p] { fg[c] + fg_tex[c].at(u, v) } else { bg[c] + bg_tex[c].at(u, v) };
            let jitter = noise.gen_range(-0.02..0.02);
            image[c * h * w + p] = quantize(base + jitter - CONTOUR_SHADE * edge[p]);
        }
    }

    Ok(Sample {
        image: Tensor::new(&[3, h, w], image)?,
        mask,
        boundary,
        seed,
    })
}

/// Per-sample seed for item `index` of a dataset rooted at `seed`.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    rand::RngCore::next_u64(&mut substream(seed, index as u64 ^ (1 << 63)))
}

/// `count` scenes, generated in parallel; the result does not depend on the thread count.
pub fn generate_dataset(seed: u64, count: usize, size: (usize, usize), difficulty: f64) -> Result<Vec<Sample>> {
    (0..count)
        .into_par_iter()
        .map(|i| generate_sample(item_seed(seed, i), size, difficulty))
        .collect()
}

fn layout(root: &Path, index: usize) -> [PathBuf; 3] {
    [
        root.join("images").join(format!("{index:04}.ppm")),
        root.join("masks").join(format!("{index:04}.pgm")),
        root.join("boundaries").join(format!("{index:04}.pgm")),
    ]
}

/// Writes `images/NNNN.ppm`, `masks/NNNN.pgm` and `boundaries/NNNN.pgm` under `root`.
pub fn write_dataset(root: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let root = root.as_ref();
    for dir in ["images", "masks", "boundaries"] {
        let dir = root.join(dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, s) in samples.iter().enumerate() {
        let [image, mask, boundary] = layout(root, i);
        write_image(image, &s.image)?;
        write_image(mask, &s.mask)?;
        write_image(boundary, &s.boundary)?;
    }
    Ok(())
}

/// Loads every `images/*.ppm` with its mask, in file-name order. A missing
/// boundary file is recomputed from the mask. `seed` is set to the item index.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let root = root.as_ref();
    let images = root.join("images");
    let mut names: Vec<String> = fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| name.ends_with(".ppm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Format {
            path: images,
            reason: "no .ppm images found".into(),
        });
    }
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let stem = name.trim_end_matches(".ppm");
            let image_path = images.join(name);
            let image = read_image(&image_path)?;
            let mask_path = root.join("masks").join(format!("{stem}.pgm"));
            let mask = read_image(&mask_path)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            if image.shape()[0] != 3 || mask.shape()[0] != 1 || image.shape()[1..] != mask.shape()[1..] {
                return Err(Error::Format {
                    path: mask_path,
                    reason: format!("mask shape {:?} does not match image shape {:?}", mask.shape(), image.shape()),
                });
            }
            let boundary_path = root.join("boundaries").join(format!("{stem}.pgm"));
            let boundary = if boundary_path.exists() {
                read_image(&boundary_path)?
            } else {
                boundary_from_mask(&mask)?
            };
            Ok(Sample {
                image,
                mask,
                boundary,
                seed: i as u64,
            })
        })
        .collect()
}
