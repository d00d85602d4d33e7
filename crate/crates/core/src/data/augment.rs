use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// On-the-fly training transforms. Each transform fires independently with
/// its own probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub translate_probability: f64,
    /// Largest shift as a fraction of the frame extent.
    pub max_translate_fraction: f64,
    pub brightness_probability: f64,
    pub brightness_min: f64,
    pub brightness_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_probability: 0.5,
            translate_probability: 0.5,
            max_translate_fraction: 0.1,
            brightness_probability: 0.5,
            brightness_min: 0.8,
            brightness_max: 1.2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            flip_probability: 0.0,
            translate_probability: 0.0,
            brightness_probability: 0.0,
            ..Self::default()
        }
    }
}

/// Mirrors every channel of a `[C, H, W]` tensor left to right.
pub fn flip_horizontal(image: &Tensor) -> Tensor {
    let w = *image.shape().last().expect("rank >= 1");
    let mut out = image.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

/// Shifts content by `(dy, dx)` pixels, filling uncovered pixels with 0.
pub fn translate(image: &Tensor, dy: isize, dx: isize) -> Tensor {
    let shape = image.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut out = Tensor::zeros(shape);
    let src = image.data();
    let dst = out.data_mut();
    for (plane_in, plane_out) in src.chunks_exact(h * w).zip(dst.chunks_exact_mut(h * w)) {
        for y in 0..h as isize {
            let sy = y - dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w as isize {
                let sx = x - dx;
                if sx >= 0 && sx < w as isize {
                    plane_out[(y * w as isize + x) as usize] = plane_in[(sy * w as isize + sx) as usize];
                }
            }
        }
    }
    out
}

/// Random flip, translation and brightness scaling (clamped to `[0, 1]`).
/// Shape is preserved; the result depends only on the image, config and rng
/// state.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, rng: &mut R, cfg: &AugmentConfig) -> Tensor {
    let mut out = image.clone();
    if rng.random::<f64>() < cfg.flip_probability {
        out = flip_horizontal(&out);
    }
    if rng.random::<f64>() < cfg.translate_probability {
        let shape = out.shape();
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let max_dy = (cfg.max_translate_fraction * h as f64).round() as i64;
        let max_dx = (cfg.max_translate_fraction * w as f64).round() as i64;
        let dy = rng.random_range(-max_dy..=max_dy);
        let dx = rng.random_range(-max_dx..=max_dx);
        out = translate(&out, dy as isize, dx as isize);
    }
    if rng.random::<f64>() < cfg.brightness_probability {
        let scale = rng.random_range(cfg.brightness_min..=cfg.brightness_max);
        out.data_mut().iter_mut().for_each(|v| *v = (*v * scale).clamp(0.0, 1.0));
    }
    out
}
