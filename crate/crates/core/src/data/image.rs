use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory(&bytes)?.to_rgb8())
}

/// `0.299 R + 0.587 G + 0.114 B` on an `[3, H, W]` tensor.
pub fn to_grayscale(rgb: &Tensor) -> Result<Tensor> {
    let (h, w) = match rgb.shape() {
        &[3, h, w] => (h, w),
        other => return Err(Error::shape("grayscale input", &[3, 0, 0], other)),
    };
    let plane = h * w;
    let d = rgb.data();
    let gray = (0..plane).map(|i| 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i]).collect();
    Tensor::new(vec![1, h, w], gray)
}

/// Bilinear resize of every channel of a `[C, H, W]` tensor using pixel-center
/// alignment (`src = (dst + 0.5) · in / out − 0.5`, clamped to the border).
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = match input.shape() {
        &[c, h, w] => (c, h, w),
        other => return Err(Error::shape("resize input", &[0, 0, 0], other)),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be non-empty"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let taps = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let d = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Converts a decoded frame into a `[C, target_h, target_w]` tensor in
/// `[0, 1]`, with `C = 1` for grayscale and 3 otherwise.
pub fn preprocess(raw: &RgbImage, target_h: usize, target_w: usize, grayscale: bool) -> Result<Tensor> {
    let (w, h) = (raw.width() as usize, raw.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot preprocess a zero-sized image"));
    }
    let plane = h * w;
    let mut rgb = vec![0.0; 3 * plane];
    for (i, px) in raw.pixels().enumerate() {
        for ch in 0..3 {
            rgb[ch * plane + i] = px[ch] as f64 / 255.0;
        }
    }
    let mut t = Tensor::new(vec![3, h, w], rgb)?;
    if grayscale {
        t = to_grayscale(&t)?;
    }
    bilinear_resize(&t, target_h, target_w)
}
