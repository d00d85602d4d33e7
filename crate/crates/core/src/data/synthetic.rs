//! Deterministic synthetic traffic frames: bright "vehicle" blobs on a dark
//! noisy road, labeled by blob count with the same breakpoints as real
//! frames. Used by tests, benchmarks and the runnable examples.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::MaskPolygon;
use super::{classify_count, DensityClass, Example};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSceneConfig {
    pub height: usize,
    pub width: usize,
    /// Blobs are placed one per grid cell of this size, so they never touch.
    pub cell: usize,
    pub blob: usize,
    pub intensity_min: f64,
    pub intensity_max: f64,
    /// Background pixels are uniform in `[0, noise]`.
    pub noise: f64,
    /// Largest blob count drawn for the open-ended top class.
    pub jam_cap: u32,
}

impl Default for BlobSceneConfig {
    fn default() -> Self {
        BlobSceneConfig {
            height: 64,
            width: 64,
            cell: 4,
            blob: 2,
            intensity_min: 0.7,
            intensity_max: 1.0,
            noise: 0.05,
            jam_cap: 150,
        }
    }
}

impl BlobSceneConfig {
    fn grid(&self) -> (usize, usize) {
        (self.height / self.cell, self.width / self.cell)
    }

    pub fn capacity(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    fn validate(&self) -> Result<()> {
        if self.blob == 0 || self.blob >= self.cell || self.cell > self.height.min(self.width) {
            return Err(Error::invalid(format!("blob {} must be smaller than cell {}", self.blob, self.cell)));
        }
        if self.capacity() < self.jam_cap as usize {
            return Err(Error::invalid(format!("{} cells cannot hold {} blobs", self.capacity(), self.jam_cap)));
        }
        Ok(())
    }

    fn background<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.height * self.width).map(|_| rng.random::<f64>() * self.noise).collect()
    }

    fn stamp<R: Rng + ?Sized>(&self, pixels: &mut [f64], cell_index: usize, rng: &mut R) {
        let (_, cols) = self.grid();
        let (cy, cx) = (cell_index / cols, cell_index % cols);
        let slack = self.cell - self.blob;
        let oy = cy * self.cell + rng.random_range(0..slack);
        let ox = cx * self.cell + rng.random_range(0..slack);
        let v = rng.random_range(self.intensity_min..=self.intensity_max);
        for y in oy..oy + self.blob {
            for x in ox..ox + self.blob {
                pixels[y * self.width + x] = v;
            }
        }
    }
}

/// Renders a `[1, H, W]` frame containing exactly `count` blobs.
pub fn render_blobs<R: Rng + ?Sized>(count: usize, cfg: &BlobSceneConfig, rng: &mut R) -> Result<Tensor> {
    cfg.validate()?;
    if count > cfg.capacity() {
        return Err(Error::invalid(format!("{count} blobs exceed {} cells", cfg.capacity())));
    }
    let mut pixels = cfg.background(rng);
    for cell in sample(rng, cfg.capacity(), count) {
        cfg.stamp(&mut pixels, cell, rng);
    }
    Tensor::new(vec![1, cfg.height, cfg.width], pixels)
}

/// Draws a count uniformly from the class's integer range.
pub fn sample_count<R: Rng + ?Sized>(class: DensityClass, jam_cap: u32, rng: &mut R) -> u32 {
    rng.random_range(class.count_range(jam_cap))
}

/// `per_class[c]` frames of each class, shuffled.
pub fn blob_count_dataset(per_class: [usize; 5], cfg: &BlobSceneConfig, seed: u64) -> Result<Vec<Example>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class.iter().sum());
    for class in DensityClass::ALL {
        for _ in 0..per_class[class.index()] {
            let count = sample_count(class, cfg.jam_cap, &mut rng);
            debug_assert_eq!(classify_count(count as f64).ok(), Some(class));
            out.push(Example { image: render_blobs(count as usize, cfg, &mut rng)?, label: class.index() });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Per-class counts proportional to `ratios` with the largest class at `largest`.
pub fn counts_for_ratio(ratios: &[u64], largest: usize) -> Vec<usize> {
    let max = *ratios.iter().max().expect("non-empty ratios") as f64;
    ratios.iter().map(|&r| ((r as f64 / max) * largest as f64).round().max(1.0) as usize).collect()
}

/// Frames with a lane of interest and an opposite lane. Only blobs fully
/// inside `roi` count toward the label; the rest of the frame carries
/// `0..=max_distractors` distractor blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedScene {
    pub roi: MaskPolygon,
    pub examples: Vec<Example>,
}

pub fn masked_scene_dataset(
    per_class: [usize; 5],
    cfg: &BlobSceneConfig,
    roi: &MaskPolygon,
    max_distractors: usize,
    seed: u64,
) -> Result<MaskedScene> {
    cfg.validate()?;
    roi.validate_bounds(cfg.height, cfg.width)?;
    let (rows, cols) = cfg.grid();
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for cell in 0..rows * cols {
        let (cy, cx) = (cell / cols, cell % cols);
        let hits = (0..cfg.cell * cfg.cell)
            .filter(|k| {
                let y = cy * cfg.cell + k / cfg.cell;
                let x = cx * cfg.cell + k % cfg.cell;
                roi.contains(x as f64 + 0.5, y as f64 + 0.5)
            })
            .count();
        if hits == cfg.cell * cfg.cell {
            inside.push(cell);
        } else if hits == 0 {
            outside.push(cell);
        }
    }
    if inside.len() < cfg.jam_cap as usize {
        return Err(Error::invalid(format!("region holds {} cells, fewer than jam cap {}", inside.len(), cfg.jam_cap)));
    }
    let max_distractors = max_distractors.min(outside.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(per_class.iter().sum());
    for class in DensityClass::ALL {
        for _ in 0..per_class[class.index()] {
            let count = sample_count(class, cfg.jam_cap, &mut rng) as usize;
            let distractors = rng.random_range(0..=max_distractors);
            let mut pixels = cfg.background(&mut rng);
            for i in sample(&mut rng, inside.len(), count) {
                cfg.stamp(&mut pixels, inside[i], &mut rng);
            }
            for i in sample(&mut rng, outside.len(), distractors) {
                cfg.stamp(&mut pixels, outside[i], &mut rng);
            }
            examples
                .push(Example { image: Tensor::new(vec![1, cfg.height, cfg.width], pixels)?, label: class.index() });
        }
    }
    examples.shuffle(&mut rng);
    Ok(MaskedScene { roi: roi.clone(), examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_blobs(img: &Tensor, threshold: f64) -> usize {
        // top-left corners of bright 2x2 squares
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let on = |y: isize, x: isize| {
            y >= 0
                && x >= 0
                && (y as usize) < h
                && (x as usize) < w
                && img.get(&[0, y as usize, x as usize]) > threshold
        };
        let mut n = 0;
        for y in 0..h as isize {
            for x in 0..w as isize {
                if on(y, x) && !on(y - 1, x) && !on(y, x - 1) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn renders_exact_count() {
        let cfg = BlobSceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for count in [0, 1, 9, 57, 150] {
            let img = render_blobs(count, &cfg, &mut rng).unwrap();
            assert_eq!(count_blobs(&img, 0.5), count);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn dataset_labels_match_counts_and_repeat() {
        let cfg = BlobSceneConfig::default();
        let a = blob_count_dataset([3, 3, 3, 3, 3], &cfg, 5).unwrap();
        let b = blob_count_dataset([3, 3, 3, 3, 3], &cfg, 5).unwrap();
        assert_eq!(a, b);
        for ex in &a {
            let n = count_blobs(&ex.image, 0.5);
            assert_eq!(classify_count(n as f64).unwrap().index(), ex.label);
        }
    }

    #[test]
    fn ratio_counts() {
        assert_eq!(counts_for_ratio(&[1679, 1306, 556, 554, 488], 1679), vec![1679, 1306, 556, 554, 488]);
        assert_eq!(counts_for_ratio(&[4, 2, 1], 100), vec![100, 50, 25]);
    }

    #[test]
    fn masked_scene_labels_ignore_distractors() {
        let cfg = BlobSceneConfig { jam_cap: 120, ..BlobSceneConfig::default() };
        let roi = MaskPolygon::rectangle("synthetic", 0.0, 0.0, 32.0, 64.0);
        let scene = masked_scene_dataset([2, 2, 2, 2, 2], &cfg, &roi, 100, 3).unwrap();
        for ex in &scene.examples {
            let masked = crate::data::apply_mask(&ex.image, &roi).unwrap();
            let n = count_blobs(&masked, 0.5);
            assert_eq!(classify_count(n as f64).unwrap().index(), ex.label);
        }
    }
}
