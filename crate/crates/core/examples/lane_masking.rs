//! Masks everything outside one lane of a generated frame and writes the
//! before and after images.
//!
//! Usage: lane_masking [out_dir]

use std::path::PathBuf;

use traffic_density::data::synthetic::{masked_scene_dataset, BlobSceneConfig};
use traffic_density::data::{apply_mask, read_masks, write_masks, MaskPolygon, MASKS_FILE};
use traffic_density::tensor::Tensor;

fn save_gray(t: &Tensor, path: &PathBuf) -> Result<(), image::ImageError> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(t.data()[y as usize * w + x as usize] * 255.0).round() as u8])
    });
    img.save(path)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&out)?;

    let scene = BlobSceneConfig { height: 64, width: 64, ..BlobSceneConfig::default() };
    let lane = MaskPolygon::new("1701", vec![[0.0, 0.0], [44.0, 0.0], [40.0, 64.0], [0.0, 64.0]]);
    let masks = out.join(MASKS_FILE);
    write_masks(&masks, &[lane])?;
    let lane = read_masks(&masks)?.remove(0);

    let scene_set = masked_scene_dataset([0, 0, 1, 0, 0], &scene, &lane, 30, 5)?;
    let frame = &scene_set.examples[0].image;
    let masked = apply_mask(frame, &lane)?;
    let kept = masked.data().iter().zip(frame.data()).filter(|(m, f)| m == f).count();

    save_gray(frame, &out.join("frame.png"))?;
    save_gray(&masked, &out.join("frame_masked.png"))?;
    println!("kept {kept} of {} pixels; images and {MASKS_FILE} written to {}", frame.len(), out.display());
    Ok(())
}
