//! Saves an untrained 128x128 colour model, loads it back and classifies one
//! frame, timing the whole path from decoded image to probabilities.
//!
//! Usage: classify_frame [image]

use std::time::Instant;

use traffic_density::data::{decode_image, preprocess, DensityClass};
use traffic_density::nn::{init_parameters, load_checkpoint, predict, save_checkpoint, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir();
    let ckpt = dir.join(format!("classify_frame_{}.ckpt", std::process::id()));
    let config = ModelConfig::basic_cnn(3, 128, 128, DensityClass::COUNT);
    save_checkpoint(&ckpt, &config, &init_parameters(&config, 1)?)?;
    let (config, params) = load_checkpoint(&ckpt)?;
    std::fs::remove_file(&ckpt)?;

    let frame = match std::env::args().nth(1) {
        Some(path) => decode_image(path.as_ref())?,
        None => image::RgbImage::from_fn(320, 240, |x, y| image::Rgb([(x % 200) as u8, (y % 180) as u8, 60])),
    };
    let start = Instant::now();
    let input = preprocess(&frame, 128, 128, false)?;
    let probs = predict(&config, &params, &input)?;
    let elapsed = start.elapsed();

    for (class, p) in DensityClass::ALL.iter().zip(probs.data()) {
        println!("{:<12} {p:.4}", class.name());
    }
    println!("latency: {:.1} ms", elapsed.as_secs_f64() * 1e3);
    Ok(())
}
