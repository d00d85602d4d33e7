//! Trains the basic CNN on generated blob-count frames and prints the
//! per-epoch validation metrics.
//!
//! cargo run --release --example train_synthetic -- [per_class] [epochs] [seed]

use std::time::Instant;

use traffic_density::data::synthetic::{blob_count_dataset, BlobSceneConfig};
use traffic_density::data::{split, SplitSpec};
use traffic_density::nn::{init_parameters, train, ModelConfig, TrainConfig};

fn main() -> traffic_density::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let per_class = args.first().copied().unwrap_or(200);
    let epochs = args.get(1).copied().unwrap_or(10);
    let seed = args.get(2).copied().unwrap_or(0) as u64;

    let scene = BlobSceneConfig::default();
    let data = blob_count_dataset([per_class; 5], &scene, seed)?;
    let (train_set, validation) = split(data, &SplitSpec { train_fraction: 0.9, seed })?;
    let config = ModelConfig::basic_cnn(1, scene.height, scene.width, 5);
    let params = init_parameters(&config, seed)?;
    let cfg = TrainConfig { epochs, seed, ..TrainConfig::default() };

    let start = Instant::now();
    let outcome = train(&config, params, &train_set, &validation, &cfg)?;
    for r in &outcome.history {
        println!(
            "epoch {:>2}  loss {:.4}  val acc {:.3}  macro-F1 {:.3}  top-2 {:.3}",
            r.epoch,
            r.train_loss,
            r.val_accuracy.unwrap_or(f64::NAN),
            r.val_macro_f1.unwrap_or(f64::NAN),
            r.val_top2.unwrap_or(f64::NAN)
        );
    }
    if let Some(epoch) = outcome.diverged_at {
        println!("diverged in epoch {epoch}");
    }
    println!("{} training frames, {:.1} s", train_set.len(), start.elapsed().as_secs_f64());
    Ok(())
}
