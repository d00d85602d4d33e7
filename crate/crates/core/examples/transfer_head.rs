//! Trains a softmax head on precomputed image features and compares it with
//! the held-out split.
//!
//! Usage: transfer_head [features.txt]
//!
//! Without a file, features are generated: one Gaussian cluster per class.

use std::path::PathBuf;

use traffic_density::metrics::{aggregate_runs, render_table};
use traffic_density::nn::TrainConfig;
use traffic_density::transfer::{evaluate_head, load_features, synthetic_features, train_head};

fn main() -> traffic_density::Result<()> {
    let set = match std::env::args().nth(1).map(PathBuf::from) {
        Some(path) => load_features(&path)?,
        None => synthetic_features(&[300; 5], 256, 0.3, 1.0, 7)?,
    };
    let (train_set, validation) = set.split(0.9);
    let cfg = TrainConfig { epochs: 20, seed: 7, ..TrainConfig::default() };

    let start = std::time::Instant::now();
    let fitted = train_head(&train_set, &validation, 5, &cfg)?;
    let elapsed = start.elapsed();
    let report = evaluate_head(&fitted.head, &validation)?;

    println!("{} x {} features, trained in {elapsed:.2?}", train_set.len(), set.feature_dim);
    print!("{}", render_table(&[("Transfer head".to_string(), aggregate_runs(&[report])?)]));
    Ok(())
}
