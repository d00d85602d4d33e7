//! Grid search over learning rate and class weighting, three seeds per
//! point, on generated features.

use traffic_density::metrics::render_table;
use traffic_density::nn::TrainConfig;
use traffic_density::transfer::{evaluate_head, synthetic_features, train_head};
use traffic_density::tuning::{grid_search, write_results_csv, Axis, Grid, Selection};

fn main() -> traffic_density::Result<()> {
    let features = synthetic_features(&[240, 180, 80, 80, 70], 64, 0.25, 1.0, 3)?;
    let (train_set, validation) = features.split(0.8);
    let grid =
        Grid::new(vec![Axis::parse("learning_rate=0.001,0.01,0.1")?, Axis::ClassWeighting(vec![false, true])], 16);
    let base = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let result = grid_search(&grid, &base, &[1, 2, 3], Selection::MacroF1, |cfg, _seed| {
        evaluate_head(&train_head(&train_set, &validation, 5, cfg)?.head, &validation)
    })?;

    let rows: Vec<_> = result
        .results
        .iter()
        .map(|r| {
            let label: Vec<String> = r.point.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
            (label.join(" "), r.aggregate)
        })
        .collect();
    print!("{}", render_table(&rows));
    println!("best by macro-F1: {:?}", result.best_point().point.values);

    write_results_csv(std::io::stdout().lock(), &result)?;
    Ok(())
}
