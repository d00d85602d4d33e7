//! Benchmarks every controller on the reference junction.
//!
//! Usage: signal_control [seeds]

use traffic_density::sim::{compare_controllers, reference_scenario, render_compare, ControlSettings};

fn main() -> traffic_density::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let scenario = reference_scenario();
    let settings = ControlSettings::default();
    let seeds: Vec<u64> = (1..=seeds).collect();

    let start = std::time::Instant::now();
    let rows = compare_controllers(&scenario, &settings, &seeds)?;
    print!("{}", render_compare(&rows));
    println!("{} seeds in {:.1?}", seeds.len(), start.elapsed());
    Ok(())
}
