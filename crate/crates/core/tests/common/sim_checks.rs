//! Simulator properties shared by the simulator tests and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_density::sim::{
    exhaustive_search, ga_optimize, q_train, reference_scenario, run_scenario, ControlSettings, Controller,
    ControllerPolicy, DensityAdaptiveConfig, GaConfig, Lane, MaxRedRule, QConfig, Scenario, Simulation,
};

pub fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let n_lanes = rng.random_range(1..=4);
    let n_phases = rng.random_range(1..=4);
    let mut phases: Vec<Vec<usize>> = vec![Vec::new(); n_phases];
    for lane in 0..n_lanes {
        phases[rng.random_range(0..n_phases)].push(lane);
        if rng.random_bool(0.2) {
            let extra = rng.random_range(0..n_phases);
            if !phases[extra].contains(&lane) {
                phases[extra].push(lane);
            }
        }
    }
    for p in phases.iter_mut().filter(|p| p.is_empty()) {
        p.push(rng.random_range(0..n_lanes));
    }
    Scenario {
        lanes: (0..n_lanes)
            .map(|i| Lane {
                approach: format!("L{i}"),
                arrival_rate: if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..0.7) },
                saturation_rate: rng.random_range(0.2..1.5),
            })
            .collect(),
        phases,
        lost_time: rng.random_range(0..=5),
        horizon: rng.random_range(50..=400),
        seed: rng.random(),
        lane_capacity: rng.random_range(5.0..30.0),
    }
}

pub fn random_controller(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Controller {
    let phases = scenario.phases.len();
    let policy = match rng.random_range(0..5) {
        0 => ControllerPolicy::FixedTime { greens: (0..phases).map(|_| rng.random_range(1..40)).collect() },
        1 => {
            let min = rng.random_range(0..10);
            ControllerPolicy::LongestQueueFirst { min_green: min, max_green: min + rng.random_range(1..60) }
        }
        2 => {
            let ext = [0, 1, 2, 3, 4].map(|_| rng.random_range(0..40));
            let base = rng.random_range(1..10);
            ControllerPolicy::DensityAdaptive(DensityAdaptiveConfig {
                base_green: base,
                max_green: base + rng.random_range(0..60),
                extension: ext,
            })
        }
        3 => ControllerPolicy::GaTimings { greens: (0..phases).map(|_| rng.random_range(1..40)).collect() },
        _ => {
            let cfg = QConfig { episodes: 2, seed: rng.random(), ..QConfig::default() };
            ControllerPolicy::QLearning(q_train(scenario, &cfg).unwrap())
        }
    };
    // schedules need max_red beyond their own longest red
    let cycle_red = match &policy {
        ControllerPolicy::FixedTime { greens } | ControllerPolicy::GaTimings { greens } => {
            greens.iter().map(|g| g + scenario.lost_time).sum::<u32>()
        }
        _ => 0,
    };
    let queue_ahead = phases.saturating_sub(2) as u32 * (scenario.lost_time + 1);
    let max_red = cycle_red.max(queue_ahead + scenario.lost_time) + rng.random_range(1..30);
    Controller::new(policy).with_max_red(MaxRedRule::new(max_red))
}

/// Conservation, FIFO, the starvation bound and determinism on `cases`
/// random scenarios with random controllers.
pub fn fuzz_scenarios(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240);
    let mut worst_slack = i64::MAX;
    for case in 0..cases {
        let scenario = random_scenario(&mut rng);
        let controller = random_controller(&scenario, &mut rng);
        controller.check(&scenario).unwrap();
        let rule = controller.max_red.unwrap();
        let bound = rule.bound(&scenario);

        let mut sim = Simulation::new(&scenario).unwrap();
        let mut last_arrival_out = vec![0u32; scenario.lanes.len()];
        let mut arrivals = Vec::new();
        while !sim.is_done() {
            let out = sim.step(|s| controller.decide(&scenario, s));
            for &(lane, arrived, _) in &out.departures {
                assert!(arrived >= last_arrival_out[lane], "case {case}: FIFO broken on lane {lane}");
                last_arrival_out[lane] = arrived;
            }
            for (lane, &red) in sim.state().red_time.iter().enumerate() {
                assert!(
                    red <= bound,
                    "case {case}: lane {lane} red {red}s > bound {bound}s\n{scenario:?}\n{controller:?}"
                );
                worst_slack = worst_slack.min(i64::from(bound) - i64::from(red));
            }
            arrivals.push(out.arrivals);
        }
        let stats = sim.finish();
        assert_eq!(stats.arrivals, stats.throughput + stats.still_queued, "case {case}");
        for lane in &stats.per_lane {
            assert_eq!(lane.arrivals, lane.departures + lane.still_queued, "case {case}");
            assert!(lane.max_red <= bound);
        }
        assert!(stats.mean_delay <= stats.max_delay);

        assert_eq!(run_scenario(&scenario, &controller).unwrap(), stats, "case {case}: not deterministic");

        // common random numbers: another controller sees the same vehicles
        let mut other = Simulation::new(&scenario).unwrap();
        let fixed = Controller::fixed_time(vec![7; scenario.phases.len()]);
        for (t, expected) in arrivals.iter().enumerate() {
            assert_eq!(&other.step(|s| fixed.decide(&scenario, s)).arrivals, expected, "case {case} t={t}");
        }
    }
    assert!(worst_slack >= 0);
}

/// Mean delays over seeds 1..=10: (fixed, LQF, density-adaptive).
pub fn adaptive_beat_fixed_time() -> (f64, f64, f64) {
    let scenario = reference_scenario();
    let settings = ControlSettings::default();
    let seeds: Vec<u64> = (1..=10).collect();
    let mean = |c: &Controller| {
        seeds.iter().map(|&s| run_scenario(&scenario.with_seed(s), c).unwrap().mean_delay).sum::<f64>() / 10.0
    };
    let fixed = mean(&settings.fixed_time());
    let lqf = mean(&settings.lqf());
    let density = mean(&settings.density_adaptive());
    assert!(lqf <= 0.85 * fixed, "LQF {lqf:.2} vs fixed {fixed:.2}");
    assert!(density <= 0.85 * fixed, "density {density:.2} vs fixed {fixed:.2}");
    (fixed, lqf, density)
}

pub fn ga_matches_exhaustive_search() {
    let scenario = reference_scenario();
    let cfg = GaConfig::default();
    assert!(cfg.grid.size(2).unwrap() <= 200);
    let (best, worst) = exhaustive_search(&scenario, &cfg, 200).unwrap();
    let ga = ga_optimize(&scenario, &cfg).unwrap();
    assert_eq!(
        ga.greens, best.greens,
        "GA {:?} ({}) vs grid {:?} ({})",
        ga.greens, ga.fitness, best.greens, best.fitness
    );
    assert_eq!(ga.fitness, best.fitness);
    assert!(ga.fitness < worst.fitness);
    assert!(ga.evaluations < best.evaluations, "GA should not need the whole grid");
}

/// Mean delays on held-out seeds: (Q-learning, fixed).
pub fn q_learning_beats_fixed_time() -> (f64, f64) {
    let lane = |r: f64| Lane { approach: "A".into(), arrival_rate: r, saturation_rate: 0.5 };
    let scenario = Scenario {
        lanes: vec![lane(0.3), lane(0.05)],
        phases: vec![vec![0], vec![1]],
        lost_time: 3,
        horizon: 1800,
        seed: 500,
        lane_capacity: 20.0,
    };
    let cfg = QConfig { episodes: 150, ..QConfig::default() };
    let policy = q_train(&scenario, &cfg).unwrap();
    let q = Controller::new(ControllerPolicy::QLearning(policy));
    let fixed = Controller::fixed_time(vec![30, 30]);
    // training used seeds 500..650
    let held_out: Vec<u64> = (1..=10).collect();
    let mean = |c: &Controller| {
        held_out.iter().map(|&s| run_scenario(&scenario.with_seed(s), c).unwrap().mean_delay).sum::<f64>() / 10.0
    };
    let (q_delay, fixed_delay) = (mean(&q), mean(&fixed));
    assert!(q_delay < fixed_delay, "Q {q_delay:.2} vs fixed {fixed_delay:.2}");
    (q_delay, fixed_delay)
}
