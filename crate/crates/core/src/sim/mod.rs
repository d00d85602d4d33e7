//! Point-junction queue simulator and signal controllers.
//!
//! Time advances in whole seconds. Each step: Poisson arrivals join the lane
//! queues (stamped with the step's start time), the controller is consulted
//! unless a phase change is in progress, green lanes discharge at their
//! saturation rate, and the clock advances. A vehicle discharged during step
//! `[t, t+1)` departs at `t + 1`; its delay is departure minus arrival.

mod control;
mod file;
mod ga;
mod qlearn;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{classify_count, DensityClass};
use crate::error::{Error, Result};

pub use control::{
    density_adaptive_decide, enforce_max_red, fixed_time_decide, lqf_decide, Controller, ControllerPolicy,
    DensityAdaptiveConfig, MaxRedRule,
};
pub use file::{
    compare_controllers, read_scenario, reference_scenario, render_compare, write_delay_csv, write_scenario,
    CompareRow, ControlSettings, ScenarioFile, DELAY_CSV_HEADER, SCENARIO_FORMAT_VERSION,
};
pub use ga::{exhaustive_search, ga_optimize, timing_fitness, GaConfig, GaResult, GreenGrid};
pub use qlearn::{q_train, QConfig, QPolicy, TimeBins};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub approach: String,
    /// Mean arrivals per second.
    pub arrival_rate: f64,
    /// Vehicles per second discharged while green.
    pub saturation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lanes: Vec<Lane>,
    /// Lanes given green by each phase.
    pub phases: Vec<Vec<usize>>,
    /// All-red seconds between two phases.
    pub lost_time: u32,
    pub horizon: u32,
    pub seed: u64,
    /// Queue length treated as a full lane when mapping queues to density
    /// classes.
    pub lane_capacity: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.lanes.is_empty() || self.phases.is_empty() {
            return Err(Error::invalid("a scenario needs at least one lane and one phase"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if !(self.lane_capacity > 0.0 && self.lane_capacity.is_finite()) {
            return Err(Error::invalid(format!("lane capacity {} must be positive", self.lane_capacity)));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if !(lane.arrival_rate >= 0.0 && lane.arrival_rate.is_finite()) {
                return Err(Error::invalid(format!("lane {i}: arrival rate {} is invalid", lane.arrival_rate)));
            }
            if !(lane.saturation_rate > 0.0 && lane.saturation_rate.is_finite()) {
                return Err(Error::invalid(format!(
                    "lane {i}: saturation rate {} must be positive",
                    lane.saturation_rate
                )));
            }
        }
        for (p, lanes) in self.phases.iter().enumerate() {
            if lanes.is_empty() {
                return Err(Error::invalid(format!("phase {p} serves no lane")));
            }
            if let Some(&bad) = lanes.iter().find(|&&l| l >= self.lanes.len()) {
                return Err(Error::invalid(format!("phase {p} names lane {bad}, scenario has {}", self.lanes.len())));
            }
        }
        if let Some(l) = (0..self.lanes.len()).find(|l| !self.phases.iter().any(|p| p.contains(l))) {
            return Err(Error::invalid(format!("lane {l} is not served by any phase")));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Scenario {
        Scenario { seed, ..self.clone() }
    }

    /// Lowest-numbered phase giving `lane` green.
    pub fn phase_of(&self, lane: usize) -> usize {
        self.phases.iter().position(|p| p.contains(&lane)).expect("validated scenario serves every lane")
    }
}

/// What a controller asks for at a decision instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Hold,
    SwitchTo(usize),
}

/// Queues hold the arrival second of every waiting vehicle, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionState {
    pub queues: Vec<VecDeque<u32>>,
    pub phase: usize,
    /// Green seconds served by the active phase so far.
    pub time_in_phase: u32,
    pub clock: u32,
    /// Remaining all-red seconds and the phase that follows them.
    pub transition: Option<(u32, usize)>,
    /// Seconds each lane has been red while holding vehicles.
    pub red_time: Vec<u32>,
}

impl JunctionState {
    pub fn queue_len(&self, lane: usize) -> usize {
        self.queues[lane].len()
    }

    pub fn phase_demand(&self, scenario: &Scenario, phase: usize) -> usize {
        scenario.phases[phase].iter().map(|&l| self.queue_len(l)).sum()
    }

    /// Density class of a lane's queue: Table-1 breakpoints applied to the
    /// queue as a percentage of lane capacity.
    pub fn lane_class(&self, scenario: &Scenario, lane: usize) -> DensityClass {
        let pct = 100.0 * self.queue_len(lane) as f64 / scenario.lane_capacity;
        classify_count(pct).expect("queue percentages are finite and non-negative")
    }

    pub fn is_green(&self, scenario: &Scenario, lane: usize) -> bool {
        self.transition.is_none() && scenario.phases[self.phase].contains(&lane)
    }
}

/// Per-step record, used for tracing and tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    pub arrivals: Vec<usize>,
    /// `(lane, arrival, departure)` for every vehicle discharged this step.
    pub departures: Vec<(usize, u32, u32)>,
    /// The controller's request, when it was consulted.
    pub action: Option<Action>,
    /// Vehicles waiting after the step (each accrues one second of delay).
    pub queued: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneStats {
    pub arrivals: u64,
    pub departures: u64,
    pub still_queued: u64,
    pub mean_delay: f64,
    pub max_delay: f64,
    /// Longest continuous red seen while the lane held vehicles.
    pub max_red: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    /// Mean over all arrivals; vehicles still queued at the horizon count
    /// `horizon − arrival`.
    pub mean_delay: f64,
    pub max_delay: f64,
    pub throughput: u64,
    pub arrivals: u64,
    pub still_queued: u64,
    pub per_lane: Vec<LaneStats>,
}

struct ArrivalStream {
    rng: ChaCha8Rng,
    poisson: Option<Poisson<f64>>,
}

/// Arrival streams depend only on `(seed, lane)`, never on the controller,
/// so every controller sees the same vehicles.
fn arrival_streams(scenario: &Scenario) -> Vec<ArrivalStream> {
    scenario
        .lanes
        .iter()
        .enumerate()
        .map(|(i, lane)| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
            rng.set_stream(i as u64 + 1);
            let poisson = (lane.arrival_rate > 0.0).then(|| Poisson::new(lane.arrival_rate).expect("positive rate"));
            ArrivalStream { rng, poisson }
        })
        .collect()
}

#[derive(Default, Clone)]
struct LaneTally {
    arrivals: u64,
    departures: u64,
    delay_sum: u64,
    max_delay: u32,
    max_red: u32,
}

pub struct Simulation<'a> {
    scenario: &'a Scenario,
    state: JunctionState,
    streams: Vec<ArrivalStream>,
    credit: Vec<f64>,
    tally: Vec<LaneTally>,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        let n = scenario.lanes.len();
        Ok(Simulation {
            scenario,
            state: JunctionState {
                queues: vec![VecDeque::new(); n],
                phase: 0,
                time_in_phase: 0,
                clock: 0,
                transition: None,
                red_time: vec![0; n],
            },
            streams: arrival_streams(scenario),
            credit: vec![0.0; n],
            tally: vec![LaneTally::default(); n],
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn state(&self) -> &JunctionState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.clock >= self.scenario.horizon
    }

    /// Advances one second. `decide` sees the state after this step's
    /// arrivals and is only called when no phase change is in progress.
    pub fn step(&mut self, decide: impl FnOnce(&JunctionState) -> Action) -> StepOutcome {
        let arrivals: Vec<usize> = self
            .streams
            .iter_mut()
            .map(|stream| match &stream.poisson {
                Some(p) => p.sample(&mut stream.rng) as usize,
                None => 0,
            })
            .collect();
        self.step_with_arrivals(&arrivals, decide)
    }

    /// Like [`Simulation::step`] with the arrival counts given instead of
    /// sampled.
    pub fn step_with_arrivals(
        &mut self,
        arrivals: &[usize],
        decide: impl FnOnce(&JunctionState) -> Action,
    ) -> StepOutcome {
        assert_eq!(arrivals.len(), self.scenario.lanes.len(), "one arrival count per lane");
        let t = self.state.clock;
        let mut outcome = StepOutcome::default();
        for (lane, &n) in arrivals.iter().enumerate() {
            for _ in 0..n {
                self.state.queues[lane].push_back(t);
            }
            self.tally[lane].arrivals += n as u64;
            outcome.arrivals.push(n);
        }

        if self.state.transition.is_none() {
            let action = decide(&self.state);
            outcome.action = Some(action);
            if let Action::SwitchTo(p) = action {
                assert!(p < self.scenario.phases.len(), "controller chose phase {p} of {}", self.scenario.phases.len());
                if p != self.state.phase {
                    if self.scenario.lost_time > 0 {
                        self.state.transition = Some((self.scenario.lost_time, p));
                    } else {
                        self.state.phase = p;
                        self.state.time_in_phase = 0;
                    }
                }
            }
        }

        let green: Vec<bool> = (0..self.scenario.lanes.len()).map(|l| self.state.is_green(self.scenario, l)).collect();
        for (lane, &is_green) in green.iter().enumerate() {
            if !is_green {
                self.credit[lane] = 0.0;
                continue;
            }
            self.credit[lane] += self.scenario.lanes[lane].saturation_rate;
            while self.credit[lane] >= 1.0 {
                let Some(arrived) = self.state.queues[lane].pop_front() else {
                    break;
                };
                self.credit[lane] -= 1.0;
                let tally = &mut self.tally[lane];
                tally.departures += 1;
                tally.delay_sum += u64::from(t + 1 - arrived);
                tally.max_delay = tally.max_delay.max(t + 1 - arrived);
                outcome.departures.push((lane, arrived, t + 1));
            }
            if self.state.queues[lane].is_empty() {
                self.credit[lane] = 0.0;
            }
        }

        match self.state.transition {
            Some((1, target)) => {
                self.state.transition = None;
                self.state.phase = target;
                self.state.time_in_phase = 0;
            }
            Some((remaining, target)) => self.state.transition = Some((remaining - 1, target)),
            None => self.state.time_in_phase += 1,
        }
        for (lane, &is_green) in green.iter().enumerate() {
            if is_green || self.state.queues[lane].is_empty() {
                self.state.red_time[lane] = 0;
            } else {
                self.state.red_time[lane] += 1;
                self.tally[lane].max_red = self.tally[lane].max_red.max(self.state.red_time[lane]);
            }
        }
        outcome.queued = self.state.queues.iter().map(VecDeque::len).sum();
        self.state.clock += 1;
        outcome
    }

    pub fn finish(self) -> DelayStats {
        let horizon = self.state.clock;
        let mut stats = DelayStats::default();
        let mut total_delay = 0u64;
        for (tally, queue) in self.tally.iter().zip(&self.state.queues) {
            let waiting: u64 = queue.iter().map(|&a| u64::from(horizon - a)).sum();
            let oldest = queue.front().map_or(0, |&a| horizon - a);
            let lane_delay = tally.delay_sum + waiting;
            let max_delay = tally.max_delay.max(oldest) as f64;
            stats.per_lane.push(LaneStats {
                arrivals: tally.arrivals,
                departures: tally.departures,
                still_queued: queue.len() as u64,
                mean_delay: if tally.arrivals > 0 { lane_delay as f64 / tally.arrivals as f64 } else { 0.0 },
                max_delay,
                max_red: tally.max_red,
            });
            total_delay += lane_delay;
            stats.arrivals += tally.arrivals;
            stats.throughput += tally.departures;
            stats.still_queued += queue.len() as u64;
            stats.max_delay = stats.max_delay.max(max_delay);
        }
        stats.mean_delay = if stats.arrivals > 0 { total_delay as f64 / stats.arrivals as f64 } else { 0.0 };
        stats
    }
}

/// Runs the scenario to its horizon under `controller`.
pub fn run_scenario(scenario: &Scenario, controller: &Controller) -> Result<DelayStats> {
    controller.check(scenario)?;
    let mut sim = Simulation::new(scenario)?;
    while !sim.is_done() {
        sim.step(|state| controller.decide(scenario, state));
    }
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single_lane(rate: f64, saturation: f64, horizon: u32) -> Scenario {
        Scenario {
            lanes: vec![Lane { approach: "N".into(), arrival_rate: rate, saturation_rate: saturation }],
            phases: vec![vec![0]],
            lost_time: 0,
            horizon,
            seed: 1,
            lane_capacity: 20.0,
        }
    }

    #[test]
    fn three_queued_vehicles_leave_one_per_second() {
        let scenario = single_lane(0.0, 1.0, 5);
        let mut sim = Simulation::new(&scenario).unwrap();
        sim.state.queues[0].extend([0, 0, 0]);
        let mut departures = Vec::new();
        for _ in 0..4 {
            departures.extend(sim.step(|_| Action::Hold).departures);
        }
        assert_eq!(departures, vec![(0, 0, 1), (0, 0, 2), (0, 0, 3)]);
        assert!(sim.state().queues[0].is_empty());
    }

    #[test]
    fn no_arrivals_no_delay() {
        let scenario = single_lane(0.0, 1.0, 50);
        let stats = run_scenario(&scenario, &Controller::fixed_time(vec![10])).unwrap();
        assert_eq!(stats.arrivals, 0);
        assert_eq!(stats.mean_delay, 0.0);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = single_lane(0.1, 1.0, 10);
        s.phases = vec![vec![]];
        assert!(s.validate().is_err());
        let mut s = single_lane(-0.1, 1.0, 10);
        assert!(s.validate().is_err());
        s = single_lane(0.1, 1.0, 0);
        assert!(s.validate().is_err());
        let mut s = single_lane(0.1, 1.0, 10);
        s.lanes.push(s.lanes[0].clone());
        assert!(s.validate().is_err(), "second lane has no phase");
    }
}
