use serde::{Deserialize, Serialize};

use super::qlearn::QPolicy;
use super::{Action, JunctionState, Scenario};
use crate::data::DensityClass;
use crate::error::{Error, Result};

/// Anti-starvation override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxRedRule {
    pub max_red: u32,
}

impl MaxRedRule {
    pub fn new(max_red: u32) -> Self {
        MaxRedRule { max_red }
    }

    /// Red time at which a lane is treated as starved. With more than two
    /// phases a starved lane may have to wait for other starved phases to be
    /// served first, each costing lost time plus one green second, so the
    /// trigger comes that much earlier.
    pub fn trigger(&self, scenario: &Scenario) -> u32 {
        let queue_ahead = scenario.phases.len().saturating_sub(2) as u32 * (scenario.lost_time + 1);
        self.max_red.saturating_sub(queue_ahead)
    }

    /// Longest continuous red any lane may see while the rule is active.
    pub fn bound(&self, scenario: &Scenario) -> u32 {
        self.max_red + scenario.lost_time + 1
    }

    fn check(&self, scenario: &Scenario) -> Result<()> {
        if self.trigger(scenario) <= scenario.lost_time {
            return Err(Error::invalid(format!(
                "max red {} is too short for {} phases with {} s lost time",
                self.max_red,
                scenario.phases.len(),
                scenario.lost_time
            )));
        }
        Ok(())
    }
}

/// Overrides `proposed` when a waiting lane has been red for too long: the
/// longest-starved lane (ties to the lower lane id) gets the lowest-numbered
/// phase serving it. A phase that has not yet had a green second is held.
pub fn enforce_max_red(scenario: &Scenario, state: &JunctionState, proposed: Action, rule: &MaxRedRule) -> Action {
    if state.transition.is_some() {
        return proposed;
    }
    if state.time_in_phase == 0 && state.clock > 0 {
        return Action::Hold;
    }
    let trigger = rule.trigger(scenario);
    let starved = (0..scenario.lanes.len())
        .filter(|&l| state.red_time[l] >= trigger && !state.queues[l].is_empty())
        .filter(|&l| !scenario.phases[state.phase].contains(&l))
        .max_by_key(|&l| (state.red_time[l], std::cmp::Reverse(l)));
    match starved {
        Some(lane) => Action::SwitchTo(scenario.phase_of(lane)),
        None => proposed,
    }
}

pub fn fixed_time_decide(greens: &[u32], state: &JunctionState) -> Action {
    if state.time_in_phase >= greens[state.phase] {
        Action::SwitchTo((state.phase + 1) % greens.len())
    } else {
        Action::Hold
    }
}

/// Longest queue first. After `min_green`, the phase with the largest summed
/// queue wins; ties keep the current phase, then go to the lowest phase id.
/// Past `max_green` the current phase yields to the best other phase with
/// waiting vehicles.
pub fn lqf_decide(scenario: &Scenario, state: &JunctionState, min_green: u32, max_green: u32) -> Action {
    if state.time_in_phase < min_green {
        return Action::Hold;
    }
    let demand = |p: usize| state.phase_demand(scenario, p);
    let best_other =
        (0..scenario.phases.len()).filter(|&p| p != state.phase).max_by_key(|&p| (demand(p), std::cmp::Reverse(p)));
    let Some(other) = best_other else { return Action::Hold };
    if demand(other) == 0 {
        return Action::Hold;
    }
    if state.time_in_phase >= max_green || demand(other) > demand(state.phase) {
        Action::SwitchTo(other)
    } else {
        Action::Hold
    }
}

/// Green-time extension by density class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityAdaptiveConfig {
    pub base_green: u32,
    pub max_green: u32,
    /// Seconds added to the base green, indexed by class.
    pub extension: [u32; 5],
}

impl DensityAdaptiveConfig {
    pub fn new(base_green: u32, max_green: u32, class_map: &[(DensityClass, u32)]) -> Result<Self> {
        let mut extension = [None; 5];
        for &(class, secs) in class_map {
            extension[class.index()] = Some(secs);
        }
        if let Some(missing) = DensityClass::ALL.iter().find(|c| extension[c.index()].is_none()) {
            return Err(Error::invalid(format!("class map has no extension for {missing}")));
        }
        let cfg = DensityAdaptiveConfig { base_green, max_green, extension: extension.map(|e| e.unwrap_or_default()) };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.base_green == 0 || self.base_green > self.max_green {
            return Err(Error::invalid(format!(
                "need 0 < base green {} <= max green {}",
                self.base_green, self.max_green
            )));
        }
        Ok(())
    }

    /// Green the active phase is entitled to given its busiest lane's class.
    pub fn target_green(&self, scenario: &Scenario, state: &JunctionState) -> u32 {
        let ext = scenario.phases[state.phase]
            .iter()
            .map(|&l| self.extension[state.lane_class(scenario, l).index()])
            .max()
            .unwrap_or(0);
        (self.base_green + ext).min(self.max_green)
    }
}

impl Default for DensityAdaptiveConfig {
    fn default() -> Self {
        DensityAdaptiveConfig { base_green: 5, max_green: 40, extension: [0, 5, 10, 20, 30] }
    }
}

/// Holds the active phase until its target green, then rotates to the next
/// phase (in cyclic order) that has waiting vehicles.
pub fn density_adaptive_decide(scenario: &Scenario, state: &JunctionState, cfg: &DensityAdaptiveConfig) -> Action {
    if state.time_in_phase < cfg.target_green(scenario, state) {
        return Action::Hold;
    }
    let n = scenario.phases.len();
    (1..n)
        .map(|k| (state.phase + k) % n)
        .find(|&p| state.phase_demand(scenario, p) > 0)
        .map_or(Action::Hold, Action::SwitchTo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControllerPolicy {
    FixedTime { greens: Vec<u32> },
    LongestQueueFirst { min_green: u32, max_green: u32 },
    DensityAdaptive(DensityAdaptiveConfig),
    GaTimings { greens: Vec<u32> },
    QLearning(QPolicy),
}

impl ControllerPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerPolicy::FixedTime { .. } => "FixedTime",
            ControllerPolicy::LongestQueueFirst { .. } => "LQF",
            ControllerPolicy::DensityAdaptive(_) => "DensityAdaptive",
            ControllerPolicy::GaTimings { .. } => "GA",
            ControllerPolicy::QLearning(_) => "QLearning",
        }
    }
}

/// A policy, optionally wrapped by the max-red rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub policy: ControllerPolicy,
    pub max_red: Option<MaxRedRule>,
}

impl Controller {
    pub fn new(policy: ControllerPolicy) -> Self {
        Controller { policy, max_red: None }
    }

    pub fn fixed_time(greens: Vec<u32>) -> Self {
        Controller::new(ControllerPolicy::FixedTime { greens })
    }

    pub fn lqf(min_green: u32, max_green: u32) -> Self {
        Controller::new(ControllerPolicy::LongestQueueFirst { min_green, max_green })
    }

    pub fn density_adaptive(cfg: DensityAdaptiveConfig) -> Self {
        Controller::new(ControllerPolicy::DensityAdaptive(cfg))
    }

    pub fn with_max_red(mut self, rule: MaxRedRule) -> Self {
        self.max_red = Some(rule);
        self
    }

    pub fn name(&self) -> &'static str {
        self.policy.name()
    }

    pub fn check(&self, scenario: &Scenario) -> Result<()> {
        let phases = scenario.phases.len();
        match &self.policy {
            ControllerPolicy::FixedTime { greens } | ControllerPolicy::GaTimings { greens } => {
                if greens.len() != phases || greens.contains(&0) {
                    return Err(Error::invalid(format!("green schedule {greens:?} needs {phases} positive durations")));
                }
                if let Some(rule) = &self.max_red {
                    let cycle: u32 = greens.iter().map(|g| g + scenario.lost_time).sum();
                    let longest_red = greens.iter().map(|g| cycle - g).max().unwrap_or(0);
                    if rule.max_red <= longest_red {
                        return Err(Error::invalid(format!(
                            "max red {} does not exceed the schedule's longest red {longest_red}",
                            rule.max_red
                        )));
                    }
                }
            }
            ControllerPolicy::LongestQueueFirst { min_green, max_green } => {
                if min_green > max_green || *max_green == 0 {
                    return Err(Error::invalid(format!(
                        "need min green {min_green} <= max green {max_green}, max green positive"
                    )));
                }
            }
            ControllerPolicy::DensityAdaptive(cfg) => cfg.check()?,
            ControllerPolicy::QLearning(q) => q.check(scenario)?,
        }
        if let Some(rule) = &self.max_red {
            rule.check(scenario)?;
        }
        Ok(())
    }

    pub fn decide(&self, scenario: &Scenario, state: &JunctionState) -> Action {
        let proposed = match &self.policy {
            ControllerPolicy::FixedTime { greens } | ControllerPolicy::GaTimings { greens } => {
                fixed_time_decide(greens, state)
            }
            ControllerPolicy::LongestQueueFirst { min_green, max_green } => {
                lqf_decide(scenario, state, *min_green, *max_green)
            }
            ControllerPolicy::DensityAdaptive(cfg) => density_adaptive_decide(scenario, state, cfg),
            ControllerPolicy::QLearning(q) => q.decide(scenario, state),
        };
        match &self.max_red {
            Some(rule) => enforce_max_red(scenario, state, proposed, rule),
            None => proposed,
        }
    }
}
