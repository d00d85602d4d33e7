//! Tabular Q-learning over (lane classes, phase, time-in-phase bin) with
//! keep / switch-next actions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::control::{enforce_max_red, MaxRedRule};
use super::{Action, JunctionState, Scenario, Simulation};
use crate::error::{Error, Result};

const KEEP: usize = 0;
const SWITCH: usize = 1;

/// Upper edges of the time-in-phase bins; the last bin is open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBins(pub Vec<u32>);

impl Default for TimeBins {
    fn default() -> Self {
        TimeBins(vec![5, 10, 20])
    }
}

impl TimeBins {
    pub fn len(&self) -> usize {
        self.0.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bin(&self, t: u32) -> usize {
        self.0.iter().take_while(|&&edge| t >= edge).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QConfig {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub bins: TimeBins,
    pub max_states: usize,
    /// Max-red rule applied while learning and acting.
    pub max_red: Option<u32>,
    pub seed: u64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            episodes: 200,
            alpha: 0.1,
            gamma: 0.95,
            epsilon_start: 0.5,
            epsilon_end: 0.05,
            bins: TimeBins::default(),
            max_states: 1_000_000,
            max_red: None,
            seed: 7,
        }
    }
}

/// Learned action values; greedy at decision time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPolicy {
    pub lanes: usize,
    pub phases: usize,
    pub bins: TimeBins,
    pub table: Vec<[f64; 2]>,
}

impl QPolicy {
    fn new(scenario: &Scenario, bins: TimeBins, max_states: usize) -> Result<Self> {
        let states = state_count(scenario.lanes.len(), scenario.phases.len(), bins.len());
        match states {
            Some(n) if n <= max_states => Ok(QPolicy {
                lanes: scenario.lanes.len(),
                phases: scenario.phases.len(),
                bins,
                table: vec![[0.0; 2]; n],
            }),
            _ => Err(Error::invalid(format!(
                "state space 5^{} x {} phases x {} bins exceeds cap {max_states}",
                scenario.lanes.len(),
                scenario.phases.len(),
                bins.len()
            ))),
        }
    }

    pub(crate) fn check(&self, scenario: &Scenario) -> Result<()> {
        if self.lanes != scenario.lanes.len() || self.phases != scenario.phases.len() {
            return Err(Error::invalid(format!(
                "policy learned for {} lanes / {} phases, scenario has {} / {}",
                self.lanes,
                self.phases,
                scenario.lanes.len(),
                scenario.phases.len()
            )));
        }
        if Some(self.table.len()) != state_count(self.lanes, self.phases, self.bins.len()) {
            return Err(Error::invalid("Q table size does not match its state space"));
        }
        Ok(())
    }

    pub fn state_index(&self, scenario: &Scenario, state: &JunctionState) -> usize {
        let mut idx = 0;
        for lane in 0..self.lanes {
            idx = idx * 5 + state.lane_class(scenario, lane).index();
        }
        idx = idx * self.phases + state.phase;
        idx * self.bins.len() + self.bins.bin(state.time_in_phase)
    }

    fn greedy(&self, s: usize) -> usize {
        // ties keep the current phase
        if self.table[s][SWITCH] > self.table[s][KEEP] {
            SWITCH
        } else {
            KEEP
        }
    }

    fn max_value(&self, s: usize) -> f64 {
        self.table[s][KEEP].max(self.table[s][SWITCH])
    }

    pub fn decide(&self, scenario: &Scenario, state: &JunctionState) -> Action {
        to_action(self.greedy(self.state_index(scenario, state)), state.phase, self.phases)
    }
}

fn state_count(lanes: usize, phases: usize, bins: usize) -> Option<usize> {
    5usize.checked_pow(u32::try_from(lanes).ok()?)?.checked_mul(phases)?.checked_mul(bins)
}

fn to_action(a: usize, phase: usize, phases: usize) -> Action {
    if a == SWITCH {
        Action::SwitchTo((phase + 1) % phases)
    } else {
        Action::Hold
    }
}

/// Learns a policy over `cfg.episodes` runs of `scenario`, episode `e` using
/// arrival seed `scenario.seed + e`. The reward after each second is minus
/// the number of vehicles still waiting, i.e. the waiting time accrued.
pub fn q_train(scenario: &Scenario, cfg: &QConfig) -> Result<QPolicy> {
    scenario.validate()?;
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) || !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::invalid(format!("alpha {} / gamma {} out of range", cfg.alpha, cfg.gamma)));
    }
    let mut policy = QPolicy::new(scenario, cfg.bins.clone(), cfg.max_states)?;
    let rule = cfg.max_red.map(MaxRedRule::new);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for episode in 0..cfg.episodes {
        let frac = if cfg.episodes > 1 { episode as f64 / (cfg.episodes - 1) as f64 } else { 1.0 };
        let epsilon = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
        let run = scenario.with_seed(scenario.seed.wrapping_add(episode as u64));
        let mut sim = Simulation::new(&run)?;
        // (state, action, discounted return so far, discount for next reward)
        let mut pending: Option<(usize, usize, f64, f64)> = None;

        while !sim.is_done() {
            let mut chosen = None;
            let outcome = sim.step(|state| {
                let s = policy.state_index(&run, state);
                if let Some((ps, pa, ret, disc)) = pending.take() {
                    let target = ret + disc * policy.max_value(s);
                    policy.table[ps][pa] += cfg.alpha * (target - policy.table[ps][pa]);
                }
                let a = if rng.random::<f64>() < epsilon { rng.random_range(0..2) } else { policy.greedy(s) };
                let proposed = to_action(a, state.phase, policy.phases);
                let action = match &rule {
                    Some(r) => enforce_max_red(&run, state, proposed, r),
                    None => proposed,
                };
                // overridden choices teach nothing about the chosen action
                if action == proposed {
                    chosen = Some((s, a));
                }
                action
            });
            let reward = -(outcome.queued as f64);
            if let Some((s, a)) = chosen {
                pending = Some((s, a, reward, cfg.gamma));
            } else if let Some((_, _, ret, disc)) = pending.as_mut() {
                *ret += *disc * reward;
                *disc *= cfg.gamma;
            }
        }
        if let Some((ps, pa, ret, _)) = pending {
            policy.table[ps][pa] += cfg.alpha * (ret - policy.table[ps][pa]);
        }
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Lane;

    fn scenario(rates: [f64; 2]) -> Scenario {
        Scenario {
            lanes: rates
                .iter()
                .map(|&r| Lane { approach: "A".into(), arrival_rate: r, saturation_rate: 1.0 })
                .collect(),
            phases: vec![vec![0], vec![1]],
            lost_time: 2,
            horizon: 300,
            seed: 3,
            lane_capacity: 20.0,
        }
    }

    #[test]
    fn bins() {
        let b = TimeBins::default();
        assert_eq!([0, 4, 5, 9, 10, 19, 20, 500].map(|t| b.bin(t)), [0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn zero_traffic_leaves_table_zero() {
        let cfg = QConfig { episodes: 5, ..QConfig::default() };
        let q = q_train(&scenario([0.0, 0.0]), &cfg).unwrap();
        assert!(q.table.iter().all(|v| v == &[0.0, 0.0]));
    }

    #[test]
    fn fixed_seed_same_table() {
        let cfg = QConfig { episodes: 5, ..QConfig::default() };
        let s = scenario([0.3, 0.1]);
        assert_eq!(q_train(&s, &cfg).unwrap(), q_train(&s, &cfg).unwrap());
    }

    #[test]
    fn state_cap_rejected_with_size() {
        let cfg = QConfig { max_states: 100, ..QConfig::default() };
        let err = q_train(&scenario([0.1, 0.1]), &cfg).unwrap_err().to_string();
        assert!(err.contains("5^2") && err.contains("100"), "{err}");
    }
}
