//! Genetic search over fixed green timings.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::control::Controller;
use super::{run_scenario, Scenario};
use crate::error::{Error, Result};

/// Allowed green durations, `min..=max` in steps of `step`, shared by every
/// phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreenGrid {
    pub min: u32,
    pub max: u32,
    pub step: u32,
}

impl Default for GreenGrid {
    fn default() -> Self {
        GreenGrid { min: 5, max: 70, step: 5 }
    }
}

impl GreenGrid {
    pub fn values(&self) -> Vec<u32> {
        (self.min..=self.max).step_by(self.step as usize).collect()
    }

    fn check(&self) -> Result<()> {
        if self.min == 0 || self.step == 0 || self.min > self.max {
            return Err(Error::invalid(format!("green grid {self:?} is empty or contains 0")));
        }
        Ok(())
    }

    /// Number of timing plans for `phases` phases.
    pub fn size(&self, phases: usize) -> Option<usize> {
        self.values().len().checked_pow(u32::try_from(phases).ok()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    /// Includes the initial population.
    pub generations: usize,
    pub grid: GreenGrid,
    pub tournament: usize,
    pub mutation: f64,
    /// Arrival seeds each plan is scored on.
    pub eval_seeds: Vec<u64>,
    /// Per-lane fitness weights; empty means all 1.
    pub weights: Vec<f64>,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 20,
            generations: 25,
            grid: GreenGrid::default(),
            tournament: 3,
            mutation: 0.1,
            eval_seeds: vec![101, 102, 103],
            weights: Vec::new(),
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub greens: Vec<u32>,
    pub fitness: f64,
    /// Best fitness after each generation.
    pub history: Vec<f64>,
    /// Distinct plans simulated.
    pub evaluations: usize,
}

impl GaResult {
    pub fn controller(&self) -> Controller {
        Controller::new(super::ControllerPolicy::GaTimings { greens: self.greens.clone() })
    }
}

/// `Σ_l w_l · mean_delay_l` under fixed timing `greens`, averaged over seeds.
pub fn timing_fitness(scenario: &Scenario, greens: &[u32], seeds: &[u64], weights: &[f64]) -> Result<f64> {
    if !weights.is_empty() && weights.len() != scenario.lanes.len() {
        return Err(Error::invalid(format!("{} fitness weights for {} lanes", weights.len(), scenario.lanes.len())));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("fitness needs at least one seed"));
    }
    let controller = Controller::fixed_time(greens.to_vec());
    let mut total = 0.0;
    for &seed in seeds {
        let stats = run_scenario(&scenario.with_seed(seed), &controller)?;
        total += stats
            .per_lane
            .iter()
            .enumerate()
            .map(|(l, lane)| weights.get(l).copied().unwrap_or(1.0) * lane.mean_delay)
            .sum::<f64>();
    }
    Ok(total / seeds.len() as f64)
}

struct Scorer<'a> {
    scenario: &'a Scenario,
    cfg: &'a GaConfig,
    cache: HashMap<Vec<u32>, f64>,
}

impl Scorer<'_> {
    fn score(&mut self, greens: &[u32]) -> Result<f64> {
        if let Some(&f) = self.cache.get(greens) {
            return Ok(f);
        }
        let f = timing_fitness(self.scenario, greens, &self.cfg.eval_seeds, &self.cfg.weights)?;
        self.cache.insert(greens.to_vec(), f);
        Ok(f)
    }
}

/// Lower fitness wins; ties go to the lexicographically smaller plan.
fn better(a: (&[u32], f64), b: (&[u32], f64)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && a.0 < b.0)
}

/// Half the time a one-step move on the grid, otherwise a fresh value.
fn mutate(gene: u32, values: &[u32], rng: &mut ChaCha8Rng) -> u32 {
    if rng.random_bool(0.5) {
        let i = values.iter().position(|&v| v == gene).unwrap_or(0);
        let j = if rng.random_bool(0.5) { i.saturating_sub(1) } else { (i + 1).min(values.len() - 1) };
        values[j]
    } else {
        *values.choose(rng).expect("grid is non-empty")
    }
}

pub fn ga_optimize(scenario: &Scenario, cfg: &GaConfig) -> Result<GaResult> {
    scenario.validate()?;
    cfg.grid.check()?;
    if cfg.population < 2 {
        return Err(Error::invalid(format!("population {} must be at least 2", cfg.population)));
    }
    if cfg.generations == 0 || cfg.tournament == 0 {
        return Err(Error::invalid("generations and tournament size must be positive"));
    }
    let values = cfg.grid.values();
    let phases = scenario.phases.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scorer = Scorer { scenario, cfg, cache: HashMap::new() };

    let mut pop: Vec<Vec<u32>> = (0..cfg.population)
        .map(|_| (0..phases).map(|_| *values.choose(&mut rng).expect("grid is non-empty")).collect())
        .collect();
    let mut fit = pop.iter().map(|g| scorer.score(g)).collect::<Result<Vec<_>>>()?;
    let best_of = |pop: &[Vec<u32>], fit: &[f64]| {
        (0..pop.len()).fold(0, |b, i| if better((&pop[i], fit[i]), (&pop[b], fit[b])) { i } else { b })
    };
    let mut history = vec![fit[best_of(&pop, &fit)]];

    for _ in 1..cfg.generations {
        let elite = best_of(&pop, &fit);
        let mut next = vec![pop[elite].clone()];
        while next.len() < cfg.population {
            let pick = |rng: &mut ChaCha8Rng| {
                let mut winner = rng.random_range(0..pop.len());
                for _ in 1..cfg.tournament {
                    let c = rng.random_range(0..pop.len());
                    if better((&pop[c], fit[c]), (&pop[winner], fit[winner])) {
                        winner = c;
                    }
                }
                winner
            };
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            let child = (0..phases)
                .map(|g| {
                    let gene = if rng.random_bool(0.5) { pop[a][g] } else { pop[b][g] };
                    if rng.random::<f64>() < cfg.mutation {
                        mutate(gene, &values, &mut rng)
                    } else {
                        gene
                    }
                })
                .collect();
            next.push(child);
        }
        pop = next;
        fit = pop.iter().map(|g| scorer.score(g)).collect::<Result<Vec<_>>>()?;
        history.push(fit[best_of(&pop, &fit)]);
    }

    let best = best_of(&pop, &fit);
    Ok(GaResult { greens: pop[best].clone(), fitness: fit[best], history, evaluations: scorer.cache.len() })
}

/// Scores every plan on the grid; returns the best and the worst.
pub fn exhaustive_search(scenario: &Scenario, cfg: &GaConfig, max_points: usize) -> Result<(GaResult, GaResult)> {
    scenario.validate()?;
    cfg.grid.check()?;
    let phases = scenario.phases.len();
    let size = cfg
        .grid
        .size(phases)
        .filter(|&n| n <= max_points)
        .ok_or_else(|| Error::invalid(format!("timing grid for {phases} phases exceeds {max_points} points")))?;
    let values = cfg.grid.values();
    let mut scorer = Scorer { scenario, cfg, cache: HashMap::new() };
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut worst: Option<(Vec<u32>, f64)> = None;
    for mut code in 0..size {
        let greens: Vec<u32> = (0..phases)
            .map(|_| {
                let v = values[code % values.len()];
                code /= values.len();
                v
            })
            .rev()
            .collect();
        let f = scorer.score(&greens)?;
        if best.as_ref().is_none_or(|b| better((&greens, f), (&b.0, b.1))) {
            best = Some((greens.clone(), f));
        }
        if worst.as_ref().is_none_or(|w| f > w.1) {
            worst = Some((greens, f));
        }
    }
    let wrap =
        |(greens, fitness): (Vec<u32>, f64)| GaResult { greens, fitness, history: Vec::new(), evaluations: size };
    Ok((wrap(best.expect("grid is non-empty")), wrap(worst.expect("grid is non-empty"))))
}
