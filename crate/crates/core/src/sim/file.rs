//! Scenario files, per-run CSV and the controller comparison.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::control::{Controller, ControllerPolicy, DensityAdaptiveConfig, MaxRedRule};
use super::ga::{ga_optimize, GaConfig};
use super::qlearn::{q_train, QConfig};
use super::{run_scenario, DelayStats, Lane, Scenario};
use crate::data::DensityClass;
use crate::error::{Error, Result};
use crate::metrics::MeanStd;

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityFile {
    base_green: u32,
    max_green: u32,
    /// Class name to extension seconds.
    extension: BTreeMap<String, u32>,
}

impl DensityFile {
    fn resolve(&self) -> Result<DensityAdaptiveConfig> {
        let map =
            self.extension.iter().map(|(k, &v)| Ok((k.parse::<DensityClass>()?, v))).collect::<Result<Vec<_>>>()?;
        DensityAdaptiveConfig::new(self.base_green, self.max_green, &map)
    }

    fn from_config(cfg: &DensityAdaptiveConfig) -> Self {
        DensityFile {
            base_green: cfg.base_green,
            max_green: cfg.max_green,
            extension: DensityClass::ALL.iter().map(|c| (c.name().to_string(), cfg.extension[c.index()])).collect(),
        }
    }
}

/// Controller parameters used by `compare` and `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSettings {
    pub fixed_greens: Vec<u32>,
    pub lqf_min_green: u32,
    pub lqf_max_green: u32,
    pub density: DensityAdaptiveConfig,
    pub max_red: Option<u32>,
    pub ga: GaConfig,
    pub q: QConfig,
    /// First arrival seed of the Q-learning training episodes.
    pub q_train_seed: u64,
}

impl Default for ControlSettings {
    fn default() -> Self {
        ControlSettings {
            fixed_greens: vec![30, 30],
            lqf_min_green: 5,
            lqf_max_green: 40,
            density: DensityAdaptiveConfig::default(),
            max_red: Some(90),
            ga: GaConfig::default(),
            q: QConfig { max_red: Some(90), ..QConfig::default() },
            q_train_seed: 1_000_000,
        }
    }
}

impl ControlSettings {
    fn wrap(&self, controller: Controller) -> Controller {
        match self.max_red {
            Some(m) => controller.with_max_red(MaxRedRule::new(m)),
            None => controller,
        }
    }

    pub fn fixed_time(&self) -> Controller {
        self.wrap(Controller::fixed_time(self.fixed_greens.clone()))
    }

    pub fn lqf(&self) -> Controller {
        self.wrap(Controller::lqf(self.lqf_min_green, self.lqf_max_green))
    }

    pub fn density_adaptive(&self) -> Controller {
        self.wrap(Controller::density_adaptive(self.density.clone()))
    }

    pub fn ga(&self, scenario: &Scenario) -> Result<Controller> {
        Ok(self.wrap(ga_optimize(scenario, &self.ga)?.controller()))
    }

    pub fn q_learning(&self, scenario: &Scenario) -> Result<Controller> {
        let policy = q_train(&scenario.with_seed(self.q_train_seed), &self.q)?;
        Ok(self.wrap(Controller::new(ControllerPolicy::QLearning(policy))))
    }

    /// Builds the named controller, training it first if needed.
    pub fn build(&self, name: &str, scenario: &Scenario) -> Result<Controller> {
        match name.to_ascii_lowercase().as_str() {
            "fixed" | "fixedtime" | "fixed-time" => Ok(self.fixed_time()),
            "lqf" => Ok(self.lqf()),
            "density" | "densityadaptive" | "density-adaptive" => Ok(self.density_adaptive()),
            "ga" => self.ga(scenario),
            "q" | "qlearning" | "q-learning" => self.q_learning(scenario),
            other => Err(Error::invalid(format!("unknown controller '{other}' (fixed, lqf, density, ga, qlearning)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlFile {
    fixed_greens: Option<Vec<u32>>,
    lqf_min_green: Option<u32>,
    lqf_max_green: Option<u32>,
    density: Option<DensityFile>,
    max_red: Option<u32>,
    ga_population: Option<usize>,
    ga_generations: Option<usize>,
    ga_green_min: Option<u32>,
    ga_green_max: Option<u32>,
    ga_green_step: Option<u32>,
    q_episodes: Option<usize>,
}

impl ControlFile {
    fn resolve(&self) -> Result<ControlSettings> {
        let mut s = ControlSettings::default();
        if let Some(g) = &self.fixed_greens {
            s.fixed_greens = g.clone();
        }
        s.lqf_min_green = self.lqf_min_green.unwrap_or(s.lqf_min_green);
        s.lqf_max_green = self.lqf_max_green.unwrap_or(s.lqf_max_green);
        if let Some(d) = &self.density {
            s.density = d.resolve()?;
        }
        s.max_red = self.max_red.or(s.max_red);
        s.q.max_red = s.max_red;
        s.ga.population = self.ga_population.unwrap_or(s.ga.population);
        s.ga.generations = self.ga_generations.unwrap_or(s.ga.generations);
        s.ga.grid.min = self.ga_green_min.unwrap_or(s.ga.grid.min);
        s.ga.grid.max = self.ga_green_max.unwrap_or(s.ga.grid.max);
        s.ga.grid.step = self.ga_green_step.unwrap_or(s.ga.grid.step);
        s.q.episodes = self.q_episodes.unwrap_or(s.q.episodes);
        Ok(s)
    }

    fn from_settings(s: &ControlSettings) -> Self {
        ControlFile {
            fixed_greens: Some(s.fixed_greens.clone()),
            lqf_min_green: Some(s.lqf_min_green),
            lqf_max_green: Some(s.lqf_max_green),
            density: Some(DensityFile::from_config(&s.density)),
            max_red: s.max_red,
            ga_population: Some(s.ga.population),
            ga_generations: Some(s.ga.generations),
            ga_green_min: Some(s.ga.grid.min),
            ga_green_max: Some(s.ga.grid.max),
            ga_green_step: Some(s.ga.grid.step),
            q_episodes: Some(s.q.episodes),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenarioFile {
    format_version: u32,
    horizon: u32,
    seed: u64,
    lost_time: u32,
    lane_capacity: f64,
    phases: Vec<Vec<usize>>,
    lanes: Vec<Lane>,
    control: Option<ControlFile>,
}

/// A scenario plus the controller settings stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub control: ControlSettings,
}

pub fn read_scenario(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawScenarioFile = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if raw.format_version != SCENARIO_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("format_version {} unsupported (expected {SCENARIO_FORMAT_VERSION})", raw.format_version),
        ));
    }
    let scenario = Scenario {
        lanes: raw.lanes,
        phases: raw.phases,
        lost_time: raw.lost_time,
        horizon: raw.horizon,
        seed: raw.seed,
        lane_capacity: raw.lane_capacity,
    };
    scenario.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let control = match &raw.control {
        Some(c) => c.resolve().map_err(|e| Error::format(path, e.to_string()))?,
        None => ControlSettings::default(),
    };
    Ok(ScenarioFile { scenario, control })
}

pub fn write_scenario(path: &Path, file: &ScenarioFile) -> Result<()> {
    let s = &file.scenario;
    let raw = RawScenarioFile {
        format_version: SCENARIO_FORMAT_VERSION,
        horizon: s.horizon,
        seed: s.seed,
        lost_time: s.lost_time,
        lane_capacity: s.lane_capacity,
        phases: s.phases.clone(),
        lanes: s.lanes.clone(),
        control: Some(ControlFile::from_settings(&file.control)),
    };
    let text = toml::to_string(&raw).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Four approaches, north/south heavy, two phases.
pub fn reference_scenario() -> Scenario {
    let lane = |approach: &str, rate: f64| Lane { approach: approach.into(), arrival_rate: rate, saturation_rate: 0.5 };
    Scenario {
        lanes: vec![lane("N", 0.20), lane("S", 0.16), lane("E", 0.06), lane("W", 0.04)],
        phases: vec![vec![0, 1], vec![2, 3]],
        lost_time: 4,
        horizon: 3600,
        seed: 1,
        lane_capacity: 20.0,
    }
}

pub const DELAY_CSV_HEADER: &str = "controller,seed,lane,arrivals,departures,still_queued,mean_delay,max_delay,max_red";

/// One row per lane plus an `all` row per run.
pub fn write_delay_csv<W: Write>(out: W, runs: &[(String, u64, DelayStats)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DELAY_CSV_HEADER.split(','))?;
    for (controller, seed, stats) in runs {
        for (l, lane) in stats.per_lane.iter().enumerate() {
            w.write_record([
                controller.clone(),
                seed.to_string(),
                l.to_string(),
                lane.arrivals.to_string(),
                lane.departures.to_string(),
                lane.still_queued.to_string(),
                format!("{:.6}", lane.mean_delay),
                format!("{:.0}", lane.max_delay),
                lane.max_red.to_string(),
            ])?;
        }
        let max_red = stats.per_lane.iter().map(|l| l.max_red).max().unwrap_or(0);
        w.write_record([
            controller.clone(),
            seed.to_string(),
            "all".into(),
            stats.arrivals.to_string(),
            stats.throughput.to_string(),
            stats.still_queued.to_string(),
            format!("{:.6}", stats.mean_delay),
            format!("{:.0}", stats.max_delay),
            max_red.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub controller: String,
    pub mean_delay: MeanStd,
    pub max_delay: f64,
    pub throughput: f64,
    pub runs: Vec<(u64, DelayStats)>,
}

impl CompareRow {
    /// Relative reduction of mean delay against `baseline`, in percent.
    pub fn reduction_vs(&self, baseline: &CompareRow) -> f64 {
        100.0 * (baseline.mean_delay.mean - self.mean_delay.mean) / baseline.mean_delay.mean
    }
}

/// Evaluates every controller on the same arrival seeds. GA and Q-learning
/// are trained on their own seeds first, disjoint from `seeds` as long as
/// those stay below the training seeds.
pub fn compare_controllers(scenario: &Scenario, settings: &ControlSettings, seeds: &[u64]) -> Result<Vec<CompareRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("compare needs at least one seed"));
    }
    let controllers = [
        settings.fixed_time(),
        settings.lqf(),
        settings.density_adaptive(),
        settings.ga(scenario)?,
        settings.q_learning(scenario)?,
    ];
    controllers
        .iter()
        .map(|c| {
            let runs = seeds
                .iter()
                .map(|&seed| Ok((seed, run_scenario(&scenario.with_seed(seed), c)?)))
                .collect::<Result<Vec<_>>>()?;
            let delays: Vec<f64> = runs.iter().map(|(_, s)| s.mean_delay).collect();
            Ok(CompareRow {
                controller: c.name().to_string(),
                mean_delay: MeanStd::of(&delays),
                max_delay: runs.iter().map(|(_, s)| s.max_delay).fold(0.0, f64::max),
                throughput: runs.iter().map(|(_, s)| s.throughput as f64).sum::<f64>() / runs.len() as f64,
                runs,
            })
        })
        .collect()
}

pub fn render_compare(rows: &[CompareRow]) -> String {
    let mut out = format!(
        "{:<16} {:>16} {:>10} {:>11} {:>10}\n",
        "controller", "mean delay (s)", "max (s)", "throughput", "reduction"
    );
    let baseline = rows.iter().find(|r| r.controller == "FixedTime");
    for r in rows {
        let vs = baseline.map_or("-".to_string(), |b| format!("{:.1}%", r.reduction_vs(b) + 0.0));
        out.push_str(&format!(
            "{:<16} {:>9.2} ± {:<5.2} {:>10.0} {:>11.1} {:>10}\n",
            r.controller, r.mean_delay.mean, r.mean_delay.std, r.max_delay, r.throughput, vs
        ));
    }
    out
}
