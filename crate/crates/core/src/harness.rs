//! Experiment runner: trains or replays a fixed policy on a scenario and
//! writes `episodes.csv`, `summary.json` and `scenario_resolved.json`.
//!
//! All outputs are byte-deterministic given the scenario, seed and flags.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locsolver::fit_rigid;
use crate::ranging::RangingMethod;
use crate::rl::{train_with, EpisodeLog, FixedMethod, Policy, Strategy, TrainConfig, REWARD};
use crate::scenario::{build_links, load_scenario, Scenario, ScenarioError};

pub const CSV_HEADER: &str = "episode,rmse_m,crlb_bound_m,reward,epsilon,n_toa,n_tdoa,n_rss,n_fallback,converged";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed summary {path}: {source}")]
    Summary {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown policy '{0}' (expected learned, fixed-toa, fixed-tdoa, fixed-rss or random)")]
    UnknownPolicy(String),
    #[error("degenerate scenario: {0}")]
    Degenerate(String),
    #[error("compare needs at least two summaries, got {0}")]
    TooFewSummaries(usize),
    #[error("summaries are not comparable: {0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySpec {
    Learned,
    Fixed(RangingMethod),
    Random,
}

impl FromStr for PolicySpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learned" => Ok(PolicySpec::Learned),
            "fixed-toa" => Ok(PolicySpec::Fixed(RangingMethod::ToA)),
            "fixed-tdoa" => Ok(PolicySpec::Fixed(RangingMethod::TDoA)),
            "fixed-rss" => Ok(PolicySpec::Fixed(RangingMethod::RSS)),
            "random" => Ok(PolicySpec::Random),
            other => Err(HarnessError::UnknownPolicy(other.to_string())),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Learned => f.write_str("learned"),
            PolicySpec::Fixed(m) => write!(f, "fixed-{m}"),
            PolicySpec::Random => f.write_str("random"),
        }
    }
}

/// Command-line overrides of the scenario's `sim` block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub episodes: Option<u32>,
    pub seed: Option<u64>,
    pub threshold_m: Option<f64>,
}

impl Overrides {
    fn apply(&self, scenario: &mut Scenario) {
        if let Some(e) = self.episodes {
            scenario.sim.episodes = e;
        }
        if let Some(s) = self.seed {
            scenario.sim.seed = s;
        }
        if let Some(t) = self.threshold_m {
            scenario.sim.error_threshold_m = t;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy_name: String,
    pub mean_rmse_last_100: f64,
    pub reward_rate_last_100: f64,
    /// Mean over well-posed episodes of the trailing window.
    pub mean_crlb_bound: Option<f64>,
    pub selection_frequencies: BTreeMap<String, f64>,
    pub episodes_run: u32,
    pub seed: u64,
    pub window: u32,
    pub fallbacks: u64,
    pub failed_localizations: u32,
    pub scenario_digest: String,
}

/// Aggregates logs into a summary over the trailing `window` episodes.
pub fn summarize(policy_name: &str, logs: &[EpisodeLog], scenario: &Scenario, window: u32) -> RunSummary {
    let tail = &logs[logs.len().saturating_sub(window as usize)..];
    let n = tail.len().max(1) as f64;
    let mean_rmse = tail.iter().map(|l| l.rmse).sum::<f64>() / n;
    let reward_rate = tail.iter().filter(|l| l.reward == REWARD).count() as f64 / n;
    let bounds: Vec<f64> = tail.iter().filter_map(|l| l.crlb_bound).collect();
    let mean_crlb_bound = (!bounds.is_empty()).then(|| bounds.iter().sum::<f64>() / bounds.len() as f64);

    let mut counts = [0u64; 3];
    for l in logs {
        for m in RangingMethod::ALL {
            counts[m.index()] += l.count(m) as u64;
        }
    }
    let total: u64 = counts.iter().sum();
    let selection_frequencies = RangingMethod::ALL
        .iter()
        .map(|m| {
            let f = if total == 0 {
                0.0
            } else {
                counts[m.index()] as f64 / total as f64
            };
            (m.name().to_string(), f)
        })
        .collect();

    RunSummary {
        policy_name: policy_name.to_string(),
        mean_rmse_last_100: mean_rmse,
        reward_rate_last_100: reward_rate,
        mean_crlb_bound,
        selection_frequencies,
        episodes_run: logs.len() as u32,
        seed: scenario.sim.seed,
        window,
        fallbacks: logs.iter().map(|l| l.fallbacks() as u64).sum(),
        failed_localizations: logs.iter().filter(|l| !l.localized).count() as u32,
        scenario_digest: scenario.world_digest(),
    }
}

fn sig9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        "NaN".to_string()
    }
}

pub fn episodes_csv(logs: &[EpisodeLog]) -> String {
    let mut out = String::with_capacity(64 * (logs.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for l in logs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            l.episode,
            sig9(l.rmse),
            sig9(l.crlb_bound.unwrap_or(f64::NAN)),
            l.reward,
            sig9(l.epsilon_used),
            l.count(RangingMethod::ToA),
            l.count(RangingMethod::TDoA),
            l.count(RangingMethod::RSS),
            l.fallbacks(),
            l.converged,
        );
    }
    out
}

fn check_runnable(scenario: &Scenario) -> Result<(), HarnessError> {
    let known: Vec<_> = scenario.anchor_positions().into_values().collect();
    if fit_rigid(&known, &known).is_err() {
        return Err(HarnessError::Degenerate("anchors are collinear".into()));
    }
    if build_links(scenario).is_empty() {
        return Err(HarnessError::Degenerate("no node pair is within communication range".into()));
    }
    Ok(())
}

/// Runs one policy on an in-memory scenario and returns the episode logs.
pub fn run_policy(scenario: &Scenario, policy: PolicySpec) -> (Vec<EpisodeLog>, Option<Policy>) {
    let mut config = TrainConfig::from_sim(&scenario.sim);
    match policy {
        PolicySpec::Learned => {
            let mut p = Policy::new(config.epsilon_initial, config.alpha);
            let logs = train_with(scenario, &mut p, &config);
            (logs, Some(p))
        }
        PolicySpec::Random => {
            config.epsilon_initial = 1.0;
            config.epsilon_decay = 1.0;
            config.epsilon_floor = 1.0;
            let mut p = Policy::new(1.0, config.alpha);
            let logs = train_with(scenario, &mut p, &config);
            (logs, Some(p))
        }
        PolicySpec::Fixed(m) => (run_fixed(scenario, m, &config), None),
    }
}

fn run_fixed(scenario: &Scenario, method: RangingMethod, config: &TrainConfig) -> Vec<EpisodeLog> {
    let mut s = FixedMethod(method);
    s.set_epsilon(0.0);
    train_with(scenario, &mut s, config)
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Runs `policy` on `scenario` and writes the artifacts into `out_dir`.
pub fn run_experiment_on(
    mut scenario: Scenario,
    policy: PolicySpec,
    overrides: &Overrides,
    out_dir: &Path,
) -> Result<RunSummary, HarnessError> {
    overrides.apply(&mut scenario);
    check_runnable(&scenario)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let (logs, _) = run_policy(&scenario, policy);
    let summary = summarize(&policy.to_string(), &logs, &scenario, scenario.sim.summary_window);

    write(&out_dir.join("episodes.csv"), &episodes_csv(&logs))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&out_dir.join("summary.json"), &(json + "\n"))?;
    write(&out_dir.join("scenario_resolved.json"), &(scenario.to_json_pretty() + "\n"))?;
    Ok(summary)
}

pub fn run_experiment(
    scenario_path: &Path,
    policy: PolicySpec,
    overrides: &Overrides,
    out_dir: &Path,
) -> Result<RunSummary, HarnessError> {
    let scenario = load_scenario(scenario_path)?;
    run_experiment_on(scenario, policy, overrides, out_dir)
}

/// Runs `replicates` seeds (`seed`, `seed + 1`, ...) concurrently, each in
/// its own `rep_<i>` subdirectory of `out_dir`.
pub fn run_replicates(
    scenario_path: &Path,
    policy: PolicySpec,
    overrides: &Overrides,
    out_dir: &Path,
    replicates: u32,
) -> Result<Vec<RunSummary>, HarnessError> {
    let scenario = load_scenario(scenario_path)?;
    let base_seed = overrides.seed.unwrap_or(scenario.sim.seed);
    let jobs: Vec<(Overrides, PathBuf)> = (0..replicates)
        .map(|i| {
            let o = Overrides {
                seed: Some(base_seed.wrapping_add(u64::from(i))),
                ..overrides.clone()
            };
            (o, out_dir.join(format!("rep_{i}")))
        })
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(o, dir)| {
                let s = scenario.clone();
                scope.spawn(move || run_experiment_on(s, policy, o, dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replicate thread panicked"))
            .collect()
    })
}

pub fn read_summary(dir: &Path) -> Result<RunSummary, HarnessError> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Summary {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub policy_name: String,
    pub mean_rmse: f64,
    pub reward_rate: f64,
    pub mean_crlb_bound: Option<f64>,
    /// `mean_rmse − mean_crlb_bound`.
    pub crlb_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Sorted by policy name.
    pub rows: Vec<ComparisonRow>,
    pub winner: String,
    pub tie: bool,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,mean_rmse_m,reward_rate,mean_crlb_bound_m,crlb_gap_m,winner\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.policy_name,
                sig9(r.mean_rmse),
                sig9(r.reward_rate),
                sig9(r.mean_crlb_bound.unwrap_or(f64::NAN)),
                sig9(r.crlb_gap.unwrap_or(f64::NAN)),
                r.policy_name == self.winner
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<12} {:>14} {:>12} {:>14} {:>12}\n",
            "policy", "mean_rmse_m", "reward_rate", "crlb_bound_m", "crlb_gap_m"
        );
        let num = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            let mark = if r.policy_name == self.winner { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:<12} {:>14.4} {:>12.3} {:>14} {:>12}{mark}",
                r.policy_name,
                r.mean_rmse,
                r.reward_rate,
                num(r.mean_crlb_bound),
                num(r.crlb_gap)
            );
        }
        let _ = writeln!(
            out,
            "winner: {}{}",
            self.winner,
            if self.tie { " (tie, first by name)" } else { "" }
        );
        out
    }
}

pub fn compare(summaries: &[RunSummary]) -> Result<Comparison, HarnessError> {
    if summaries.len() < 2 {
        return Err(HarnessError::TooFewSummaries(summaries.len()));
    }
    let first = &summaries[0];
    for s in &summaries[1..] {
        if s.scenario_digest != first.scenario_digest {
            return Err(HarnessError::Mismatch(format!(
                "{} and {} ran on different scenarios",
                first.policy_name, s.policy_name
            )));
        }
        if s.seed != first.seed {
            return Err(HarnessError::Mismatch(format!(
                "{} used seed {} but {} used seed {}",
                first.policy_name, first.seed, s.policy_name, s.seed
            )));
        }
    }
    let mut rows: Vec<ComparisonRow> = summaries
        .iter()
        .map(|s| ComparisonRow {
            policy_name: s.policy_name.clone(),
            mean_rmse: s.mean_rmse_last_100,
            reward_rate: s.reward_rate_last_100,
            mean_crlb_bound: s.mean_crlb_bound,
            crlb_gap: s.mean_crlb_bound.map(|b| s.mean_rmse_last_100 - b),
        })
        .collect();
    rows.sort_by(|a, b| a.policy_name.cmp(&b.policy_name));
    let best = rows
        .iter()
        .map(|r| r.mean_rmse)
        .fold(f64::INFINITY, f64::min);
    let leaders: Vec<&ComparisonRow> = rows.iter().filter(|r| r.mean_rmse == best).collect();
    let winner = leaders
        .first()
        .map(|r| r.policy_name.clone())
        .unwrap_or_else(|| rows[0].policy_name.clone());
    let tie = leaders.len() > 1;
    Ok(Comparison { rows, winner, tie })
}
