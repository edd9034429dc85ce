//! Learning which ranging method to use on each link.
//!
//! Each episode observes every link, picks a method per link from a tabular
//! action-value store with epsilon-greedy exploration, localizes, and scores
//! the whole episode against an error threshold. The single ±1 outcome is
//! credited to every decision of the episode (a one-step contextual bandit;
//! no bootstrapping).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_epoch_offsets, observe_links, ChannelObservation};
use crate::crlb::{crlb_bound, fisher_information};
use crate::locsolver::{build_relative_graph, initial_guess, localize, LocalizationResult, SolverConfig};
use crate::ranging::{measure_link, Measurement, ObservationBundle, RangingError, RangingMethod};
use crate::scenario::{Link, NodeId, Scenario, SimParams};
use crate::streams::{episode_stream, Purpose};

pub const REWARD: i8 = 1;
pub const PENALTY: i8 = -1;

pub const MAX_DELAY_BUCKET: u8 = 7;
pub const MAX_EXCESS_BUCKET: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    TrueError,
    CrlbBound,
}

/// What the agent sees of a link before choosing a method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Context {
    pub los: bool,
    pub delay_bucket: u8,
    pub excess_bucket: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: u32,
    pub error_threshold_m: f64,
    pub epsilon_initial: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub alpha: f64,
    pub stop_patience: u32,
    pub reward_source: RewardSource,
    pub seed: u64,
    pub observable_multipath: bool,
    pub delay_bucket_width_s: f64,
    pub excess_bucket_width_s: f64,
    pub solver: SolverConfig,
}

impl TrainConfig {
    pub fn from_sim(sim: &SimParams) -> Self {
        Self {
            episodes: sim.episodes,
            error_threshold_m: sim.error_threshold_m,
            epsilon_initial: sim.epsilon_initial,
            epsilon_decay: sim.epsilon_decay,
            epsilon_floor: sim.epsilon_floor,
            alpha: sim.alpha,
            stop_patience: sim.stop_patience,
            reward_source: sim.reward_source,
            seed: sim.seed,
            observable_multipath: sim.observable_multipath,
            delay_bucket_width_s: sim.delay_bucket_width_s,
            excess_bucket_width_s: sim.excess_bucket_width_s,
            solver: SolverConfig {
                anchored_solve: sim.anchored_solve,
                anchor_baselines: sim.anchor_baselines,
                ..SolverConfig::default()
            },
        }
    }

    /// Exploration rate for episode `k` (zero-based).
    pub fn epsilon_at(&self, k: u32) -> f64 {
        (self.epsilon_initial * self.epsilon_decay.powi(k as i32)).max(self.epsilon_floor)
    }
}

fn bucket(value: f64, width: f64, max: u8) -> u8 {
    let b = (value / width).floor();
    if b.is_nan() || b <= 0.0 {
        0
    } else if b >= max as f64 {
        max
    } else {
        b as u8
    }
}

pub fn make_context(obs: &ChannelObservation, config: &TrainConfig) -> Context {
    Context {
        los: obs.los,
        delay_bucket: bucket(obs.arrival_delay_s, config.delay_bucket_width_s, MAX_DELAY_BUCKET),
        excess_bucket: if config.observable_multipath {
            bucket(obs.multipath_excess_s, config.excess_bucket_width_s, MAX_EXCESS_BUCKET)
        } else {
            0
        },
    }
}

/// Strict: an error equal to the threshold is penalized.
pub fn compute_reward(error_m: f64, threshold_m: f64) -> i8 {
    if error_m < threshold_m {
        REWARD
    } else {
        PENALTY
    }
}

/// A rule for choosing a ranging method per link.
pub trait Strategy {
    fn select<R: Rng + ?Sized>(&self, context: &Context, rng: &mut R) -> RangingMethod;
    fn learn(&mut self, decisions: &[(Context, RangingMethod)], reward: i8);
    fn set_epsilon(&mut self, epsilon: f64);
    fn epsilon(&self) -> f64;
}

/// Tabular epsilon-greedy action values.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    q: BTreeMap<(Context, RangingMethod), f64>,
    pub epsilon: f64,
    pub alpha: f64,
    pub default_q: f64,
}

impl Policy {
    pub fn new(epsilon: f64, alpha: f64) -> Self {
        assert!((0.0..=1.0).contains(&epsilon), "epsilon must lie in [0, 1]");
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
        Self {
            q: BTreeMap::new(),
            epsilon,
            alpha,
            default_q: 0.0,
        }
    }

    pub fn q(&self, context: &Context, method: RangingMethod) -> f64 {
        self.q.get(&(*context, method)).copied().unwrap_or(self.default_q)
    }

    pub fn set_q(&mut self, context: Context, method: RangingMethod, value: f64) {
        self.q.insert((context, method), value);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(Context, RangingMethod), &f64)> {
        self.q.iter()
    }

    /// Highest-valued method; ties go to the earlier of ToA, TDoA, RSS.
    pub fn greedy(&self, context: &Context) -> RangingMethod {
        let mut best = RangingMethod::ToA;
        let mut best_q = self.q(context, best);
        for m in &RangingMethod::ALL[1..] {
            let v = self.q(context, *m);
            if v > best_q {
                best = *m;
                best_q = v;
            }
        }
        best
    }

    pub fn select_method<R: Rng + ?Sized>(&self, context: &Context, rng: &mut R) -> RangingMethod {
        let explore = rng.random::<f64>() < self.epsilon;
        let pick = rng.random_range(0..RangingMethod::ALL.len());
        if explore {
            RangingMethod::ALL[pick]
        } else {
            self.greedy(context)
        }
    }

    /// Moves every decided entry a fraction `alpha` toward the reward.
    pub fn update_policy(&mut self, decisions: &[(Context, RangingMethod)], reward: i8) {
        let target = f64::from(reward);
        for (c, m) in decisions {
            let q = self.q(c, *m);
            self.q.insert((*c, *m), q + self.alpha * (target - q));
        }
    }
}

impl Strategy for Policy {
    fn select<R: Rng + ?Sized>(&self, context: &Context, rng: &mut R) -> RangingMethod {
        self.select_method(context, rng)
    }

    fn learn(&mut self, decisions: &[(Context, RangingMethod)], reward: i8) {
        self.update_policy(decisions, reward);
    }

    fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Always the same method; never learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedMethod(pub RangingMethod);

impl Strategy for FixedMethod {
    fn select<R: Rng + ?Sized>(&self, _context: &Context, _rng: &mut R) -> RangingMethod {
        self.0
    }

    fn learn(&mut self, _decisions: &[(Context, RangingMethod)], _reward: i8) {}

    fn set_epsilon(&mut self, _epsilon: f64) {}

    fn epsilon(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub link: (NodeId, NodeId),
    pub context: Context,
    pub method: RangingMethod,
    /// TDoA was chosen but infeasible; ToA was measured instead.
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: u32,
    pub decisions: Vec<Decision>,
    pub rmse: f64,
    /// `None` when the Fisher information was singular.
    pub crlb_bound: Option<f64>,
    pub reward: i8,
    pub epsilon_used: f64,
    pub converged: bool,
    /// False when the solver failed and the initial guess was scored instead.
    pub localized: bool,
}

impl EpisodeLog {
    pub fn count(&self, method: RangingMethod) -> usize {
        self.decisions.iter().filter(|d| d.method == method).count()
    }

    pub fn fallbacks(&self) -> usize {
        self.decisions.iter().filter(|d| d.fell_back).count()
    }
}

/// Measures every link with its chosen method, falling back to ToA where
/// TDoA is infeasible. Returns the measurements and per-link fallback flags.
pub fn measure_links(
    links: &[Link],
    methods: &[RangingMethod],
    bundle: &ObservationBundle,
    scenario: &Scenario,
) -> (Vec<Measurement>, Vec<bool>) {
    let anchors = scenario.anchor_ids();
    links
        .iter()
        .zip(methods)
        .map(|(link, &method)| match measure_link(link, method, bundle, &anchors, &scenario.channel) {
            Ok(m) => (m, false),
            Err(RangingError::TdoaInfeasible { .. }) => {
                let m = measure_link(link, RangingMethod::ToA, bundle, &anchors, &scenario.channel)
                    .expect("ToA needs only the link's own observation");
                (m, true)
            }
            Err(e) => panic!("observation bundle out of sync with links: {e}"),
        })
        .unzip()
}

/// One pass of observe → select → measure → localize → evaluate → reward → update.
///
/// Randomness comes from per-episode streams keyed by `config.seed` and
/// `episode`, so the channel realization of an episode is the same for every
/// strategy.
pub fn run_episode<S: Strategy>(
    scenario: &Scenario,
    links: &[Link],
    strategy: &mut S,
    config: &TrainConfig,
    episode: u32,
) -> EpisodeLog {
    let mut channel_rng = episode_stream(config.seed, u64::from(episode), Purpose::Channel);
    let mut select_rng = episode_stream(config.seed, u64::from(episode), Purpose::Selection);
    let mut solver_rng = episode_stream(config.seed, u64::from(episode), Purpose::Solver);

    let offsets = draw_epoch_offsets(scenario, &mut channel_rng);
    let observations = observe_links(links, &scenario.channel, &offsets, &mut channel_rng);
    let contexts: Vec<Context> = observations.iter().map(|o| make_context(o, config)).collect();
    let methods: Vec<RangingMethod> = contexts.iter().map(|c| strategy.select(c, &mut select_rng)).collect();

    let bundle = ObservationBundle::new(links, observations, &scenario.anchor_ids());
    let (measurements, fell_back) = measure_links(links, &methods, &bundle, scenario);

    let (result, localized) = match localize(&measurements, scenario, &config.solver, &mut solver_rng) {
        Ok(r) => (r, true),
        Err(_) => (fallback_estimate(&measurements, scenario, config, episode), false),
    };
    let crlb = fisher_information(&measurements, &scenario.truth(), &scenario.anchor_ids())
        .ok()
        .map(|f| crlb_bound(&f))
        .and_then(|r| r.total_bound);

    let reward = if !localized {
        PENALTY
    } else {
        match config.reward_source {
            RewardSource::TrueError => compute_reward(result.rmse, config.error_threshold_m),
            RewardSource::CrlbBound => crlb.map_or(PENALTY, |b| compute_reward(b, config.error_threshold_m)),
        }
    };

    let credited: Vec<(Context, RangingMethod)> = contexts.iter().copied().zip(methods.iter().copied()).collect();
    let epsilon_used = strategy.epsilon();
    strategy.learn(&credited, reward);

    let decisions = links
        .iter()
        .zip(&contexts)
        .zip(&methods)
        .zip(&fell_back)
        .map(|(((l, c), m), f)| Decision {
            link: (l.a, l.b),
            context: *c,
            method: *m,
            fell_back: *f,
        })
        .collect();

    EpisodeLog {
        episode,
        decisions,
        rmse: result.rmse,
        crlb_bound: crlb,
        reward,
        epsilon_used,
        converged: localized && result.converged,
        localized,
    }
}

/// Scores the solver's starting point when localization fails.
fn fallback_estimate(
    measurements: &[Measurement],
    scenario: &Scenario,
    config: &TrainConfig,
    episode: u32,
) -> LocalizationResult {
    let mut rng = episode_stream(config.seed, u64::from(episode), Purpose::Solver);
    let positions = match build_relative_graph(measurements, scenario) {
        Ok(g) => initial_guess(&g, scenario, config.solver.init_jitter_m, &mut rng),
        Err(_) => {
            let all = crate::locsolver::RelativeGraph {
                node_ids: scenario.nodes().iter().map(|n| n.id).collect(),
                measurements: Vec::new(),
                anchor_ids: scenario.anchor_ids(),
                baselines: Vec::new(),
            };
            initial_guess(&all, scenario, config.solver.init_jitter_m, &mut rng)
        }
    };
    LocalizationResult::from_positions(positions, scenario, 0, false, f64::NAN)
}

/// Runs episodes with the epsilon schedule until `config.episodes` or until
/// `stop_patience` consecutive rewards.
pub fn train_with<S: Strategy>(scenario: &Scenario, strategy: &mut S, config: &TrainConfig) -> Vec<EpisodeLog> {
    let links = crate::scenario::build_links(scenario);
    let mut logs = Vec::with_capacity(config.episodes as usize);
    let mut streak = 0u32;
    for k in 0..config.episodes {
        strategy.set_epsilon(config.epsilon_at(k));
        let log = run_episode(scenario, &links, strategy, config, k);
        streak = if log.reward == REWARD { streak + 1 } else { 0 };
        logs.push(log);
        if streak >= config.stop_patience {
            break;
        }
    }
    logs
}

pub fn train(scenario: &Scenario, config: &TrainConfig) -> (Policy, Vec<EpisodeLog>) {
    let mut policy = Policy::new(config.epsilon_initial, config.alpha);
    let logs = train_with(scenario, &mut policy, config);
    (policy, logs)
}
