//! Cooperative localization in two stages: solve all node positions in a
//! gauge-fixed relative frame, then map the result onto the anchors' known
//! positions with a rigid transform.

mod align;
mod lm;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

pub use align::{align_to_absolute, fit_rigid, RigidTransform};
pub use lm::{predict, SolveDiagnostics, Termination};

use crate::geometry::{centroid, Vec2};
use crate::ranging::{Measurement, MeasurementKind, RangingMethod};
use crate::scenario::{NodeId, Scenario, MIN_ANCHORS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocError {
    #[error("no measurements to localize from")]
    NoMeasurements,
    #[error("{0} has no incident measurements and cannot be localized")]
    Unlocalizable(NodeId),
    #[error("{0} is not part of the scenario or initial guess")]
    MissingNode(NodeId),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("anchors are collinear or too few; cannot align to the absolute frame")]
    AlignmentDegenerate,
    #[error("at least {MIN_ANCHORS} anchors are required, found {0}")]
    TooFewAnchors(usize),
    #[error("{0} diverged to {1:.3e} m from the anchors")]
    Diverged(NodeId, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Cosine between residual and Jacobian columns at which to stop.
    pub gradient_tolerance: f64,
    /// Largest coordinate step, in meters, at which to stop.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// Half-width of the uniform jitter around the anchor centroid, meters.
    pub init_jitter_m: f64,
    /// Pin every anchor and skip alignment.
    pub anchored_solve: bool,
    /// Add known anchor-to-anchor distances to the relative graph.
    pub anchor_baselines: bool,
    /// Standard deviation attached to anchor baselines, meters.
    pub anchor_baseline_sigma_m: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
            init_jitter_m: 1.0,
            anchored_solve: false,
            anchor_baselines: true,
            anchor_baseline_sigma_m: 1e-3,
        }
    }
}

/// Nodes and the measurements linking them.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeGraph {
    pub node_ids: BTreeSet<NodeId>,
    pub measurements: Vec<Measurement>,
    pub anchor_ids: BTreeSet<NodeId>,
    /// Anchor-to-anchor distances from known positions.
    pub baselines: Vec<Measurement>,
}

impl RelativeGraph {
    /// Adds one baseline per anchor pair, taken from the known positions.
    pub fn add_anchor_baselines(&mut self, scenario: &Scenario, sigma_m: f64) {
        let known: Vec<_> = scenario.anchor_positions().into_iter().collect();
        self.baselines.clear();
        for (i, &(a, pa)) in known.iter().enumerate() {
            for &(b, pb) in &known[i + 1..] {
                self.baselines
                    .push(Measurement::range(a, b, pa.distance(pb), sigma_m * sigma_m, RangingMethod::ToA));
            }
        }
    }
}

pub fn build_relative_graph(measurements: &[Measurement], scenario: &Scenario) -> Result<RelativeGraph, LocError> {
    if measurements.is_empty() {
        return Err(LocError::NoMeasurements);
    }
    let mut referenced = BTreeSet::new();
    for m in measurements {
        for id in m.kind.nodes() {
            if scenario.node(id).is_none() {
                return Err(LocError::MissingNode(id));
            }
            referenced.insert(id);
        }
    }
    if let Some(id) = scenario.unknown_ids().into_iter().find(|id| !referenced.contains(id)) {
        return Err(LocError::Unlocalizable(id));
    }
    Ok(RelativeGraph {
        node_ids: scenario.nodes().iter().map(|n| n.id).collect(),
        measurements: measurements.to_vec(),
        anchor_ids: scenario.anchor_ids(),
        baselines: Vec::new(),
    })
}

/// Anchors at their known positions, unknowns at the anchor centroid plus
/// uniform jitter in `[-jitter_m, jitter_m)` per axis.
pub fn initial_guess<R: Rng + ?Sized>(
    graph: &RelativeGraph,
    scenario: &Scenario,
    jitter_m: f64,
    rng: &mut R,
) -> BTreeMap<NodeId, Vec2> {
    let known = scenario.anchor_positions();
    let center = centroid(known.values().copied()).unwrap_or(Vec2::ZERO);
    graph
        .node_ids
        .iter()
        .map(|id| match known.get(id) {
            Some(&p) => (*id, p),
            None => {
                let dx: f64 = rng.random_range(-1.0..1.0);
                let dy: f64 = rng.random_range(-1.0..1.0);
                (*id, center + Vec2::new(dx, dy) * jitter_m)
            }
        })
        .collect()
}

/// Weighted least-squares positions in the frame fixed by the two lowest-id anchors.
pub fn solve_relative(
    graph: &RelativeGraph,
    init: &BTreeMap<NodeId, Vec2>,
    config: &SolverConfig,
) -> Result<(BTreeMap<NodeId, Vec2>, SolveDiagnostics), LocError> {
    if graph.anchor_ids.len() < 2 {
        return Err(LocError::TooFewAnchors(graph.anchor_ids.len()));
    }
    lm::solve(graph, init, config, lm::Gauge::Relative)
}

/// Single-stage variant: every anchor pinned at its initial position.
pub fn solve_anchored(
    graph: &RelativeGraph,
    init: &BTreeMap<NodeId, Vec2>,
    config: &SolverConfig,
) -> Result<(BTreeMap<NodeId, Vec2>, SolveDiagnostics), LocError> {
    lm::solve(graph, init, config, lm::Gauge::Anchored)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationResult {
    pub positions: BTreeMap<NodeId, Vec2>,
    /// Unknown nodes only.
    pub per_node_error: BTreeMap<NodeId, f64>,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
}

impl LocalizationResult {
    /// Scores `positions` against the scenario's ground truth.
    pub fn from_positions(
        positions: BTreeMap<NodeId, Vec2>,
        scenario: &Scenario,
        iterations: usize,
        converged: bool,
        residual_norm: f64,
    ) -> Self {
        let per_node_error: BTreeMap<NodeId, f64> = scenario
            .unknown_ids()
            .into_iter()
            .map(|id| {
                let truth = scenario.node(id).expect("unknown id from scenario").true_position;
                let err = positions.get(&id).map_or(f64::INFINITY, |p| p.distance(truth));
                (id, err)
            })
            .collect();
        let rmse = if per_node_error.is_empty() {
            0.0
        } else {
            (per_node_error.values().map(|e| e * e).sum::<f64>() / per_node_error.len() as f64).sqrt()
        };
        Self {
            positions,
            per_node_error,
            rmse,
            iterations,
            converged,
            residual_norm,
        }
    }
}

pub fn localize<R: Rng + ?Sized>(
    measurements: &[Measurement],
    scenario: &Scenario,
    config: &SolverConfig,
    rng: &mut R,
) -> Result<LocalizationResult, LocError> {
    let anchors = scenario.anchor_ids().len();
    if anchors < MIN_ANCHORS {
        return Err(LocError::TooFewAnchors(anchors));
    }
    let mut graph = build_relative_graph(measurements, scenario)?;
    if config.anchor_baselines && !config.anchored_solve {
        graph.add_anchor_baselines(scenario, config.anchor_baseline_sigma_m);
    }
    let init = initial_guess(&graph, scenario, config.init_jitter_m, rng);
    let (positions, diag) = if config.anchored_solve {
        solve_anchored(&graph, &init, config)?
    } else {
        // Solve around the anchor centroid; alignment restores the absolute frame.
        let center = centroid(scenario.anchor_positions().into_values()).unwrap_or(Vec2::ZERO);
        let local = init.iter().map(|(id, p)| (*id, *p - center)).collect();
        let (relative, diag) = solve_relative(&graph, &local, config)?;
        (align_to_absolute(&relative, scenario)?, diag)
    };
    check_bounded(&positions, scenario)?;
    Ok(LocalizationResult::from_positions(
        positions,
        scenario,
        diag.iterations,
        diag.converged,
        diag.residual_norm,
    ))
}

/// A connected network places every node within `(N - 1)` hops of
/// communication range from some anchor. Solutions beyond that ran off along
/// an unbounded valley of inconsistent range differences.
fn check_bounded(positions: &BTreeMap<NodeId, Vec2>, scenario: &Scenario) -> Result<(), LocError> {
    let anchors = scenario.anchor_positions();
    let reach = scenario.comm_range_m() * scenario.nodes().len().saturating_sub(1) as f64;
    for (id, p) in positions {
        let nearest = anchors.values().map(|a| a.distance(*p)).fold(f64::INFINITY, f64::min);
        if !(nearest <= reach) {
            return Err(LocError::Diverged(*id, nearest));
        }
    }
    Ok(())
}

/// Exact range measurements for every listed pair, with a nominal variance.
pub fn exact_ranges(scenario: &Scenario, pairs: &[(u32, u32)], variance: f64) -> Vec<Measurement> {
    let truth = scenario.truth();
    pairs
        .iter()
        .map(|&(a, b)| {
            let (a, b) = (NodeId(a), NodeId(b));
            Measurement::range(a, b, truth[&a].distance(truth[&b]), variance, RangingMethod::ToA)
        })
        .collect()
}

/// Exact range difference at `node` between `reference` and `other`.
pub fn exact_range_diff(scenario: &Scenario, node: u32, reference: u32, other: u32, variance: f64) -> Measurement {
    let truth = scenario.truth();
    let kind = MeasurementKind::RangeDiff {
        node: NodeId(node),
        ref_anchor: NodeId(reference),
        other_anchor: NodeId(other),
    };
    let mut m = Measurement::range(NodeId(node), NodeId(reference), 0.0, variance, RangingMethod::TDoA);
    m.kind = kind;
    m.value = predict(&m, |id| truth[&id]);
    m
}
