//! World description: vehicles, anchors, obstacles, and the D2D link graph.
//!
//! A scenario is loaded from a JSON document, validated once, and treated as
//! immutable afterwards. Links are derived from node geometry: every unordered
//! pair within communication range forms a link, classified line-of-sight when
//! no obstacle interior is crossed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{fspl_reference, ChannelParams};
use crate::geometry::Vec2;
use crate::rl::RewardSource;

/// Lower bound on the carrier frequency (mmWave band).
pub const MIN_CARRIER_FREQUENCY_HZ: f64 = 24.0e9;

/// Minimum number of anchors for an unambiguous planar alignment.
pub const MIN_ANCHORS: usize = 3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Validation(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Role {
    /// Position known exactly; equal to the true position.
    Anchor { known_position: Vec2 },
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub true_position: Vec2,
    pub role: Role,
}

impl Node {
    pub fn anchor(id: u32, x: f64, y: f64) -> Self {
        let p = Vec2::new(x, y);
        Self {
            id: NodeId(id),
            true_position: p,
            role: Role::Anchor { known_position: p },
        }
    }

    pub fn unknown(id: u32, x: f64, y: f64) -> Self {
        Self {
            id: NodeId(id),
            true_position: Vec2::new(x, y),
            role: Role::Unknown,
        }
    }

    pub fn is_anchor(&self) -> bool {
        matches!(self.role, Role::Anchor { .. })
    }
}

/// Axis-aligned rectangular obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub min_corner: Vec2,
    pub max_corner: Vec2,
}

impl Obstacle {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            min_corner: Vec2::new(xmin, ymin),
            max_corner: Vec2::new(xmax, ymax),
        }
    }

    fn is_valid(&self) -> bool {
        self.min_corner.is_finite()
            && self.max_corner.is_finite()
            && self.min_corner.x < self.max_corner.x
            && self.min_corner.y < self.max_corner.y
    }
}

/// Simulation and learning parameters (the `sim` block of the scenario file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub episodes: u32,
    pub error_threshold_m: f64,
    pub epsilon_initial: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub alpha: f64,
    pub stop_patience: u32,
    pub reward_source: RewardSource,
    pub seed: u64,
    /// Whether the agent's context includes the multipath excess bucket.
    pub observable_multipath: bool,
    /// Solve with anchors pinned in a single stage instead of relative solve + alignment.
    pub anchored_solve: bool,
    /// Add known anchor-to-anchor distances to the relative graph.
    pub anchor_baselines: bool,
    pub delay_bucket_width_s: f64,
    pub excess_bucket_width_s: f64,
    /// Trailing window for steady-state summary metrics.
    pub summary_window: u32,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            episodes: 1000,
            error_threshold_m: 0.10,
            epsilon_initial: 1.0,
            epsilon_decay: 0.995,
            epsilon_floor: 0.05,
            alpha: 0.1,
            stop_patience: 100,
            reward_source: RewardSource::TrueError,
            seed: 0,
            observable_multipath: true,
            anchored_solve: false,
            anchor_baselines: true,
            delay_bucket_width_s: 50e-9,
            excess_bucket_width_s: 5e-9,
            summary_window: 100,
        }
    }
}

impl SimParams {
    fn validate(&self) -> Result<(), ScenarioError> {
        let s = self;
        if s.episodes == 0 {
            return invalid("sim.episodes must be at least 1");
        }
        if !(s.error_threshold_m > 0.0 && s.error_threshold_m.is_finite()) {
            return invalid("sim.error_threshold_m must be > 0");
        }
        for (name, v) in [
            ("epsilon_initial", s.epsilon_initial),
            ("epsilon_floor", s.epsilon_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("sim.{name} must lie in [0, 1]"));
            }
        }
        if !(s.epsilon_decay > 0.0 && s.epsilon_decay <= 1.0) {
            return invalid("sim.epsilon_decay must lie in (0, 1]");
        }
        if !(s.alpha > 0.0 && s.alpha <= 1.0) {
            return invalid("sim.alpha must lie in (0, 1]");
        }
        if s.stop_patience == 0 {
            return invalid("sim.stop_patience must be at least 1");
        }
        if !(s.delay_bucket_width_s > 0.0 && s.excess_bucket_width_s > 0.0) {
            return invalid("sim bucket widths must be > 0");
        }
        if s.summary_window == 0 {
            return invalid("sim.summary_window must be at least 1");
        }
        Ok(())
    }
}

// On-disk schema. Kept separate from the validated types so that defaults can
// be materialized and written back out verbatim.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub anchor: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_path_loss_db: Option<f64>,
    pub shadowing_sigma_db: f64,
    pub nlos_extra_shadowing_db: f64,
    pub toa_noise_sigma_s: f64,
    pub nlos_excess_delay_mean_s: f64,
    pub clock_offset_sigma_s: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            path_loss_exponent: 2.0,
            reference_distance_m: 1.0,
            reference_path_loss_db: None,
            shadowing_sigma_db: 4.0,
            nlos_extra_shadowing_db: 0.0,
            toa_noise_sigma_s: 0.1e-9,
            nlos_excess_delay_mean_s: 10e-9,
            clock_offset_sigma_s: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub comm_range_m: f64,
    pub carrier_frequency_hz: f64,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub sim: SimParams,
}

/// A validated world.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    nodes: Vec<Node>,
    obstacles: Vec<Obstacle>,
    comm_range_m: f64,
    carrier_frequency_hz: f64,
    pub channel: ChannelParams,
    pub sim: SimParams,
}

impl Scenario {
    /// Validates and assembles a scenario. Nodes may be given in any order;
    /// they are stored sorted by id.
    pub fn new(
        mut nodes: Vec<Node>,
        obstacles: Vec<Obstacle>,
        comm_range_m: f64,
        carrier_frequency_hz: f64,
        channel: ChannelParams,
        sim: SimParams,
    ) -> Result<Self, ScenarioError> {
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id.index() != i {
                return invalid(format!(
                    "node ids must be unique and dense 0..{} (found id {} at position {i})",
                    nodes.len(),
                    n.id.0
                ));
            }
            if !n.true_position.is_finite() {
                return invalid(format!("{} has a non-finite position", n.id));
            }
            if let Role::Anchor { known_position } = n.role {
                if known_position != n.true_position {
                    return invalid(format!("anchor {} known position must equal its true position", n.id));
                }
            }
        }
        let anchors = nodes.iter().filter(|n| n.is_anchor()).count();
        if anchors < MIN_ANCHORS {
            return invalid(format!(
                "at least {MIN_ANCHORS} anchor nodes are required, found {anchors}"
            ));
        }
        if let Some(i) = obstacles.iter().position(|o| !o.is_valid()) {
            return invalid(format!("obstacle {i} must satisfy xmin < xmax and ymin < ymax"));
        }
        if !(comm_range_m > 0.0 && comm_range_m.is_finite()) {
            return invalid("comm_range_m must be > 0");
        }
        if !(carrier_frequency_hz >= MIN_CARRIER_FREQUENCY_HZ && carrier_frequency_hz.is_finite()) {
            return invalid(format!(
                "carrier_frequency_hz must be at least 24 GHz (mmWave), got {carrier_frequency_hz} Hz"
            ));
        }
        channel.validate().map_err(ScenarioError::Validation)?;
        sim.validate()?;
        Ok(Self {
            nodes,
            obstacles,
            comm_range_m,
            carrier_frequency_hz,
            channel,
            sim,
        })
    }

    pub fn from_file_schema(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let nodes = file
            .nodes
            .iter()
            .map(|n| {
                if n.anchor {
                    Node::anchor(n.id, n.x, n.y)
                } else {
                    Node::unknown(n.id, n.x, n.y)
                }
            })
            .collect();
        let obstacles = file
            .obstacles
            .iter()
            .map(|o| Obstacle::new(o.xmin, o.ymin, o.xmax, o.ymax))
            .collect();
        if !(file.carrier_frequency_hz > 0.0) {
            return invalid("carrier_frequency_hz must be at least 24 GHz (mmWave)");
        }
        let c = &file.channel;
        let reference_path_loss_db = match c.reference_path_loss_db {
            Some(v) => v,
            None => fspl_reference(file.carrier_frequency_hz, c.reference_distance_m),
        };
        let channel = ChannelParams {
            tx_power_dbm: c.tx_power_dbm,
            path_loss_exponent: c.path_loss_exponent,
            reference_distance_m: c.reference_distance_m,
            reference_path_loss_db,
            shadowing_sigma_db: c.shadowing_sigma_db,
            nlos_extra_shadowing_db: c.nlos_extra_shadowing_db,
            toa_noise_sigma_s: c.toa_noise_sigma_s,
            nlos_excess_delay_mean_s: c.nlos_excess_delay_mean_s,
            clock_offset_sigma_s: c.clock_offset_sigma_s,
        };
        Self::new(
            nodes,
            obstacles,
            file.comm_range_m,
            file.carrier_frequency_hz,
            channel,
            file.sim,
        )
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Self::from_file_schema(serde_json::from_str(text)?)
    }

    /// The scenario with every default materialized, in the on-disk schema.
    pub fn to_file_schema(&self) -> ScenarioFile {
        let c = &self.channel;
        ScenarioFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    id: n.id.0,
                    x: n.true_position.x,
                    y: n.true_position.y,
                    anchor: n.is_anchor(),
                })
                .collect(),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleSpec {
                    xmin: o.min_corner.x,
                    ymin: o.min_corner.y,
                    xmax: o.max_corner.x,
                    ymax: o.max_corner.y,
                })
                .collect(),
            comm_range_m: self.comm_range_m,
            carrier_frequency_hz: self.carrier_frequency_hz,
            channel: ChannelSpec {
                tx_power_dbm: c.tx_power_dbm,
                path_loss_exponent: c.path_loss_exponent,
                reference_distance_m: c.reference_distance_m,
                reference_path_loss_db: Some(c.reference_path_loss_db),
                shadowing_sigma_db: c.shadowing_sigma_db,
                nlos_extra_shadowing_db: c.nlos_extra_shadowing_db,
                toa_noise_sigma_s: c.toa_noise_sigma_s,
                nlos_excess_delay_mean_s: c.nlos_excess_delay_mean_s,
                clock_offset_sigma_s: c.clock_offset_sigma_s,
            },
            sim: self.sim.clone(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_schema()).expect("scenario serializes")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index())
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn comm_range_m(&self) -> f64 {
        self.comm_range_m
    }

    pub fn carrier_frequency_hz(&self) -> f64 {
        self.carrier_frequency_hz
    }

    pub fn is_anchor(&self, id: NodeId) -> bool {
        self.node(id).is_some_and(Node::is_anchor)
    }

    pub fn anchor_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.iter().filter(|n| n.is_anchor()).map(|n| n.id).collect()
    }

    pub fn unknown_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| !n.is_anchor()).map(|n| n.id).collect()
    }

    /// Known positions of the anchors, keyed by id.
    pub fn anchor_positions(&self) -> BTreeMap<NodeId, Vec2> {
        self.nodes
            .iter()
            .filter_map(|n| match n.role {
                Role::Anchor { known_position } => Some((n.id, known_position)),
                Role::Unknown => None,
            })
            .collect()
    }

    pub fn truth(&self) -> BTreeMap<NodeId, Vec2> {
        self.nodes.iter().map(|n| (n.id, n.true_position)).collect()
    }

    /// Same world with every anchor and vehicle shifted by `offset`.
    pub fn translated(&self, offset: Vec2) -> Self {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.true_position = n.true_position + offset;
            if let Role::Anchor { known_position } = &mut n.role {
                *known_position = *known_position + offset;
            }
        }
        for o in &mut out.obstacles {
            o.min_corner = o.min_corner + offset;
            o.max_corner = o.max_corner + offset;
        }
        out
    }

    /// Stable digest of the world (geometry and channel), excluding `sim`.
    pub fn world_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut file = self.to_file_schema();
        file.sim = SimParams::default();
        let bytes = serde_json::to_vec(&file).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

/// Whether the open segment `p`–`q` avoids the interior of every obstacle.
///
/// Grazing an obstacle edge or corner does not block; an endpoint strictly
/// inside an obstacle does.
pub fn los_test(p: Vec2, q: Vec2, obstacles: &[Obstacle]) -> bool {
    obstacles.iter().all(|o| !segment_crosses_interior(p, q, o))
}

fn segment_crosses_interior(p: Vec2, q: Vec2, o: &Obstacle) -> bool {
    // Liang-Barsky against the open rectangle, restricted to t in (0, 1).
    let d = q - p;
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let slabs = [
        (d.x, p.x, o.min_corner.x, o.max_corner.x),
        (d.y, p.y, o.min_corner.y, o.max_corner.y),
    ];
    for (dir, start, min, max) in slabs {
        if dir == 0.0 {
            if !(start > min && start < max) {
                return false;
            }
            continue;
        }
        let (mut t0, mut t1) = ((min - start) / dir, (max - start) / dir);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        lo = lo.max(t0);
        hi = hi.min(t1);
        if lo >= hi {
            return false;
        }
    }
    lo < hi
}

/// A D2D link between two nodes within communication range, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub true_distance: f64,
    pub los: bool,
}

impl Link {
    /// The receiving end of the link (the higher id, by convention).
    pub fn receiver(&self) -> NodeId {
        self.b
    }

    pub fn transmitter(&self) -> NodeId {
        self.a
    }
}

/// All links in the scenario, ordered by `(a, b)`.
pub fn build_links(scenario: &Scenario) -> Vec<Link> {
    let nodes = scenario.nodes();
    let mut links = Vec::new();
    for (i, na) in nodes.iter().enumerate() {
        for nb in &nodes[i + 1..] {
            let d = na.true_position.distance(nb.true_position);
            if d <= scenario.comm_range_m() {
                links.push(Link {
                    a: na.id,
                    b: nb.id,
                    true_distance: d,
                    los: los_test(na.true_position, nb.true_position, scenario.obstacles()),
                });
            }
        }
    }
    links
}
