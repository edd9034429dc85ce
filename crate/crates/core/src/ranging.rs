//! Range estimators over channel observations: time of arrival, time
//! difference of arrival between two anchors, and received signal strength.
//!
//! Reported variances are nominal. They reflect timing noise and shadowing
//! only, because an estimator has no way to see NLoS excess delay or its own
//! receiver clock offset.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelObservation, ChannelParams, SPEED_OF_LIGHT};
use crate::scenario::{Link, NodeId};

/// Floor applied to every reported variance, in m².
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RangingMethod {
    ToA,
    TDoA,
    RSS,
}

impl RangingMethod {
    pub const ALL: [RangingMethod; 3] = [RangingMethod::ToA, RangingMethod::TDoA, RangingMethod::RSS];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RangingMethod::ToA => "toa",
            RangingMethod::TDoA => "tdoa",
            RangingMethod::RSS => "rss",
        }
    }
}

impl fmt::Display for RangingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementKind {
    /// `‖x_a − x_b‖`.
    Range { a: NodeId, b: NodeId },
    /// `‖x_node − x_ref‖ − ‖x_node − x_other‖`.
    RangeDiff {
        node: NodeId,
        ref_anchor: NodeId,
        other_anchor: NodeId,
    },
}

impl MeasurementKind {
    pub fn nodes(&self) -> Vec<NodeId> {
        match *self {
            MeasurementKind::Range { a, b } => vec![a, b],
            MeasurementKind::RangeDiff {
                node,
                ref_anchor,
                other_anchor,
            } => vec![node, ref_anchor, other_anchor],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    /// Meters.
    pub value: f64,
    /// Square meters, always positive.
    pub variance: f64,
    pub method: RangingMethod,
}

impl Measurement {
    pub fn range(a: NodeId, b: NodeId, value: f64, variance: f64, method: RangingMethod) -> Self {
        Self {
            kind: MeasurementKind::Range { a, b },
            value,
            variance: variance.max(MIN_VARIANCE),
            method,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RangingError {
    #[error("TDoA observations have different receivers ({0} vs {1})")]
    ReceiverMismatch(NodeId, NodeId),
    #[error("TDoA reference transmitter {0} is not an anchor")]
    NotAnchor(NodeId),
    #[error("TDoA needs two distinct anchors, got {0} twice")]
    SameAnchor(NodeId),
    #[error("TDoA infeasible at {receiver}: {available} anchor neighbor(s), need 2")]
    TdoaInfeasible { receiver: NodeId, available: usize },
    #[error("no observation for link ({0}, {1})")]
    MissingObservation(NodeId, NodeId),
}

fn toa_variance(params: &ChannelParams) -> f64 {
    (SPEED_OF_LIGHT * params.toa_noise_sigma_s).powi(2)
}

pub fn toa_range(obs: &ChannelObservation, params: &ChannelParams) -> Measurement {
    let (a, b) = obs.link_key();
    let value = (SPEED_OF_LIGHT * obs.arrival_delay_s).max(0.0);
    Measurement::range(a, b, value, toa_variance(params), RangingMethod::ToA)
}

/// Range difference at the shared receiver between the transmitters of
/// `obs1` (reference anchor) and `obs2` (other anchor).
pub fn tdoa_rangediff(
    obs1: &ChannelObservation,
    obs2: &ChannelObservation,
    anchors: &BTreeSet<NodeId>,
    params: &ChannelParams,
) -> Result<Measurement, RangingError> {
    if obs1.receiver != obs2.receiver {
        return Err(RangingError::ReceiverMismatch(obs1.receiver, obs2.receiver));
    }
    for t in [obs1.transmitter, obs2.transmitter] {
        if !anchors.contains(&t) {
            return Err(RangingError::NotAnchor(t));
        }
    }
    if obs1.transmitter == obs2.transmitter {
        return Err(RangingError::SameAnchor(obs1.transmitter));
    }
    // The clock terms are identical for a shared receiver, so their difference is exactly zero.
    let value = SPEED_OF_LIGHT * (obs1.propagation_delay_s - obs2.propagation_delay_s)
        + SPEED_OF_LIGHT * (obs1.clock_offset_s - obs2.clock_offset_s);
    Ok(Measurement {
        kind: MeasurementKind::RangeDiff {
            node: obs1.receiver,
            ref_anchor: obs1.transmitter,
            other_anchor: obs2.transmitter,
        },
        value,
        variance: (2.0 * toa_variance(params)).max(MIN_VARIANCE),
        method: RangingMethod::TDoA,
    })
}

pub fn rss_range(obs: &ChannelObservation, params: &ChannelParams) -> Measurement {
    let (a, b) = obs.link_key();
    let n10 = 10.0 * params.path_loss_exponent;
    let value = params.reference_distance_m
        * 10f64.powf((params.tx_power_dbm - obs.rx_power_dbm - params.reference_path_loss_db) / n10);
    // First-order propagation of log-normal shadowing.
    let sd = value * std::f64::consts::LN_10 * params.shadowing_sigma_db / n10;
    Measurement::range(a, b, value, sd * sd, RangingMethod::RSS)
}

/// The observations of one episode, indexed by link, with the per-receiver
/// anchor neighbors available as TDoA references.
///
/// A node can only use an anchor as a TDoA reference if it is the receiving
/// end of their link, i.e. the anchor has the lower id.
#[derive(Debug, Clone)]
pub struct ObservationBundle {
    observations: Vec<ChannelObservation>,
    index: HashMap<(NodeId, NodeId), usize>,
    /// Anchor transmitters per receiver, nearest first (ties by lower id).
    tdoa_refs: BTreeMap<NodeId, Vec<NodeId>>,
}

impl ObservationBundle {
    /// `observations[i]` must belong to `links[i]`.
    pub fn new(links: &[Link], observations: Vec<ChannelObservation>, anchors: &BTreeSet<NodeId>) -> Self {
        assert_eq!(links.len(), observations.len(), "one observation per link");
        let index = links.iter().enumerate().map(|(i, l)| ((l.a, l.b), i)).collect();
        let mut refs: BTreeMap<NodeId, Vec<(f64, NodeId)>> = BTreeMap::new();
        for l in links {
            if anchors.contains(&l.transmitter()) {
                refs.entry(l.receiver()).or_default().push((l.true_distance, l.transmitter()));
            }
        }
        let tdoa_refs = refs
            .into_iter()
            .map(|(rx, mut v)| {
                v.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                (rx, v.into_iter().map(|(_, id)| id).collect())
            })
            .collect();
        Self {
            observations,
            index,
            tdoa_refs,
        }
    }

    pub fn observations(&self) -> &[ChannelObservation] {
        &self.observations
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> Result<&ChannelObservation, RangingError> {
        let key = (a.min(b), a.max(b));
        self.index
            .get(&key)
            .map(|&i| &self.observations[i])
            .ok_or(RangingError::MissingObservation(key.0, key.1))
    }

    pub fn tdoa_references(&self, receiver: NodeId) -> &[NodeId] {
        self.tdoa_refs.get(&receiver).map_or(&[], Vec::as_slice)
    }

    /// Anchor pair `(reference, other)` used when `link` is measured by TDoA.
    ///
    /// The reference is the receiver's nearest anchor neighbor. The other
    /// anchor is the link's own transmitter when that is a distinct anchor
    /// neighbor, otherwise the second nearest.
    pub fn tdoa_pair(&self, link: &Link) -> Result<(NodeId, NodeId), RangingError> {
        let refs = self.tdoa_references(link.receiver());
        if refs.len() < 2 {
            return Err(RangingError::TdoaInfeasible {
                receiver: link.receiver(),
                available: refs.len(),
            });
        }
        let reference = refs[0];
        let tx = link.transmitter();
        let other = if tx != reference && refs.contains(&tx) { tx } else { refs[1] };
        Ok((reference, other))
    }
}

pub fn measure_link(
    link: &Link,
    method: RangingMethod,
    bundle: &ObservationBundle,
    anchors: &BTreeSet<NodeId>,
    params: &ChannelParams,
) -> Result<Measurement, RangingError> {
    match method {
        RangingMethod::ToA => Ok(toa_range(bundle.get(link.a, link.b)?, params)),
        RangingMethod::RSS => Ok(rss_range(bundle.get(link.a, link.b)?, params)),
        RangingMethod::TDoA => {
            let (reference, other) = bundle.tdoa_pair(link)?;
            let rx = link.receiver();
            tdoa_rangediff(bundle.get(reference, rx)?, bundle.get(other, rx)?, anchors, params)
        }
    }
}
