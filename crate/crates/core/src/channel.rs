//! Per-link channel observables: arrival delay and received power.
//!
//! Delay carries the receiver's residual clock offset, an exponential excess
//! on NLoS links, and Gaussian timing noise. Power follows log-distance path
//! loss with log-normal shadowing. Every link consumes exactly three variates
//! from the stream regardless of parameters, so streams stay aligned across
//! configurations.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::scenario::{Link, NodeId, Scenario};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const INV_SPEED_OF_LIGHT: f64 = 1.0 / SPEED_OF_LIGHT;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance {distance} m is below the reference distance {reference} m")]
    BelowReferenceDistance { distance: f64, reference: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelParams {
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    pub reference_path_loss_db: f64,
    pub shadowing_sigma_db: f64,
    /// Added to `shadowing_sigma_db` on NLoS links.
    pub nlos_extra_shadowing_db: f64,
    pub toa_noise_sigma_s: f64,
    pub nlos_excess_delay_mean_s: f64,
    pub clock_offset_sigma_s: f64,
}

impl ChannelParams {
    /// Literature-typical defaults with the reference loss taken from free
    /// space at `carrier_frequency_hz`.
    pub fn default_for(carrier_frequency_hz: f64) -> Self {
        Self {
            tx_power_dbm: 20.0,
            path_loss_exponent: 2.0,
            reference_distance_m: 1.0,
            reference_path_loss_db: fspl_reference(carrier_frequency_hz, 1.0),
            shadowing_sigma_db: 4.0,
            nlos_extra_shadowing_db: 0.0,
            toa_noise_sigma_s: 0.1e-9,
            nlos_excess_delay_mean_s: 10e-9,
            clock_offset_sigma_s: 1e-9,
        }
    }

    /// All randomness switched off.
    pub fn noiseless(mut self) -> Self {
        self.shadowing_sigma_db = 0.0;
        self.nlos_extra_shadowing_db = 0.0;
        self.toa_noise_sigma_s = 0.0;
        self.nlos_excess_delay_mean_s = 0.0;
        self.clock_offset_sigma_s = 0.0;
        self
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        let finite = [
            self.tx_power_dbm,
            self.path_loss_exponent,
            self.reference_distance_m,
            self.reference_path_loss_db,
            self.shadowing_sigma_db,
            self.nlos_extra_shadowing_db,
            self.toa_noise_sigma_s,
            self.nlos_excess_delay_mean_s,
            self.clock_offset_sigma_s,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("channel parameters must be finite".into());
        }
        if self.path_loss_exponent <= 0.0 {
            return Err("channel.path_loss_exponent must be > 0".into());
        }
        if self.reference_distance_m <= 0.0 {
            return Err("channel.reference_distance_m must be > 0".into());
        }
        let sigmas = [
            ("shadowing_sigma_db", self.shadowing_sigma_db),
            ("nlos_extra_shadowing_db", self.nlos_extra_shadowing_db),
            ("toa_noise_sigma_s", self.toa_noise_sigma_s),
            ("nlos_excess_delay_mean_s", self.nlos_excess_delay_mean_s),
            ("clock_offset_sigma_s", self.clock_offset_sigma_s),
        ];
        for (name, v) in sigmas {
            if v < 0.0 {
                return Err(format!("channel.{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Log-distance path loss in dB.
pub fn path_loss(distance_m: f64, params: &ChannelParams) -> Result<f64, ChannelError> {
    if !(distance_m >= params.reference_distance_m) {
        return Err(ChannelError::BelowReferenceDistance {
            distance: distance_m,
            reference: params.reference_distance_m,
        });
    }
    Ok(params.reference_path_loss_db
        + 10.0 * params.path_loss_exponent * (distance_m / params.reference_distance_m).log10())
}

/// Free-space path loss at `d0` meters.
pub fn fspl_reference(frequency_hz: f64, d0: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * d0 * frequency_hz / SPEED_OF_LIGHT).log10()
}

/// Residual receiver clock offsets for one episode, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOffsets(Vec<f64>);

impl EpochOffsets {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn from_vec(offsets: Vec<f64>) -> Self {
        Self(offsets)
    }

    pub fn get(&self, id: NodeId) -> f64 {
        self.0[id.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Every node's clock shifted by the same amount.
    pub fn shifted(&self, common_offset_s: f64) -> Self {
        Self(self.0.iter().map(|o| o + common_offset_s).collect())
    }
}

pub fn draw_epoch_offsets<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> EpochOffsets {
    let sigma = scenario.channel.clock_offset_sigma_s;
    EpochOffsets(
        scenario
            .nodes()
            .iter()
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            })
            .collect(),
    )
}

/// Raw observables of one link for one draw.
///
/// The receiver's timestamp is kept as two parts, the true-time propagation
/// delay and the receiver clock offset, so that differences between arrivals
/// at the same receiver cancel the clock term without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelObservation {
    pub transmitter: NodeId,
    pub receiver: NodeId,
    /// `propagation_delay_s + clock_offset_s`.
    pub arrival_delay_s: f64,
    /// Geometric delay plus multipath excess plus timing noise.
    pub propagation_delay_s: f64,
    pub clock_offset_s: f64,
    pub multipath_excess_s: f64,
    pub rx_power_dbm: f64,
    pub los: bool,
}

impl ChannelObservation {
    pub fn link_key(&self) -> (NodeId, NodeId) {
        (self.transmitter.min(self.receiver), self.transmitter.max(self.receiver))
    }
}

pub fn synthesize_observation<R: Rng + ?Sized>(
    link: &Link,
    params: &ChannelParams,
    offsets: &EpochOffsets,
    rng: &mut R,
) -> ChannelObservation {
    let z_toa: f64 = rng.sample(StandardNormal);
    let e: f64 = rng.sample(Exp1);
    let z_shadow: f64 = rng.sample(StandardNormal);

    let excess = if link.los {
        0.0
    } else {
        params.nlos_excess_delay_mean_s * e
    };
    let propagation = link.true_distance * INV_SPEED_OF_LIGHT + excess + params.toa_noise_sigma_s * z_toa;
    let receiver = link.receiver();
    let clock = offsets.get(receiver);

    let shadow_sigma = if link.los {
        params.shadowing_sigma_db
    } else {
        params.shadowing_sigma_db + params.nlos_extra_shadowing_db
    };
    // Links shorter than the reference distance use the reference loss.
    let pl = path_loss(link.true_distance.max(params.reference_distance_m), params)
        .expect("clamped to reference distance");
    let rx_power = params.tx_power_dbm - pl - shadow_sigma * z_shadow;

    ChannelObservation {
        transmitter: link.transmitter(),
        receiver,
        arrival_delay_s: propagation + clock,
        propagation_delay_s: propagation,
        clock_offset_s: clock,
        multipath_excess_s: excess,
        rx_power_dbm: rx_power,
        los: link.los,
    }
}

/// One observation per link, in link order.
pub fn observe_links<R: Rng + ?Sized>(
    links: &[Link],
    params: &ChannelParams,
    offsets: &EpochOffsets,
    rng: &mut R,
) -> Vec<ChannelObservation> {
    links
        .iter()
        .map(|l| synthesize_observation(l, params, offsets, rng))
        .collect()
}
