//! Cooperative localization of vehicles over mmWave D2D links, with a
//! learned per-link choice between ToA, TDoA and RSS ranging.
//!
//! The pipeline for one episode:
//!
//! 1. [`channel`] synthesizes delay and power observables for every link.
//! 2. [`rl`] maps each observation to a context and picks a ranging method.
//! 3. [`ranging`] turns observations into range or range-difference measurements.
//! 4. [`locsolver`] solves a relative graph and aligns it to the anchors.
//! 5. [`crlb`] computes the Cramér–Rao bound of the chosen measurement set.
//! 6. [`rl`] rewards or penalizes the episode's choices against a threshold.
//!
//! [`harness`] wraps the loop into reproducible experiments.

pub mod channel;
pub mod crlb;
pub mod geometry;
pub mod harness;
pub mod locsolver;
pub mod ranging;
pub mod rl;
pub mod scenario;
pub mod streams;

pub use geometry::Vec2;
pub use ranging::{Measurement, MeasurementKind, RangingMethod};
pub use scenario::{load_scenario, Link, Node, NodeId, Scenario};
