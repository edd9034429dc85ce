//! Cramér–Rao lower bound for the unknown node positions.
//!
//! The Fisher information assumes independent Gaussian measurement errors
//! with the estimator-reported variances, linearized at the true geometry.
//! Anchor coordinates are treated as known, so their blocks are dropped.
//! NLoS ToA measurements enter with their nominal variance, which makes the
//! bound optimistic on biased links.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::Vec2;
use crate::locsolver::LocalizationResult;
use crate::ranging::{Measurement, MeasurementKind};
use crate::scenario::NodeId;

/// Smallest eigenvalue relative to the largest for an invertible FIM.
const CONDITION_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrlbError {
    #[error("{0} and {1} coincide; range gradient undefined")]
    SingularGradient(NodeId, NodeId),
    #[error("{0} has no true position")]
    MissingTruth(NodeId),
    #[error("Fisher information is singular; no bound available")]
    IllPosed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub matrix: DMatrix<f64>,
    /// Block row (in units of 2×2 blocks) of each unknown node.
    pub index: BTreeMap<NodeId, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrlbReport {
    /// Root trace of each unknown node's 2×2 covariance bound, meters.
    pub per_node_bound: BTreeMap<NodeId, f64>,
    /// Root mean of the squared per-node bounds, meters.
    pub total_bound: Option<f64>,
    pub well_posed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvaluationRecord {
    pub rmse: f64,
    pub bound: f64,
    /// `bound / rmse`; at most about one for an unbiased estimator.
    pub efficiency: f64,
}

fn unit_between(from: NodeId, to: NodeId, truth: &BTreeMap<NodeId, Vec2>) -> Result<Vec2, CrlbError> {
    let pf = truth.get(&from).ok_or(CrlbError::MissingTruth(from))?;
    let pt = truth.get(&to).ok_or(CrlbError::MissingTruth(to))?;
    (*pf - *pt).unit().ok_or(CrlbError::SingularGradient(from, to))
}

/// Fisher information over the non-anchor nodes of `truth`.
pub fn fisher_information(
    measurements: &[Measurement],
    truth: &BTreeMap<NodeId, Vec2>,
    anchors: &BTreeSet<NodeId>,
) -> Result<FisherMatrix, CrlbError> {
    let index: BTreeMap<NodeId, usize> = truth
        .keys()
        .filter(|id| !anchors.contains(id))
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let dim = 2 * index.len();
    let mut matrix = DMatrix::zeros(dim, dim);

    for m in measurements {
        let mut grads: Vec<(usize, Vec2)> = Vec::with_capacity(3);
        let mut push = |id: NodeId, g: Vec2| {
            if let Some(&k) = index.get(&id) {
                grads.push((k, g));
            }
        };
        match m.kind {
            MeasurementKind::Range { a, b } => {
                let u = unit_between(a, b, truth)?;
                push(a, u);
                push(b, -u);
            }
            MeasurementKind::RangeDiff {
                node,
                ref_anchor,
                other_anchor,
            } => {
                let ur = unit_between(node, ref_anchor, truth)?;
                let uo = unit_between(node, other_anchor, truth)?;
                push(node, ur - uo);
                push(ref_anchor, -ur);
                push(other_anchor, uo);
            }
        }
        let w = 1.0 / m.variance;
        for &(i, gi) in &grads {
            for &(j, gj) in &grads {
                matrix[(2 * i, 2 * j)] += w * gi.x * gj.x;
                matrix[(2 * i, 2 * j + 1)] += w * gi.x * gj.y;
                matrix[(2 * i + 1, 2 * j)] += w * gi.y * gj.x;
                matrix[(2 * i + 1, 2 * j + 1)] += w * gi.y * gj.y;
            }
        }
    }
    Ok(FisherMatrix { matrix, index })
}

pub fn crlb_bound(fim: &FisherMatrix) -> CrlbReport {
    let ill_posed = CrlbReport {
        per_node_bound: BTreeMap::new(),
        total_bound: None,
        well_posed: false,
    };
    if fim.index.is_empty() {
        return ill_posed;
    }
    let eig = fim.matrix.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= CONDITION_THRESHOLD * hi {
        return ill_posed;
    }
    let Some(chol) = fim.matrix.clone().cholesky() else {
        return ill_posed;
    };
    let cov = chol.inverse();
    let per_node_bound: BTreeMap<NodeId, f64> = fim
        .index
        .iter()
        .map(|(&id, &k)| (id, (cov[(2 * k, 2 * k)] + cov[(2 * k + 1, 2 * k + 1)]).sqrt()))
        .collect();
    let mean_sq = per_node_bound.values().map(|b| b * b).sum::<f64>() / per_node_bound.len() as f64;
    CrlbReport {
        per_node_bound,
        total_bound: Some(mean_sq.sqrt()),
        well_posed: true,
    }
}

pub fn evaluate(result: &LocalizationResult, report: &CrlbReport) -> Result<EvaluationRecord, CrlbError> {
    let bound = match (report.well_posed, report.total_bound) {
        (true, Some(b)) => b,
        _ => return Err(CrlbError::IllPosed),
    };
    let efficiency = if result.rmse > 0.0 {
        bound / result.rmse
    } else {
        f64::INFINITY
    };
    Ok(EvaluationRecord {
        rmse: result.rmse,
        bound,
        efficiency,
    })
}
