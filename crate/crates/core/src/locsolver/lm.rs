//! Damped Gauss-Newton over node coordinates.
//!
//! Residuals are whitened by each measurement's reported standard deviation.
//! Damping is Marquardt-style (scaled by the diagonal of the normal matrix),
//! multiplied by ten after a rejected step and by a tenth after an accepted one.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{LocError, RelativeGraph, SolverConfig};
use crate::geometry::Vec2;
use crate::ranging::{Measurement, MeasurementKind};
use crate::scenario::NodeId;

const MIN_DAMPING: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e16;
/// Smallest eigenvalue of the Jacobi-scaled normal matrix, relative to the
/// largest, below which the solution is considered underdetermined.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub termination: Termination,
    pub converged: bool,
    /// Unweighted residual norm over the graph's measurements, meters.
    pub residual_norm: f64,
    /// Weighted cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Fixed(Vec2),
    /// `origin + s · direction`, `s` at the given parameter index.
    Ray { origin: Vec2, direction: Vec2, index: usize },
    Free(usize),
}

/// How the frame is pinned down during the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Gauge {
    /// Lowest anchor fixed, second lowest on a ray; everything else free.
    Relative,
    /// Every anchor fixed at its initial position.
    Anchored,
}

struct Problem<'a> {
    slots: BTreeMap<NodeId, Slot>,
    n_params: usize,
    residuals: Vec<&'a Measurement>,
    n_graph: usize,
}

impl<'a> Problem<'a> {
    fn new(
        graph: &'a RelativeGraph,
        init: &BTreeMap<NodeId, Vec2>,
        gauge: Gauge,
    ) -> Result<(Self, DVector<f64>), LocError> {
        let mut slots = BTreeMap::new();
        let mut x0 = Vec::new();
        let mut anchors = graph.anchor_ids.iter();
        let pinned: Vec<NodeId> = match gauge {
            Gauge::Relative => anchors.next().into_iter().copied().collect(),
            Gauge::Anchored => anchors.by_ref().copied().collect(),
        };
        let ray = match gauge {
            Gauge::Relative => graph.anchor_ids.iter().nth(1).copied(),
            Gauge::Anchored => None,
        };
        let position = |id: &NodeId| init.get(id).copied().ok_or(LocError::MissingNode(*id));
        for id in &graph.node_ids {
            let p = position(id)?;
            let slot = if pinned.contains(id) {
                Slot::Fixed(p)
            } else if Some(*id) == ray {
                let origin = position(&pinned[0])?;
                let direction = (p - origin).unit().ok_or_else(|| {
                    LocError::DegenerateGeometry("gauge anchors share an initial position".into())
                })?;
                x0.push((p - origin).norm());
                Slot::Ray {
                    origin,
                    direction,
                    index: x0.len() - 1,
                }
            } else {
                x0.push(p.x);
                x0.push(p.y);
                Slot::Free(x0.len() - 2)
            };
            slots.insert(*id, slot);
        }
        let residuals: Vec<&Measurement> = graph.measurements.iter().chain(&graph.baselines).collect();
        let problem = Self {
            slots,
            n_params: x0.len(),
            residuals,
            n_graph: graph.measurements.len(),
        };
        Ok((problem, DVector::from_vec(x0)))
    }

    fn position(&self, id: NodeId, x: &DVector<f64>) -> Vec2 {
        match self.slots[&id] {
            Slot::Fixed(p) => p,
            Slot::Ray {
                origin,
                direction,
                index,
            } => origin + direction * x[index],
            Slot::Free(i) => Vec2::new(x[i], x[i + 1]),
        }
    }

    fn positions(&self, x: &DVector<f64>) -> BTreeMap<NodeId, Vec2> {
        self.slots.keys().map(|&id| (id, self.position(id, x))).collect()
    }

    /// Adds `weight · gradient` for node `id` into Jacobian row `row`.
    fn scatter(&self, jac: &mut DMatrix<f64>, row: usize, id: NodeId, g: Vec2, weight: f64) {
        match self.slots[&id] {
            Slot::Fixed(_) => {}
            Slot::Ray { direction, index, .. } => jac[(row, index)] += weight * g.dot(direction),
            Slot::Free(i) => {
                jac[(row, i)] += weight * g.x;
                jac[(row, i + 1)] += weight * g.y;
            }
        }
    }

    /// Raw residuals (predicted minus measured), in meters.
    fn raw_residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.residuals.len(),
            self.residuals.iter().map(|m| predict(m, |id| self.position(id, x)) - m.value),
        )
    }

    fn whitened(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut r = self.raw_residuals(x);
        for (ri, m) in r.iter_mut().zip(&self.residuals) {
            *ri /= m.variance.sqrt();
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.residuals.len(), self.n_params);
        for (row, m) in self.residuals.iter().enumerate() {
            let w = 1.0 / m.variance.sqrt();
            match m.kind {
                MeasurementKind::Range { a, b } => {
                    let u = unit_or_zero(self.position(a, x) - self.position(b, x));
                    self.scatter(&mut jac, row, a, u, w);
                    self.scatter(&mut jac, row, b, -u, w);
                }
                MeasurementKind::RangeDiff {
                    node,
                    ref_anchor,
                    other_anchor,
                } => {
                    let pn = self.position(node, x);
                    let ur = unit_or_zero(pn - self.position(ref_anchor, x));
                    let uo = unit_or_zero(pn - self.position(other_anchor, x));
                    self.scatter(&mut jac, row, node, ur - uo, w);
                    self.scatter(&mut jac, row, ref_anchor, -ur, w);
                    self.scatter(&mut jac, row, other_anchor, uo, w);
                }
            }
        }
        jac
    }
}

fn unit_or_zero(v: Vec2) -> Vec2 {
    v.unit().unwrap_or(Vec2::ZERO)
}

/// Noise-free value of a measurement given node positions.
pub fn predict(m: &Measurement, pos: impl Fn(NodeId) -> Vec2) -> f64 {
    match m.kind {
        MeasurementKind::Range { a, b } => pos(a).distance(pos(b)),
        MeasurementKind::RangeDiff {
            node,
            ref_anchor,
            other_anchor,
        } => pos(node).distance(pos(ref_anchor)) - pos(node).distance(pos(other_anchor)),
    }
}

fn cost(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// True when the normal matrix, after Jacobi scaling, has a (numerically) null direction.
fn is_rank_deficient(normal: &DMatrix<f64>) -> bool {
    let n = normal.nrows();
    if n == 0 {
        return false;
    }
    let diag = normal.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return true;
    }
    let scale = diag.map(|d| 1.0 / d.sqrt());
    let scaled = DMatrix::from_fn(n, n, |i, j| normal[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.symmetric_eigenvalues();
    eig.min() <= RANK_TOLERANCE * eig.max()
}

const POLISH_STEPS: usize = 4;

pub(crate) fn solve(
    graph: &RelativeGraph,
    init: &BTreeMap<NodeId, Vec2>,
    config: &SolverConfig,
    gauge: Gauge,
) -> Result<(BTreeMap<NodeId, Vec2>, SolveDiagnostics), LocError> {
    let (problem, mut x) = Problem::new(graph, init, gauge)?;

    let mut r = problem.whitened(&x);
    let mut current = cost(&r);
    let mut history = vec![current];
    let mut damping = config.initial_damping;
    let mut iterations = 0;
    let mut jac = problem.jacobian(&x);
    let mut normal = jac.transpose() * &jac;
    let mut gradient = jac.transpose() * &r;

    let termination = loop {
        if problem.n_params == 0 {
            break Termination::Gradient;
        }
        // Scale-free gradient test: cosine between the residual and each Jacobian column.
        let r_norm = r.norm();
        let worst_cosine = jac
            .column_iter()
            .zip(gradient.iter())
            .map(|(col, g)| {
                let c = col.norm() * r_norm;
                if c > 0.0 {
                    g.abs() / c
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if r_norm == 0.0 || worst_cosine <= config.gradient_tolerance {
            break Termination::Gradient;
        }
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut damped = normal.clone();
        for i in 0..problem.n_params {
            damped[(i, i)] += damping * normal[(i, i)];
        }
        let Some(chol) = damped.cholesky() else {
            damping *= 10.0;
            if damping > MAX_DAMPING {
                return Err(LocError::DegenerateGeometry(
                    "normal equations stay singular under damping".into(),
                ));
            }
            continue;
        };
        let step = -chol.solve(&gradient);
        if step.amax() <= config.step_tolerance {
            break Termination::Step;
        }
        let candidate = &x + &step;
        let r_new = problem.whitened(&candidate);
        let new_cost = cost(&r_new);
        if new_cost < current {
            x = candidate;
            r = r_new;
            current = new_cost;
            history.push(current);
            damping = (damping * 0.1).max(MIN_DAMPING);
            jac = problem.jacobian(&x);
            normal = jac.transpose() * &jac;
            gradient = jac.transpose() * &r;
        } else {
            damping = (damping * 10.0).min(MAX_DAMPING);
        }
    };

    // Undamped polish. Near the optimum cost differences fall below rounding,
    // so a step is kept when the gradient shrinks and the cost holds.
    if termination != Termination::MaxIterations && problem.n_params > 0 {
        for _ in 0..POLISH_STEPS {
            let Some(chol) = normal.clone().cholesky() else { break };
            let step = -chol.solve(&gradient);
            let candidate = &x + &step;
            let r_new = problem.whitened(&candidate);
            let new_cost = cost(&r_new);
            let jac_new = problem.jacobian(&candidate);
            let gradient_new = jac_new.transpose() * &r_new;
            if new_cost > current * (1.0 + 1e-12) || gradient_new.norm() >= gradient.norm() {
                break;
            }
            x = candidate;
            current = current.min(new_cost);
            normal = jac_new.transpose() * &jac_new;
            gradient = gradient_new;
        }
    }

    if is_rank_deficient(&normal) {
        return Err(LocError::DegenerateGeometry(
            "measurements do not determine every coordinate".into(),
        ));
    }

    let raw = problem.raw_residuals(&x);
    let residual_norm = raw.rows(0, problem.n_graph).norm();
    let diagnostics = SolveDiagnostics {
        iterations,
        termination,
        converged: termination != Termination::MaxIterations,
        residual_norm,
        cost_history: history,
    };
    Ok((problem.positions(&x), diagnostics))
}
