//! Rigid alignment of a relative solution onto the anchors' known positions.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};

use super::LocError;
use crate::geometry::{centroid, Vec2};
use crate::scenario::{NodeId, Scenario};

/// Relative spread below which an anchor set counts as collinear.
const COLLINEAR_TOLERANCE: f64 = 1e-12;

/// `x ↦ R·x + t` with `R` orthogonal (rotation or reflection).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix2::identity(),
            translation: Vector2::zeros(),
        }
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        let v = self.rotation * Vector2::new(p.x, p.y) + self.translation;
        Vec2::new(v.x, v.y)
    }

    pub fn is_reflection(&self) -> bool {
        self.rotation.determinant() < 0.0
    }
}

fn is_collinear(points: &[Vec2]) -> bool {
    let Some(c) = centroid(points.iter().copied()) else {
        return true;
    };
    let mut scatter = Matrix2::zeros();
    for p in points {
        let d = Vector2::new(p.x - c.x, p.y - c.y);
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    hi <= 0.0 || lo <= COLLINEAR_TOLERANCE * hi
}

/// Least-squares rigid transform taking `source[i]` onto `target[i]`,
/// reflection permitted, scale fixed at one.
pub fn fit_rigid(source: &[Vec2], target: &[Vec2]) -> Result<RigidTransform, LocError> {
    assert_eq!(source.len(), target.len());
    if source.len() < 3 || is_collinear(target) {
        return Err(LocError::AlignmentDegenerate);
    }
    let cs = centroid(source.iter().copied()).expect("non-empty");
    let ct = centroid(target.iter().copied()).expect("non-empty");
    let mut h = Matrix2::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = Vector2::new(s.x - cs.x, s.y - cs.y);
        let dt = Vector2::new(t.x - ct.x, t.y - ct.y);
        h += ds * dt.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let rotation = v_t.transpose() * u.transpose();
    let translation = Vector2::new(ct.x, ct.y) - rotation * Vector2::new(cs.x, cs.y);
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Maps a relative solution into the absolute frame using the anchors.
pub fn align_to_absolute(
    relative: &BTreeMap<NodeId, Vec2>,
    scenario: &Scenario,
) -> Result<BTreeMap<NodeId, Vec2>, LocError> {
    let known = scenario.anchor_positions();
    let mut source = Vec::with_capacity(known.len());
    let mut target = Vec::with_capacity(known.len());
    for (id, q) in &known {
        let p = relative.get(id).ok_or(LocError::MissingNode(*id))?;
        source.push(*p);
        target.push(*q);
    }
    let transform = fit_rigid(&source, &target)?;
    Ok(relative.iter().map(|(&id, &p)| (id, transform.apply(p))).collect())
}
