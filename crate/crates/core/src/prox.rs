//! Sets with closed-form Euclidean projections.
//!
//! Every variant except [`ConvexSet::Box`] and [`ConvexSet::AffineFix`]
//! operates on a coordinate subset of the vector it is applied to; the
//! remaining coordinates pass through untouched. `BallExterior` is the one
//! nonconvex member: its "projection" maps interior points to the nearest
//! point of the sphere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{dist2, dot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxError {
    #[error("coordinate index {index} out of range for vector of dimension {dim}")]
    DimensionMismatch { index: usize, dim: usize },
    #[error("invalid set parameters: {0}")]
    InvalidSet(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexSet {
    /// Per-coordinate bounds on `indices`; infinite bounds are allowed.
    Box { indices: Vec<usize>, lo: Vec<f64>, hi: Vec<f64> },
    /// `‖v[indices] − center‖ ≤ radius`.
    Ball { indices: Vec<usize>, center: Vec<f64>, radius: f64 },
    /// `‖v[indices] − center‖ ≥ radius` (nonconvex).
    BallExterior { indices: Vec<usize>, center: Vec<f64>, radius: f64 },
    /// `‖w⊥‖ ≤ tan(half_angle)·(axis·w)` for `w = v[indices]`; `half_angle` in radians.
    SecondOrderCone { indices: Vec<usize>, axis: Vec<f64>, half_angle: f64 },
    /// Pins individual coordinates to fixed values.
    AffineFix { entries: Vec<(usize, f64)> },
    /// Members projected once each, in order.
    Chain { members: Vec<ConvexSet> },
}

impl ConvexSet {
    /// Box over the leading `lo.len()` coordinates.
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let indices = (0..lo.len()).collect();
        ConvexSet::Box { indices, lo, hi }
    }

    pub fn box_on(indices: Vec<usize>, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        ConvexSet::Box { indices, lo, hi }
    }

    pub fn ball(indices: Vec<usize>, center: Vec<f64>, radius: f64) -> Self {
        ConvexSet::Ball { indices, center, radius }
    }

    pub fn ball_exterior(indices: Vec<usize>, center: Vec<f64>, radius: f64) -> Self {
        ConvexSet::BallExterior { indices, center, radius }
    }

    /// Cone with the given axis (normalized here) and half-angle in degrees.
    pub fn cone_deg(indices: Vec<usize>, axis: Vec<f64>, half_angle_deg: f64) -> Self {
        let n = crate::dense::norm2(&axis);
        let axis = axis.iter().map(|a| a / n).collect();
        ConvexSet::SecondOrderCone { indices, axis, half_angle: half_angle_deg.to_radians() }
    }

    pub fn fix(entries: Vec<(usize, f64)>) -> Self {
        ConvexSet::AffineFix { entries }
    }

    /// The whole space.
    pub fn free() -> Self {
        ConvexSet::Chain { members: Vec::new() }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, ConvexSet::Chain { members: m } if m.iter().all(ConvexSet::is_free))
    }

    /// Appends `other` to a chain, flattening nested chains.
    pub fn and(self, other: ConvexSet) -> Self {
        let mut members = match self {
            ConvexSet::Chain { members: m } => m,
            s => vec![s],
        };
        match other {
            ConvexSet::Chain { members: m } => members.extend(m),
            s => members.push(s),
        }
        ConvexSet::Chain { members }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            ConvexSet::BallExterior { .. } => false,
            ConvexSet::Chain { members: m } => m.iter().all(ConvexSet::is_convex),
            _ => true,
        }
    }

    /// Checks parameter invariants against a vector dimension.
    pub fn validate(&self, dim: usize) -> Result<(), ProxError> {
        let check_indices = |idx: &[usize]| -> Result<(), ProxError> {
            match idx.iter().find(|&&i| i >= dim) {
                Some(&index) => Err(ProxError::DimensionMismatch { index, dim }),
                None => Ok(()),
            }
        };
        let bad = |msg: String| Err(ProxError::InvalidSet(msg));
        match self {
            ConvexSet::Box { indices, lo, hi } => {
                check_indices(indices)?;
                if lo.len() != indices.len() || hi.len() != indices.len() {
                    return bad("box bounds length must match indices".into());
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return bad("box requires lo <= hi".into());
                }
                Ok(())
            }
            ConvexSet::Ball { indices, center, radius } | ConvexSet::BallExterior { indices, center, radius } => {
                check_indices(indices)?;
                if center.len() != indices.len() {
                    return bad("ball center length must match indices".into());
                }
                if !(*radius > 0.0) {
                    return bad(format!("radius must be positive, got {radius}"));
                }
                Ok(())
            }
            ConvexSet::SecondOrderCone { indices, axis, half_angle } => {
                check_indices(indices)?;
                if axis.len() != indices.len() {
                    return bad("cone axis length must match indices".into());
                }
                if (crate::dense::norm2(axis) - 1.0).abs() > 1e-9 {
                    return bad("cone axis must be a unit vector".into());
                }
                if !(*half_angle > 0.0 && *half_angle < std::f64::consts::FRAC_PI_2) {
                    return bad(format!("half-angle must lie in (0, 90) degrees, got {}", half_angle.to_degrees()));
                }
                Ok(())
            }
            ConvexSet::AffineFix { entries } => {
                let idx: Vec<usize> = entries.iter().map(|e| e.0).collect();
                check_indices(&idx)
            }
            ConvexSet::Chain { members } => members.iter().try_for_each(|m| m.validate(dim)),
        }
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, ProxError> {
        let mut out = v.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, v: &mut [f64]) -> Result<(), ProxError> {
        let dim = v.len();
        let check = |idx: &[usize]| match idx.iter().find(|&&i| i >= dim) {
            Some(&index) => Err(ProxError::DimensionMismatch { index, dim }),
            None => Ok(()),
        };
        match self {
            ConvexSet::Box { indices, lo, hi } => {
                check(indices)?;
                for ((&i, &l), &h) in indices.iter().zip(lo).zip(hi) {
                    v[i] = v[i].clamp(l, h);
                }
            }
            ConvexSet::Ball { indices, center, radius } => {
                check(indices)?;
                let d = subset_distance(v, indices, center);
                if d > *radius {
                    let s = radius / d;
                    for (&i, &c) in indices.iter().zip(center) {
                        v[i] = c + s * (v[i] - c);
                    }
                }
            }
            ConvexSet::BallExterior { indices, center, radius } => {
                check(indices)?;
                let d = subset_distance(v, indices, center);
                if d < *radius {
                    if d > 0.0 {
                        let s = radius / d;
                        for (&i, &c) in indices.iter().zip(center) {
                            v[i] = c + s * (v[i] - c);
                        }
                    } else {
                        // exact center: push along the first subset direction
                        for (k, (&i, &c)) in indices.iter().zip(center).enumerate() {
                            v[i] = if k == 0 { c + radius } else { c };
                        }
                    }
                }
            }
            ConvexSet::SecondOrderCone { indices, axis, half_angle } => {
                check(indices)?;
                let w: Vec<f64> = indices.iter().map(|&i| v[i]).collect();
                let p = project_cone(&w, axis, *half_angle);
                for (&i, pi) in indices.iter().zip(p) {
                    v[i] = pi;
                }
            }
            ConvexSet::AffineFix { entries } => {
                for &(i, val) in entries {
                    if i >= dim {
                        return Err(ProxError::DimensionMismatch { index: i, dim });
                    }
                    v[i] = val;
                }
            }
            ConvexSet::Chain { members } => {
                for m in members {
                    m.project_in_place(v)?;
                }
            }
        }
        Ok(())
    }

    /// Distance from `v` to the set. For chains this is the largest member
    /// distance, a lower bound on the distance to the intersection.
    pub fn distance(&self, v: &[f64]) -> Result<f64, ProxError> {
        match self {
            ConvexSet::Chain { members } => {
                members.iter().try_fold(0.0_f64, |acc, m| Ok(acc.max(m.distance(v)?)))
            }
            _ => Ok(dist2(v, &self.project(v)?)),
        }
    }

    /// True iff the distance to the set is at most `tol`.
    ///
    /// Chains are tested member by member.
    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        self.distance(v).map(|d| d <= tol).unwrap_or(false)
    }
}

fn subset_distance(v: &[f64], indices: &[usize], center: &[f64]) -> f64 {
    indices.iter().zip(center).map(|(&i, &c)| (v[i] - c).powi(2)).sum::<f64>().sqrt()
}

/// Euclidean projection onto `{w : ‖w − (a·w)a‖ ≤ tan θ · (a·w)}`.
fn project_cone(w: &[f64], axis: &[f64], half_angle: f64) -> Vec<f64> {
    let s = dot(w, axis);
    let perp: Vec<f64> = w.iter().zip(axis).map(|(wi, ai)| wi - s * ai).collect();
    let t = crate::dense::norm2(&perp);
    let (sin, cos) = half_angle.sin_cos();
    if t <= s * half_angle.tan() {
        return w.to_vec();
    }
    let along = s * cos + t * sin;
    if along <= 0.0 {
        return vec![0.0; w.len()];
    }
    // t > 0 here: t == 0 implies s < 0, which lands in the polar cone above
    w.iter()
        .enumerate()
        .map(|(k, _)| along * (cos * axis[k] + sin * perp[k] / t))
        .collect()
}
