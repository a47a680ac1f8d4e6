//! Isoradial edge weights for the random-cluster model.
//!
//! Every edge of an isoradial rectangular lattice subtends an angle
//! `theta` in its rhombus; the open probability `p_e` is a function of
//! `theta` and the cluster weight `q` only. Three branches (q < 4,
//! q = 4, q > 4) meet continuously at q = 4.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("edge angle {0} outside (0, pi)")]
    AngleOutOfRange(f64),
    #[error("cluster weight q = {0} must be positive")]
    BadQ(f64),
    #[error("q = {0}: this quantity is only defined for q > 4")]
    NeedsSupercritical(f64),
}

/// Width of the window around q = 4 in which the series form of the
/// weight is used instead of the sin/sinh branches (which are 0/0 at q = 4).
const NEAR_Q4: f64 = 1e-6;

/// Branch parameter `r` of the weight formula: `acos(sqrt(q)/2)/pi` for
/// q <= 4 and `acosh(sqrt(q)/2)/pi` for q > 4.
pub fn branch_r(q: f64) -> f64 {
    let h = q.sqrt() / 2.0;
    if q <= 4.0 {
        h.acos() / std::f64::consts::PI
    } else {
        h.acosh() / std::f64::consts::PI
    }
}

/// Odds `y = p/(1-p)` of the isoradial weight at angle `theta`.
///
/// The duality identity `y(theta) * y(pi - theta) = q` holds exactly in
/// all branches.
pub fn isoradial_odds(theta: f64, q: f64) -> Result<f64, WeightError> {
    if !(theta > 0.0 && theta < std::f64::consts::PI) {
        return Err(WeightError::AngleOutOfRange(theta));
    }
    if !(q > 0.0) {
        return Err(WeightError::BadQ(q));
    }
    let pi = std::f64::consts::PI;
    let sq = q.sqrt();
    let y = if (q - 4.0).abs() < NEAR_Q4 {
        // Series in (q - 4); the ratio sin(r(pi-theta))/sin(r theta) and its
        // sinh counterpart share the expansion ((pi-theta)/theta) *
        // (1 + (q-4)(pi-2 theta)/(24 pi) + O((q-4)^2)).
        sq * ((pi - theta) / theta) * (1.0 + (q - 4.0) * (pi - 2.0 * theta) / (24.0 * pi))
    } else if q < 4.0 {
        let r = branch_r(q);
        sq * (r * (pi - theta)).sin() / (r * theta).sin()
    } else {
        let r = branch_r(q);
        sq * (r * (pi - theta)).sinh() / (r * theta).sinh()
    };
    Ok(y)
}

/// Isoradial open probability `p_e(theta, q)`.
pub fn isoradial_weight(theta: f64, q: f64) -> Result<f64, WeightError> {
    let y = isoradial_odds(theta, q)?;
    Ok(y / (1.0 + y))
}

/// Dual open probability: the unique `p*` with
/// `[p/(1-p)] * [p*/(1-p*)] = q`.
pub fn dual_weight(p: f64, q: f64) -> f64 {
    q * (1.0 - p) / (p + q * (1.0 - p))
}

/// Self-dual point `p_c(q) = sqrt(q)/(1+sqrt(q))`.
pub fn p_c(q: f64) -> f64 {
    let sq = q.sqrt();
    sq / (1.0 + sq)
}

/// Horizontal and vertical edge probabilities of the lattice with constant
/// transverse angle `alpha` (q > 4). Horizontal edges subtend `pi - alpha`,
/// vertical edges subtend `alpha`.
pub fn intro_weights(alpha: f64, q: f64) -> Result<(f64, f64), WeightError> {
    if q <= 4.0 {
        return Err(WeightError::NeedsSupercritical(q));
    }
    let ph = isoradial_weight(std::f64::consts::PI - alpha, q)?;
    let pv = isoradial_weight(alpha, q)?;
    Ok((ph, pv))
}

/// Per-edge open probabilities for one lattice at fixed `q`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightTable {
    pub q: f64,
    pub r: f64,
    per_edge: Vec<f64>,
}

impl WeightTable {
    pub fn from_thetas(thetas: impl IntoIterator<Item = f64>, q: f64) -> Result<Self, WeightError> {
        let per_edge = thetas
            .into_iter()
            .map(|t| isoradial_weight(t, q))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(WeightTable {
            q,
            r: branch_r(q),
            per_edge,
        })
    }

    #[inline]
    pub fn p(&self, edge: usize) -> f64 {
        self.per_edge[edge]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.per_edge.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.per_edge.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.per_edge
    }
}
