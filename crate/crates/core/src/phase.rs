//! Phase-map construction over the (L, rho) condition grid: percentile
//! reference point, phase distance, three-regime classification, and
//! instability-ridge contour crossings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Contour level that separates the regimes; empirical, overridable.
pub const DEFAULT_RIDGE_LEVEL: f64 = 0.4;
/// Percentile defining the reference point.
pub const REFERENCE_PERCENTILE: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    CoordinatedStable,
    Fragile,
    JammedDisordered,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::CoordinatedStable => "coordinated_stable",
            Regime::Fragile => "fragile",
            Regime::JammedDisordered => "jammed_disordered",
        }
    }
}

/// Reference point in the (CSR, S) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub csr: f64,
    pub s: f64,
}

/// Percentile with linear interpolation between closest order statistics
/// (rank = p * (n - 1)).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// 60th percentiles of the CSR and S values, computed independently.
pub fn thresholds(points: &[(f64, f64)]) -> Result<Thresholds, PhaseError> {
    if points.len() < 2 {
        return Err(PhaseError::TooFewPoints { needed: 2, got: points.len() });
    }
    let csr: Vec<f64> = points.iter().map(|p| p.0).collect();
    let s: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(Thresholds {
        csr: percentile(&csr, REFERENCE_PERCENTILE),
        s: percentile(&s, REFERENCE_PERCENTILE),
    })
}

/// Euclidean distance from the reference point in the (CSR, S) plane.
pub fn phase_distance(csr: f64, s: f64, thresholds: &Thresholds) -> f64 {
    let dc = csr - thresholds.csr;
    let ds = s - thresholds.s;
    (dc * dc + ds * ds).sqrt()
}

/// Regime assignment: inside the ridge band is fragile; outside it the
/// quadrant relative to the reference point separates the coordinated
/// corner (both axes at or above threshold) from the jammed/disordered
/// remainder.
pub fn classify(csr: f64, s: f64, d_phase: f64, th: &Thresholds, ridge_level: f64) -> Regime {
    if d_phase <= ridge_level {
        Regime::Fragile
    } else if csr >= th.csr && s >= th.s {
        Regime::CoordinatedStable
    } else {
        Regime::JammedDisordered
    }
}

/// One classified condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub side: usize,
    pub rho: f64,
    pub csr: f64,
    pub s: f64,
    pub d_phase: f64,
    pub regime: Regime,
}

/// Classified phase map plus the thresholds it was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMap {
    pub thresholds: Thresholds,
    pub ridge_level: f64,
    pub points: Vec<PhasePoint>,
}

/// Build the phase map from per-condition (side, rho, CSR, S) tuples.
pub fn build_phase_map(
    conditions: &[(usize, f64, f64, f64)],
    ridge_level: f64,
) -> Result<PhaseMap, PhaseError> {
    let th = thresholds(&conditions.iter().map(|c| (c.2, c.3)).collect::<Vec<_>>())?;
    let points = conditions
        .iter()
        .map(|&(side, rho, csr, s)| {
            let d = phase_distance(csr, s, &th);
            PhasePoint { side, rho, csr, s, d_phase: d, regime: classify(csr, s, d, &th, ridge_level) }
        })
        .collect();
    Ok(PhaseMap { thresholds: th, ridge_level, points })
}

/// Axis of a grid edge in the (L, rho) plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeAxis {
    Side,
    Rho,
}

/// A ridge-level crossing on an edge between two adjacent conditions, with
/// the linear-interpolation fraction measured from `a` toward `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeCrossing {
    pub axis: EdgeAxis,
    pub a: (usize, f64),
    pub b: (usize, f64),
    pub d_a: f64,
    pub d_b: f64,
    pub fraction: f64,
}

/// Scan every adjacent pair of conditions (neighbors in L rank order at
/// fixed rho, and in rho rank order at fixed L) for d_phase values that
/// straddle the ridge level. A double ridge shows up as two or more
/// disjoint crossing chains.
pub fn ridge_cells(points: &[PhasePoint], ridge_level: f64) -> Vec<RidgeCrossing> {
    let mut sides: Vec<usize> = points.iter().map(|p| p.side).collect();
    sides.sort_unstable();
    sides.dedup();
    let mut rhos: Vec<f64> = points.iter().map(|p| p.rho).collect();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();

    let lookup = |side: usize, rho: f64| points.iter().find(|p| p.side == side && p.rho == rho);
    let mut crossings = Vec::new();
    let mut check = |axis: EdgeAxis, a: &PhasePoint, b: &PhasePoint| {
        let (lo, hi) = (a.d_phase.min(b.d_phase), a.d_phase.max(b.d_phase));
        if lo < ridge_level && ridge_level < hi {
            crossings.push(RidgeCrossing {
                axis,
                a: (a.side, a.rho),
                b: (b.side, b.rho),
                d_a: a.d_phase,
                d_b: b.d_phase,
                fraction: (ridge_level - a.d_phase) / (b.d_phase - a.d_phase),
            });
        }
    };

    for &side in &sides {
        for pair in rhos.windows(2) {
            if let (Some(a), Some(b)) = (lookup(side, pair[0]), lookup(side, pair[1])) {
                check(EdgeAxis::Rho, a, b);
            }
        }
    }
    for &rho in &rhos {
        for pair in sides.windows(2) {
            if let (Some(a), Some(b)) = (lookup(pair[0], rho), lookup(pair[1], rho)) {
                check(EdgeAxis::Side, a, b);
            }
        }
    }
    crossings
}
