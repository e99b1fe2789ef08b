//! Estimators for g and l, and the affine-compliance verdict.

use std::collections::BTreeMap;
use std::fmt;

use crate::stats::AffineFit;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateError {
    MissingSample(u64),
    /// `n_max` must exceed `2p`.
    Range { p: u64, n_max: u64 },
}

impl fmt::Display for EstimateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimateError::MissingSample(h) => write!(f, "no measurement for h = {h}"),
            EstimateError::Range { p, n_max } => write!(f, "n_max = {n_max} must exceed 2p = {}", 2 * p),
        }
    }
}

impl std::error::Error for EstimateError {}

/// Per-word gap `g` and latency `l` from a total-exchange curve `T(h)`:
///
/// ```text
/// g = (T(n_max) - T(2p)) / (n_max - 2p)
/// l = max{ T(0), 2 T(p) - T(2p) }
/// ```
pub fn estimate_params(t: &BTreeMap<u64, f64>, p: u64, n_max: u64) -> Result<(f64, f64), EstimateError> {
    if n_max <= 2 * p {
        return Err(EstimateError::Range { p, n_max });
    }
    let at = |h: u64| t.get(&h).copied().ok_or(EstimateError::MissingSample(h));
    let (t0, tp, t2p, tmax) = (at(0)?, at(p)?, at(2 * p)?, at(n_max)?);
    let g = (tmax - t2p) / (n_max - 2 * p) as f64;
    let l = t0.max(2.0 * tp - t2p);
    Ok((g, l))
}

/// Whether `T(h)` follows an affine model.
#[derive(Debug, Clone, PartialEq)]
pub struct Compliance {
    pub fit: AffineFit,
    pub compliant: bool,
    /// Smallest and largest `h` whose residual exceeds twice the RMS
    /// residual, when not compliant.
    pub deviating: Option<(f64, f64)>,
}

pub const COMPLIANCE_R2: f64 = 0.9;

/// Fits `points` `(h, T)` and applies the `R^2 >= threshold` verdict.
pub fn compliance(points: &[(f64, f64)], threshold: f64) -> Option<Compliance> {
    let fit = AffineFit::fit(points)?;
    let compliant = fit.r2 >= threshold;
    let deviating = if compliant {
        None
    } else {
        let res: Vec<f64> = points.iter().map(|&(x, y)| y - fit.predict(x)).collect();
        let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
        let mut off: Vec<f64> = points
            .iter()
            .zip(&res)
            .filter(|(_, r)| r.abs() > 2.0 * rms)
            .map(|(p, _)| p.0)
            .collect();
        // Without outliers the misfit is spread out: report the whole grid.
        if off.is_empty() {
            off = points.iter().map(|p| p.0).collect();
        }
        let lo = off.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = off.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    };
    Some(Compliance {
        fit,
        compliant,
        deviating,
    })
}

/// `{0, p, 2p}` followed by `2p * 2^k` up to and including `n_max`.
pub fn h_grid(p: u64, n_max: u64) -> Vec<u64> {
    let mut hs = vec![0, p, 2 * p];
    let mut h = 4 * p;
    while h < n_max {
        hs.push(h);
        h *= 2;
    }
    hs.push(n_max);
    hs.sort_unstable();
    hs.dedup();
    hs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_input_recovers_slope_and_intercept() {
        let t: BTreeMap<u64, f64> = [0, 2, 4, 1000].iter().map(|&h| (h, 2.0 * h as f64 + 7.0)).collect();
        let (g, l) = estimate_params(&t, 2, 1000).unwrap();
        assert_eq!(g, (2007.0 - 15.0) / 996.0);
        assert!((g - 2.0).abs() < 1e-12);
        assert_eq!(l, 7.0f64.max(2.0 * 11.0 - 15.0));
        assert_eq!(l, 7.0);
    }

    #[test]
    fn missing_samples_and_bad_range_are_errors() {
        let t: BTreeMap<u64, f64> = [(0, 1.0), (2, 2.0), (4, 3.0)].into_iter().collect();
        assert_eq!(estimate_params(&t, 2, 100), Err(EstimateError::MissingSample(100)));
        assert_eq!(estimate_params(&t, 2, 4), Err(EstimateError::Range { p: 2, n_max: 4 }));
    }

    #[test]
    fn convex_curve_takes_the_floor_branch_and_fails_compliance() {
        let p = 4u64;
        let n_max = 1 << 14;
        let curve = |h: u64| 1e-6 + 1e-12 * (h as f64).powi(3);
        let grid = h_grid(p, n_max);
        let t: BTreeMap<u64, f64> = grid.iter().map(|&h| (h, curve(h))).collect();
        let (_, l) = estimate_params(&t, p, n_max).unwrap();
        assert_eq!(l, curve(0));
        let pts: Vec<_> = grid.iter().map(|&h| (h as f64, curve(h))).collect();
        let c = compliance(&pts, COMPLIANCE_R2).unwrap();
        assert!(!c.compliant, "r2 = {}", c.fit.r2);
        assert!(c.deviating.is_some());
        let lin: Vec<_> = grid.iter().map(|&h| (h as f64, 3.0 + h as f64)).collect();
        assert!(compliance(&lin, COMPLIANCE_R2).unwrap().compliant);
    }

    #[test]
    fn grid_contains_the_estimator_points() {
        let g = h_grid(3, 100);
        assert_eq!(g, vec![0, 3, 6, 12, 24, 48, 96, 100]);
    }
}
