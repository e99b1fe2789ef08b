//! Sample statistics and the affine least-squares fit.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation; 0 for fewer than two samples.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Half-width of the two-sided 95% Student-t interval of the mean.
/// NaN for a single sample, where the interval is undefined.
pub fn ci95_half_width(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    t * std_dev(xs) / (n as f64).sqrt()
}

/// `y = intercept + slope x` fitted by ordinary least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination.
    pub r2: f64,
}

impl AffineFit {
    /// None for fewer than two points or when all `x` coincide.
    pub fn fit(points: &[(f64, f64)]) -> Option<AffineFit> {
        let n = points.len();
        if n < 2 {
            return None;
        }
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx == 0.0 {
            return None;
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        let r2 = if ss_tot == 0.0 {
            if ss_res == 0.0 { 1.0 } else { 0.0 }
        } else {
            1.0 - ss_res / ss_tot
        };
        Some(AffineFit {
            slope,
            intercept,
            r2,
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantile_matches_tables() {
        // t_{0.975} for 9 and 29 degrees of freedom.
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let sd = std_dev(&xs);
        assert!((ci95_half_width(&xs) / (sd / 10f64.sqrt()) - 2.262157).abs() < 1e-5);
        let xs: Vec<f64> = (0..30).map(|i| (i * i) as f64).collect();
        let sd = std_dev(&xs);
        assert!((ci95_half_width(&xs) / (sd / 30f64.sqrt()) - 2.045230).abs() < 1e-5);
        assert!(ci95_half_width(&[1.0]).is_nan());
    }

    #[test]
    fn std_dev_of_known_sample() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), 5.0);
        assert!((std_dev(&xs) - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_line_has_unit_r2() {
        let pts: Vec<_> = (0..10).map(|x| (x as f64, 3.0 * x as f64 + 1.5)).collect();
        let f = AffineFit::fit(&pts).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.intercept - 1.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(AffineFit::fit(&[(1.0, 2.0), (1.0, 3.0)]).is_none());
    }

    #[test]
    fn r2_matches_hand_computation() {
        // x = 0,1,2; y = 0,2,1: slope 0.5, intercept 0.5, ss_res 1.5, ss_tot 2.
        let f = AffineFit::fit(&[(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.intercept - 0.5).abs() < 1e-12);
        assert!((f.r2 - 0.25).abs() < 1e-12);
    }
}
