//! Least-squares helpers shared by the exponent-measurement routines.

use crate::error::{Error, Result};

/// Ordinary least squares y = slope * x + intercept.
#[derive(Clone, Copy, Debug)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::FitQuality {
            reason: format!("need at least 3 points, got {n}"),
            partial: points.to_vec(),
        });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::FitQuality {
            reason: "degenerate abscissa (zero variance)".into(),
            partial: points.to_vec(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(LinearFit { slope, intercept, r_squared, n })
}

/// Fit y = c * x^p through log-log regression; returns (p, c, r^2).
///
/// Points with non-positive coordinates are dropped.  `min_decades` guards
/// against fits over too narrow an x-range; violations surface as a
/// fit-quality error carrying the surviving (log x, log y) pairs.
pub fn power_law_fit(points: &[(f64, f64)], min_decades: f64) -> Result<LinearFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 3 {
        return Err(Error::FitQuality {
            reason: format!("only {} usable points for power-law fit", logs.len()),
            partial: logs,
        });
    }
    let xmin = logs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = logs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let decades = (xmax - xmin) / std::f64::consts::LN_10;
    if decades < min_decades - 1e-9 {
        return Err(Error::FitQuality {
            reason: format!("abscissa spans {decades:.2} decades, need {min_decades}"),
            partial: logs,
        });
    }
    linear_fit(&logs)
}

/// Sample mean and standard error computed from per-shard means.
pub fn shard_stats(shard_means: &[f64]) -> (f64, f64) {
    let s = shard_means.len() as f64;
    let mean = shard_means.iter().sum::<f64>() / s;
    if shard_means.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = shard_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (s - 1.0);
    (mean, (var / s).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        let f = linear_fit(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 3.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_recovers_exponent() {
        let pts: Vec<(f64, f64)> = (1..=20).map(|i| {
            let x = 1.2f64.powi(i);
            (x, 2.0 * x.powf(-1.5))
        }).collect();
        let f = power_law_fit(&pts, 0.5).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-10);
        assert!((f.intercept.exp() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn narrow_range_is_rejected() {
        let pts = vec![(1.0, 1.0), (1.01, 1.0), (1.02, 1.0)];
        assert!(matches!(power_law_fit(&pts, 1.0), Err(Error::FitQuality { .. })));
    }
}
