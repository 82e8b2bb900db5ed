//! Quadrature kernels.
//!
//! Two families are used throughout the crate:
//!
//! * composite Simpson on uniform grids for smooth non-oscillatory
//!   integrands, and
//! * a Filon-Simpson rule for integrals of the form `∫ g(t) e^{-ibt} dt`
//!   with smooth `g`: each two-step cell interpolates `g` by the quadratic
//!   through its three nodes and integrates quadratic x oscillation
//!   exactly, so the step is constrained by the smoothness of `g`, not by
//!   the frequency `b`.
//!
//! [`FilonTable`] factors the per-cell quadratic coefficients out of the
//! frequency so that scans over many `b` values against the same samples
//! reduce to three short weighted sums per frequency.

use num_complex::Complex64;

/// Composite Simpson over a uniform grid. `samples.len()` must be odd.
pub fn simpson(samples: &[f64], h: f64) -> f64 {
    let n = samples.len();
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd number of nodes");
    let mut acc = samples[0] + samples[n - 1];
    for (i, &v) in samples.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Simpson cell moments of 1, s, s^2 against e^{-ibs} on s in [-h, h].
fn cell_moments(b: f64, h: f64) -> (Complex64, Complex64, Complex64) {
    let theta = b * h;
    if theta.abs() <= 0.35 {
        let t2 = theta * theta;
        // Series for 2h*sinc and friends; relative truncation error < 1e-12
        // at the switch point.
        let m0 = 2.0 * h * (1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 * t2 * t2 / 5040.0);
        let m1m = 2.0 * h * h * (theta / 3.0 - theta * t2 / 30.0 + theta * t2 * t2 / 840.0);
        let m2 = 2.0 * h * h * h * (1.0 / 3.0 - t2 / 10.0 + t2 * t2 / 168.0);
        (
            Complex64::new(m0, 0.0),
            Complex64::new(0.0, -m1m),
            Complex64::new(m2, 0.0),
        )
    } else {
        let (s, c) = theta.sin_cos();
        let m0 = 2.0 * s / b;
        let m1m = 2.0 * (s - theta * c) / (b * b);
        let m2 = 2.0 * (2.0 * theta * c + (theta * theta - 2.0) * s) / (b * b * b);
        (
            Complex64::new(m0, 0.0),
            Complex64::new(0.0, -m1m),
            Complex64::new(m2, 0.0),
        )
    }
}

/// Precomputed per-cell quadratic coefficients for Filon evaluation of
/// `∫ g(t) e^{-ibt} dt` over a uniform grid `t0 + j h`, any `b`.
pub struct FilonTable {
    t0: f64,
    h: f64,
    /// (alpha, beta, gamma) per cell: value, slope, curvature at the cell
    /// midpoint in the local coordinate s = t - t_mid.
    cells: Vec<(f64, f64, f64)>,
}

impl FilonTable {
    /// `samples[j] = g(t0 + j h)`; the sample count must be odd and >= 3.
    pub fn new(t0: f64, h: f64, samples: &[f64]) -> Self {
        let n = samples.len();
        assert!(n >= 3 && n % 2 == 1, "filon needs an odd number of nodes");
        let mut cells = Vec::with_capacity((n - 1) / 2);
        for k in 0..(n - 1) / 2 {
            let g0 = samples[2 * k];
            let g1 = samples[2 * k + 1];
            let g2 = samples[2 * k + 2];
            let alpha = g1;
            let beta = (g2 - g0) / (2.0 * h);
            let gamma = (g0 - 2.0 * g1 + g2) / (2.0 * h * h);
            cells.push((alpha, beta, gamma));
        }
        FilonTable { t0, h, cells }
    }

    /// `∫ g(t) e^{-ibt} dt` over the sampled range.
    pub fn transform(&self, b: f64) -> Complex64 {
        let (m0, m1, m2) = cell_moments(b, self.h);
        // Midpoint phases advance by e^{-2ibh} per cell; one trig call total.
        let mut phase = Complex64::from_polar(1.0, -b * (self.t0 + self.h));
        let step = Complex64::from_polar(1.0, -2.0 * b * self.h);
        let mut acc = Complex64::new(0.0, 0.0);
        for &(alpha, beta, gamma) in &self.cells {
            acc += phase * (m0 * alpha + m1 * beta + m2 * gamma);
            phase *= step;
        }
        acc
    }

    /// `∫ g(t) dt` (the b = 0 case, plain Simpson).
    pub fn integral(&self) -> f64 {
        let h = self.h;
        self.cells
            .iter()
            .map(|&(alpha, _, gamma)| 2.0 * h * alpha + 2.0 * h * h * h * gamma / 3.0)
            .sum()
    }
}

/// One-shot Filon transform.
pub fn filon(t0: f64, h: f64, samples: &[f64], b: f64) -> Complex64 {
    FilonTable::new(t0, h, samples).transform(b)
}

/// Composite Simpson for a complex-valued integrand on a uniform grid.
pub fn simpson_complex(samples: &[Complex64], h: f64) -> Complex64 {
    let n = samples.len();
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd number of nodes");
    let mut acc = samples[0] + samples[n - 1];
    for (i, &v) in samples.iter().enumerate().take(n - 1).skip(1) {
        acc += v * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * (h / 3.0)
}
