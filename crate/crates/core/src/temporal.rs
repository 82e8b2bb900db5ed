//! The temporal function: the flow time separating the two opposite
//! corners of the leaf quadrilateral spanned by a stable and an unstable
//! offset, its symplectic first-order term, and the residual scaling scan.
//!
//! Conventions: the stable offset w multiplies n+, the unstable offset v
//! multiplies n-, and the flow acts on the right.  With these choices the
//! closed form is -2 ln(1 - vw) and the first-order term is the contact
//! two-form pairing 2vw.

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::leaves::{factor_lower, factor_upper, relative_position};
use crate::model::bolza::{Bolza, ManifoldPoint};
use crate::model::group::{contact_d_alpha, n_minus, n_plus, AlgebraVector};

/// Largest leaf offset the geometric construction accepts.
pub const TEMPORAL_LOCALITY: f64 = 0.3;

/// The temporal function at a configuration, split into its symplectic
/// first-order part and the higher-order residual.
#[derive(Clone, Copy, Debug)]
pub struct TemporalResult {
    pub delta: f64,
    pub first_order: f64,
    pub residual: f64,
    pub v_norm: f64,
    pub w_norm: f64,
}

/// Closed form: delta = -2 ln(1 - vw).
pub fn temporal_delta_closed(v: f64, w: f64) -> Result<TemporalResult> {
    if !(v.is_finite() && w.is_finite()) || (v * w).abs() >= 0.9 {
        return Err(Error::domain(format!(
            "offset product vw = {} outside the model's locality",
            v * w
        )));
    }
    let one_minus = 1.0 - v * w;
    if one_minus.abs() <= 0.1 {
        return Err(Error::domain(format!(
            "1 - vw = {one_minus} too close to the Schubert-cell boundary"
        )));
    }
    let delta = -2.0 * one_minus.ln();
    let v_bar = AlgebraVector::new(0.0, 0.0, v);
    let w_bar = AlgebraVector::new(0.0, w, 0.0);
    let first_order = contact_d_alpha(&v_bar, &w_bar);
    Ok(TemporalResult {
        delta,
        first_order,
        residual: delta - first_order,
        v_norm: v.abs(),
        w_norm: w.abs(),
    })
}

/// Residual tolerance of the geometric construction.
const GEOMETRIC_RESIDUAL: f64 = 1e-10;

/// Extract the pure stable offset of p relative to x, requiring the other
/// components to vanish.
fn stable_offset(bolza: &Bolza, p: &ManifoldPoint, x: &ManifoldPoint) -> Result<f64> {
    let h = relative_position(bolza, p, x)?;
    let off = (h.m[0] - 1.0).abs().max(h.m[2].abs()).max((h.m[3] - 1.0).abs());
    if off > 1e-9 {
        return Err(Error::domain(format!(
            "point is off the stable leaf by {off:.2e}"
        )));
    }
    Ok(h.m[1])
}

/// Extract the pure unstable offset of p relative to x.
fn unstable_offset(bolza: &Bolza, p: &ManifoldPoint, x: &ManifoldPoint) -> Result<f64> {
    let h = relative_position(bolza, p, x)?;
    let off = (h.m[0] - 1.0).abs().max(h.m[1].abs()).max((h.m[3] - 1.0).abs());
    if off > 1e-9 {
        return Err(Error::domain(format!(
            "point is off the unstable leaf by {off:.2e}"
        )));
    }
    Ok(h.m[2])
}

/// Root-find f on [lo, hi] by bisection; f must change sign.
fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::domain(format!(
            "bisection bracket [{lo}, {hi}] does not straddle a root ({flo:.2e}, {fhi:.2e})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 || hi - lo < 1e-15 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Geometric evaluation of the temporal function by intersecting leaves.
///
/// y must lie on the stable leaf of x and y_prime on the unstable leaf,
/// both within the locality bound.  The two quadrilateral corners are
/// found by bisection on leaf coordinates: z' is the point of W^u(y) on
/// the weak-stable leaf of y', z the point of W^s(y') on the weak-unstable
/// leaf of y, and the returned value is the flow time carrying z to z'.
pub fn temporal_delta_geometric(
    bolza: &Bolza,
    y: &ManifoldPoint,
    y_prime: &ManifoldPoint,
    x: &ManifoldPoint,
) -> Result<f64> {
    geometric_core(bolza, y, y_prime, x, false)
}

/// The same construction with the stable/unstable roles of the definition
/// exchanged; exactly the negative of the direct orientation.
pub fn temporal_delta_geometric_swapped(
    bolza: &Bolza,
    y: &ManifoldPoint,
    y_prime: &ManifoldPoint,
    x: &ManifoldPoint,
) -> Result<f64> {
    geometric_core(bolza, y, y_prime, x, true)
}

fn geometric_core(
    bolza: &Bolza,
    y: &ManifoldPoint,
    y_prime: &ManifoldPoint,
    x: &ManifoldPoint,
    swapped: bool,
) -> Result<f64> {
    let w = stable_offset(bolza, y, x)?;
    let v = unstable_offset(bolza, y_prime, x)?;
    if w.abs() > TEMPORAL_LOCALITY || v.abs() > TEMPORAL_LOCALITY {
        return Err(Error::domain(format!(
            "offsets ({v}, {w}) exceed the locality bound {TEMPORAL_LOCALITY}"
        )));
    }
    // Everything below happens in the frame of x on plain matrices.
    let h_y = n_plus(w);
    let h_yp = n_minus(v);
    // z' = W^u(y) cap W^{sc}(y'): slide r along the unstable leaf of y
    // until the n- component relative to y' vanishes.
    let z_prime_cond = |r: f64| -> f64 {
        let rel = h_yp.inverse().mul(&h_y).mul(&n_minus(r));
        match factor_lower(&rel) {
            Ok((vv, _, _)) => vv,
            Err(_) => f64::NAN,
        }
    };
    // z = W^s(y') cap W^{uc}(y): slide q along the stable leaf of y' until
    // the n+ component relative to y vanishes.
    let z_cond = |q: f64| -> f64 {
        let rel = h_y.inverse().mul(&h_yp).mul(&n_plus(q));
        match factor_upper(&rel) {
            Ok((u, _, _)) => u,
            Err(_) => f64::NAN,
        }
    };
    let r_star = bisect(z_prime_cond, -0.49, 0.49)?;
    let q_star = bisect(z_cond, -0.49, 0.49)?;
    let z_prime = h_y.mul(&n_minus(r_star));
    let z = h_yp.mul(&n_plus(q_star));
    // The two corners must sit on one flow orbit: z' = z a(delta).
    let rel = z.inverse().mul(&z_prime);
    let (u_res, rho_res, delta) = factor_upper(&rel)?;
    if u_res.abs() > GEOMETRIC_RESIDUAL || rho_res.abs() > GEOMETRIC_RESIDUAL {
        return Err(Error::domain(format!(
            "quadrilateral corners miss one flow orbit: residuals ({u_res:.2e}, {rho_res:.2e})"
        )));
    }
    // Re-anchor on the manifold: both corners must reduce consistently.
    let z_point = bolza.translate_point(y_prime, &n_plus(q_star))?;
    let z_prime_point = bolza.translate_point(y, &n_minus(r_star))?;
    let on_orbit = relative_position(bolza, &z_prime_point, &z_point)?;
    let (u2, rho2, delta2) = factor_upper(&on_orbit)?;
    if u2.abs() > GEOMETRIC_RESIDUAL || rho2.abs() > GEOMETRIC_RESIDUAL {
        return Err(Error::domain(
            "reduced corners drifted off the common flow orbit",
        ));
    }
    if (delta2 - delta).abs() > GEOMETRIC_RESIDUAL {
        return Err(Error::internal(format!(
            "frame and manifold flow times disagree: {delta} vs {delta2}"
        )));
    }
    Ok(if swapped { -delta } else { delta })
}

/// Which offsets the residual scan rescales.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingMode {
    /// Both offsets scale with epsilon: the residual of the exact
    /// expansion scales with the fourth power.
    Joint,
    /// Only the unstable offset scales; quadratic scaling.
    UnstableOnly,
}

/// Log-log slope of the expansion residual |delta - 2vw| under rescaling.
pub fn katok_burns_residual_scan(
    scales: &[f64],
    v0: f64,
    w0: f64,
    mode: ScalingMode,
    min_points: usize,
) -> Result<LinearFit> {
    if scales.len() < 2 || scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::config("need at least two positive scales".to_string()));
    }
    if v0 == 0.0 || w0 == 0.0 {
        return Err(Error::config(
            "scan direction must have nonzero components".to_string(),
        ));
    }
    let lo = scales.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(Error::config(format!(
            "scales span {:.2} decades, need at least 2",
            (hi / lo).log10()
        )));
    }
    let count = min_points.max(scales.len()).max(8);
    let mut grid: Vec<f64> = (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect();
    grid.extend_from_slice(scales);
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite scales"));
    grid.dedup();
    let mut pts = Vec::with_capacity(grid.len());
    for &eps in &grid {
        let (v, w) = match mode {
            ScalingMode::Joint => (eps * v0, eps * w0),
            ScalingMode::UnstableOnly => (eps * v0, w0),
        };
        let res = temporal_delta_closed(v, w)?.residual.abs();
        if res > 0.0 {
            pts.push((eps.ln(), res.ln()));
        }
    }
    let fit = linear_fit(&pts)?;
    if fit.r_squared < 0.95 {
        return Err(Error::FitQuality {
            reason: format!("residual scaling fit has r^2 = {:.4}", fit.r_squared),
            partial: pts,
        });
    }
    Ok(fit)
}

/// Katok-Burns style bound: |residual| <= C (|v| w^2 + |w| v^2) with C = 1.
pub fn residual_bound_holds(v: f64, w: f64) -> Result<bool> {
    let r = temporal_delta_closed(v, w)?;
    let bound = v.abs() * w * w + w.abs() * v * v;
    Ok(r.residual.abs() <= bound + 1e-15)
}

/// Convenience: assemble a configuration (x, y = x n+(w), y' = x n-(v))
/// over a given base point.
pub fn quadrilateral_over(
    bolza: &Bolza,
    x: &ManifoldPoint,
    v: f64,
    w: f64,
) -> Result<(ManifoldPoint, ManifoldPoint)> {
    let y = bolza.translate_point(x, &n_plus(w))?;
    let y_prime = bolza.translate_point(x, &n_minus(v))?;
    Ok((y, y_prime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::group::flow_matrix;
    use crate::model::sample::haar_orbit_sample;
    use crate::rng::{derive_stream, Rng};

    #[test]
    fn closed_form_worked_examples() {
        let r = temporal_delta_closed(0.1, 0.2).unwrap();
        assert!((r.delta - (-2.0 * 0.98f64.ln())).abs() < 1e-15);
        assert!((r.delta - 0.04040541).abs() < 1e-8, "delta {}", r.delta);
        assert!((r.first_order - 0.04).abs() < 1e-15);
        assert!((r.residual - 4.0541e-4).abs() < 1e-8, "residual {}", r.residual);
        let r2 = temporal_delta_closed(-0.1, 0.2).unwrap();
        assert!((r2.delta - (-2.0 * 1.02f64.ln())).abs() < 1e-15);
        assert!((r2.delta + 0.03960525459).abs() < 1e-9, "delta {}", r2.delta);
    }

    #[test]
    fn degenerate_offsets_give_zero() {
        for (v, w) in [(0.0, 0.3), (0.25, 0.0), (0.0, 0.0)] {
            let r = temporal_delta_closed(v, w).unwrap();
            assert_eq!(r.delta, 0.0);
            assert_eq!(r.first_order, 0.0);
            assert_eq!(r.residual, 0.0);
        }
    }

    #[test]
    fn closed_form_domain_guards() {
        assert!(temporal_delta_closed(1.0, 1.0).is_err());
        assert!(temporal_delta_closed(0.95, 0.999).is_err());
        assert!(temporal_delta_closed(3.0, 0.31).is_err());
        assert!(temporal_delta_closed(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn geometric_matches_closed_form_on_random_configurations() {
        let b = Bolza::standard();
        let points = haar_orbit_sample(&b, 29, 40).unwrap();
        let mut rng = Rng::new(derive_stream(29, 0x7E39));
        let mut checked = 0;
        for i in 0..1000 {
            let x = &points[i % points.len()];
            let v = rng.range(-0.3, 0.3);
            let w = rng.range(-0.3, 0.3);
            let (y, y_prime) = quadrilateral_over(&b, x, v, w).unwrap();
            let geo = temporal_delta_geometric(&b, &y, &y_prime, x).unwrap();
            let closed = temporal_delta_closed(v, w).unwrap().delta;
            assert!(
                (geo - closed).abs() < 1e-8,
                "config {i}: v={v}, w={w}: geometric {geo} vs closed {closed}"
            );
            checked += 1;
        }
        assert_eq!(checked, 1000);
    }

    #[test]
    fn geometric_vanishes_when_y_equals_x() {
        let b = Bolza::standard();
        let x = b.reduce(flow_matrix(0.2)).unwrap();
        let (_, y_prime) = quadrilateral_over(&b, &x, 0.2, 0.0).unwrap();
        let geo = temporal_delta_geometric(&b, &x, &y_prime, &x).unwrap();
        assert!(geo.abs() < 1e-10);
    }

    #[test]
    fn swapped_roles_negate_the_value() {
        let b = Bolza::standard();
        let x = b.basepoint();
        let mut rng = Rng::new(derive_stream(31, 0x51AB));
        for _ in 0..50 {
            let v = rng.range(-0.3, 0.3);
            let w = rng.range(-0.3, 0.3);
            let (y, y_prime) = quadrilateral_over(&b, &x, v, w).unwrap();
            let fwd = temporal_delta_geometric(&b, &y, &y_prime, &x).unwrap();
            let swp = temporal_delta_geometric_swapped(&b, &y, &y_prime, &x).unwrap();
            assert!((fwd + swp).abs() < 1e-8, "v={v}, w={w}: {fwd} vs {swp}");
        }
    }

    #[test]
    fn geometric_rejects_off_leaf_inputs() {
        let b = Bolza::standard();
        let x = b.basepoint();
        let bad_y = b.translate_point(&x, &n_minus(0.1)).unwrap();
        let y_prime = b.translate_point(&x, &n_minus(0.2)).unwrap();
        assert!(temporal_delta_geometric(&b, &bad_y, &y_prime, &x).is_err());
        let y = b.translate_point(&x, &n_plus(0.31)).unwrap();
        assert!(temporal_delta_geometric(&b, &y, &y_prime, &x).is_err());
    }

    #[test]
    fn residual_scan_slopes() {
        let scales: Vec<f64> = (0..7).map(|i| 1e-3 * 10f64.powf(i as f64 / 3.0)).collect();
        let joint = katok_burns_residual_scan(&scales, 1.0, 1.0, ScalingMode::Joint, 12).unwrap();
        assert!((joint.slope - 4.0).abs() < 0.1, "joint slope {}", joint.slope);
        let vonly =
            katok_burns_residual_scan(&scales, 1.0, 0.1, ScalingMode::UnstableOnly, 12).unwrap();
        assert!((vonly.slope - 2.0).abs() < 0.1, "v-only slope {}", vonly.slope);
    }

    #[test]
    fn residual_scan_guards() {
        assert!(katok_burns_residual_scan(&[1e-3, 1e-2], 1.0, 0.0, ScalingMode::Joint, 8).is_err());
        assert!(katok_burns_residual_scan(&[1e-3], 1.0, 1.0, ScalingMode::Joint, 8).is_err());
        assert!(
            katok_burns_residual_scan(&[1e-3, 5e-3], 1.0, 1.0, ScalingMode::Joint, 8).is_err(),
            "narrow scale range must be rejected"
        );
    }

    #[test]
    fn expansion_bound_with_unit_constant() {
        for i in 0..13 {
            for j in 0..13 {
                let v = -0.3 + 0.05 * i as f64;
                let w = -0.3 + 0.05 * j as f64;
                assert!(
                    residual_bound_holds(v, w).unwrap(),
                    "bound fails at v={v}, w={w}"
                );
            }
        }
    }

    #[test]
    fn delta_is_smooth_in_each_argument() {
        // Central finite differences of the geometric value stabilize
        // under step refinement.
        let b = Bolza::standard();
        let x = b.basepoint();
        let (v, w) = (0.17, -0.12);
        let eval = |vv: f64| {
            let (y, y_prime) = quadrilateral_over(&b, &x, vv, w).unwrap();
            temporal_delta_geometric(&b, &y, &y_prime, &x).unwrap()
        };
        let d1 = (eval(v + 1e-4) - eval(v - 1e-4)) / 2e-4;
        let d2 = (eval(v + 1e-5) - eval(v - 1e-5)) / 2e-5;
        assert!((d1 - d2).abs() < 1e-6 * d1.abs().max(1.0), "{d1} vs {d2}");
        // And the analytic derivative -2 d/dv ln(1-vw) = 2w/(1-vw).
        let analytic = 2.0 * w / (1.0 - v * w);
        assert!((d2 - analytic).abs() < 1e-6, "{d2} vs {analytic}");
    }
}
