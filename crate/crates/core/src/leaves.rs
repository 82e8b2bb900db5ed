//! Invariant leaves of the flow, dynamical pseudo-distances, stable
//! holonomies with Jacobians, and the measured pinching exponents.
//!
//! The diagonal flow contracts the upper-unipotent direction and expands
//! the lower one, so the strong stable leaf through p is p n+(R), the
//! strong unstable leaf is p n-(R), and the center leaf is the orbit
//! itself.  Everything here is exact at the matrix level; measured
//! quantities exist to be compared against the closed forms.

use crate::error::{Error, Result};
use crate::fit::{linear_fit, power_law_fit};
use crate::model::bolza::{Bolza, ManifoldPoint};
use crate::model::group::{
    exp_generator, flow_matrix, n_minus, GroupElement, LOG_CAP,
};
use crate::model::sample::haar_orbit_sample;
use crate::rng::{derive_stream, Rng};

/// Which invariant leaf a coordinate lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    Stable,
    Unstable,
    Center,
}

/// A point on a leaf through `base`, at horocycle/flow parameter `param`
/// measured in frame length units.
#[derive(Clone, Debug)]
pub struct LeafCoordinate {
    pub base: ManifoldPoint,
    pub kind: LeafKind,
    pub param: f64,
}

/// Result of sliding a point along stable leaves onto the weak-unstable
/// transversal of a nearby base point.
#[derive(Clone, Debug)]
pub struct HolonomyResult {
    pub image: ManifoldPoint,
    /// Derivative of the unstable coordinate map, in arclength units.
    pub jacobian: f64,
    /// Center displacement the slide picks up, in time units.
    pub flow_offset: f64,
}

/// Rates and localization scales entering the anisotropic norms.
#[derive(Clone, Copy, Debug)]
pub struct NormConfig {
    /// Discount rate of the dynamical pseudo-distances; must sit below the
    /// contraction rate of the flow.
    pub lambda: f64,
    /// Leafwise Hölder exponent of the strong norm.
    pub beta: f64,
    /// Weak-norm exponent, strictly below beta.
    pub beta_prime: f64,
    /// Localization scale for leafwise seminorms.
    pub delta: f64,
    /// Truncation horizon of the pseudo-distance quadrature.
    pub truncation_t: f64,
    /// Step of that quadrature.
    pub quad_step: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            lambda: 0.5,
            beta: 0.25,
            beta_prime: 0.2,
            delta: 0.1,
            truncation_t: 40.0,
            quad_step: 0.01,
        }
    }
}

impl NormConfig {
    /// Internal ordering constraints.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::config(format!("lambda {} outside (0, 1)", self.lambda)));
        }
        if !(0.0 < self.beta_prime && self.beta_prime < self.beta) {
            return Err(Error::config(format!(
                "need 0 < betaPrime < beta, got {} and {}",
                self.beta_prime, self.beta
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 0.3) {
            return Err(Error::config(format!("delta {} outside (0, 0.3]", self.delta)));
        }
        if !(self.truncation_t > 1.0 && self.quad_step > 0.0 && self.quad_step < 1.0) {
            return Err(Error::config("degenerate quadrature horizon or step".to_string()));
        }
        Ok(())
    }

    /// Constraints tying the exponents to the measured pinching report.
    pub fn validate_against(&self, report: &PinchingReport) -> Result<()> {
        self.validate()?;
        if !(self.lambda < report.mu_hat) {
            return Err(Error::config(format!(
                "lambda {} must sit below the measured contraction rate {}",
                self.lambda, report.mu_hat
            )));
        }
        let tau = report.tau();
        if !(self.beta < tau * tau) {
            return Err(Error::config(format!(
                "beta {} must sit below tau^2 = {}",
                self.beta,
                tau * tau
            )));
        }
        Ok(())
    }
}

/// Measured contraction and regularity exponents of the invariant
/// structures.
#[derive(Clone, Copy, Debug)]
pub struct PinchingReport {
    /// Contraction rate of stable derivatives per unit time.
    pub mu_hat: f64,
    /// Prefactor of that contraction.
    pub a_hat: f64,
    /// Hölder exponent of the splitting in an ambient chart.
    pub tau_d: f64,
    /// Hölder exponent of leaf drift under holonomy.
    pub tau_h: f64,
    /// Hölder exponent of the holonomy Jacobian.
    pub tau_j: f64,
}

impl PinchingReport {
    /// The single pinching exponent used where one number is needed: the
    /// most pessimistic of the three regularity measurements, capped at 1.
    pub fn tau(&self) -> f64 {
        self.tau_d.min(self.tau_h).min(self.tau_j).min(1.0)
    }
}

/// Realize a leaf coordinate as a manifold point.
pub fn leaf_point(bolza: &Bolza, c: &LeafCoordinate) -> Result<ManifoldPoint> {
    let dir = match c.kind {
        LeafKind::Stable => crate::model::group::Direction::StablePlus,
        LeafKind::Unstable => crate::model::group::Direction::UnstableMinus,
        LeafKind::Center => crate::model::group::Direction::Flow,
    };
    let g = exp_generator(dir, c.param)?;
    bolza.translate_point(&c.base, &g)
}

/// Sign of the time direction in the pseudo-distance quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowSide {
    /// Integrate forward: finite exactly on stable pairs.
    Plus,
    /// Integrate backward: finite exactly on unstable pairs.
    Minus,
}

/// A pseudo-distance value; pairs on different leaves sit at infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DynDistance {
    Finite(f64),
    Infinite,
}

impl DynDistance {
    pub fn finite(&self) -> Option<f64> {
        match self {
            DynDistance::Finite(v) => Some(*v),
            DynDistance::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, DynDistance::Infinite)
    }
}

/// Integrand floor below which the analytic tail takes over.
const INTEGRAND_FLOOR: f64 = 1e-9;
/// An integrand still above this at the truncation horizon marks the pair
/// as lying on different leaves.
const NON_DECAY_THRESHOLD: f64 = 1e-6;

/// Dynamical pseudo-distance: the discounted accumulated distance of the
/// two forward (plus) or backward (minus) orbits.
///
/// The orbit distance is evaluated without re-reduction: the deck
/// candidates are frozen at t = 0 and conjugated by the diagonal flow,
/// which scales their off-diagonal entries exactly.  On-leaf pairs keep
/// their minimizing candidate for all time, and off-leaf pairs are
/// detected by the integrand failing to decay.
pub fn dynamical_distance(
    bolza: &Bolza,
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    side: FlowSide,
    cfg: &NormConfig,
) -> Result<DynDistance> {
    cfg.validate()?;
    if x.rep.approx_eq(&y.rep, 0.0) {
        return Ok(DynDistance::Finite(0.0));
    }
    // Frozen candidate relative positions h = (gamma y)^{-1} x.
    let y_inv = y.rep.inverse();
    let mut frozen: Vec<[f64; 4]> = bolza
        .candidate_inverses()
        .iter()
        .map(|cinv| y_inv.mul(cinv).mul(&x.rep).m)
        .collect();
    let sign = match side {
        FlowSide::Plus => 1.0,
        FlowSide::Minus => -1.0,
    };
    let mut orbit_distance = |t: f64| -> f64 {
        // Conjugation by a(sign t): off-diagonals scale by e^{-+ sign t}.
        let eplus = (-sign * t).exp();
        let eminus = (sign * t).exp();
        let egrow = eplus.max(eminus);
        let grow_idx = if sign > 0.0 { 2 } else { 1 };
        let mut best = f64::INFINITY;
        let mut i = 0;
        while i < frozen.len() {
            let m = frozen[i];
            // The growing off-diagonal alone already bounds the operator
            // distance from below, and it only grows: such a candidate is
            // dead for every later time and can be dropped for good.
            if m[grow_idx].abs() * egrow > LOG_CAP {
                frozen.swap_remove(i);
                continue;
            }
            i += 1;
            let h = GroupElement { m: [m[0], m[1] * eplus, m[2] * eminus, m[3]] };
            if h.opnorm_dist_identity() > LOG_CAP {
                continue;
            }
            if let Ok(v) = h.log() {
                best = best.min(v.norm());
            }
        }
        best
    };
    let mut t = 0.0;
    let mut prev = orbit_distance(0.0);
    if !prev.is_finite() {
        return Ok(DynDistance::Infinite);
    }
    let mut acc = 0.0;
    loop {
        let integrand_prev = (cfg.lambda * t).exp() * prev;
        if integrand_prev < INTEGRAND_FLOOR {
            // On-leaf orbit distances decay exactly like e^{-t} from here.
            acc += integrand_prev / (1.0 - cfg.lambda);
            return Ok(DynDistance::Finite(acc));
        }
        if t >= cfg.truncation_t {
            if integrand_prev > NON_DECAY_THRESHOLD {
                return Ok(DynDistance::Infinite);
            }
            acc += integrand_prev / (1.0 - cfg.lambda);
            return Ok(DynDistance::Finite(acc));
        }
        let t_next = (t + cfg.quad_step).min(cfg.truncation_t);
        let cur = orbit_distance(t_next);
        if !cur.is_finite() {
            return Ok(DynDistance::Infinite);
        }
        let integrand_cur = (cfg.lambda * t_next).exp() * cur;
        acc += 0.5 * (integrand_prev + integrand_cur) * (t_next - t);
        t = t_next;
        prev = cur;
    }
}

/// Factor h = n+(u) n-(rho) a(s); returns (u, rho, s).
pub fn factor_upper(h: &GroupElement) -> Result<(f64, f64, f64)> {
    let mut m = h.m;
    if m[3] < 0.0 {
        for e in &mut m {
            *e = -*e;
        }
    }
    if m[3] < 1e-9 {
        return Err(Error::singular(
            "lower-right entry vanishes; the point sits on the opposite Schubert cell",
        ));
    }
    let s = -2.0 * m[3].ln();
    let rho = m[2] * m[3];
    let u = m[1] / m[3];
    Ok((u, rho, s))
}

/// Factor h = n-(v) n+(u) a(t); returns (v, u, t).
pub fn factor_lower(h: &GroupElement) -> Result<(f64, f64, f64)> {
    let mut m = h.m;
    if m[0] < 0.0 {
        for e in &mut m {
            *e = -*e;
        }
    }
    if m[0] < 1e-9 {
        return Err(Error::singular(
            "upper-left entry vanishes; the point sits on the opposite Schubert cell",
        ));
    }
    let t = 2.0 * m[0].ln();
    let v = m[2] / m[0];
    let u = m[1] * m[0];
    Ok((v, u, t))
}

/// Relative position of p with respect to q in the quotient: the deck
/// candidate bringing q^{-1} gamma^{-1} p closest to the identity.
pub fn relative_position(
    bolza: &Bolza,
    p: &ManifoldPoint,
    q: &ManifoldPoint,
) -> Result<GroupElement> {
    let q_inv = q.rep.inverse();
    let mut best: Option<(f64, GroupElement)> = None;
    for cinv in bolza.candidate_inverses() {
        let h = q_inv.mul(cinv).mul(&p.rep);
        let d = h.opnorm_dist_identity();
        if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
            best = Some((d, h));
        }
    }
    let (d, h) = best.expect("candidate list is nonempty");
    if d > LOG_CAP {
        return Err(Error::domain(format!(
            "points are {d:.3} apart in operator norm; no local relative position"
        )));
    }
    Ok(h)
}

/// Largest leaf parameter the holonomy accepts.
pub const HOLONOMY_LOCALITY: f64 = 0.3;

/// Slide `from` (a point of the weak-unstable leaf of its base) along
/// stable leaves onto the weak-unstable leaf of `target_base`, which must
/// itself lie on the stable leaf of from.base.
///
/// With stable offset w and unstable coordinate rho the slide is the
/// triangular refactorization n-(rho) n+(q) = n+(w) n-(rho') a(s): the
/// image coordinate is rho/(1 - rho w), the coordinate derivative is
/// (1 - rho w)^{-2}, and the picked-up flow offset is 2 ln(1 - rho w).
pub fn stable_holonomy(
    bolza: &Bolza,
    from: &LeafCoordinate,
    target_base: &ManifoldPoint,
) -> Result<HolonomyResult> {
    if from.kind == LeafKind::Stable {
        return Err(Error::domain(
            "holonomy source must lie on the weak-unstable leaf of its base",
        ));
    }
    if from.param.abs() > HOLONOMY_LOCALITY {
        return Err(Error::domain(format!(
            "leaf parameter {} exceeds the locality bound {HOLONOMY_LOCALITY}",
            from.param
        )));
    }
    // Extract the stable offset of the target base.
    let h = relative_position(bolza, target_base, &from.base)?;
    let off_diag = (h.m[0] - 1.0).abs().max(h.m[2].abs()).max((h.m[3] - 1.0).abs());
    if off_diag > 1e-9 {
        return Err(Error::domain(format!(
            "target base is not on the stable leaf: residual {off_diag:.2e}"
        )));
    }
    let w = h.m[1];
    if w.abs() > HOLONOMY_LOCALITY {
        return Err(Error::domain(format!(
            "stable offset {w} exceeds the locality bound {HOLONOMY_LOCALITY}"
        )));
    }
    let (rho, center) = match from.kind {
        LeafKind::Unstable => (from.param, 0.0),
        LeafKind::Center => (0.0, from.param),
        LeafKind::Stable => unreachable!(),
    };
    let denom = 1.0 - rho * w;
    if denom.abs() < 1e-6 {
        return Err(Error::singular(format!(
            "holonomy denominator 1 - rho w = {denom:.2e} is numerically singular"
        )));
    }
    let image_coord = rho / denom;
    let jacobian = 1.0 / (denom * denom);
    let flow_offset = 2.0 * denom.ln();
    let slide = n_minus(image_coord).mul(&flow_matrix(flow_offset + center));
    let image = bolza.translate_point(target_base, &slide)?;
    Ok(HolonomyResult { image, jacobian, flow_offset })
}

/// Unstable-derivative growth measured through quotient distances: the
/// ratio d(T_t p, T_t q)/d(p, q) for q a small unstable translate.
pub fn measured_unstable_growth(
    bolza: &Bolza,
    p: &ManifoldPoint,
    t: f64,
    eps: f64,
) -> Result<f64> {
    let q = bolza.translate_point(p, &n_minus(eps))?;
    let d0 = bolza.quotient_distance(p, &q);
    let pt = bolza.flow_point(p, t)?;
    let qt = bolza.flow_point(&q, t)?;
    let dt = bolza.quotient_distance(&pt, &qt);
    if !(d0.is_finite() && dt.is_finite()) {
        return Err(Error::domain("growth measurement left the local regime"));
    }
    Ok(dt / d0)
}

/// Scales used for the regularity regressions; they span the three decades
/// the fit guard demands.
fn regression_scales() -> Vec<f64> {
    (0..10)
        .map(|i| 10f64.powf(-4.0 + 3.0 * i as f64 / 9.0))
        .collect()
}

/// Measure contraction and regularity exponents on Haar-random
/// configurations.
pub fn pinching_exponents(
    bolza: &Bolza,
    t_grid: &[f64],
    sample_count: usize,
    seed: u64,
    cfg: &NormConfig,
) -> Result<PinchingReport> {
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::config("time grid must be nonempty and positive".to_string()));
    }
    if sample_count < 10 {
        return Err(Error::InsufficientSamples(format!(
            "need at least 10 samples, got {sample_count}"
        )));
    }
    cfg.validate()?;
    let points = haar_orbit_sample(bolza, derive_stream(seed, 0x11EA), sample_count)?;

    // Contraction rate: stable translates, forward flow, log ratio vs t.
    let u0 = 0.01;
    let mut ratio_curve = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut acc = 0.0;
        for p in &points {
            let q = bolza.translate_point(p, &crate::model::group::n_plus(u0))?;
            let d0 = bolza.quotient_distance(p, &q);
            let pt = bolza.flow_point(p, t)?;
            let qt = bolza.flow_point(&q, t)?;
            let dt = bolza.quotient_distance(&pt, &qt);
            if !(d0.is_finite() && dt.is_finite() && dt > 0.0) {
                return Err(Error::domain(
                    "stable contraction measurement left the local regime",
                ));
            }
            acc += (dt / d0).ln();
        }
        ratio_curve.push((t, acc / points.len() as f64));
    }
    let contraction = linear_fit(&ratio_curve)?;
    let mu_hat = -contraction.slope;
    let a_hat = contraction.intercept.exp();

    // Leaf drift under holonomy: sup over the source leaf of the distance
    // to the target leaf, against the base separation.
    let scales = regression_scales();
    let per_scale = (sample_count / scales.len()).max(3);
    let mut rng = Rng::new(derive_stream(seed, 0x11EB));
    let mut drift_points = Vec::new();
    let mut jac_points = Vec::new();
    for (si, &w) in scales.iter().enumerate() {
        let mut drift_acc = 0.0;
        let mut jac_acc = 0.0;
        for k in 0..per_scale {
            let x = &points[(si * per_scale + k) % points.len()];
            let y = bolza.translate_point(x, &crate::model::group::n_plus(w))?;
            let mut sup = 0.0f64;
            for &rho in &[-cfg.delta, -0.5 * cfg.delta, 0.0, 0.5 * cfg.delta, cfg.delta] {
                let p = bolza.translate_point(x, &n_minus(rho))?;
                let d = nearest_on_unstable_leaf(bolza, &p, &y, rho, cfg.delta)?;
                sup = sup.max(d);
            }
            drift_acc += sup;
            let hol = stable_holonomy(
                bolza,
                &LeafCoordinate { base: x.clone(), kind: LeafKind::Unstable, param: cfg.delta },
                &y,
            )?;
            jac_acc += (1.0 - hol.jacobian).abs();
        }
        drift_points.push((w, drift_acc / per_scale as f64));
        jac_points.push((w, jac_acc / per_scale as f64));
    }
    let tau_h = power_law_fit(&drift_points, 3.0)?.slope;
    let tau_j = power_law_fit(&jac_points, 3.0)?.slope;

    // Splitting variation in the ambient matrix chart: angle between the
    // stable directions at nearby points, against their separation.  The
    // comparison uses unreduced translates so that both tangent vectors
    // live in the same sheet of the chart.
    let mut angle_points = Vec::new();
    for (si, &w) in scales.iter().enumerate() {
        let mut acc = 0.0;
        for k in 0..per_scale {
            let x = &points[(si * per_scale + k + 37) % points.len()];
            let dir = random_unit_algebra(&mut rng);
            let scaled = crate::model::group::AlgebraVector::new(
                dir.c_x * w,
                dir.c_plus * w,
                dir.c_minus * w,
            );
            let y_rep = x.rep.mul(&scaled.exp());
            acc += ambient_stable_angle(&x.rep, &y_rep);
        }
        angle_points.push((w, acc / per_scale as f64));
    }
    let tau_d = power_law_fit(&angle_points, 3.0)?.slope;

    Ok(PinchingReport { mu_hat, a_hat, tau_d, tau_h, tau_j })
}

/// Distance from p to the delta-window of the unstable leaf through y,
/// minimized by golden-section around the matched parameter.
fn nearest_on_unstable_leaf(
    bolza: &Bolza,
    p: &ManifoldPoint,
    y: &ManifoldPoint,
    rho_hint: f64,
    delta: f64,
) -> Result<f64> {
    let eval = |rho: f64| -> Result<f64> {
        let q = bolza.translate_point(y, &n_minus(rho))?;
        Ok(bolza.quotient_distance(p, &q))
    };
    let span = 0.2 * delta + 1e-3;
    let (mut lo, mut hi) = (rho_hint - span, rho_hint + span);
    let phi = 0.618_033_988_749_895;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    for _ in 0..40 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = eval(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = eval(x2)?;
        }
    }
    Ok(f1.min(f2))
}

pub(crate) fn random_unit_algebra(rng: &mut Rng) -> crate::model::group::AlgebraVector {
    loop {
        let v = crate::model::group::AlgebraVector::new(
            rng.range(-1.0, 1.0),
            rng.range(-1.0, 1.0),
            rng.range(-1.0, 1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return crate::model::group::AlgebraVector::new(
                v.c_x / n,
                v.c_plus / n,
                v.c_minus / n,
            );
        }
    }
}

/// Angle between the ambient-chart stable directions at two group points.
/// The stable direction at g is the matrix g U+, whose only nonzero column
/// is the first column of g.
fn ambient_stable_angle(g: &GroupElement, h: &GroupElement) -> f64 {
    let a = [g.m[0], g.m[2]];
    let b = [h.m[0], h.m[2]];
    let dot = a[0] * b[0] + a[1] * b[1];
    let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}
