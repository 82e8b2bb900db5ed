//! Leafwise averaging operators and the Laplace side of the flow: the
//! transfer resolvent, its powers and its adjoint, Laplace transforms of
//! correlation traces, and an inverse-transform consistency check.
//!
//! Quadrature strategy: every oscillatory weight e^{-ibt} goes through the
//! Filon-Simpson table from [`crate::quad`], so grid steps are dictated by
//! the smooth factor e^{-at} f(T_{-t} p) and horizons by the discarded tail
//! mass, never by the frequency b.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::bolza::{Bolza, ManifoldPoint};
use crate::model::group::{n_minus, n_plus};
use crate::observables::{flow_by, CorrelationSeries};
use crate::quad::{filon, simpson, FilonTable};

/// Largest admissible averaging radius, matching the bump-support cap:
/// windows this size stay inside one chart of the leaf parametrization.
pub const MAX_AVERAGE_RADIUS: f64 = 0.7;

/// Radii and node budget for the leafwise averaging operators.
#[derive(Clone, Copy, Debug)]
pub struct AverageConfig {
    /// Stable window radius.
    pub delta_s: f64,
    /// Unstable window radius.
    pub eps_u: f64,
    /// Requested quadrature nodes per window (rounded up to odd).
    pub quad_points: usize,
}

impl Default for AverageConfig {
    fn default() -> Self {
        AverageConfig { delta_s: 0.1, eps_u: 0.35, quad_points: 33 }
    }
}

impl AverageConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("delta_s", self.delta_s), ("eps_u", self.eps_u)] {
            if !r.is_finite() || !(r > 0.0 && r <= MAX_AVERAGE_RADIUS) {
                return Err(Error::config(format!(
                    "averaging radius {name} = {r} outside (0, {MAX_AVERAGE_RADIUS}]"
                )));
            }
        }
        if self.quad_points < 16 || self.quad_points > 100_000 {
            return Err(Error::config(format!(
                "quad_points = {} outside [16, 100000]",
                self.quad_points
            )));
        }
        Ok(())
    }

    /// Simpson needs an odd node count; round the request up.
    fn nodes(&self) -> usize {
        self.quad_points + 1 - self.quad_points % 2
    }
}

/// Coordinate derivative of the stable holonomy between unstable windows
/// at stable offset w, evaluated at unstable coordinate rho.
fn holonomy_derivative(rho: f64, w: f64) -> f64 {
    let denom = 1.0 - rho * w;
    1.0 / (denom * denom)
}

/// Raw dual-kernel density at unstable offset v: the arclength distortion
/// the target window picks up through the stable holonomy back to the
/// source leaf.  The dual window lives on the source leaf itself, at zero
/// stable offset, where the closed-form derivative (1 - v w)^{-2} is
/// identically one; the normalized kernel is then the flat window.  The
/// density is still computed and sign-checked so the dual average stays
/// honest if the underlying holonomy is ever replaced.
fn dual_kernel_density(v: f64) -> Result<f64> {
    let density = holonomy_derivative(v, 0.0);
    if !density.is_finite() || density <= 0.0 {
        return Err(Error::internal(format!(
            "dual kernel density {density} at unstable offset {v} is not positive"
        )));
    }
    Ok(density)
}

/// Window quadrature shared by both averages: kernel-weighted Simpson
/// along one leaf direction, self-normalized by the quadrature weight of
/// the constant one so that constants are reproduced exactly.
fn leaf_window_average<F, K>(
    bolza: &Bolza,
    f: &F,
    p: &ManifoldPoint,
    radius: f64,
    nodes: usize,
    stable: bool,
    kernel: K,
) -> Result<f64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
    K: Fn(f64) -> Result<f64>,
{
    let h = 2.0 * radius / (nodes - 1) as f64;
    let mut weighted = Vec::with_capacity(nodes);
    let mut weights = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let u = -radius + j as f64 * h;
        let w = kernel(u)?;
        let shift = if stable { n_plus(u) } else { n_minus(u) };
        let q = bolza.translate_point(p, &shift)?;
        weighted.push(w * f(bolza, &q)?);
        weights.push(w);
    }
    Ok(simpson(&weighted, h) / simpson(&weights, h))
}

/// Arclength average of f over the stable window of radius delta_s
/// through p.  Smooths along the contracting direction only: the output
/// is as bounded as f, close to f when f is leafwise Holder, and
/// Lipschitz across the manifold at scale 1/delta_s regardless of how
/// rough f is transversally.
pub fn stable_average<F>(
    bolza: &Bolza,
    f: &F,
    p: &ManifoldPoint,
    cfg: &AverageConfig,
) -> Result<f64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
{
    cfg.validate()?;
    leaf_window_average(bolza, f, p, cfg.delta_s, cfg.nodes(), true, |_| Ok(1.0))
}

/// Dual unstable average: integrates phi against the transition kernel of
/// the primal window average along the unstable leaf through p, i.e. the
/// kernel whose pairing satisfies <A f, phi> = <f, A* phi> in the volume.
/// Right translations preserve unstable arclength here, so the kernel
/// collapses to the flat window and the operator is self-adjoint.
pub fn unstable_average_dual<F>(
    bolza: &Bolza,
    phi: &F,
    p: &ManifoldPoint,
    cfg: &AverageConfig,
) -> Result<f64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
{
    cfg.validate()?;
    leaf_window_average(bolza, phi, p, cfg.eps_u, cfg.nodes(), false, dual_kernel_density)
}

/// The discarded time tail e^{-aT} may not exceed this at the validated
/// truncation horizon.
pub const RESOLVENT_TAIL: f64 = 1e-8;

/// Relative gamma-weight mass allowed beyond the actual quadrature grid;
/// evaluators extend the validated horizon until the remainder is below
/// this, so truncation never dominates the pinned tolerances.
const POWER_TAIL: f64 = 1e-11;

/// Largest supported resolvent power.
pub const MAX_RESOLVENT_POWER: u32 = 64;

/// A point z = a + ib in the right half-plane together with the step and
/// truncation horizon of the time quadrature used to evaluate R(z).
#[derive(Clone, Copy, Debug)]
pub struct ResolventQuery {
    pub a: f64,
    pub b: f64,
    pub truncation_t: f64,
    pub step: f64,
}

impl ResolventQuery {
    /// Pick a step and horizon for z = a + ib: the step resolves the decay
    /// profile (and, defensively, a sixteenth of the oscillation period),
    /// the horizon pushes the discarded tail below [`RESOLVENT_TAIL`].
    pub fn new(a: f64, b: f64) -> Result<ResolventQuery> {
        if !a.is_finite() || !b.is_finite() || a <= 0.0 {
            return Err(Error::config(format!(
                "resolvent point ({a}, {b}) needs a finite positive real part"
            )));
        }
        let step = (0.01f64).min(0.01 / a).min(PI / (16.0 * b.abs().max(1.0)));
        let truncation_t = -RESOLVENT_TAIL.ln() / a;
        let q = ResolventQuery { a, b, truncation_t, step };
        q.validate()?;
        Ok(q)
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.a, self.b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("truncation_t", self.truncation_t),
            ("step", self.step),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!(
                    "resolvent query field {name} = {v} is not finite"
                )));
            }
        }
        if self.a <= 0.0 {
            return Err(Error::config(format!(
                "resolvent abscissa a = {} must be positive",
                self.a
            )));
        }
        let cap = (0.01f64).min(PI / (8.0 * self.b.abs().max(1.0)));
        if self.step <= 0.0 || self.step > cap * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "step {} outside (0, {cap:.6}]: the grid must resolve both the decay and the oscillation",
                self.step
            )));
        }
        if self.a * self.truncation_t < -RESOLVENT_TAIL.ln() - 1e-9 {
            return Err(Error::config(format!(
                "horizon {} leaves a tail e^(-aT) = {:.2e} above {RESOLVENT_TAIL:.0e}",
                self.truncation_t,
                (-self.a * self.truncation_t).exp()
            )));
        }
        Ok(())
    }
}

/// Upper tail Q(n, x) = e^{-x} sum_{k<n} x^k / k! of the unit-rate gamma
/// weight of integer order n.
fn gamma_upper_tail(n: u32, x: f64) -> f64 {
    let mut term = (-x).exp();
    let mut acc = term;
    for k in 1..n {
        term *= x / k as f64;
        acc += term;
    }
    acc
}

/// Extend the validated horizon (in units of a t) until the discarded
/// gamma-weight mass is below [`POWER_TAIL`] relative to the full
/// integral a^{-n}.
pub(crate) fn weight_horizon(n: u32, validated: f64) -> f64 {
    let mut x = validated.max(n as f64);
    while gamma_upper_tail(n, x) > POWER_TAIL {
        x += 0.25;
    }
    x
}

/// Odd node count of a uniform grid covering [0, t_end] by whole Simpson
/// cells.
pub(crate) fn grid_nodes(t_end: f64, step: f64) -> usize {
    let intervals = ((t_end / step).ceil() as usize).max(2);
    intervals + intervals % 2 + 1
}

/// f sampled along the flow orbit: values[j] = f(T_{sign j step} p).
fn orbit_samples<F>(
    bolza: &Bolza,
    f: &F,
    p: &ManifoldPoint,
    nodes: usize,
    step: f64,
    sign: f64,
) -> Result<Vec<f64>>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
{
    let mut values = Vec::with_capacity(nodes);
    let mut cur = p.clone();
    for j in 0..nodes {
        if j > 0 {
            cur = flow_by(bolza, &cur, sign * step)?;
        }
        values.push(f(bolza, &cur)?);
    }
    Ok(values)
}

/// Gamma-weighted orbit transform shared by the resolvent, its powers and
/// its adjoint: Filon integral of t^{n-1}/(n-1)! e^{-at} f(T_{sign t} p)
/// against e^{-ibt}.  Weights are formed in log space so high powers
/// neither overflow t^{n-1} nor underflow 1/(n-1)!.
fn gamma_orbit_transform<F>(
    bolza: &Bolza,
    q: &ResolventQuery,
    n: u32,
    f: &F,
    p: &ManifoldPoint,
    sign: f64,
) -> Result<Complex64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
{
    q.validate()?;
    if n == 0 {
        return Err(Error::domain("resolvent power must be at least 1"));
    }
    if n > MAX_RESOLVENT_POWER {
        return Err(Error::domain(format!(
            "resolvent power {n} exceeds the supported maximum {MAX_RESOLVENT_POWER}"
        )));
    }
    let t_end = weight_horizon(n, q.a * q.truncation_t) / q.a;
    let nodes = grid_nodes(t_end, q.step);
    let ln_fact: f64 = (1..n).map(|k| (k as f64).ln()).sum();
    let raw = orbit_samples(bolza, f, p, nodes, q.step, sign)?;
    let g: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let t = j as f64 * q.step;
            let w = if n == 1 {
                (-q.a * t).exp()
            } else if t == 0.0 {
                0.0
            } else {
                ((n - 1) as f64 * t.ln() - q.a * t - ln_fact).exp()
            };
            w * v
        })
        .collect();
    Ok(filon(0.0, q.step, &g, q.b))
}

/// Resolvent of the transfer semigroup at z = a + ib:
/// R(z) f (p) = int_0^inf e^{-zt} f(T_{-t} p) dt, truncated per the query
/// and extended until the discarded tail is negligible.
pub fn resolvent_apply<F>(
    bolza: &Bolza,
    q: &ResolventQuery,
    f: &F,
    p: &ManifoldPoint,
) -> Result<Complex64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
{
    gamma_orbit_transform(bolza, q, 1, f, p, -1.0)
}

/// n-th resolvent power evaluated through the one-dimensional gamma
/// weight: R(z)^n f (p) = int_0^inf t^{n-1} e^{-zt}/(n-1)! f(T_{-t} p) dt.
pub fn resolvent_power_apply<F>(
    bolza: &Bolza,
    q: &ResolventQuery,
    n: u32,
    f: &F,
    p: &ManifoldPoint,
) -> Result<Complex64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
{
    gamma_orbit_transform(bolza, q, n, f, p, -1.0)
}

/// Adjoint resolvent in the volume pairing: the flow runs forward,
/// R(z)* phi (p) = int_0^inf e^{-zt} phi(T_t p) dt, so that
/// <R(z) f, phi> = <f, R(z)* phi> by invariance of the volume.
pub fn resolvent_adjoint_apply<F>(
    bolza: &Bolza,
    q: &ResolventQuery,
    phi: &F,
    p: &ManifoldPoint,
) -> Result<Complex64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
{
    gamma_orbit_transform(bolza, q, 1, phi, p, 1.0)
}

/// n-th adjoint resolvent power: the forward-flow counterpart of
/// [`resolvent_power_apply`], R(z)*^n phi (p) = int_0^inf t^{n-1}
/// e^{-zt}/(n-1)! phi(T_t p) dt.
pub fn resolvent_adjoint_power_apply<F>(
    bolza: &Bolza,
    q: &ResolventQuery,
    n: u32,
    phi: &F,
    p: &ManifoldPoint,
) -> Result<Complex64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64>,
{
    gamma_orbit_transform(bolza, q, n, phi, p, 1.0)
}

/// Laplace transform of a correlation trace along the vertical line
/// Re z = a_line, evaluated at every frequency in b_grid through one
/// shared Filon table.  The trace must sit on a uniform grid starting at
/// zero with an odd node count, and must reach far enough that the
/// discarded tail e^{-a T} is negligible.
pub fn laplace_correlation_scan(
    series: &CorrelationSeries,
    a_line: f64,
    b_grid: &[f64],
) -> Result<Vec<Complex64>> {
    if !a_line.is_finite() || a_line <= 0.0 {
        return Err(Error::config(format!(
            "transform line a = {a_line} must be positive"
        )));
    }
    let t = &series.t_grid;
    if t.len() < 3 || t.len() % 2 == 0 {
        return Err(Error::config(format!(
            "trace has {} nodes; the quadrature needs an odd count >= 3",
            t.len()
        )));
    }
    if series.values.len() != t.len() {
        return Err(Error::config("trace values and grid lengths differ"));
    }
    if t[0].abs() > 1e-12 {
        return Err(Error::config(format!(
            "trace grid starts at {} instead of 0",
            t[0]
        )));
    }
    let h = t[1] - t[0];
    if !(h > 0.0) {
        return Err(Error::config("trace grid must be strictly increasing"));
    }
    let horizon = *t.last().expect("nonempty grid");
    for (j, &tj) in t.iter().enumerate() {
        if (tj - j as f64 * h).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::config(format!(
                "trace grid is not uniform at node {j}: {tj} vs {}",
                j as f64 * h
            )));
        }
    }
    if a_line * horizon < 5.0 {
        return Err(Error::config(format!(
            "a T = {:.3} < 5: the discarded tail would dominate the transform",
            a_line * horizon
        )));
    }
    for &v in &series.values {
        if !v.is_finite() {
            return Err(Error::config("trace contains a non-finite value"));
        }
    }
    let g: Vec<f64> = series
        .values
        .iter()
        .zip(t.iter())
        .map(|(&c, &tj)| (-a_line * tj).exp() * c)
        .collect();
    let table = FilonTable::new(0.0, h, &g);
    Ok(b_grid.iter().map(|&b| table.transform(b)).collect())
}

/// Outcome of reconstructing f(T_{-t} p) from resolvent boundary values.
#[derive(Clone, Debug)]
pub struct InverseLaplaceReport {
    /// Reconstruction at the full frequency cutoff.
    pub value: f64,
    /// Directly evolved reference f(T_{-t} p).
    pub direct: f64,
    /// (cutoff, |reconstruction - direct|) at each doubling up to b_max.
    pub residuals: Vec<(f64, f64)>,
}

/// Inverts the Laplace transform along Re z = a and compares with direct
/// evolution: f(T_{-t} p) = (1/2 pi) int e^{(a+ib)t} R(a+ib) f (p) db.
/// The 1/z pole of the resolvent is subtracted and re-added in closed
/// form (its inverse transform is the constant f(p) for t > 0), which
/// makes the remaining integrand decay quadratically in b; the truncated
/// integral is evaluated at b_max/8, /4, /2 and b_max so convergence in
/// the cutoff is visible.  Requires a real-valued f; conjugate symmetry
/// then folds the integral onto b >= 0.
pub fn inverse_laplace_check<F>(
    bolza: &Bolza,
    a: f64,
    b_max: f64,
    f: &F,
    p: &ManifoldPoint,
    t: f64,
) -> Result<InverseLaplaceReport>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64> + Sync,
{
    if !a.is_finite() || a <= 0.0 {
        return Err(Error::config(format!("line abscissa a = {a} must be positive")));
    }
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::config(format!(
            "reconstruction time t = {t} must be positive"
        )));
    }
    if a * t > 20.0 {
        return Err(Error::config(format!(
            "a t = {:.2} amplifies boundary noise by e^(at) beyond reason",
            a * t
        )));
    }
    if !b_max.is_finite() || b_max < 8.0 {
        return Err(Error::config(format!(
            "frequency cutoff {b_max} must be at least 8 so the doublings are meaningful"
        )));
    }

    let step = (0.01f64).min(0.01 / a);
    let t_end = weight_horizon(1, -RESOLVENT_TAIL.ln()) / a;
    let nodes = grid_nodes(t_end, step);
    let raw = orbit_samples(bolza, f, p, nodes, step, -1.0)?;
    let f0 = raw[0];
    let g: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(j, &v)| (-a * j as f64 * step).exp() * v)
        .collect();
    let table = FilonTable::new(0.0, step, &g);

    // The subtracted boundary values still oscillate like e^{-ib t'} for
    // t' up to the time horizon; the frequency grid must resolve the
    // combined phase over each quadratic cell.
    let horizon = (nodes - 1) as f64 * step;
    let hb_target = 0.3 / (t + horizon);
    let n_b = ((b_max / hb_target / 8.0).ceil() as usize).max(2) * 8;
    let hb = b_max / n_b as f64;
    let boundary: Vec<Complex64> = (0..n_b + 1)
        .into_par_iter()
        .map(|j| {
            let b = j as f64 * hb;
            table.transform(b) - f0 / Complex64::new(a, b)
        })
        .collect();

    let direct = f(bolza, &flow_by(bolza, p, -t)?)?;
    let amp = (a * t).exp() / PI;
    let mut residuals = Vec::with_capacity(4);
    let mut value = f0;
    for k in (0..4usize).rev() {
        let nk = n_b >> k;
        let cutoff = nk as f64 * hb;
        // int_0^cutoff G(b) e^{+ibt} db = conj Filon of conj G at phase t.
        let re: Vec<f64> = boundary[..=nk].iter().map(|z| z.re).collect();
        let im_neg: Vec<f64> = boundary[..=nk].iter().map(|z| -z.im).collect();
        let folded = FilonTable::new(0.0, hb, &re).transform(t)
            + Complex64::new(0.0, 1.0) * FilonTable::new(0.0, hb, &im_neg).transform(t);
        let recon = f0 + amp * folded.re;
        residuals.push((cutoff, (recon - direct).abs()));
        value = recon;
    }
    let first = residuals[0].1;
    let last = residuals[residuals.len() - 1].1;
    if last > first.max(1e-6 * (1.0 + direct.abs())) {
        return Err(Error::FitQuality {
            reason: format!(
                "inverse transform residual grew from {first:.3e} to {last:.3e} as the cutoff doubled"
            ),
            partial: residuals,
        });
    }
    Ok(InverseLaplaceReport { value, direct, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{power_law_fit, shard_stats};
    use crate::leaves::{
        dynamical_distance, random_unit_algebra, DynDistance, FlowSide, NormConfig,
    };
    use crate::model::group::AlgebraVector;
    use crate::model::sample::haar_orbit_sample;
    use crate::observables::{holder_seminorm, make_bump, make_dictionary, HolderKind};
    use crate::quad::simpson_complex;
    use crate::rng::{derive_stream, Rng};

    fn shard_means(values: &[f64], shards: usize) -> Vec<f64> {
        let chunk = values.len() / shards;
        values
            .chunks(chunk)
            .take(shards)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    #[test]
    fn average_config_validation_rejects_bad_windows() {
        let bad = [
            AverageConfig { delta_s: 0.0, ..AverageConfig::default() },
            AverageConfig { delta_s: 0.9, ..AverageConfig::default() },
            AverageConfig { eps_u: -0.1, ..AverageConfig::default() },
            AverageConfig { eps_u: f64::NAN, ..AverageConfig::default() },
            AverageConfig { quad_points: 8, ..AverageConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        assert!(AverageConfig::default().validate().is_ok());
        assert_eq!(AverageConfig { quad_points: 16, ..Default::default() }.nodes(), 17);
        assert_eq!(AverageConfig { quad_points: 33, ..Default::default() }.nodes(), 33);
    }

    #[test]
    fn resolvent_query_validation_enforces_step_and_horizon() {
        assert!(matches!(ResolventQuery::new(0.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(ResolventQuery::new(-2.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(ResolventQuery::new(f64::NAN, 1.0), Err(Error::Config(_))));

        let q = ResolventQuery::new(2.0, 30.0).unwrap();
        assert!(q.step <= PI / (8.0 * 30.0));
        assert!((-q.a * q.truncation_t).exp() <= RESOLVENT_TAIL * (1.0 + 1e-12));

        let coarse = ResolventQuery { a: 1.0, b: 40.0, truncation_t: 20.0, step: 0.01 };
        assert!(matches!(coarse.validate(), Err(Error::Config(_))));
        let short = ResolventQuery { a: 1.0, b: 0.0, truncation_t: 10.0, step: 0.01 };
        assert!(matches!(short.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn constant_functions_average_to_one_exactly() {
        let bolza = Bolza::standard();
        let cfg = AverageConfig::default();
        let one = |_: &Bolza, _: &ManifoldPoint| Ok(1.0);
        let points = haar_orbit_sample(&bolza, 0xA7E1, 20).unwrap();
        for p in &points {
            // Self-normalization makes both windows reproduce constants
            // bit for bit, not just to rounding.
            assert_eq!(stable_average(&bolza, &one, p, &cfg).unwrap(), 1.0);
            assert_eq!(unstable_average_dual(&bolza, &one, p, &cfg).unwrap(), 1.0);
        }
    }

    #[test]
    fn stable_average_never_exceeds_the_sup() {
        let bolza = Bolza::standard();
        let cfg = AverageConfig::default();
        let f = make_bump(&bolza, &bolza.basepoint(), 0.6, 2.3).unwrap();
        let ev = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
        let sup = f.sup_bound();
        let points = haar_orbit_sample(&bolza, 0xA7E2, 1000).unwrap();
        let worst = points
            .par_iter()
            .map(|p| stable_average(&bolza, &ev, p, &cfg).map(f64::abs))
            .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))
            .unwrap();
        assert!(worst <= sup + 1e-12, "average {worst} above sup {sup}");
    }

    /// The three trades the stable window makes: it never grows the sup,
    /// it stays within 10 delta^beta of the input in the leafwise Holder
    /// scale, and its ambient Lipschitz constant costs only 10/delta.
    #[test]
    fn stable_window_trades_regularity_for_sup_control() {
        let bolza = Bolza::standard();
        let ncfg = NormConfig::default();
        let dict = make_dictionary(&bolza, ncfg.beta, &ncfg, 41).unwrap();
        let subset = &dict[..6];
        let dirs = [
            AlgebraVector::new(1.0, 0.0, 0.0),
            AlgebraVector::new(0.0, 1.0, 0.0),
            AlgebraVector::new(0.0, 0.0, 1.0),
        ];
        let fd = 1e-3;
        for (fi, f) in subset.iter().enumerate() {
            let ev = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
            let sup = f.sup_bound();
            let (center, radius, _) = f.descriptors()[0].clone();
            let seminorm = holder_seminorm(
                &bolza,
                &ev,
                HolderKind::Stable,
                ncfg.beta,
                &ncfg,
                240,
                0x5AB0 + fi as u64,
                std::slice::from_ref(&center),
            )
            .unwrap();
            // Probe points: global samples plus points inside the support,
            // where the averaging error is actually visible.
            let mut points = haar_orbit_sample(&bolza, 0x5AB1 + fi as u64, 40).unwrap();
            let mut rng = Rng::new(derive_stream(0x5AB2, fi as u64));
            for _ in 0..40 {
                let dir = random_unit_algebra(&mut rng);
                let r = rng.range(0.0, radius);
                let step =
                    AlgebraVector::new(dir.c_x * r, dir.c_plus * r, dir.c_minus * r).exp();
                points.push(bolza.translate_point(&center, &step).unwrap());
            }
            for &delta in &[0.05, 0.1, 0.2] {
                let cfg = AverageConfig { delta_s: delta, ..Default::default() };
                let results: Vec<(f64, f64)> = points
                    .par_iter()
                    .map(|p| {
                        let a = stable_average(&bolza, &ev, p, &cfg)?;
                        Ok((a.abs(), (a - f.evaluate(&bolza, p)).abs()))
                    })
                    .collect::<Result<_>>()
                    .unwrap();
                let sup_a = results.iter().map(|r| r.0).fold(0.0, f64::max);
                let dev = results.iter().map(|r| r.1).fold(0.0, f64::max);
                assert!(sup_a <= sup + 1e-12, "bump {fi}: |A f| = {sup_a} > {sup}");
                let allowance = 10.0 * delta.powf(ncfg.beta) * seminorm;
                assert!(
                    dev <= allowance + 1e-12,
                    "bump {fi}, delta {delta}: |A f - f| = {dev:.4} above 10 d^b H = {allowance:.4}"
                );
                let lip_bound = 10.0 / delta * sup;
                let lip = points[..25]
                    .par_iter()
                    .map(|p| -> Result<f64> {
                        let base = stable_average(&bolza, &ev, p, &cfg)?;
                        let mut worst: f64 = 0.0;
                        for dir in &dirs {
                            let step = AlgebraVector::new(
                                dir.c_x * fd,
                                dir.c_plus * fd,
                                dir.c_minus * fd,
                            )
                            .exp();
                            let q = bolza.translate_point(p, &step)?;
                            let shifted = stable_average(&bolza, &ev, &q, &cfg)?;
                            worst = worst.max((shifted - base).abs() / fd);
                        }
                        Ok(worst)
                    })
                    .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))
                    .unwrap();
                assert!(
                    lip <= lip_bound,
                    "bump {fi}, delta {delta}: Lipschitz {lip:.2} above {lip_bound:.2}"
                );
            }
        }
    }

    #[test]
    fn unstable_dual_window_is_self_adjoint_in_the_volume_pairing() {
        let bolza = Bolza::standard();
        let cfg = AverageConfig { eps_u: 0.3, ..Default::default() };
        let f = make_bump(&bolza, &bolza.basepoint(), 0.55, 1.0).unwrap();
        let g_center = flow_by(&bolza, &bolza.basepoint(), 0.9).unwrap();
        let g = make_bump(&bolza, &g_center, 0.6, 1.4).unwrap();
        let ef = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
        let eg = |b: &Bolza, p: &ManifoldPoint| Ok(g.evaluate(b, p));
        let points = haar_orbit_sample(&bolza, 0x0D0A, 3000).unwrap();
        let diffs: Vec<f64> = points
            .par_iter()
            .map(|p| {
                let lhs = unstable_average_dual(&bolza, &ef, p, &cfg)? * g.evaluate(&bolza, p);
                let rhs = f.evaluate(&bolza, p) * unstable_average_dual(&bolza, &eg, p, &cfg)?;
                Ok(lhs - rhs)
            })
            .collect::<Result<_>>()
            .unwrap();
        let (mean, se) = shard_stats(&shard_means(&diffs, 50));
        assert!(
            mean.abs() <= 3.0 * se + 1e-9,
            "pairing asymmetry {mean:.3e} over stderr {se:.3e}"
        );
    }

    #[test]
    fn dual_kernel_is_positive_with_tame_holder_constant() {
        let tau = 0.5;
        let mut rng = Rng::new(0x0D0B);
        let mut sup: f64 = 0.0;
        let mut holder: f64 = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..200 {
            let v = rng.range(-0.35, 0.35);
            let z = dual_kernel_density(v).unwrap();
            assert!(z > 0.0);
            sup = sup.max(z);
            if let Some((v0, z0)) = prev {
                if (v - v0).abs() > 1e-6 {
                    holder = holder.max((z - z0).abs() / (v - v0).abs().powf(tau));
                }
            }
            prev = Some((v, z));
        }
        assert!(
            holder <= 10.0 * sup,
            "kernel Holder constant {holder:.3} above 10 sup = {:.3}",
            10.0 * sup
        );
    }

    #[test]
    fn resolvent_of_one_sits_on_the_analytic_pole() {
        let bolza = Bolza::standard();
        let one = |_: &Bolza, _: &ManifoldPoint| Ok(1.0);
        let p = bolza.basepoint();
        for (a, b) in [(2.0, 0.0), (0.5, 0.0), (1.0, 5.0)] {
            let q = ResolventQuery::new(a, b).unwrap();
            let got = resolvent_apply(&bolza, &q, &one, &p).unwrap();
            let expected = Complex64::new(1.0, 0.0) / Complex64::new(a, b);
            assert!(
                (got - expected).norm() <= 1e-8,
                "R(({a}, {b})) 1 = {got} vs {expected}"
            );
        }
        // The headline value: a pole at 2 gives exactly one half.
        let q = ResolventQuery::new(2.0, 0.0).unwrap();
        let got = resolvent_apply(&bolza, &q, &one, &p).unwrap();
        assert!((got.re - 0.5).abs() <= 1e-8 && got.im.abs() <= 1e-12);
    }

    #[test]
    fn resolvent_powers_match_analytic_poles() {
        let bolza = Bolza::standard();
        let one = |_: &Bolza, _: &ManifoldPoint| Ok(1.0);
        let p = bolza.basepoint();
        let cases: Vec<(u32, f64, f64)> = (1..=5u32)
            .flat_map(|n| {
                [0.5, 1.0, 2.0]
                    .into_iter()
                    .flat_map(move |a| [0.0, 3.7, 50.0].into_iter().map(move |b| (n, a, b)))
            })
            .collect();
        let worst = cases
            .par_iter()
            .map(|&(n, a, b)| {
                let q = ResolventQuery::new(a, b).unwrap();
                let got = resolvent_power_apply(&bolza, &q, n, &one, &p).unwrap();
                let expected = Complex64::new(1.0, 0.0) / Complex64::new(a, b).powi(n as i32);
                ((got - expected).norm(), (n, a, b))
            })
            .reduce(|| (0.0, (0, 0.0, 0.0)), |x, y| if x.0 >= y.0 { x } else { y });
        assert!(
            worst.0 <= 1e-8,
            "worst pole deviation {:.3e} at (n, a, b) = {:?}",
            worst.0,
            worst.1
        );
    }

    #[test]
    fn power_weights_are_stable_from_one_to_sixty_four() {
        let bolza = Bolza::standard();
        let p = flow_by(&bolza, &bolza.basepoint(), 0.4).unwrap();
        let f = make_bump(&bolza, &bolza.basepoint(), 0.6, 1.0).unwrap();
        let ev = |b: &Bolza, q: &ManifoldPoint| Ok(f.evaluate(b, q));
        let q = ResolventQuery::new(1.0, 2.0).unwrap();
        let single = resolvent_apply(&bolza, &q, &ev, &p).unwrap();
        let power1 = resolvent_power_apply(&bolza, &q, 1, &ev, &p).unwrap();
        assert!((single - power1).norm() <= 1e-10);

        let one = |_: &Bolza, _: &ManifoldPoint| Ok(1.0);
        let q3 = ResolventQuery::new(2.0, 0.0).unwrap();
        let got = resolvent_power_apply(&bolza, &q3, 3, &one, &p).unwrap();
        assert!((got.re - 0.125).abs() <= 1e-8 && got.im.abs() <= 1e-12, "{got}");

        let q64 = ResolventQuery::new(1.0, 0.0).unwrap();
        let high = resolvent_power_apply(&bolza, &q64, 64, &one, &p).unwrap();
        assert!((high.re - 1.0).abs() <= 1e-6, "64th power of the unit pole: {high}");

        assert!(matches!(
            resolvent_power_apply(&bolza, &q64, 0, &one, &p),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            resolvent_power_apply(&bolza, &q64, 65, &one, &p),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn resolvent_identity_couples_two_poles() {
        let bolza = Bolza::standard();
        let f = make_bump(&bolza, &bolza.basepoint(), 0.6, 1.0).unwrap();
        let ev = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
        let p = flow_by(&bolza, &bolza.basepoint(), 0.37).unwrap();
        let z1 = Complex64::new(0.8, 0.3);
        let z2 = Complex64::new(1.2, -0.4);
        let q1 = ResolventQuery::new(z1.re, z1.im).unwrap();
        let q2 = ResolventQuery::new(z2.re, z2.im).unwrap();
        let r1 = resolvent_apply(&bolza, &q1, &ev, &p).unwrap();
        let r2 = resolvent_apply(&bolza, &q2, &ev, &p).unwrap();

        // Nested composition on one shared orbit: the inner quadrature at
        // offset k reads the same samples shifted by k nodes.
        let h = 0.01;
        let n_out = grid_nodes(weight_horizon(1, z1.re * q1.truncation_t) / z1.re, h) - 1;
        let raw = orbit_samples(&bolza, &ev, &p, 2 * n_out + 1, h, -1.0).unwrap();
        let nested = |z_out: Complex64, z_in: Complex64, n_in: usize| -> Complex64 {
            let win: Vec<Complex64> = (0..=n_in)
                .map(|j| {
                    let c = if j == 0 || j == n_in {
                        1.0
                    } else if j % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    (-z_in * (j as f64 * h)).exp() * (c * h / 3.0)
                })
                .collect();
            let outer: Vec<Complex64> = (0..=n_out)
                .map(|k| {
                    let inner: Complex64 =
                        win.iter().enumerate().map(|(j, w)| w * raw[k + j]).sum();
                    (-z_out * (k as f64 * h)).exp() * inner
                })
                .collect();
            simpson_complex(&outer, h)
        };

        let n_in = grid_nodes(weight_horizon(1, z2.re * q2.truncation_t) / z2.re, h) - 1;
        let composed = nested(z1, z2, n_in);
        let lhs = r1 - r2;
        let rhs = (z2 - z1) * composed;
        assert!(
            (lhs - rhs).norm() <= 1e-5,
            "identity residual {:.3e}",
            (lhs - rhs).norm()
        );

        let second = resolvent_power_apply(&bolza, &q1, 2, &ev, &p).unwrap();
        let composed_same = nested(z1, z1, n_out);
        assert!(
            (second - composed_same).norm() <= 1e-4,
            "second power vs nested: {:.3e}",
            (second - composed_same).norm()
        );
    }

    #[test]
    fn resolvent_is_bounded_by_the_abscissa() {
        let bolza = Bolza::standard();
        let f = make_bump(&bolza, &bolza.basepoint(), 0.6, 2.5).unwrap();
        let ev = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
        let sup = f.sup_bound();
        let points = haar_orbit_sample(&bolza, 0x2E50, 300).unwrap();
        let mut rng = Rng::new(0x2E51);
        let freqs: Vec<f64> = (0..points.len()).map(|_| rng.range(-50.0, 50.0)).collect();
        let worst = points
            .par_iter()
            .zip(freqs.par_iter())
            .map(|(p, &b)| {
                let q = ResolventQuery::new(1.0, b).unwrap();
                resolvent_apply(&bolza, &q, &ev, p).map(|v| v.norm())
            })
            .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))
            .unwrap();
        assert!(
            worst <= sup * (1.0 + 1e-6),
            "|R(1 + ib) f| = {worst} above sup/a = {sup}"
        );
    }

    #[test]
    fn resolvent_powers_are_bounded_by_the_abscissa() {
        let bolza = Bolza::standard();
        let f = make_bump(&bolza, &bolza.basepoint(), 0.6, 1.7).unwrap();
        let ev = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
        let sup = f.sup_bound();
        let points = haar_orbit_sample(&bolza, 0x2E52, 40).unwrap();
        for (n, a) in [(2u32, 0.5), (2, 2.0), (5, 0.5), (5, 2.0)] {
            let q = ResolventQuery::new(a, 7.0).unwrap();
            let worst = points
                .par_iter()
                .map(|p| resolvent_power_apply(&bolza, &q, n, &ev, p).map(|v| v.norm()))
                .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))
                .unwrap();
            let bound = a.powi(-(n as i32)) * sup + 1e-6;
            assert!(worst <= bound, "|R^{n}| at a = {a}: {worst} above {bound}");
        }
    }

    #[test]
    fn adjoint_runs_the_flow_forward_and_pairs_with_the_resolvent() {
        let bolza = Bolza::standard();
        let one = |_: &Bolza, _: &ManifoldPoint| Ok(1.0);
        let p = bolza.basepoint();
        let q = ResolventQuery::new(1.5, -3.0).unwrap();
        let got = resolvent_adjoint_apply(&bolza, &q, &one, &p).unwrap();
        let expected = Complex64::new(1.0, 0.0) / q.z();
        assert!((got - expected).norm() <= 1e-8);

        let f = make_bump(&bolza, &bolza.basepoint(), 0.55, 1.3).unwrap();
        let phi_center = flow_by(&bolza, &bolza.basepoint(), 0.7).unwrap();
        let phi = make_bump(&bolza, &phi_center, 0.6, 1.0).unwrap();
        let ef = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
        let ephi = |b: &Bolza, p: &ManifoldPoint| Ok(phi.evaluate(b, p));
        let qd = ResolventQuery::new(1.0, 2.0).unwrap();
        let points = haar_orbit_sample(&bolza, 0x2E53, 240).unwrap();
        let diffs: Vec<Complex64> = points
            .par_iter()
            .map(|p| {
                let lhs = resolvent_apply(&bolza, &qd, &ef, p)? * phi.evaluate(&bolza, p);
                let rhs = resolvent_adjoint_apply(&bolza, &qd, &ephi, p)? * f.evaluate(&bolza, p);
                Ok(lhs - rhs)
            })
            .collect::<Result<_>>()
            .unwrap();
        let res: Vec<f64> = diffs.iter().map(|z| z.re).collect();
        let ims: Vec<f64> = diffs.iter().map(|z| z.im).collect();
        let (mr, sr) = shard_stats(&shard_means(&res, 30));
        let (mi, si) = shard_stats(&shard_means(&ims, 30));
        assert!(
            mr.abs() <= 3.0 * sr + 1e-9 && mi.abs() <= 3.0 * si + 1e-9,
            "adjoint pairing asymmetry ({mr:.3e}, {mi:.3e}) over ({sr:.3e}, {si:.3e})"
        );
    }

    #[test]
    fn adjoint_powers_match_analytic_poles() {
        let bolza = Bolza::standard();
        let one = |_: &Bolza, _: &ManifoldPoint| Ok(1.0);
        let p = bolza.basepoint();
        for n in 1..=5u32 {
            for b in [0.0, -3.7, 11.0] {
                let q = ResolventQuery::new(0.8, b).unwrap();
                let got = resolvent_adjoint_power_apply(&bolza, &q, n, &one, &p).unwrap();
                let expected = Complex64::new(1.0, 0.0) / q.z().powi(n as i32);
                assert!(
                    (got - expected).norm() <= 1e-8,
                    "adjoint power pole deviation {:.3e} at (n, b) = ({n}, {b})",
                    (got - expected).norm()
                );
            }
        }
    }

    #[test]
    fn conjugating_the_frequency_conjugates_the_resolvent() {
        let bolza = Bolza::standard();
        let f = make_bump(&bolza, &bolza.basepoint(), 0.6, 1.0).unwrap();
        let ev = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
        let p = flow_by(&bolza, &bolza.basepoint(), 0.23).unwrap();
        let plus = resolvent_apply(&bolza, &ResolventQuery::new(1.0, 7.3).unwrap(), &ev, &p)
            .unwrap();
        let minus = resolvent_apply(&bolza, &ResolventQuery::new(1.0, -7.3).unwrap(), &ev, &p)
            .unwrap();
        assert!((plus - minus.conj()).norm() <= 1e-14);
    }

    fn synthetic_series(h: f64, nodes: usize, f: impl Fn(f64) -> f64) -> CorrelationSeries {
        let t_grid: Vec<f64> = (0..nodes).map(|j| j as f64 * h).collect();
        let values = t_grid.iter().map(|&t| f(t)).collect();
        CorrelationSeries {
            t_grid,
            values,
            stderr: vec![0.0; nodes],
            sample_count: 0,
            seed: 0,
        }
    }

    #[test]
    fn laplace_scan_matches_a_synthetic_transform() {
        let series = synthetic_series(0.05, 1001, |t| (-0.5 * t).exp());
        let b_grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.5).collect();
        let scan = laplace_correlation_scan(&series, 0.1, &b_grid).unwrap();
        let worst = scan
            .iter()
            .zip(&b_grid)
            .map(|(got, &b)| {
                let expected = Complex64::new(1.0, 0.0) / Complex64::new(0.6, b);
                (got - expected).norm()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "worst transform error {worst:.2e}");
    }

    #[test]
    fn laplace_scan_peaks_at_the_oscillation_frequency() {
        let series = synthetic_series(0.05, 1001, |t| (-0.5 * t).exp() * (4.0 * t).cos());
        let b_grid: Vec<f64> = (0..=32).map(|k| k as f64 * 0.25).collect();
        let scan = laplace_correlation_scan(&series, 0.2, &b_grid).unwrap();
        let (peak_b, _) = b_grid
            .iter()
            .zip(&scan)
            .map(|(&b, z)| (b, z.norm()))
            .fold((0.0, 0.0), |acc, (b, m)| if m > acc.1 { (b, m) } else { acc });
        assert!((peak_b - 4.0).abs() <= 0.25 + 1e-12, "peak at {peak_b}");
    }

    #[test]
    fn laplace_scan_rejects_unusable_traces() {
        let short = synthetic_series(0.05, 601, |t| (-0.5 * t).exp());
        // a T = 0.1 * 30 = 3 < 5.
        assert!(matches!(
            laplace_correlation_scan(&short, 0.1, &[0.0]),
            Err(Error::Config(_))
        ));
        let good = synthetic_series(0.05, 1001, |t| (-0.5 * t).exp());
        assert!(matches!(
            laplace_correlation_scan(&good, 0.0, &[0.0]),
            Err(Error::Config(_))
        ));
        let mut even = good.clone();
        even.t_grid.pop();
        even.values.pop();
        even.stderr.pop();
        assert!(matches!(
            laplace_correlation_scan(&even, 0.2, &[0.0]),
            Err(Error::Config(_))
        ));
        let mut warped = good.clone();
        warped.t_grid[500] += 0.01;
        assert!(matches!(
            laplace_correlation_scan(&warped, 0.2, &[0.0]),
            Err(Error::Config(_))
        ));
        let mut offset = good;
        for t in &mut offset.t_grid {
            *t += 1.0;
        }
        assert!(matches!(
            laplace_correlation_scan(&offset, 0.2, &[0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn inverse_transform_recovers_a_constant() {
        let bolza = Bolza::standard();
        let one = |_: &Bolza, _: &ManifoldPoint| Ok(1.0);
        let p = bolza.basepoint();
        let report = inverse_laplace_check(&bolza, 0.5, 200.0, &one, &p, 1.0).unwrap();
        assert!(
            (report.value - 1.0).abs() <= 1e-3,
            "reconstructed {} instead of 1",
            report.value
        );
        assert_eq!(report.direct, 1.0);
        assert_eq!(report.residuals.len(), 4);
    }

    #[test]
    fn inverse_transform_matches_direct_evolution_with_decaying_residuals() {
        let bolza = Bolza::standard();
        let center = bolza.basepoint();
        let f = make_bump(&bolza, &center, 0.6, 1.0).unwrap();
        let ev = |b: &Bolza, p: &ManifoldPoint| Ok(f.evaluate(b, p));
        // Sit one time unit downstream of the bump so the reconstruction
        // target f(T_{-1} p) = f(center) is the full bump height.
        let p = flow_by(&bolza, &center, 1.0).unwrap();
        let report = inverse_laplace_check(&bolza, 0.5, 400.0, &ev, &p, 1.0).unwrap();
        assert!(
            (report.value - report.direct).abs() <= 1e-2,
            "reconstruction off by {:.3e}",
            (report.value - report.direct).abs()
        );
        for pair in report.residuals.windows(2) {
            assert!(
                pair[1].1 <= pair[0].1,
                "residuals do not decay: {:?}",
                report.residuals
            );
        }
    }

    #[test]
    fn inverse_transform_validates_its_frame() {
        let bolza = Bolza::standard();
        let one = |_: &Bolza, _: &ManifoldPoint| Ok(1.0);
        let p = bolza.basepoint();
        for (a, b_max, t) in [
            (0.0, 200.0, 1.0),
            (0.5, 4.0, 1.0),
            (0.5, 200.0, 0.0),
            (0.5, 200.0, 80.0),
        ] {
            assert!(
                matches!(
                    inverse_laplace_check(&bolza, a, b_max, &one, &p, t),
                    Err(Error::Config(_))
                ),
                "({a}, {b_max}, {t}) should be rejected"
            );
        }
    }

    /// Frequency cost of regularizing the adjoint resolvent: the stable
    /// Holder seminorm of p -> A_u* R(z)* phi (p) may grow at most about
    /// linearly in b.  Pairs sit on one stable leaf through the bump
    /// support; each endpoint shares its Filon tables across all four
    /// frequencies, so the scan prices only the transforms.
    #[test]
    fn dual_average_of_the_adjoint_resolvent_grows_mildly_in_frequency() {
        let bolza = Bolza::standard();
        let ncfg = NormConfig::default();
        let center = bolza.basepoint();
        let phi = make_bump(&bolza, &center, 0.5, 1.0).unwrap();
        let acfg = AverageConfig { eps_u: 0.3, quad_points: 17, ..Default::default() };
        let a = 1.0;
        let bs = [5.0, 10.0, 20.0, 40.0];
        let step = (0.01f64).min(PI / (16.0 * 40.0));
        let t_end = weight_horizon(1, -RESOLVENT_TAIL.ln()) / a;
        let nodes = grid_nodes(t_end, step);

        let mut rng = Rng::new(0xB617);
        let mut endpoints: Vec<ManifoldPoint> = Vec::new();
        let mut pair_dist: Vec<f64> = Vec::new();
        for _ in 0..14 {
            let s = rng.range(-0.04, 0.04);
            let du = rng.range(0.006, 0.03) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            let x = bolza.translate_point(&center, &n_plus(s)).unwrap();
            let y = bolza.translate_point(&center, &n_plus(s + du)).unwrap();
            let d = match dynamical_distance(&bolza, &x, &y, FlowSide::Plus, &ncfg).unwrap() {
                DynDistance::Finite(d) => d,
                DynDistance::Infinite => panic!("stable pair measured as infinite"),
            };
            endpoints.push(x);
            endpoints.push(y);
            pair_dist.push(d);
        }

        let m = acfg.nodes();
        let h_u = 2.0 * acfg.eps_u / (m - 1) as f64;
        let values: Vec<Vec<Complex64>> = endpoints
            .par_iter()
            .map(|p| {
                let mut acc = vec![Complex64::new(0.0, 0.0); bs.len()];
                let mut wacc = 0.0;
                for j in 0..m {
                    let v = -acfg.eps_u + j as f64 * h_u;
                    let simpson_c = if j == 0 || j == m - 1 {
                        1.0
                    } else if j % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    let w = simpson_c * dual_kernel_density(v)?;
                    let xi = bolza.translate_point(p, &n_minus(v))?;
                    let g = orbit_samples(
                        &bolza,
                        &|b: &Bolza, pt: &ManifoldPoint| Ok(phi.evaluate(b, pt)),
                        &xi,
                        nodes,
                        step,
                        1.0,
                    )?
                    .iter()
                    .enumerate()
                    .map(|(k, &fv)| (-a * k as f64 * step).exp() * fv)
                    .collect::<Vec<f64>>();
                    let table = FilonTable::new(0.0, step, &g);
                    for (bi, &b) in bs.iter().enumerate() {
                        acc[bi] += table.transform(b) * w;
                    }
                    wacc += w;
                }
                Ok(acc.into_iter().map(|z| z / wacc).collect())
            })
            .collect::<Result<_>>()
            .unwrap();

        let mut pts = Vec::with_capacity(bs.len());
        for (bi, &b) in bs.iter().enumerate() {
            let mut seminorm: f64 = 0.0;
            for (i, &d) in pair_dist.iter().enumerate() {
                let delta = (values[2 * i][bi] - values[2 * i + 1][bi]).norm();
                seminorm = seminorm.max(delta / d.powf(ncfg.beta));
            }
            assert!(seminorm > 0.0, "flat seminorm at b = {b}");
            pts.push((b, seminorm));
        }
        let fit = power_law_fit(&pts, 0.9).unwrap();
        assert!(
            fit.slope <= 1.1,
            "seminorm grows like b^{:.2}, points {pts:?}",
            fit.slope
        );
    }
}
