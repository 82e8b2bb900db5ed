//! Bump observables, the composition (transfer) action of the flow,
//! Monte Carlo correlations with sharded error bars, decay fits, and
//! empirical Holder/anisotropic norm estimates against a fixed dictionary.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{linear_fit, shard_stats};
use crate::leaves::{
    dynamical_distance, leaf_point, random_unit_algebra, DynDistance, FlowSide, LeafCoordinate,
    LeafKind, NormConfig,
};
use crate::model::bolza::{Bolza, ManifoldPoint, INJECTIVITY_LOWER};
use crate::model::group::{AlgebraVector, GroupElement, LOG_CAP};
use crate::model::sample::haar_orbit_sample;
use crate::rng::{derive_stream, Rng};

/// Largest admissible bump radius; keeps every bump inside an embedded
/// ball so the quotient distance to the center is realized by a unique
/// deck motion on the support.
pub const MAX_BUMP_RADIUS: f64 = 0.7;

/// One bump: weight times h(d/radius) with h(s) = (1 - s^2)^2.
#[derive(Clone, Debug)]
struct Bump {
    center: ManifoldPoint,
    radius: f64,
    weight: f64,
    /// Precomposed center^{-1} gamma^{-1} for every deck motion that can
    /// bring a domain representative inside the support; all others give
    /// h = 0 and are dropped once at construction.
    frames: Vec<GroupElement>,
}

/// A finite superposition of bumps plus a constant offset.
#[derive(Clone, Debug, Default)]
pub struct Observable {
    constant: f64,
    bumps: Vec<Bump>,
}

/// The radial profile: C^1, equal to 1 at the center, 0 beyond support.
fn profile(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        let u = 1.0 - s * s;
        u * u
    }
}

fn bump_frames(bolza: &Bolza, center: &ManifoldPoint, radius: f64) -> Vec<GroupElement> {
    // Keep gamma when gamma applied to the center base point lands within
    // circumradius + sqrt(2) * radius of the origin: representatives live
    // in the fundamental domain and the frame metric shrinks base
    // displacements by at most sqrt(2), so farther motions cannot put any
    // representative inside the support.
    use crate::model::bolza::{base_point_h, cosh_distance_h};
    use num_complex::Complex64;
    let circumradius = (3.0 + 2.0 * std::f64::consts::SQRT_2).acosh();
    let reach = (circumradius + std::f64::consts::SQRT_2 * radius + 0.05).cosh();
    let origin = Complex64::new(0.0, 1.0);
    let c_inv = center.rep.inverse();
    let mut frames = Vec::new();
    for cinv in bolza.candidate_inverses() {
        let gamma = cinv.inverse();
        let moved = gamma.mul(&center.rep);
        if cosh_distance_h(origin, base_point_h(&moved)) <= reach {
            frames.push(c_inv.mul(cinv));
        }
    }
    frames
}

impl Observable {
    /// The zero observable.
    pub fn zero() -> Observable {
        Observable::default()
    }

    /// A constant observable.
    pub fn constant(c: f64) -> Observable {
        Observable { constant: c, bumps: Vec::new() }
    }

    /// Add all bumps and constants of `other` into `self`.
    pub fn superpose(&mut self, other: &Observable) {
        self.constant += other.constant;
        self.bumps.extend(other.bumps.iter().cloned());
    }

    /// Rescale in place.
    pub fn scale(&mut self, s: f64) {
        self.constant *= s;
        for b in &mut self.bumps {
            b.weight *= s;
        }
    }

    /// Pointwise evaluation.
    pub fn evaluate(&self, _bolza: &Bolza, p: &ManifoldPoint) -> f64 {
        let mut acc = self.constant;
        for b in &self.bumps {
            let mut d = f64::INFINITY;
            for fr in &b.frames {
                let h = fr.mul(&p.rep);
                if h.opnorm_dist_identity() > LOG_CAP {
                    continue;
                }
                if let Ok(v) = h.log() {
                    d = d.min(v.norm());
                }
            }
            if d < b.radius {
                acc += b.weight * profile(d / b.radius);
            }
        }
        acc
    }

    /// A bound on the supremum norm: tight for nonnegative superpositions.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.bumps.iter().map(|b| b.weight.abs()).sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.bumps.is_empty()
    }

    /// (center, radius, weight) of every bump, for artifact metadata.
    pub fn descriptors(&self) -> Vec<(ManifoldPoint, f64, f64)> {
        self.bumps
            .iter()
            .map(|b| (b.center.clone(), b.radius, b.weight))
            .collect()
    }
}

/// Build a single bump observable centered at a manifold point.
pub fn make_bump(
    bolza: &Bolza,
    center: &ManifoldPoint,
    radius: f64,
    weight: f64,
) -> Result<Observable> {
    if !(radius > 0.0 && radius <= MAX_BUMP_RADIUS) {
        return Err(Error::domain(format!(
            "bump radius {radius} outside (0, {MAX_BUMP_RADIUS}]"
        )));
    }
    if !weight.is_finite() {
        return Err(Error::domain("bump weight must be finite".to_string()));
    }
    debug_assert!(MAX_BUMP_RADIUS < INJECTIVITY_LOWER);
    let frames = bump_frames(bolza, center, radius);
    Ok(Observable {
        constant: 0.0,
        bumps: vec![Bump { center: center.clone(), radius, weight, frames }],
    })
}

/// Longest transfer time accepted before chunking would lose precision.
pub const MAX_TRANSFER_TIME: f64 = 1e3;

/// Flow a point for an arbitrary bounded time by chunking below the
/// single-step domain limit.
pub fn flow_by(bolza: &Bolza, p: &ManifoldPoint, t: f64) -> Result<ManifoldPoint> {
    if !t.is_finite() || t.abs() > MAX_TRANSFER_TIME {
        return Err(Error::domain(format!(
            "transfer time {t} outside [-{MAX_TRANSFER_TIME}, {MAX_TRANSFER_TIME}]"
        )));
    }
    let mut remaining = t;
    let mut q = p.clone();
    const CHUNK: f64 = 8.0;
    while remaining.abs() > CHUNK {
        let step = CHUNK * remaining.signum();
        q = bolza.flow_point(&q, step)?;
        remaining -= step;
    }
    bolza.flow_point(&q, remaining)
}

/// The transfer action: (L_t f)(p) = f(T_{-t} p).
pub fn transfer_evolve(bolza: &Bolza, f: &Observable, t: f64, p: &ManifoldPoint) -> Result<f64> {
    let q = flow_by(bolza, p, -t)?;
    Ok(f.evaluate(bolza, &q))
}

/// A correlation trace C(t) with per-shard standard errors.
#[derive(Clone, Debug)]
pub struct CorrelationSeries {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sample_count: usize,
    pub seed: u64,
}

/// Number of equal sample blocks used for error bars.
const CORRELATION_SHARDS: usize = 50;

/// Monte Carlo correlation mean[f (g o T_t)] - mean[f] mean[g o T_t] over
/// one Haar cloud reused across the whole grid; the cloud is advanced
/// incrementally between grid times so every value sees the same noise.
pub fn correlation(
    bolza: &Bolza,
    f: &Observable,
    g: &Observable,
    t_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<CorrelationSeries> {
    if n < 100 {
        return Err(Error::InsufficientSamples(format!(
            "correlation needs at least 100 samples, got {n}"
        )));
    }
    if t_grid.is_empty()
        || t_grid.iter().any(|t| !t.is_finite() || *t < 0.0)
        || t_grid.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::config(
            "correlation grid must be sorted and nonnegative".to_string(),
        ));
    }
    let cloud = haar_orbit_sample(bolza, seed, n)?;
    let f_vals: Vec<f64> = cloud.par_iter().map(|p| f.evaluate(bolza, p)).collect();
    // Advance per block so shards stay contiguous and the reduction order
    // is fixed regardless of thread scheduling.
    let block = n.div_ceil(CORRELATION_SHARDS);
    let mut blocks: Vec<(Vec<ManifoldPoint>, &[f64])> = cloud
        .chunks(block)
        .zip(f_vals.chunks(block))
        .map(|(pts, fv)| (pts.to_vec(), fv))
        .collect();
    let mut values = Vec::with_capacity(t_grid.len());
    let mut errors = Vec::with_capacity(t_grid.len());
    let mut prev_t = 0.0;
    for &t in t_grid {
        let dt = t - prev_t;
        let per_block: Vec<(f64, f64, f64, usize)> = blocks
            .par_iter_mut()
            .map(|(pts, fv)| {
                let mut sum_fg = 0.0;
                let mut sum_f = 0.0;
                let mut sum_g = 0.0;
                for (p, &fx) in pts.iter_mut().zip(fv.iter()) {
                    if dt != 0.0 {
                        *p = flow_by(bolza, p, dt).expect("bounded chunked flow");
                    }
                    let gx = g.evaluate(bolza, p);
                    sum_fg += fx * gx;
                    sum_f += fx;
                    sum_g += gx;
                }
                (sum_fg, sum_f, sum_g, pts.len())
            })
            .collect();
        let total_fg: f64 = per_block.iter().map(|b| b.0).sum();
        let total_f: f64 = per_block.iter().map(|b| b.1).sum();
        let total_g: f64 = per_block.iter().map(|b| b.2).sum();
        let nf = n as f64;
        let value = total_fg / nf - (total_f / nf) * (total_g / nf);
        let shard_cov: Vec<f64> = per_block
            .iter()
            .filter(|b| b.3 > 0)
            .map(|(fg, fs, gs, m)| {
                let m = *m as f64;
                fg / m - (fs / m) * (gs / m)
            })
            .collect();
        let (_, se) = shard_stats(&shard_cov);
        values.push(value);
        errors.push(se);
        prev_t = t;
    }
    Ok(CorrelationSeries {
        t_grid: t_grid.to_vec(),
        values,
        stderr: errors,
        sample_count: n,
        seed,
    })
}

/// A fitted exponential decay rate with its diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct DecayFit {
    /// Decay rate per unit time (positive for decaying data).
    pub sigma: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

fn significant_points(series: &CorrelationSeries, window: (f64, f64)) -> Vec<(f64, f64)> {
    series
        .t_grid
        .iter()
        .zip(series.values.iter().zip(series.stderr.iter()))
        .filter(|(t, (c, se))| {
            **t >= window.0 && **t <= window.1 && c.abs() > 3.0 * **se && c.abs() > 0.0
        })
        .map(|(t, (c, _))| (*t, c.abs().ln()))
        .collect()
}

/// Least squares of log |C(t)| over the window, keeping only points
/// standing three standard errors above the noise.
pub fn fit_decay(series: &CorrelationSeries, window: (f64, f64)) -> Result<DecayFit> {
    let pts = significant_points(series, window);
    fit_from_log_points(pts, window)
}

/// Envelope variant: fits only the local maxima of |C(t)|, which tracks
/// the decay prefactor when the trace oscillates through zero.
pub fn fit_decay_envelope(series: &CorrelationSeries, window: (f64, f64)) -> Result<DecayFit> {
    let pts = significant_points(series, window);
    let mut peaks = Vec::new();
    for i in 0..pts.len() {
        let left = if i == 0 { f64::NEG_INFINITY } else { pts[i - 1].1 };
        let right = if i + 1 == pts.len() { f64::NEG_INFINITY } else { pts[i + 1].1 };
        if pts[i].1 >= left && pts[i].1 >= right {
            peaks.push(pts[i]);
        }
    }
    fit_from_log_points(peaks, window)
}

fn fit_from_log_points(pts: Vec<(f64, f64)>, window: (f64, f64)) -> Result<DecayFit> {
    if pts.len() < 5 {
        return Err(Error::FitQuality {
            reason: format!(
                "only {} grid points stand above noise in [{}, {}]; need 5",
                pts.len(),
                window.0,
                window.1
            ),
            partial: pts,
        });
    }
    let fit = linear_fit(&pts)?;
    Ok(DecayFit {
        sigma: -fit.slope,
        prefactor: fit.intercept.exp(),
        r_squared: fit.r_squared,
        window,
    })
}

/// The documented spectral-gap relation sigma = 2 omega (1 - beta)/(3 - beta),
/// reported as metadata next to fitted rates.
pub fn sigma_from_gap(omega: f64, beta: f64) -> Result<f64> {
    if !(omega > 0.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!(
            "gap relation needs omega > 0 and beta in (0,1); got ({omega}, {beta})"
        )));
    }
    Ok(2.0 * omega * (1.0 - beta) / (3.0 - beta))
}

/// Which pseudo-distance a Holder seminorm is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HolderKind {
    Stable,
    Unstable,
    Ambient,
}

/// Empirical beta-Holder seminorm: the supremum of |f(x) - f(y)| / d(x,y)^beta
/// over sampled pairs at dynamical distance at most delta.  Always a lower
/// bound of the true seminorm, monotone in the sample count.
///
/// Pair bases are Haar samples; when `anchors` is nonempty, half the bases
/// are drawn instead from small ambient balls around the anchors, which
/// probes the steep region of a localized observable without changing the
/// lower-bound semantics.
pub fn holder_seminorm<F>(
    bolza: &Bolza,
    eval: F,
    kind: HolderKind,
    beta: f64,
    cfg: &NormConfig,
    n: usize,
    seed: u64,
    anchors: &[ManifoldPoint],
) -> Result<f64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64> + Sync,
{
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::domain(format!("beta {beta} outside (0, 1]")));
    }
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InsufficientSamples("need at least one pair".to_string()));
    }
    let mut bases = haar_orbit_sample(bolza, derive_stream(seed, 0x5E31), n)?;
    if !anchors.is_empty() {
        let mut rng = Rng::new(derive_stream(seed, 0x5E34));
        for (i, base) in bases.iter_mut().enumerate().take(n / 2) {
            let anchor = &anchors[i % anchors.len()];
            let dir = random_unit_algebra(&mut rng);
            let r = rng.range(0.0, 0.8);
            let step =
                AlgebraVector::new(dir.c_x * r, dir.c_plus * r, dir.c_minus * r);
            *base = bolza.translate_point(anchor, &step.exp())?;
        }
    }
    let offsets: Vec<(f64, AlgebraVector)> = {
        let mut rng = Rng::new(derive_stream(seed, 0x5E32));
        (0..n)
            .map(|_| (rng.range(-cfg.delta, cfg.delta), random_unit_algebra(&mut rng)))
            .collect()
    };
    let ratios: Vec<Option<f64>> = bases
        .par_iter()
        .zip(offsets.par_iter())
        .map(|(p, &(u, dir))| -> Result<Option<f64>> {
            if u == 0.0 {
                return Ok(None);
            }
            let (y, dist) = match kind {
                HolderKind::Stable | HolderKind::Unstable => {
                    let leaf = if kind == HolderKind::Stable {
                        LeafKind::Stable
                    } else {
                        LeafKind::Unstable
                    };
                    let side = if kind == HolderKind::Stable {
                        FlowSide::Plus
                    } else {
                        FlowSide::Minus
                    };
                    let y = leaf_point(
                        bolza,
                        &LeafCoordinate { base: p.clone(), kind: leaf, param: u },
                    )?;
                    match dynamical_distance(bolza, p, &y, side, cfg)? {
                        DynDistance::Finite(d) => (y, d),
                        DynDistance::Infinite => return Ok(None),
                    }
                }
                HolderKind::Ambient => {
                    let step = AlgebraVector::new(dir.c_x * u, dir.c_plus * u, dir.c_minus * u);
                    let y = bolza.translate_point(p, &step.exp())?;
                    let d = bolza.quotient_distance(&y, p);
                    if !d.is_finite() {
                        return Ok(None);
                    }
                    (y, d)
                }
            };
            if dist <= 0.0 || dist > cfg.delta {
                return Ok(None);
            }
            let fx = eval(bolza, p)?;
            let fy = eval(bolza, &y)?;
            Ok(Some((fx - fy).abs() / dist.powf(beta)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = f64::NEG_INFINITY;
    let mut seen = 0usize;
    for r in ratios.into_iter().flatten() {
        best = best.max(r);
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::InsufficientSamples(
            "every sampled pair hit the infinite-distance sentinel".to_string(),
        ));
    }
    Ok(best.max(0.0))
}

/// Which empirical norm `norm_estimate` reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// sup over the dictionary of the volume pairing, Lipschitz test class.
    Weak,
    /// sup over the dictionary of the volume pairing, beta-Holder class.
    StableDual,
    /// beta-Holder seminorm along unstable leaves.
    UnstableHolder,
}

/// Empirical lower bound of the anisotropic norms against a dictionary of
/// normalized test observables.  `anchors` seeds the pair sampler of the
/// unstable seminorm; the pairing norms ignore it.
pub fn norm_estimate<F>(
    bolza: &Bolza,
    eval: F,
    which: NormKind,
    dictionary: &[Observable],
    cfg: &NormConfig,
    n: usize,
    seed: u64,
    anchors: &[ManifoldPoint],
) -> Result<f64>
where
    F: Fn(&Bolza, &ManifoldPoint) -> Result<f64> + Sync,
{
    match which {
        NormKind::UnstableHolder => {
            holder_seminorm(bolza, eval, HolderKind::Unstable, cfg.beta, cfg, n, seed, anchors)
        }
        NormKind::Weak | NormKind::StableDual => {
            if dictionary.is_empty() {
                return Err(Error::domain("empty test dictionary".to_string()));
            }
            if n < 100 {
                return Err(Error::InsufficientSamples(format!(
                    "pairing needs at least 100 samples, got {n}"
                )));
            }
            let cloud = haar_orbit_sample(bolza, derive_stream(seed, 0x5E33), n)?;
            let f_vals: Vec<f64> = cloud
                .par_iter()
                .map(|p| eval(bolza, p))
                .collect::<Result<Vec<_>>>()?;
            let mut best = 0.0f64;
            for phi in dictionary {
                let pairing: f64 = cloud
                    .par_iter()
                    .zip(f_vals.par_iter())
                    .map(|(p, fx)| fx * phi.evaluate(bolza, p))
                    .sum::<f64>()
                    / n as f64;
                best = best.max(pairing.abs());
            }
            Ok(best)
        }
    }
}

/// Version tag of the fixed test dictionary; bump when the construction
/// changes so stored norm estimates stay comparable.
pub const DICTIONARY_VERSION: u32 = 1;
const DICTIONARY_STREAM: u64 = 0xD1C7;
const DICTIONARY_SIZE: usize = 20;
const DICTIONARY_NORMALIZE_PAIRS: usize = 64;

/// The fixed 20-bump dictionary: centers Haar-sampled from the dictionary
/// stream, radii cycling through five values, each bump rescaled so its
/// measured stable beta-Holder seminorm is at most one.
pub fn make_dictionary(bolza: &Bolza, beta: f64, cfg: &NormConfig, seed: u64) -> Result<Vec<Observable>> {
    let centers = haar_orbit_sample(
        bolza,
        derive_stream(seed, DICTIONARY_STREAM),
        DICTIONARY_SIZE,
    )?;
    let radii = [0.3, 0.4, 0.5, 0.6, 0.7];
    let mut dict = Vec::with_capacity(DICTIONARY_SIZE);
    for (i, center) in centers.iter().enumerate() {
        let mut obs = make_bump(bolza, center, radii[i % radii.len()], 1.0)?;
        let h = holder_seminorm(
            bolza,
            |b: &Bolza, p: &ManifoldPoint| Ok(obs.evaluate(b, p)),
            HolderKind::Stable,
            beta,
            cfg,
            DICTIONARY_NORMALIZE_PAIRS,
            derive_stream(seed, DICTIONARY_STREAM + 1 + i as u64),
            std::slice::from_ref(center),
        )?;
        if h > 1.0 {
            obs.scale(1.0 / h);
        }
        dict.push(obs);
    }
    Ok(dict)
}
