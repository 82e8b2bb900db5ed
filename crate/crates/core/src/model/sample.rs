//! Haar sampling on the quotient by two independent routes.
//!
//! The workhorse sampler walks stable horocycles: unipotent orbits
//! equidistribute toward the Haar measure on a compact quotient, and golden
//! ratio spacing keeps consecutive points from aliasing against the octagon
//! combinatorics.  The second sampler is a textbook rejection scheme in
//! Iwasawa coordinates and serves as the independent oracle: the two must
//! produce statistically identical clouds.

use super::bolza::{Bolza, ManifoldPoint};
use super::group::{flow_matrix, n_minus, n_plus, rotation, GroupElement};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, Rng};
use rayon::prelude::*;

/// Number of independent orbit shards; shard means feed the error bars.
pub const ORBIT_SHARDS: usize = 64;
/// Step along the horocycle between consecutive samples.
const ORBIT_SPACING: f64 = 1.618_033_988_749_895;
/// Label offsets separating the random streams of the two samplers.
const ORBIT_STREAM: u64 = 0x0BA1;
const REJECT_STREAM: u64 = 0x0BA2;

/// Sample n points by sharded stable-horocycle walks.  Points arrive
/// grouped by shard: indices [s * per_shard, (s+1) * per_shard) belong to
/// shard s, so callers can form shard means without bookkeeping.
pub fn haar_orbit_sample(bolza: &Bolza, seed: u64, n: usize) -> Result<Vec<ManifoldPoint>> {
    if n == 0 {
        return Err(Error::InsufficientSamples("requested an empty sample".into()));
    }
    let shards = ORBIT_SHARDS.min(n);
    let per_shard = n.div_ceil(shards);
    let mut clouds: Vec<Result<Vec<ManifoldPoint>>> = Vec::new();
    (0..shards)
        .into_par_iter()
        .map(|s| orbit_shard(bolza, seed, s as u64, per_shard))
        .collect_into_vec(&mut clouds);
    let mut out = Vec::with_capacity(shards * per_shard);
    for cloud in clouds {
        out.extend(cloud?);
    }
    out.truncate(n);
    Ok(out)
}

fn orbit_shard(
    bolza: &Bolza,
    seed: u64,
    shard: u64,
    count: usize,
) -> Result<Vec<ManifoldPoint>> {
    let mut rng = Rng::new(derive_stream(seed, ORBIT_STREAM + 64 * shard));
    let start = random_start(&mut rng);
    let mut p = bolza.reduce(start)?;
    let step = n_plus(ORBIT_SPACING);
    let mut shard_points = Vec::with_capacity(count);
    for _ in 0..count {
        p = bolza.translate_point(&p, &step)?;
        shard_points.push(p.clone());
    }
    Ok(shard_points)
}

fn random_start(rng: &mut Rng) -> GroupElement {
    let u = rng.range(-2.0, 2.0);
    let t = rng.range(-2.0, 2.0);
    let v = rng.range(-2.0, 2.0);
    let theta = rng.range(0.0, std::f64::consts::PI);
    n_plus(u)
        .mul(&flow_matrix(t))
        .mul(&n_minus(v))
        .mul(&rotation(theta))
}

/// Oracle sampler: exact rejection in Iwasawa coordinates.
///
/// The base point (x, y) is proposed in a box covering the octagon with
/// density dx dy / y^2 and accepted when it lies in the fundamental
/// domain; the fiber angle is then uniform.  This is Haar by construction.
pub fn haar_rejection_sample(
    bolza: &Bolza,
    seed: u64,
    n: usize,
) -> Result<Vec<ManifoldPoint>> {
    if n == 0 {
        return Err(Error::InsufficientSamples("requested an empty sample".into()));
    }
    let shards = ORBIT_SHARDS.min(n);
    let per_shard = n.div_ceil(shards);
    let mut clouds: Vec<Result<Vec<ManifoldPoint>>> = Vec::new();
    (0..shards)
        .into_par_iter()
        .map(|s| rejection_shard(bolza, seed, s as u64, per_shard))
        .collect_into_vec(&mut clouds);
    let mut out = Vec::with_capacity(shards * per_shard);
    for cloud in clouds {
        out.extend(cloud?);
    }
    out.truncate(n);
    Ok(out)
}

fn rejection_shard(
    bolza: &Bolza,
    seed: u64,
    shard: u64,
    count: usize,
) -> Result<Vec<ManifoldPoint>> {
    let mut rng = Rng::new(derive_stream(seed, REJECT_STREAM + 64 * shard));
    // Ball around the origin covering the octagon: the vertices sit at
    // cosh r = 3 + 2 sqrt(2); pad slightly.
    let r = (3.0 + 2.0 * f64::sqrt(2.0)).acosh() + 0.01;
    let sinh_r = r.sinh();
    let (y_lo, y_hi) = ((-r).exp(), r.exp());
    let mut points = Vec::with_capacity(count);
    let mut proposals = 0u64;
    while points.len() < count {
        proposals += 1;
        if proposals > 2000 * count as u64 + 10_000 {
            return Err(Error::NonTermination(
                "rejection sampler acceptance collapsed".into(),
            ));
        }
        let x = rng.range(-sinh_r, sinh_r);
        // Inverse transform for density 1/y^2 on [y_lo, y_hi].
        let u = rng.uniform();
        let y = 1.0 / (1.0 / y_lo - u * (1.0 / y_lo - 1.0 / y_hi));
        let base = n_plus(x).mul(&flow_matrix(y.ln()));
        if !bolza.in_fundamental_domain(&base, 0.0) {
            continue;
        }
        let theta = rng.range(0.0, std::f64::consts::PI);
        let rep = base.mul(&rotation(theta));
        points.push(ManifoldPoint { rep, word: Vec::new() });
    }
    Ok(points)
}
