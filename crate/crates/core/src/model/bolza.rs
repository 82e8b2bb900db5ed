//! The Bolza lattice: the genus-2 surface group whose quotient carries the
//! most symmetric hyperbolic structure, presented as a regular octagon
//! Dirichlet domain centered at the origin of the disk.
//!
//! Side-pairing generators are the conjugates of one symmetric hyperbolic
//! element by eighth-turn rotations.  Points of the quotient are stored as
//! the unique group representative whose base point lies in the octagon,
//! found by Dirichlet reduction against the eight images of the origin.

use super::group::{flow_matrix, rotation, GroupElement, LOG_CAP};
use crate::error::{Error, Result};
use num_complex::Complex64;

/// Iteration guard for the reduction loop.
const MAX_REDUCE_STEPS: usize = 10_000;
/// Reduction applies a side pairing only when it improves the cosh of the
/// distance to the origin by more than this; keeps boundary ties finite.
const REDUCE_IMPROVEMENT: f64 = 1e-14;
/// Largest flow time accepted in one call.
const MAX_FLOW_TIME: f64 = 50.0;

/// A point of the quotient manifold: the in-domain representative together
/// with the word of generator indices applied by the last reduction
/// (leftmost letter applied last).
#[derive(Clone, Debug)]
pub struct ManifoldPoint {
    pub rep: GroupElement,
    pub word: Vec<u8>,
}

/// The lattice with its precomputed fundamental-domain geometry.
#[derive(Clone, Debug)]
pub struct Bolza {
    /// Indices 0..3 are the four basic side pairings, 4..7 their inverses.
    gens: [GroupElement; 8],
    /// Disk coordinates of gens[j] applied to the origin.
    origin_images: [Complex64; 8],
    /// The same images in the upper half plane; the reduction kernel works
    /// there because half-plane heights stay well-scaled arbitrarily far
    /// down the cusps of the coordinate chart, where disk radii collapse
    /// onto the boundary within rounding.
    origin_images_h: [Complex64; 8],
    /// Inverses of all deck motions whose domain translate can meet the
    /// neighborhood local queries probe; the search set for short-distance
    /// queries.
    candidates_inv: Vec<GroupElement>,
}

/// Half the shortest closed geodesic measured in the group frame metric;
/// balls of this radius embed, so all local leaf constructions with smaller
/// extent are safe.
pub const INJECTIVITY_LOWER: f64 = 1.08;

/// Length of the shortest closed geodesic of the surface.
pub fn systole() -> f64 {
    2.0 * (1.0 + f64::sqrt(2.0)).acosh()
}

impl Bolza {
    /// The standard symmetric presentation.
    pub fn standard() -> Self {
        let s2 = f64::sqrt(2.0);
        let a = 1.0 + s2;
        let b = (2.0 + 2.0 * s2).sqrt();
        let gamma0 = GroupElement::from_entries(a, b, b, a)
            .expect("base generator has unit determinant");
        let mut gens = [GroupElement::IDENTITY; 8];
        for k in 0..4 {
            let r = rotation(k as f64 * std::f64::consts::PI / 8.0);
            gens[k] = r.mul(&gamma0).mul(&r.inverse());
            gens[k + 4] = gens[k].inverse();
        }
        let mut origin_images = [Complex64::new(0.0, 0.0); 8];
        let mut origin_images_h = [Complex64::new(0.0, 0.0); 8];
        for j in 0..8 {
            let z_h = mobius(&gens[j], Complex64::new(0.0, 1.0));
            origin_images_h[j] = z_h;
            origin_images[j] = h_to_disk(z_h);
        }
        // Deck motions reachable by local queries, found by breadth-first
        // search over generator words.  A motion is kept while it moves the
        // origin at most two circumradii plus the largest frame displacement
        // a capped query can represent; beyond that its translate of the
        // fundamental domain cannot meet the neighborhood any local
        // construction probes.  The bound keeps the vertex words: points
        // reduced near a corner of the octagon can be related by products
        // of up to seven letters even at tiny distances.
        let circumradius = (3.0 + 2.0 * std::f64::consts::SQRT_2).acosh();
        let reach_cosh = (2.0 * circumradius + 1.8).cosh();
        let origin = Complex64::new(0.0, 1.0);
        let mut candidates = vec![GroupElement::IDENTITY];
        let mut frontier = vec![GroupElement::IDENTITY];
        while let Some(g) = frontier.pop() {
            for gen in &gens {
                let cand = gen.mul(&g);
                if cosh_distance_h(origin, base_point_h(&cand)) > reach_cosh {
                    continue;
                }
                if candidates.iter().any(|c| c.approx_eq(&cand, 1e-9)) {
                    continue;
                }
                candidates.push(cand);
                frontier.push(cand);
            }
        }
        let candidates_inv = candidates.iter().map(|g| g.inverse()).collect();
        Bolza { gens, origin_images, origin_images_h, candidates_inv }
    }

    pub fn generators(&self) -> &[GroupElement; 8] {
        &self.gens
    }

    /// Index of the inverse of generator j.
    pub fn inverse_index(j: u8) -> u8 {
        (j + 4) % 8
    }

    /// Disk positions of the octagon vertices.
    pub fn octagon_vertices() -> [Complex64; 8] {
        let r = 2.0f64.powf(-0.25);
        std::array::from_fn(|k| {
            let ang = std::f64::consts::PI / 8.0 + k as f64 * std::f64::consts::PI / 4.0;
            Complex64::from_polar(r, ang)
        })
    }

    /// Disk positions of the side midpoints, indexed by side.
    pub fn side_midpoints() -> [Complex64; 8] {
        let r = (f64::sqrt(2.0) - 1.0).sqrt();
        std::array::from_fn(|k| {
            let ang = k as f64 * std::f64::consts::PI / 4.0;
            Complex64::from_polar(r, ang)
        })
    }

    pub fn origin_images(&self) -> &[Complex64; 8] {
        &self.origin_images
    }

    /// Inverses of the deck motions reachable by short-distance queries.
    pub fn candidate_inverses(&self) -> &[GroupElement] {
        &self.candidates_inv
    }

    /// cosh of the hyperbolic distance from the base point of g to the
    /// origin and to each image of the origin, computed in the half plane
    /// where the formula has no cancellation at small heights.
    fn dirichlet_profile(&self, g: &GroupElement) -> (f64, [f64; 8]) {
        let z = base_point_h(g);
        let center = Complex64::new(0.0, 1.0);
        let to_origin = cosh_distance_h(z, center);
        let to_images = std::array::from_fn(|j| cosh_distance_h(z, self.origin_images_h[j]));
        (to_origin, to_images)
    }

    /// Whether the base point of g lies in the octagon, up to tol on the
    /// cosh of the competing distances.
    pub fn in_fundamental_domain(&self, g: &GroupElement, tol: f64) -> bool {
        let (c0, cj) = self.dirichlet_profile(g);
        cj.iter().all(|&c| c0 <= c + tol)
    }

    /// Dirichlet reduction: left-multiply by side pairings until the base
    /// point is nearest to the origin among all its images.
    pub fn reduce(&self, g: GroupElement) -> Result<ManifoldPoint> {
        let mut cur = g;
        let mut word = Vec::new();
        for _ in 0..MAX_REDUCE_STEPS {
            let (c0, cj) = self.dirichlet_profile(&cur);
            let (jmin, &cmin) = cj
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.partial_cmp(y.1).expect("distances are finite"))
                .expect("eight candidates");
            if !cmin.is_finite() || !c0.is_finite() {
                return Err(Error::domain(
                    "base point left the numerical range during reduction",
                ));
            }
            if cmin >= c0 - REDUCE_IMPROVEMENT * c0.max(1.0) {
                return Ok(ManifoldPoint { rep: cur, word });
            }
            let applied = Self::inverse_index(jmin as u8);
            cur = self.gens[applied as usize].mul(&cur);
            word.push(applied);
        }
        Err(Error::NonTermination(format!(
            "Dirichlet reduction did not settle within {MAX_REDUCE_STEPS} steps"
        )))
    }

    /// Reduce an arbitrary group element to a manifold point.
    pub fn point_from_group(&self, g: GroupElement) -> Result<ManifoldPoint> {
        self.reduce(g)
    }

    /// Flow the point for time t and reduce.
    pub fn flow_point(&self, p: &ManifoldPoint, t: f64) -> Result<ManifoldPoint> {
        if !t.is_finite() || t.abs() >= MAX_FLOW_TIME {
            return Err(Error::domain(format!(
                "flow time {t} outside (-{MAX_FLOW_TIME}, {MAX_FLOW_TIME}); chunk longer flows"
            )));
        }
        self.reduce(p.rep.mul(&flow_matrix(t)))
    }

    /// Right-translate the representative and reduce.
    pub fn translate_point(&self, p: &ManifoldPoint, g: &GroupElement) -> Result<ManifoldPoint> {
        self.reduce(p.rep.mul(g))
    }

    /// The point over the octagon center with the identity frame.
    pub fn basepoint(&self) -> ManifoldPoint {
        ManifoldPoint { rep: GroupElement::IDENTITY, word: Vec::new() }
    }

    /// Quotient distance in the left-invariant metric, minimized over the
    /// adjacency candidate set.  Returns
    /// infinity when no candidate brings the pair inside the logarithm cap;
    /// the pair is then farther apart than any scale the local
    /// constructions care about.
    pub fn quotient_distance(&self, p: &ManifoldPoint, q: &ManifoldPoint) -> f64 {
        let q_inv = q.rep.inverse();
        let mut best = f64::INFINITY;
        for cinv in &self.candidates_inv {
            let h = q_inv.mul(cinv).mul(&p.rep);
            if h.opnorm_dist_identity() > LOG_CAP {
                continue;
            }
            if let Ok(v) = h.log() {
                best = best.min(v.norm());
            }
        }
        best
    }
}

/// Base point in the upper half plane: the orbit of i.
pub fn base_point_h(g: &GroupElement) -> Complex64 {
    let [a, b, c, d] = g.m;
    let den = c * c + d * d;
    Complex64::new((a * c + b * d) / den, 1.0 / den)
}

/// Moebius action on the upper half plane.
pub fn mobius(g: &GroupElement, z: Complex64) -> Complex64 {
    let [a, b, c, d] = g.m;
    (z * a + b) / (z * c + d)
}

/// Cayley transform to the unit disk.
pub fn h_to_disk(z: Complex64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    (z - i) / (z + i)
}

/// Hyperbolic distance between two points of the disk.
pub fn disk_distance(z: Complex64, w: Complex64) -> f64 {
    let num = 2.0 * (z - w).norm_sqr();
    let den = (1.0 - z.norm_sqr()) * (1.0 - w.norm_sqr());
    (1.0 + num / den).acosh()
}

/// cosh of the hyperbolic distance between two upper half plane points.
pub fn cosh_distance_h(z: Complex64, w: Complex64) -> f64 {
    1.0 + (z - w).norm_sqr() / (2.0 * z.im * w.im)
}
