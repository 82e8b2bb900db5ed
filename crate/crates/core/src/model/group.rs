//! The ambient group PSL(2, R) and its Lie algebra.
//!
//! Elements are stored as unit-determinant 2x2 real matrices with a fixed
//! sign convention for the +/- representative.  The Lie algebra carries the
//! frame {X, U+, U-}: X generates the diagonal flow a(t) =
//! diag(e^{t/2}, e^{-t/2}), U+ the upper-triangular horocycle (the stable
//! direction of the flow), and U- the lower-triangular one (unstable).
//! The frame is declared orthonormal; all lengths and distances in the
//! crate refer to the induced left-invariant metric.

use crate::error::{Error, Result};

/// Determinant drift beyond this triggers renormalization by 1/sqrt(det).
const DET_DRIFT: f64 = 1e-13;
/// Entries smaller than this are ignored when fixing the +/- sign.
const SIGN_EPS: f64 = 1e-9;
/// Operator-norm distance from the identity inside which the matrix
/// logarithm is considered well-conditioned without further checks.
pub const LOG_GUARD: f64 = 0.5;
/// Hard cap for the closed-form logarithm branch.  Between `LOG_GUARD` and
/// this cap the closed form is still far from the branch cut and is used so
/// that moderately separated points (up to the observable radius) measure a
/// finite distance instead of tripping the far sentinel.
pub const LOG_CAP: f64 = 1.2;

/// Unit-determinant 2x2 matrix, sign-normalized: the first entry of
/// (m11, m12, m21, m22) larger than 1e-9 in magnitude is positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupElement {
    pub m: [f64; 4],
}

/// Tangent vector in the left-invariant frame {X, U+, U-}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlgebraVector {
    pub c_x: f64,
    pub c_plus: f64,
    pub c_minus: f64,
}

/// One-parameter subgroup selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// a(t) = diag(e^{t/2}, e^{-t/2}).
    Flow,
    /// n+(u) = [[1, u], [0, 1]]; contracted by the forward flow.
    StablePlus,
    /// n-(v) = [[1, 0], [v, 1]]; expanded by the forward flow.
    UnstableMinus,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement { m: [1.0, 0.0, 0.0, 1.0] };

    /// Build from entries, validating the determinant.
    pub fn from_entries(m11: f64, m12: f64, m21: f64, m22: f64) -> Result<Self> {
        let det = m11 * m22 - m12 * m21;
        if !det.is_finite() || det <= 0.0 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::domain(format!(
                "matrix determinant {det} is not within 1e-6 of 1"
            )));
        }
        let mut g = GroupElement { m: [m11, m12, m21, m22] };
        g.renormalize();
        Ok(g)
    }

    #[inline]
    fn renormalize(&mut self) {
        let det = self.m[0] * self.m[3] - self.m[1] * self.m[2];
        if (det - 1.0).abs() > DET_DRIFT {
            let s = 1.0 / det.sqrt();
            for e in &mut self.m {
                *e *= s;
            }
        }
        for &e in &self.m {
            if e.abs() > SIGN_EPS {
                if e < 0.0 {
                    for x in &mut self.m {
                        *x = -*x;
                    }
                }
                break;
            }
        }
    }

    #[inline]
    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        let a = &self.m;
        let b = &other.m;
        let mut g = GroupElement {
            m: [
                a[0] * b[0] + a[1] * b[2],
                a[0] * b[1] + a[1] * b[3],
                a[2] * b[0] + a[3] * b[2],
                a[2] * b[1] + a[3] * b[3],
            ],
        };
        g.renormalize();
        g
    }

    #[inline]
    pub fn inverse(&self) -> GroupElement {
        let m = &self.m;
        let mut g = GroupElement { m: [m[3], -m[1], -m[2], m[0]] };
        g.renormalize();
        g
    }

    pub fn det(&self) -> f64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    pub fn trace(&self) -> f64 {
        self.m[0] + self.m[3]
    }

    /// Spectral norm of (self - I), used to guard the logarithm.
    pub fn opnorm_dist_identity(&self) -> f64 {
        let d = [self.m[0] - 1.0, self.m[1], self.m[2], self.m[3] - 1.0];
        opnorm2(&d)
    }

    pub fn approx_eq(&self, other: &GroupElement, tol: f64) -> bool {
        self.m
            .iter()
            .zip(other.m.iter())
            .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Matrix logarithm into the frame coordinates.
    ///
    /// Works on the positive-trace representative (the two lifts of a
    /// projective element differ by sign).  Returns a domain error when the
    /// element is farther than `LOG_CAP` from the identity in operator norm
    /// or elliptic with rotation angle too close to the branch cut.
    pub fn log(&self) -> Result<AlgebraVector> {
        let mut m = self.m;
        if m[0] + m[3] < 0.0 {
            for e in &mut m {
                *e = -*e;
            }
        }
        let dist = opnorm2(&[m[0] - 1.0, m[1], m[2], m[3] - 1.0]);
        if dist > LOG_CAP {
            return Err(Error::domain(format!(
                "element at operator distance {dist:.3} from identity exceeds log cap {LOG_CAP}"
            )));
        }
        let c = 0.5 * (m[0] + m[3]);
        // h = C(th2) I + S(th2) A with A traceless, A^2 = th2 I,
        // C = cosh-like, S = sinh(th)/th; invert C then divide by S.
        let s_val = if c > 1.0 + 1e-6 {
            let theta = (c + (c * c - 1.0).sqrt()).ln(); // arccosh
            theta.sinh() / theta
        } else if c < 1.0 - 1e-6 {
            let phi = c.clamp(-1.0, 1.0).acos();
            if phi > 3.0 {
                return Err(Error::domain(
                    "elliptic rotation too close to the logarithm branch cut",
                ));
            }
            phi.sin() / phi
        } else {
            let x = c - 1.0;
            let th2 = 2.0 * x * (1.0 - x / 3.0);
            1.0 + th2 / 6.0 + th2 * th2 / 120.0
        };
        let a11 = (m[0] - c) / s_val;
        let a12 = m[1] / s_val;
        let a21 = m[2] / s_val;
        Ok(AlgebraVector { c_x: 2.0 * a11, c_plus: a12, c_minus: a21 })
    }
}

/// Spectral norm of a 2x2 matrix given as [m11, m12, m21, m22].
fn opnorm2(m: &[f64; 4]) -> f64 {
    let t = m.iter().map(|x| x * x).sum::<f64>();
    let d = m[0] * m[3] - m[1] * m[2];
    let disc = (t * t - 4.0 * d * d).max(0.0).sqrt();
    (0.5 * (t + disc)).sqrt()
}

impl AlgebraVector {
    pub const ZERO: AlgebraVector = AlgebraVector { c_x: 0.0, c_plus: 0.0, c_minus: 0.0 };

    pub fn new(c_x: f64, c_plus: f64, c_minus: f64) -> Self {
        AlgebraVector { c_x, c_plus, c_minus }
    }

    /// Frame norm (the frame is orthonormal by definition).
    pub fn norm(&self) -> f64 {
        (self.c_x * self.c_x + self.c_plus * self.c_plus + self.c_minus * self.c_minus).sqrt()
    }

    /// Matrix form [[c_x/2, c_plus], [c_minus, -c_x/2]].
    pub fn to_matrix(&self) -> [f64; 4] {
        [0.5 * self.c_x, self.c_plus, self.c_minus, -0.5 * self.c_x]
    }

    /// Lie bracket [self, other] in frame coordinates.
    pub fn bracket(&self, other: &AlgebraVector) -> AlgebraVector {
        let a = self.to_matrix();
        let b = other.to_matrix();
        let ab = [
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        ];
        let ba = [
            b[0] * a[0] + b[1] * a[2],
            b[0] * a[1] + b[1] * a[3],
            b[2] * a[0] + b[3] * a[2],
            b[2] * a[1] + b[3] * a[3],
        ];
        AlgebraVector {
            c_x: (ab[0] - ba[0]) - (ab[3] - ba[3]),
            c_plus: ab[1] - ba[1],
            c_minus: ab[2] - ba[2],
        }
    }

    /// Exponential: closed form using A^2 = (c_x^2/4 + c_plus c_minus) I.
    pub fn exp(&self) -> GroupElement {
        let a = self.to_matrix();
        let th2 = a[0] * a[0] + a[1] * a[2];
        let (c, s) = cosh_sinh_like(th2);
        let mut g = GroupElement {
            m: [c + s * a[0], s * a[1], s * a[2], c + s * a[3]],
        };
        g.renormalize();
        g
    }
}

/// (C, S) with C = sum th2^k/(2k)!, S = sum th2^k/(2k+1)!.
fn cosh_sinh_like(th2: f64) -> (f64, f64) {
    if th2 > 1e-8 {
        let th = th2.sqrt();
        (th.cosh(), th.sinh() / th)
    } else if th2 < -1e-8 {
        let th = (-th2).sqrt();
        (th.cos(), th.sin() / th)
    } else {
        (1.0 + th2 / 2.0 + th2 * th2 / 24.0, 1.0 + th2 / 6.0 + th2 * th2 / 120.0)
    }
}

/// Largest |t| accepted by the one-parameter subgroup maps; beyond this the
/// entries overflow the comfortable double range and callers must chunk.
pub const MAX_GENERATOR_PARAM: f64 = 50.0;

/// Closed-form one-parameter subgroups.
pub fn exp_generator(direction: Direction, amount: f64) -> Result<GroupElement> {
    if !amount.is_finite() || amount.abs() >= MAX_GENERATOR_PARAM {
        return Err(Error::domain(format!(
            "generator parameter {amount} outside (-{MAX_GENERATOR_PARAM}, {MAX_GENERATOR_PARAM})"
        )));
    }
    let g = match direction {
        Direction::Flow => {
            let e = (0.5 * amount).exp();
            GroupElement { m: [e, 0.0, 0.0, 1.0 / e] }
        }
        Direction::StablePlus => GroupElement { m: [1.0, amount, 0.0, 1.0] },
        Direction::UnstableMinus => GroupElement { m: [1.0, 0.0, amount, 1.0] },
    };
    Ok(g)
}

/// a(t), unchecked for internal use with small t.
#[inline]
pub fn flow_matrix(t: f64) -> GroupElement {
    let e = (0.5 * t).exp();
    GroupElement { m: [e, 0.0, 0.0, 1.0 / e] }
}

#[inline]
pub fn n_plus(u: f64) -> GroupElement {
    GroupElement { m: [1.0, u, 0.0, 1.0] }
}

#[inline]
pub fn n_minus(v: f64) -> GroupElement {
    GroupElement { m: [1.0, 0.0, v, 1.0] }
}

/// Rotation k(theta) = [[cos, sin], [-sin, cos]]; stabilizes the base point
/// and rotates the fiber by 2 theta.
#[inline]
pub fn rotation(theta: f64) -> GroupElement {
    let (s, c) = theta.sin_cos();
    let mut g = GroupElement { m: [c, s, -s, c] };
    g.renormalize();
    g
}

/// The contact form: alpha reads off the flow component.
#[inline]
pub fn contact_alpha(v: &AlgebraVector) -> f64 {
    v.c_x
}

/// d alpha on left-invariant fields reduces to -alpha([v, w]).
#[inline]
pub fn contact_d_alpha(v: &AlgebraVector, w: &AlgebraVector) -> f64 {
    -contact_alpha(&v.bracket(w))
}

/// Differential of the time-t flow on left-trivialized tangent vectors:
/// conjugation by a(t) scales U+ by e^{-t} and U- by e^{t} and fixes X.
pub fn flow_differential(v: &AlgebraVector, t: f64) -> AlgebraVector {
    AlgebraVector {
        c_x: v.c_x,
        c_plus: v.c_plus * (-t).exp(),
        c_minus: v.c_minus * t.exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const X: AlgebraVector = AlgebraVector { c_x: 1.0, c_plus: 0.0, c_minus: 0.0 };
    const UP: AlgebraVector = AlgebraVector { c_x: 0.0, c_plus: 1.0, c_minus: 0.0 };
    const UM: AlgebraVector = AlgebraVector { c_x: 0.0, c_plus: 0.0, c_minus: 1.0 };

    #[test]
    fn flow_exponential_closed_form() {
        let g = exp_generator(Direction::Flow, 4.0f64.ln()).unwrap();
        assert!((g.m[0] - 2.0).abs() < 1e-15);
        assert!((g.m[3] - 0.5).abs() < 1e-15);
        assert_eq!(g.m[1], 0.0);
        assert_eq!(g.m[2], 0.0);
    }

    #[test]
    fn generator_parameter_domain_is_enforced() {
        assert!(exp_generator(Direction::Flow, 50.0).is_err());
        assert!(exp_generator(Direction::StablePlus, f64::NAN).is_err());
        assert!(exp_generator(Direction::UnstableMinus, -49.9).is_ok());
    }

    #[test]
    fn flow_conjugation_contracts_stable_offsets() {
        // a(-t) n+(u) a(t) = n+(u e^{-t}).
        let t = 2.0;
        let u = 0.1;
        let conj = flow_matrix(-t).mul(&n_plus(u)).mul(&flow_matrix(t));
        let expect = 0.1 * (-2.0f64).exp();
        assert!((conj.m[1] - expect).abs() < 1e-15, "offset {}", conj.m[1]);
        assert!((conj.m[0] - 1.0).abs() < 1e-15);
        assert!((conj.m[2]).abs() < 1e-15);
        // And the unstable side expands symmetrically.
        let conj = flow_matrix(-t).mul(&n_minus(u)).mul(&flow_matrix(t));
        assert!((conj.m[2] - 0.1 * 2.0f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn brackets_match_the_structure_constants() {
        // [X, U+] = U+, [X, U-] = -U-, [U-, U+] = -2X.
        let b = X.bracket(&UP);
        assert!((b.c_plus - 1.0).abs() < 1e-15 && b.c_x.abs() < 1e-15 && b.c_minus.abs() < 1e-15);
        let b = X.bracket(&UM);
        assert!((b.c_minus + 1.0).abs() < 1e-15 && b.c_x.abs() < 1e-15);
        let b = UM.bracket(&UP);
        assert!((b.c_x + 2.0).abs() < 1e-15 && b.c_plus.abs() < 1e-15 && b.c_minus.abs() < 1e-15);
    }

    #[test]
    fn contact_pairing_values() {
        assert_eq!(contact_alpha(&X), 1.0);
        assert_eq!(contact_alpha(&UP), 0.0);
        assert_eq!(contact_alpha(&UM), 0.0);
        assert!((contact_d_alpha(&UM, &UP) - 2.0).abs() < 1e-15);
        assert!((contact_d_alpha(&UP, &UM) + 2.0).abs() < 1e-15);
        assert!(contact_d_alpha(&X, &UP).abs() < 1e-15);
        assert!(contact_d_alpha(&X, &UM).abs() < 1e-15);
    }

    #[test]
    fn d_alpha_matches_a_finite_difference_circulation() {
        // Circulation of alpha around the small loop
        // exp(s v) exp(s w) exp(-s v) exp(-s w) approaches s^2 d_alpha(v, w).
        let v = AlgebraVector::new(0.2, -0.7, 0.4);
        let w = AlgebraVector::new(-0.1, 0.3, 0.9);
        let s = 1e-3;
        let scale = |a: &AlgebraVector, f: f64| AlgebraVector::new(a.c_x * f, a.c_plus * f, a.c_minus * f);
        let loop_el = scale(&v, s)
            .exp()
            .mul(&scale(&w, s).exp())
            .mul(&scale(&v, -s).exp())
            .mul(&scale(&w, -s).exp());
        // The loop is exp(s^2 [v, w] + O(s^3)); alpha of its log gives the
        // circulation up to sign.
        let log = loop_el.log().unwrap();
        let circ = contact_alpha(&log) / (s * s);
        let expect = -contact_d_alpha(&v, &w);
        assert!(
            (circ - expect).abs() < 1e-2 * expect.abs().max(1.0),
            "circ {circ} vs {expect}"
        );
    }

    #[test]
    fn log_inverts_exp_in_all_branches() {
        let cases = [
            AlgebraVector::new(0.3, 0.1, -0.2),   // hyperbolic-ish
            AlgebraVector::new(0.0, 0.4, -0.5),   // elliptic (th2 < 0)
            AlgebraVector::new(0.0, 0.3, 0.0),    // parabolic
            AlgebraVector::new(1e-9, 2e-9, -1e-9),
            AlgebraVector::new(-0.6, 0.2, 0.3),
        ];
        for v in cases {
            let g = v.exp();
            let back = g.log().unwrap();
            assert!(
                (back.c_x - v.c_x).abs() < 1e-12
                    && (back.c_plus - v.c_plus).abs() < 1e-12
                    && (back.c_minus - v.c_minus).abs() < 1e-12,
                "roundtrip failed for {v:?}: {back:?}"
            );
        }
    }

    #[test]
    fn log_respects_the_projective_sign() {
        let v = AlgebraVector::new(0.2, -0.1, 0.3);
        let g = v.exp();
        let neg = GroupElement { m: [-g.m[0], -g.m[1], -g.m[2], -g.m[3]] };
        let back = neg.log().unwrap();
        assert!((back.c_x - v.c_x).abs() < 1e-12);
    }

    #[test]
    fn determinant_is_renormalized_under_long_products() {
        let mut g = GroupElement::IDENTITY;
        let step = exp_generator(Direction::Flow, 0.37).unwrap();
        let twist = exp_generator(Direction::StablePlus, 0.21).unwrap();
        for _ in 0..10_000 {
            g = g.mul(&step).mul(&twist).mul(&step.inverse());
        }
        assert!((g.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_normalization_is_canonical() {
        let g = GroupElement::from_entries(-2.0, 0.3, 0.1, -0.515).unwrap();
        assert!(g.m[0] > 0.0);
        let h = GroupElement::from_entries(2.0, -0.3, -0.1, 0.515).unwrap();
        assert!(g.approx_eq(&h, 1e-12));
    }

    #[test]
    fn flow_differential_preserves_alpha_exactly() {
        let v = AlgebraVector::new(0.7, -0.3, 0.15);
        for &t in &[0.1, 1.0, 5.0, 10.0, -3.0] {
            let w = flow_differential(&v, t);
            assert_eq!(contact_alpha(&w), contact_alpha(&v));
        }
    }

    #[test]
    fn opnorm_matches_hand_value() {
        // diag(2, 3) has spectral norm 3.
        assert!((opnorm2(&[2.0, 0.0, 0.0, 3.0]) - 3.0).abs() < 1e-14);
    }
}
