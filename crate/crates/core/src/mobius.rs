//! Exact 2×2 complex matrix layer: `SL(2,C)` elements, their Möbius action on
//! the Riemann sphere, norms, Cartan decomposition and the trace trichotomy.

use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band around the real interval `[0, 4]` used by [`classify`].
pub const CLASSIFY_TOL: f64 = 1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A matrix of determinant one, viewed as an element of `PSL(2,C)`.
///
/// Stored entries are always a canonical sign representative: the first
/// entry (in the order `a, b, c, d`) that is not negligible has positive
/// real part, or zero real part and positive imaginary part.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            self.a, self.b, self.c, self.d
        )
    }
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement {
        a: ONE,
        b: ZERO,
        c: ZERO,
        d: ONE,
    };

    /// Builds an element from arbitrary entries, dividing by a square root of
    /// the determinant.
    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Result<Self> {
        let det = a * d - b * c;
        let scale = (a.norm_sqr() + b.norm_sqr() + c.norm_sqr() + d.norm_sqr()).max(f64::MIN_POSITIVE);
        if !det.is_finite() || det.norm() <= 1e-14 * scale {
            return Err(Error::Singular);
        }
        let s = det.sqrt();
        Ok(Self::from_raw(a / s, b / s, c / s, d / s))
    }

    /// Real-entry convenience constructor.
    pub fn real(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        Self::new(a.into(), b.into(), c.into(), d.into())
    }

    /// `diag(t, 1/t)`.
    pub fn diag(t: Complex64) -> Self {
        Self::from_raw(t, ZERO, ZERO, t.inv())
    }

    /// Rotation of the sphere by `angle` about the axis through the unit
    /// vector `axis` (as an element of `SU(2)`).
    pub fn rotation(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = (0.5 * angle).sin_cos();
        // exp(-i angle/2 n.sigma)
        Self::from_raw(
            Complex64::new(c, -s * z),
            Complex64::new(-s * y, -s * x),
            Complex64::new(s * y, -s * x),
            Complex64::new(c, s * z),
        )
    }

    /// Entries assumed to already have determinant one.
    pub(crate) fn from_raw(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        GroupElement { a, b, c, d }.canonical()
    }

    fn canonical(self) -> Self {
        let tiny = 1e-12 * self.frobenius_sq().sqrt();
        for e in [self.a, self.b, self.c, self.d] {
            if e.norm() > tiny {
                let positive = e.re > 0.0 || (e.re == 0.0 && e.im > 0.0);
                return if positive { self } else { self.neg() };
            }
        }
        self
    }

    fn neg(self) -> Self {
        GroupElement {
            a: -self.a,
            b: -self.b,
            c: -self.c,
            d: -self.d,
        }
    }

    pub fn entries(&self) -> [Complex64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn det(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> Complex64 {
        self.a + self.d
    }

    /// `Tr² g`, well defined on `PSL(2,C)`.
    pub fn trace_sq(&self) -> Complex64 {
        let t = self.trace();
        t * t
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.a.norm_sqr() + self.b.norm_sqr() + self.c.norm_sqr() + self.d.norm_sqr()
    }

    pub fn inverse(&self) -> Self {
        Self::from_raw(self.d, -self.b, -self.c, self.a)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_raw(self.a.conj(), self.c.conj(), self.b.conj(), self.d.conj())
    }

    /// `g^n` by repeated squaring.
    pub fn pow(&self, n: u32) -> Self {
        let mut result = Self::IDENTITY;
        let mut base = *self;
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = compose(&result, &base);
            }
            base = compose(&base, &base);
            e >>= 1;
        }
        result
    }

    /// Equality in `PSL(2,C)`: `g = ±h` entrywise within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        let plus = self
            .entries()
            .iter()
            .zip(other.entries())
            .all(|(x, y)| (x - y).norm() <= tol);
        let minus = self
            .entries()
            .iter()
            .zip(other.entries())
            .all(|(x, y)| (x + y).norm() <= tol);
        plus || minus
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.approx_eq(&Self::IDENTITY, tol)
    }

    /// Unitary up to `tol` in the Frobenius sense of `g* g - I`.
    pub fn is_unitary(&self, tol: f64) -> bool {
        (self.frobenius_sq() - 2.0).abs() <= tol
    }

    /// Homogeneous action on a (not necessarily normalised) vector of `C²`.
    #[inline]
    pub fn act_vec(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    /// The affine formula `z ↦ (az+b)/(cz+d)`; `None` at the pole.
    pub fn mobius(&self, z: Complex64) -> Option<Complex64> {
        let den = self.c * z + self.d;
        if den == ZERO {
            None
        } else {
            Some((self.a * z + self.b) / den)
        }
    }
}

impl Mul for GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: GroupElement) -> GroupElement {
        compose(&self, &rhs)
    }
}

impl Mul for &GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: &GroupElement) -> GroupElement {
        compose(self, rhs)
    }
}

/// Matrix product `g·h`, renormalised to determinant one when the
/// determinant drifts by more than its own rounding error. For long,
/// ill-conditioned products `ad − bc` cancels, and dividing by it would
/// inject that error into every entry.
pub fn compose(g: &GroupElement, h: &GroupElement) -> GroupElement {
    let a = g.a * h.a + g.b * h.c;
    let b = g.a * h.b + g.b * h.d;
    let c = g.c * h.a + g.d * h.c;
    let d = g.c * h.b + g.d * h.d;
    let det = a * d - b * c;
    let noise = 4.0 * f64::EPSILON * ((a * d).norm() + (b * c).norm());
    if (det - ONE).norm() > noise.max(1e-15) {
        let s = det.sqrt();
        GroupElement::from_raw(a / s, b / s, c / s, d / s)
    } else {
        GroupElement::from_raw(a, b, c, d)
    }
}

/// Point of the projective line in unit-normalised homogeneous coordinates
/// `[z0 : z1]`; the affine coordinate is `z = z0 / z1`, so `[1:0]` is `∞`.
///
/// The first nonzero coordinate is rotated to be real and positive.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjPoint {
    z0: Complex64,
    z1: Complex64,
}

impl fmt::Debug for ProjPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} : {}]", self.z0, self.z1)
    }
}

impl ProjPoint {
    pub const ZERO: ProjPoint = ProjPoint { z0: ZERO, z1: ONE };
    pub const INFINITY: ProjPoint = ProjPoint { z0: ONE, z1: ZERO };

    /// Normalises a nonzero vector of `C²`.
    pub fn from_vec(z0: Complex64, z1: Complex64) -> Result<Self> {
        let n = (z0.norm_sqr() + z1.norm_sqr()).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(Self::normalize(z0, z1, n))
    }

    #[inline]
    fn normalize(z0: Complex64, z1: Complex64, n: f64) -> Self {
        let pivot = if z0 != ZERO { z0 } else { z1 };
        let phase = pivot.conj() / (pivot.norm() * n);
        ProjPoint {
            z0: z0 * phase,
            z1: z1 * phase,
        }
    }

    /// `[z : 1]`.
    pub fn affine(z: Complex64) -> Self {
        let n = (z.norm_sqr() + 1.0).sqrt();
        Self::normalize(z, ONE, n)
    }

    /// Point on the unit sphere `S² ⊂ R³` (stereographic, `∞` at the north pole).
    pub fn from_sphere(x: [f64; 3]) -> Self {
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let (x0, x1, x2) = (x[0] / n, x[1] / n, x[2] / n);
        // z0 conj(z1) = (x + iy)/2, |z0|² - |z1|² = z
        let a = ((1.0 + x2) / 2.0).max(0.0).sqrt();
        let b = ((1.0 - x2) / 2.0).max(0.0).sqrt();
        if a >= b {
            // z0 = a real, z1 = conj((x+iy)/2)/a
            let z1 = Complex64::new(x0, -x1) / (2.0 * a);
            Self::normalize(Complex64::new(a, 0.0), z1, (a * a + z1.norm_sqr()).sqrt())
        } else {
            let z0 = Complex64::new(x0, x1) / (2.0 * b);
            Self::normalize(z0, Complex64::new(b, 0.0), (b * b + z0.norm_sqr()).sqrt())
        }
    }

    /// Inverse of [`ProjPoint::from_sphere`].
    pub fn to_sphere(&self) -> [f64; 3] {
        let w = self.z0 * self.z1.conj() * 2.0;
        [w.re, w.im, self.z0.norm_sqr() - self.z1.norm_sqr()]
    }

    pub fn coords(&self) -> (Complex64, Complex64) {
        (self.z0, self.z1)
    }

    pub fn vec(&self) -> [Complex64; 2] {
        [self.z0, self.z1]
    }

    /// Affine coordinate `z0 / z1`, `None` at `∞`.
    pub fn to_affine(&self) -> Option<Complex64> {
        if self.z1 == ZERO {
            None
        } else {
            Some(self.z0 / self.z1)
        }
    }

    /// Haar-uniform random point (image of a Gaussian vector of `C²`).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            if let Ok(p) = Self::from_vec(Complex64::new(v[0], v[1]), Complex64::new(v[2], v[3])) {
                return p;
            }
        }
    }
}

/// Möbius action of `g` on a point, in homogeneous coordinates.
#[inline]
pub fn apply(g: &GroupElement, p: &ProjPoint) -> ProjPoint {
    let [w0, w1] = g.act_vec([p.z0, p.z1]);
    let n = (w0.norm_sqr() + w1.norm_sqr()).sqrt();
    ProjPoint::normalize(w0, w1, n)
}

/// Chordal distance `|z0 w1 - z1 w0|` on unit representatives; diameter 1.
#[inline]
pub fn spherical_distance(p: &ProjPoint, q: &ProjPoint) -> f64 {
    (p.z0 * q.z1 - p.z1 * q.z0).norm().min(1.0)
}

/// Largest singular value of a 2×2 complex matrix (any determinant).
#[inline]
pub fn raw_operator_norm(m: &[Complex64; 4]) -> f64 {
    // (σ₁ ± σ₂)² = ∥m∥²_F ± 2|det m|; the difference is written as a sum
    // of squares after rotating det m onto the positive axis.
    let det = m[0] * m[3] - m[1] * m[2];
    let phase = if det.norm() > 0.0 {
        (det / det.norm()).sqrt().conj()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let [a, b, c, d] = m.map(|x| x * phase);
    let f = a.norm_sqr() + b.norm_sqr() + c.norm_sqr() + d.norm_sqr();
    let minus = (a - d.conj()).norm_sqr() + (b + c.conj()).norm_sqr();
    let plus = (f + 2.0 * det.norm()).max(0.0);
    0.5 * (plus.sqrt() + minus.sqrt())
}

/// Operator norm `∥g∥ = λ ≥ 1`.
pub fn operator_norm(g: &GroupElement) -> f64 {
    raw_operator_norm(&g.entries()).max(1.0)
}

/// `θ_g(x) = log ∥g v∥ / ∥v∥` for a lift `v` of `x`.
#[inline]
pub fn theta(g: &GroupElement, p: &ProjPoint) -> f64 {
    let [w0, w1] = g.act_vec([p.z0, p.z1]);
    0.5 * (w0.norm_sqr() + w1.norm_sqr()).ln()
}

/// `g = k · diag(λ, 1/λ) · k'` with `k, k'` in `SU(2)`.
#[derive(Clone, Copy, Debug)]
pub struct CartanTriple {
    pub k: GroupElement,
    pub lambda: f64,
    pub k_prime: GroupElement,
}

impl CartanTriple {
    pub fn reconstruct(&self) -> GroupElement {
        let a = GroupElement::diag(Complex64::new(self.lambda, 0.0));
        compose(&compose(&self.k, &a), &self.k_prime)
    }
}

/// Cartan decomposition from the eigen-decomposition of `g* g`.
pub fn cartan(g: &GroupElement) -> CartanTriple {
    let f = g.frobenius_sq();
    if f - 2.0 <= 1e-14 {
        return CartanTriple {
            k: *g,
            lambda: 1.0,
            k_prime: GroupElement::IDENTITY,
        };
    }
    let lambda = operator_norm(g);
    let top = lambda * lambda;
    // g* g = [[p, q], [conj q, s]]
    let p = g.a.norm_sqr() + g.c.norm_sqr();
    let s = g.b.norm_sqr() + g.d.norm_sqr();
    let q = g.a.conj() * g.b + g.c.conj() * g.d;
    let cand1 = [q, Complex64::new(top - p, 0.0)];
    let cand2 = [Complex64::new(top - s, 0.0), q.conj()];
    let n1 = cand1[0].norm_sqr() + cand1[1].norm_sqr();
    let n2 = cand2[0].norm_sqr() + cand2[1].norm_sqr();
    let (v, n) = if n1 >= n2 { (cand1, n1) } else { (cand2, n2) };
    let n = n.sqrt();
    let v1 = [v[0] / n, v[1] / n];
    // V = [v1 v2] with det V = 1
    let v2 = [-v1[1].conj(), v1[0].conj()];
    // U = g V diag(1/λ, λ)
    let gv1 = g.act_vec(v1);
    let gv2 = g.act_vec(v2);
    let k = GroupElement {
        a: gv1[0] / lambda,
        b: gv2[0] * lambda,
        c: gv1[1] / lambda,
        d: gv2[1] * lambda,
    }
    .canonical();
    // k' = V*
    let k_prime = GroupElement {
        a: v1[0].conj(),
        b: v1[1].conj(),
        c: v2[0].conj(),
        d: v2[1].conj(),
    }
    .canonical();
    CartanTriple { k, lambda, k_prime }
}

/// Conjugacy type of a Möbius map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MobiusClass {
    Identity,
    Parabolic,
    Elliptic,
    Loxodromic,
}

/// Trichotomy on `Tr² g` with a `CLASSIFY_TOL` band.
pub fn classify(g: &GroupElement) -> MobiusClass {
    if g.is_identity(CLASSIFY_TOL) {
        return MobiusClass::Identity;
    }
    let t2 = g.trace_sq();
    if (t2 - Complex64::new(4.0, 0.0)).norm() <= CLASSIFY_TOL {
        return MobiusClass::Parabolic;
    }
    let dist_re = if t2.re < 0.0 {
        -t2.re
    } else if t2.re > 4.0 {
        t2.re - 4.0
    } else {
        0.0
    };
    if dist_re.hypot(t2.im) <= CLASSIFY_TOL {
        MobiusClass::Elliptic
    } else {
        MobiusClass::Loxodromic
    }
}

/// Fixed points of `g`: one point for parabolic maps, two otherwise. For a
/// loxodromic map the attracting point comes first.
pub fn fixed_points(g: &GroupElement) -> Result<Vec<ProjPoint>> {
    let class = classify(g);
    if class == MobiusClass::Identity {
        return Err(Error::IdentityInput);
    }
    let tr = g.trace();
    let disc = (tr * tr - Complex64::new(4.0, 0.0)).sqrt();
    let eigvec = |ev: Complex64| -> Result<ProjPoint> {
        let c1 = [g.b, ev - g.a];
        let c2 = [ev - g.d, g.c];
        let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
        let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
        if n1 >= n2 {
            ProjPoint::from_vec(c1[0], c1[1])
        } else {
            ProjPoint::from_vec(c2[0], c2[1])
        }
    };
    if class == MobiusClass::Parabolic {
        return Ok(vec![eigvec(tr * 0.5)?]);
    }
    let l1 = (tr + disc) * 0.5;
    let l2 = (tr - disc) * 0.5;
    let (big, small) = if l1.norm() >= l2.norm() { (l1, l2) } else { (l2, l1) };
    Ok(vec![eigvec(big)?, eigvec(small)?])
}

/// Random element with Gaussian entries, renormalised to determinant one.
pub fn random_element<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> GroupElement {
    loop {
        let mut z = [ZERO; 4];
        for e in z.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *e = Complex64::new(re, im) * scale;
        }
        // perturb around the identity so that `scale` controls the norm
        if let Ok(g) = GroupElement::new(z[0] + ONE, z[1], z[2], z[3] + ONE) {
            return g;
        }
    }
}

/// Haar-random element of `SU(2)`.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R) -> GroupElement {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n > 1e-12 {
            let a = Complex64::new(q[0], q[1]) / n;
            let b = Complex64::new(q[2], q[3]) / n;
            return GroupElement::from_raw(a, b, -b.conj(), a.conj());
        }
    }
}
