//! Upper half-plane geometry and the geodesic flow on its unit tangent bundle.
//!
//! Everything lives in one global chart `(x, y, θ)` of T¹ℍ²: `(x, y)` is the
//! base point with `y > 0` and `θ` is the direction of the unit vector
//! measured against the Euclidean horizontal. A unit vector at height `y`
//! has Euclidean chart length `y`.
//!
//! The geodesic flow is evaluated in closed form by moving `v` to the upward
//! vector at `i` with an isometry, translating along the imaginary axis and
//! moving back. Its differential is the exact chain rule through that
//! conjugation. The Sasaki form used for all norms and angles is
//!
//! ```text
//! |(dx, dy, dθ)|² = (dx² + dy²) / y² + (dθ + dx / y)²
//! ```
//!
//! which is the horizontal part plus the covariant derivative of the unit
//! vector field (the Levi-Civita connection form of the frame `y∂x, y∂y` is
//! `dx / y`).

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, TAU};
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest |t| accepted by [`geodesic_flow`]; `e^{t}` overflows beyond it.
pub const MAX_FLOW_TIME: f64 = 700.0;

/// Largest |t| accepted by [`dgeodesic_flow`].
pub const MAX_DIFFERENTIAL_TIME: f64 = 50.0;

/// Tolerance on `ad - bc = 1` after normalization.
pub const DET_TOL: f64 = 1e-12;

/// Tangent vector to T¹ℍ² in chart components `(dx, dy, dθ)`.
pub type TangentVec3 = Vector3<f64>;

/// Reduce an angle to `[0, 2π)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Reduce an angle difference to `(-π, π]`.
#[inline]
pub fn wrap_signed(delta: f64) -> f64 {
    let r = wrap_angle(delta);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// A point of the upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    pub x: f64,
    pub y: f64,
}

impl HPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) || y <= 0.0 {
            return Err(Error::Domain(format!("({x}, {y}) is not in the upper half-plane")));
        }
        Ok(Self { x, y })
    }

    /// The point `i`.
    pub const fn i() -> Self {
        Self { x: 0.0, y: 1.0 }
    }

    /// Hyperbolic distance.
    pub fn distance(&self, other: &HPoint) -> f64 {
        self.cosh_distance(other).max(1.0).acosh()
    }

    /// `cosh` of the hyperbolic distance, cheaper than [`HPoint::distance`]
    /// when only comparisons are needed.
    #[inline]
    pub fn cosh_distance(&self, other: &HPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        1.0 + (dx * dx + dy * dy) / (2.0 * self.y * other.y)
    }
}

/// A unit tangent vector: base point plus chart direction angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTangent {
    pub base: HPoint,
    pub theta: f64,
}

impl UnitTangent {
    pub fn new(base: HPoint, theta: f64) -> Self {
        Self {
            base,
            theta: wrap_angle(theta),
        }
    }

    /// Convenience constructor from raw chart coordinates.
    pub fn from_chart(x: f64, y: f64, theta: f64) -> Result<Self> {
        Ok(Self::new(HPoint::new(x, y)?, theta))
    }

    /// The upward unit vector at `i`, the reference point of the flow.
    pub fn reference() -> Self {
        Self {
            base: HPoint::i(),
            theta: FRAC_PI_2,
        }
    }

    /// Chart vector `(y cos θ, y sin θ)` of the unit vector.
    pub fn chart_direction(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.base.y * c, self.base.y * s)
    }

    fn check_finite(&self) -> Result<()> {
        if self.base.x.is_finite() && self.base.y.is_finite() && self.base.y > 0.0 && self.theta.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("non-finite unit tangent {self:?}")))
        }
    }
}

/// An orientation-preserving isometry of ℍ², stored as a matrix of
/// determinant one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobiusMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl MobiusMap {
    /// Normalize `[[a, b], [c, d]]` to determinant one.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let det = a * d - b * c;
        if !det.is_finite() || det <= 0.0 {
            return Err(Error::Domain(format!(
                "matrix [[{a}, {b}], [{c}, {d}]] has non-positive determinant {det}"
            )));
        }
        let s = det.sqrt().recip();
        Ok(Self {
            a: a * s,
            b: b * s,
            c: c * s,
            d: d * s,
        })
    }

    pub const fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    /// `z ↦ z + shift`.
    pub fn translation(shift: f64) -> Self {
        Self {
            a: 1.0,
            b: shift,
            c: 0.0,
            d: 1.0,
        }
    }

    /// `z ↦ factor · z` for `factor > 0`.
    pub fn dilation(factor: f64) -> Self {
        let r = factor.sqrt();
        Self {
            a: r,
            b: 0.0,
            c: 0.0,
            d: r.recip(),
        }
    }

    /// Hyperbolic translation of length `t` along the imaginary axis,
    /// `diag(e^{t/2}, e^{-t/2})`.
    pub fn axial(t: f64) -> Self {
        let h = 0.5 * t;
        Self {
            a: h.exp(),
            b: 0.0,
            c: 0.0,
            d: (-h).exp(),
        }
    }

    /// Rotation about `i` turning tangent directions at `i` by `phi`.
    pub fn rotation(phi: f64) -> Self {
        let (s, c) = (0.5 * phi).sin_cos();
        Self {
            a: c,
            b: s,
            c: -s,
            d: c,
        }
    }

    /// Hyperbolic translation of length `t` along the unit semicircle,
    /// moving `i` towards `+1`.
    pub fn semicircle_translation(t: f64) -> Self {
        let (c, s) = ((0.5 * t).cosh(), (0.5 * t).sinh());
        Self { a: c, b: s, c: s, d: c }
    }

    /// The isometry taking the reference vector (upward at `i`) to `v`.
    pub fn standard_frame(v: &UnitTangent) -> Self {
        let r = v.base.y.sqrt();
        let lift = Self {
            a: r,
            b: v.base.x / r,
            c: 0.0,
            d: r.recip(),
        };
        lift * Self::rotation(v.theta - FRAC_PI_2)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn inverse(&self) -> Self {
        Self {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// Re-normalize after accumulated rounding.
    pub fn renormalized(&self) -> Self {
        Self::new(self.a, self.b, self.c, self.d).unwrap_or(*self)
    }

    /// Translation length `2 acosh(|tr| / 2)`; zero for non-hyperbolic maps.
    pub fn translation_length(&self) -> f64 {
        let t = 0.5 * self.trace().abs();
        if t <= 1.0 {
            0.0
        } else {
            2.0 * t.acosh()
        }
    }

    /// Entrywise distance to `±other`.
    pub fn projective_distance(&self, other: &MobiusMap) -> f64 {
        let plus = (self.a - other.a)
            .abs()
            .max((self.b - other.b).abs())
            .max((self.c - other.c).abs())
            .max((self.d - other.d).abs());
        let minus = (self.a + other.a)
            .abs()
            .max((self.b + other.b).abs())
            .max((self.c + other.c).abs())
            .max((self.d + other.d).abs());
        plus.min(minus)
    }

    /// Denominator `cz + d` as `(re, im)`.
    #[inline]
    fn denominator(&self, p: &HPoint) -> (f64, f64) {
        (self.c * p.x + self.d, self.c * p.y)
    }

    /// Fractional-linear action on a point.
    pub fn apply(&self, p: &HPoint) -> Result<HPoint> {
        let (dr, di) = self.denominator(p);
        let den = dr * dr + di * di;
        let nr = self.a * p.x + self.b;
        let ni = self.a * p.y;
        let x = (nr * dr + ni * di) / den;
        let y = p.y / den;
        if !(x.is_finite() && y.is_finite()) || y <= 0.0 {
            return Err(Error::Domain(format!("mobius action on {p:?} is not finite")));
        }
        Ok(HPoint { x, y })
    }

    /// Action on unit tangent vectors through the complex derivative
    /// `1 / (cz + d)²`.
    pub fn apply_unit(&self, v: &UnitTangent) -> Result<UnitTangent> {
        let base = self.apply(&v.base)?;
        let (dr, di) = self.denominator(&v.base);
        Ok(UnitTangent::new(base, v.theta - 2.0 * di.atan2(dr)))
    }

    /// Push a chart tangent vector at `v` forward under the induced map of
    /// T¹ℍ².
    pub fn push_tangent(&self, v: &UnitTangent, w: &TangentVec3) -> TangentVec3 {
        self.tangent_jacobian(v) * w
    }

    /// Chart Jacobian of the induced map of T¹ℍ² at `v`.
    pub fn tangent_jacobian(&self, v: &UnitTangent) -> Matrix3<f64> {
        let (dr, di) = self.denominator(&v.base);
        let den = dr * dr + di * di;
        // m'(z) = 1 / (cz+d)^2 = conj(cz+d)^2 / |cz+d|^4
        let inv_r = dr / den;
        let inv_i = -di / den;
        let mr = inv_r * inv_r - inv_i * inv_i;
        let mi = 2.0 * inv_r * inv_i;
        // dθ' = dθ - 2 Im(c dz / (cz + d)); c/(cz+d) = c (inv_r + i inv_i)
        let qr = self.c * inv_r;
        let qi = self.c * inv_i;
        Matrix3::new(
            mr,
            -mi,
            0.0, //
            mi,
            mr,
            0.0, //
            -2.0 * qi,
            -2.0 * qr,
            1.0,
        )
    }
}

impl Mul for MobiusMap {
    type Output = MobiusMap;

    fn mul(self, rhs: MobiusMap) -> MobiusMap {
        MobiusMap {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }
}

/// Ordered strong-stable, center and strong-unstable directions at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnosovFrame {
    pub e_ss: TangentVec3,
    pub e_c: TangentVec3,
    pub e_uu: TangentVec3,
}

impl AnosovFrame {
    /// Columns `(e_ss, e_c, e_uu)`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.e_ss, self.e_c, self.e_uu])
    }

    pub fn get(&self, index: usize) -> TangentVec3 {
        match index {
            0 => self.e_ss,
            1 => self.e_c,
            _ => self.e_uu,
        }
    }
}

/// Image of `i e^{t}` under the rotation by `theta - π/2`, returned together
/// with the transported direction.
#[inline]
fn rotated_axis_point(theta: f64, t: f64) -> (f64, f64, f64) {
    let (s, c) = (0.5 * (theta - FRAC_PI_2)).sin_cos();
    let (ep, em) = ((0.5 * t).exp(), (-0.5 * t).exp());
    // [[c, s], [-s, c]] · diag(ep, em) applied to i
    let (a, b, cc, d) = (c * ep, s * em, -s * ep, c * em);
    let (dr, di) = (d, cc);
    let den = dr * dr + di * di;
    let x = (b * dr + a * di) / den;
    let y = 1.0 / den;
    let theta_out = FRAC_PI_2 - 2.0 * di.atan2(dr);
    (x, y, theta_out)
}

fn check_time(t: f64, max: f64) -> Result<()> {
    if !t.is_finite() || t.abs() > max {
        return Err(Error::Range(format!("flow time {t} outside [-{max}, {max}]")));
    }
    Ok(())
}

/// Time-`t` map of the geodesic flow.
pub fn geodesic_flow(v: &UnitTangent, t: f64) -> Result<UnitTangent> {
    check_time(t, MAX_FLOW_TIME)?;
    v.check_finite()?;
    let (rx, ry, theta) = rotated_axis_point(v.theta, t);
    let base = HPoint {
        x: v.base.x + v.base.y * rx,
        y: v.base.y * ry,
    };
    if !(base.x.is_finite() && base.y.is_finite()) || base.y <= 0.0 {
        return Err(Error::Range(format!(
            "geodesic flow of {v:?} for time {t} left the chart"
        )));
    }
    Ok(UnitTangent::new(base, theta))
}

/// Chart Jacobian of `geodesic_flow(·, t)` at `v`.
///
/// With `z' = X + iY` the rotated axis point, the flow reads
/// `(x + yX, yY, Θ)`; the θ-derivatives are `∂(X + iY) = (1 + z'²)/2` and
/// `∂Θ = Y`.
pub fn geodesic_flow_jacobian(v: &UnitTangent, t: f64) -> Result<Matrix3<f64>> {
    check_time(t, MAX_DIFFERENTIAL_TIME)?;
    v.check_finite()?;
    let (x, y, _) = rotated_axis_point(v.theta, t);
    let dx = 0.5 * (1.0 + x * x - y * y);
    let dy = x * y;
    let h = v.base.y;
    Ok(Matrix3::new(
        1.0,
        x,
        h * dx, //
        0.0,
        y,
        h * dy, //
        0.0,
        0.0,
        y,
    ))
}

/// Differential of the time-`t` map at `v` applied to `w`.
pub fn dgeodesic_flow(v: &UnitTangent, t: f64, w: &TangentVec3) -> Result<TangentVec3> {
    Ok(geodesic_flow_jacobian(v, t)? * w)
}

/// Generator of the geodesic flow at `v`.
pub fn flow_generator(v: &UnitTangent) -> TangentVec3 {
    let (s, c) = v.theta.sin_cos();
    TangentVec3::new(v.base.y * c, v.base.y * s, -c)
}

/// Gram form of the Sasaki metric in the `(dx, dy, dθ)` chart.
pub fn sasaki_gram(v: &UnitTangent) -> Matrix3<f64> {
    let iy = v.base.y.recip();
    let iy2 = iy * iy;
    Matrix3::new(
        2.0 * iy2,
        0.0,
        iy, //
        0.0,
        iy2,
        0.0, //
        iy,
        0.0,
        1.0,
    )
}

#[inline]
pub fn sasaki_inner(v: &UnitTangent, a: &TangentVec3, b: &TangentVec3) -> f64 {
    let iy = v.base.y.recip();
    let h = iy * iy * (a.x * b.x + a.y * b.y);
    let va = a.z + a.x * iy;
    let vb = b.z + b.x * iy;
    h + va * vb
}

#[inline]
pub fn sasaki_norm(v: &UnitTangent, a: &TangentVec3) -> f64 {
    sasaki_inner(v, a, a).max(0.0).sqrt()
}

/// Angle in `[0, π/2]` between the line spanned by `a` and the line spanned
/// by `b`, measured with the Sasaki form at `v`.
pub fn sasaki_line_angle(v: &UnitTangent, a: &TangentVec3, b: &TangentVec3) -> f64 {
    let na = sasaki_norm(v, a);
    let nb = sasaki_norm(v, b);
    let par = sasaki_inner(v, a, b).abs() / (na * nb);
    let perp = (1.0 - par * par).max(0.0).sqrt();
    perp.atan2(par)
}

/// Chart difference `b - a` with the angle wrapped into `(-π, π]`.
pub fn chart_difference(a: &UnitTangent, b: &UnitTangent) -> TangentVec3 {
    TangentVec3::new(b.base.x - a.base.x, b.base.y - a.base.y, wrap_signed(b.theta - a.theta))
}

/// First-order Sasaki distance between nearby unit tangents, using the form
/// at the chart midpoint.
pub fn sasaki_distance(a: &UnitTangent, b: &UnitTangent) -> f64 {
    let d = chart_difference(a, b);
    let mid = UnitTangent {
        base: HPoint {
            x: 0.5 * (a.base.x + b.base.x),
            y: 0.5 * (a.base.y + b.base.y),
        },
        theta: a.theta,
    };
    sasaki_norm(&mid, &d)
}

/// The Sasaki-orthonormal frame adapted to the Anosov splitting.
///
/// `e_c` is the flow generator; with `h` the horizontal lift of the unit
/// normal `θ + π/2` and `w = ∂θ`, `e_uu = (h + w)/√2` and `e_ss = (h - w)/√2`.
pub fn anosov_frame(v: &UnitTangent) -> AnosovFrame {
    let (s, c) = v.theta.sin_cos();
    let y = v.base.y;
    let h = TangentVec3::new(-y * s, y * c, s);
    let w = TangentVec3::new(0.0, 0.0, 1.0);
    AnosovFrame {
        e_ss: (h - w) * FRAC_1_SQRT_2,
        e_c: TangentVec3::new(y * c, y * s, -c),
        e_uu: (h + w) * FRAC_1_SQRT_2,
    }
}
