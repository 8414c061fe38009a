//! Double-double Möbius matrices for building group elements from long
//! words without losing the discreteness of the group to rounding.

use std::ops::Mul;

use twofloat::TwoFloat;

use crate::hypgeo::MobiusMap;

fn dd(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

fn to_f64(x: TwoFloat) -> f64 {
    x.hi() + x.lo()
}

/// Quotient to double-double accuracy (the crate's division is not).
pub fn div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

/// `e^x` to double-double accuracy (halving plus Taylor series).
pub fn exp(x: f64) -> TwoFloat {
    const HALVINGS: i32 = 12;
    let r = dd(x) * (1.0 / 4096.0);
    let mut term = dd(1.0);
    let mut sum = dd(1.0);
    for n in 1..=14 {
        term = div(term * r, dd(n as f64));
        sum += term;
    }
    for _ in 0..HALVINGS {
        sum = sum * sum;
    }
    sum
}

/// An `SL(2, ℝ)` matrix with double-double entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdMobius {
    pub a: TwoFloat,
    pub b: TwoFloat,
    pub c: TwoFloat,
    pub d: TwoFloat,
}

impl DdMobius {
    pub fn identity() -> Self {
        Self {
            a: dd(1.0),
            b: dd(0.0),
            c: dd(0.0),
            d: dd(1.0),
        }
    }

    /// Translation by `t` along the imaginary axis.
    pub fn axial(t: f64) -> Self {
        let e = exp(0.5 * t);
        Self {
            a: e,
            b: dd(0.0),
            c: dd(0.0),
            d: div(dd(1.0), e),
        }
    }

    /// Translation along the unit semicircle by the distance with the given
    /// hyperbolic cosine.
    pub fn semicircle_translation(cosh_t: TwoFloat) -> Self {
        let ch = ((cosh_t + 1.0) * 0.5).sqrt();
        let sh = ((cosh_t - 1.0) * 0.5).sqrt();
        Self {
            a: ch,
            b: sh,
            c: sh,
            d: ch,
        }
    }

    /// Half-turn about `i`, `z ↦ -1/z`.
    pub fn half_turn() -> Self {
        Self {
            a: dd(0.0),
            b: dd(1.0),
            c: dd(-1.0),
            d: dd(0.0),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// `‖M ∓ I‖` with the sign minimizing it.
    pub fn distance_to_identity(&self) -> f64 {
        let plus = [self.a - 1.0, self.b, self.c, self.d - 1.0];
        let minus = [self.a + 1.0, self.b, self.c, self.d + 1.0];
        let norm = |v: [TwoFloat; 4]| v.iter().map(|x| to_f64(*x).powi(2)).sum::<f64>().sqrt();
        norm(plus).min(norm(minus))
    }

    /// `‖M ∓ N‖` up to sign.
    pub fn projective_distance(&self, other: &Self) -> f64 {
        (*self * other.inverse()).distance_to_identity()
    }

    /// Hyperboloid coordinates of `M·i` (with `i ↦ (1, 0, 0)`) and
    /// `cosh d(i, M·i) - 1`, all free of cancellation.
    pub fn orbit_point(&self) -> ([f64; 3], f64) {
        let top = self.a * self.a + self.b * self.b;
        let bottom = self.c * self.c + self.d * self.d;
        let q0 = (top + bottom) * 0.5;
        let q1 = (top - bottom) * 0.5;
        let q2 = -(self.a * self.c + self.b * self.d);
        ([to_f64(q0), to_f64(q1), to_f64(q2)], to_f64(q0 - 1.0))
    }

    /// `(x/y, ln y)` of `M·i`.
    pub fn orbit_chart(&self) -> (f64, f64) {
        let bottom = self.c * self.c + self.d * self.d;
        (to_f64(self.a * self.c + self.b * self.d), -to_f64(bottom).ln())
    }

    pub fn to_mobius(self) -> MobiusMap {
        MobiusMap::new(to_f64(self.a), to_f64(self.b), to_f64(self.c), to_f64(self.d)).expect("unimodular")
    }
}

impl Mul for DdMobius {
    type Output = Self;

    fn mul(self, o: Self) -> Self {
        Self {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_is_double_double_accurate() {
        for x in [0.0125, 0.5, 1.0, 3.7, -2.3, 9.0] {
            let p = exp(x) * exp(-x) - 1.0;
            assert!(to_f64(p).abs() < 1e-26, "{x}: {p:?}");
            assert!((to_f64(exp(x)) - x.exp()).abs() <= 2.0 * f64::EPSILON * x.exp());
        }
    }

    #[test]
    fn division_is_double_double_accurate() {
        let q = div(dd(3.0), dd(7.0));
        assert!(to_f64(q * 7.0 - 3.0).abs() < 1e-30);
        let e = exp(0.0125);
        assert!(to_f64(div(dd(1.0), e) * e - 1.0).abs() < 1e-30);
    }

    #[test]
    fn orbit_point_is_on_the_hyperboloid() {
        let m = DdMobius::semicircle_translation(dd(3.0)) * DdMobius::axial(0.7);
        let (q, c) = m.orbit_point();
        assert!((q[0] * q[0] - q[1] * q[1] - q[2] * q[2] - 1.0).abs() < 1e-12);
        let p = m.to_mobius().apply(&crate::HPoint { x: 0.0, y: 1.0 }).unwrap();
        assert!((p.cosh_distance(&crate::HPoint { x: 0.0, y: 1.0 }) - 1.0 - c).abs() < 1e-12);
    }
}
