//! The collar about a short closed geodesic, its Dehn twist and the
//! volume-preserving twist.
//!
//! Collar coordinates are `(x̄, ȳ) ∈ [0, 1] × ℝ/ℓℤ` with metric
//! `dx̄² + cosh²(x̄) dȳ²`: `x̄` is the distance to the core geodesic and `ȳ`
//! the arclength along it. The unit tangent angle `α` is measured in the
//! orthonormal frame `(∂x̄, cosh⁻¹(x̄) ∂ȳ)`, so `α = 0` points along the
//! geodesics `ȳ = const`.
//!
//! The collar is realized in ℍ² by Fermi coordinates about the imaginary
//! axis, `z = e^{ȳ} (tanh x̄ + i sech x̄)`; the deck transformation of the
//! annulus is `z ↦ e^{ℓ} z`. In these coordinates the twist
//! `(x̄, ȳ) ↦ (x̄, ȳ + ℓ ρ(x̄))` lifts to the dilation
//! `z ↦ z · exp(ℓ ρ(x̄(z)))`, which is how every map below is evaluated on
//! T¹ℍ².

use std::f64::consts::TAU;
use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conecert::{GridSpec, SystemSlot};
use crate::error::{Error, Result};
use crate::hypgeo::{
    anosov_frame, geodesic_flow, geodesic_flow_jacobian, sasaki_gram, sasaki_line_angle, wrap_angle, AnosovFrame,
    HPoint, UnitTangent,
};
use crate::quadrature::gauss_legendre8;

/// Smallest supported core length; below it the chart is badly conditioned.
pub const MIN_ELL: f64 = 1e-4;

/// `ρ'(1/2)` of the unit-winding profile, `e^{-4} / ∫₀¹ exp(-1/(t(1-t))) dt`.
pub const PROFILE_SLOPE_AT_HALF: f64 = 2.605_406_514_520_028;

/// Upper bound on `ℓ` below which the width-one collar embeds,
/// `2 asinh(1 / sinh 1)`.
pub fn collar_threshold() -> f64 {
    2.0 * (1.0 / 1f64.sinh()).asinh()
}

/// Gudermannian `atan(sinh x)`: chart angle between `∂x̄` and the horizontal.
#[inline]
fn gudermannian(x: f64) -> f64 {
    x.sinh().atan()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollarParams {
    pub ell: f64,
}

impl CollarParams {
    pub fn new(ell: f64) -> Result<Self> {
        if !ell.is_finite() || ell <= MIN_ELL {
            return Err(Error::Range(format!("collar length {ell} must exceed {MIN_ELL}")));
        }
        if ell >= collar_threshold() {
            return Err(Error::Range(format!(
                "collar length {ell} is not below the embedding threshold {:.6}",
                collar_threshold()
            )));
        }
        Ok(Self { ell })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollarPoint {
    pub xbar: f64,
    pub ybar: f64,
}

impl CollarPoint {
    /// Validates `x̄ ∈ [0, 1]` and reduces `ȳ` into `[0, ℓ)`.
    pub fn new(xbar: f64, ybar: f64, params: &CollarParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&xbar) || !ybar.is_finite() {
            return Err(Error::Domain(format!(
                "collar point ({xbar}, {ybar}) outside [0,1] × ℝ"
            )));
        }
        Ok(Self {
            xbar,
            ybar: reduce_mod(ybar, params.ell),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollarUnitTangent {
    pub point: CollarPoint,
    pub alpha: f64,
}

impl CollarUnitTangent {
    pub fn new(point: CollarPoint, alpha: f64) -> Self {
        Self {
            point,
            alpha: wrap_angle(alpha),
        }
    }
}

#[inline]
fn reduce_mod(y: f64, ell: f64) -> f64 {
    let r = y.rem_euclid(ell);
    if r >= ell {
        0.0
    } else {
        r
    }
}

// Cumulative integrals of the bump exp(-1/(t(1-t))) on [0, 1/2].
const PROFILE_PANELS: usize = 512;

struct ProfileTable {
    step: f64,
    cumulative: Vec<f64>,
    half_mass: f64,
}

fn bump(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

fn profile_table() -> &'static ProfileTable {
    static TABLE: OnceLock<ProfileTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let step = 0.5 / PROFILE_PANELS as f64;
        let mut cumulative = Vec::with_capacity(PROFILE_PANELS + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 0..PROFILE_PANELS {
            acc += gauss_legendre8(bump, step * k as f64, step * (k + 1) as f64);
            cumulative.push(acc);
        }
        ProfileTable {
            step,
            cumulative,
            half_mass: acc,
        }
    })
}

/// Normalized integral of the standard bump: `Φ(0) = 0`, `Φ(1/2) = 1/2`,
/// `Φ(1) = 1`, flat at both ends.
fn profile(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > 0.5 {
        return 1.0 - profile(1.0 - x);
    }
    let table = profile_table();
    let k = ((x / table.step) as usize).min(PROFILE_PANELS);
    let left = table.step * k as f64;
    let partial = if x > left { gauss_legendre8(bump, left, x) } else { 0.0 };
    (table.cumulative[k] + partial) / (2.0 * table.half_mass)
}

fn profile_derivative(x: f64) -> f64 {
    bump(x) / (2.0 * profile_table().half_mass)
}

fn profile_second_derivative(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let q = x * (1.0 - x);
    bump(x) * (1.0 - 2.0 * x) / (q * q) / (2.0 * profile_table().half_mass)
}

/// A flat-ended increasing twist profile `ρ = winding · Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwistFunction {
    pub winding: u32,
}

impl Default for TwistFunction {
    fn default() -> Self {
        Self { winding: 1 }
    }
}

impl TwistFunction {
    pub fn new(winding: u32) -> Result<Self> {
        if winding == 0 {
            return Err(Error::Config("twist winding must be positive".into()));
        }
        Ok(Self { winding })
    }

    /// `(ρ(x), ρ'(x))` for `x ∈ [0, 1]`.
    pub fn eval(&self, x: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("twist argument {x} outside [0, 1]")));
        }
        Ok((self.value(x), self.derivative(x)))
    }

    /// Value, extended by the constants `0` and `winding` outside `[0, 1]`.
    pub fn value(&self, x: f64) -> f64 {
        self.winding as f64 * profile(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.winding as f64 * profile_derivative(x)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.winding as f64 * profile_second_derivative(x)
    }
}

/// `ρ_ℓ(x̄, ȳ) = (x̄, ȳ + ℓ ρ(x̄) mod ℓ)`.
pub fn dehn_twist(p: &CollarPoint, params: &CollarParams, rho: &TwistFunction) -> CollarPoint {
    CollarPoint {
        xbar: p.xbar,
        ybar: reduce_mod(p.ybar + params.ell * rho.value(p.xbar), params.ell),
    }
}

/// Twist by the reversed profile; inverse of [`dehn_twist`].
pub fn inverse_dehn_twist(p: &CollarPoint, params: &CollarParams, rho: &TwistFunction) -> CollarPoint {
    CollarPoint {
        xbar: p.xbar,
        ybar: reduce_mod(p.ybar - params.ell * rho.value(p.xbar), params.ell),
    }
}

/// Shear coefficient of the twist differential in the orthonormal frame:
/// the chart matrix `[[1, 0], [ℓρ', 1]]` becomes `[[1, 0], [ℓρ' cosh x̄, 1]]`.
#[inline]
fn frame_shear(xbar: f64, params: &CollarParams, rho: &TwistFunction) -> f64 {
    params.ell * rho.derivative(xbar) * xbar.cosh()
}

/// Circle map `D_x̄` induced on unit vectors at `x̄` by the twist.
pub fn circle_map(xbar: f64, alpha: f64, params: &CollarParams, rho: &TwistFunction) -> f64 {
    let k = frame_shear(xbar, params, rho);
    let (s, c) = alpha.sin_cos();
    wrap_angle((s + k * c).atan2(c))
}

/// Inverse circle map `D_x̄⁻¹`.
pub fn inverse_circle_map(xbar: f64, alpha: f64, params: &CollarParams, rho: &TwistFunction) -> f64 {
    let k = frame_shear(xbar, params, rho);
    let (s, c) = alpha.sin_cos();
    wrap_angle((s - k * c).atan2(c))
}

/// The map `Dρ_ℓ` induced by the twist on unit tangent vectors.
pub fn dehn_twist_differential(v: &CollarUnitTangent, params: &CollarParams, rho: &TwistFunction) -> CollarUnitTangent {
    CollarUnitTangent::new(
        dehn_twist(&v.point, params, rho),
        circle_map(v.point.xbar, v.alpha, params, rho),
    )
}

/// The volume-preserving twist `h`: base moves as the Dehn twist, `α` is kept.
pub fn vp_twist(v: &CollarUnitTangent, params: &CollarParams, rho: &TwistFunction) -> CollarUnitTangent {
    CollarUnitTangent::new(dehn_twist(&v.point, params, rho), v.alpha)
}

/// `h'` with `h = h' ∘ Dρ`: undoes the circle map, fixes the base.
pub fn vp_correction(v: &CollarUnitTangent, params: &CollarParams, rho: &TwistFunction) -> CollarUnitTangent {
    CollarUnitTangent::new(v.point, inverse_circle_map(v.point.xbar, v.alpha, params, rho))
}

/// Density of the Liouville measure against `dx̄ dȳ dα`.
pub fn liouville_density(v: &CollarUnitTangent) -> f64 {
    // cosh x̄ (cosh⁻¹x̄ cos²α + cosh x̄ sin²α), written so that it is exactly
    // one on x̄ = 0 and on α ∈ {0, π}.
    let sh = v.point.xbar.sinh();
    let s = v.alpha.sin();
    1.0 + sh * sh * s * s
}

/// Jacobian of the volume-preserving twist against the Liouville density.
///
/// The chart Jacobian of `(x̄, ȳ + ℓρ(x̄), α)` is unipotent, the map keeps
/// `x̄` and `α`, and the density does not depend on `ȳ`; the ratio is
/// therefore exactly one.
pub fn vp_twist_jacobian(v: &CollarUnitTangent, params: &CollarParams, rho: &TwistFunction) -> f64 {
    let image = vp_twist(v, params, rho);
    liouville_density(&image) / liouville_density(v)
}

/// Jacobian of [`dehn_twist_differential`] against the Liouville density.
/// Not identically one; this is why the volume-preserving variant exists.
pub fn dehn_twist_jacobian(v: &CollarUnitTangent, params: &CollarParams, rho: &TwistFunction) -> f64 {
    let k = frame_shear(v.point.xbar, params, rho);
    let (s, c) = v.alpha.sin_cos();
    let dalpha = 1.0 / (c * c + (s + k * c).powi(2));
    let image = dehn_twist_differential(v, params, rho);
    liouville_density(&image) * dalpha / liouville_density(v)
}

/// Fermi coordinates about the imaginary axis, `ȳ` not reduced.
pub fn fermi_to_halfplane(xbar: f64, ybar: f64) -> HPoint {
    let e = ybar.exp();
    HPoint {
        x: e * xbar.tanh(),
        y: e / xbar.cosh(),
    }
}

/// Inverse of [`fermi_to_halfplane`] on all of ℍ²: `(x̄, ȳ)` with `x̄` the
/// signed distance to the imaginary axis (positive for `Re z > 0`).
pub fn halfplane_to_fermi(p: &HPoint) -> (f64, f64) {
    let xbar = (p.x / p.y).asinh();
    let ybar = 0.5 * (p.x * p.x + p.y * p.y).ln();
    (xbar, ybar)
}

/// Embed a collar point into ℍ² (the representative with `ȳ ∈ [0, ℓ)`).
pub fn collar_to_halfplane(p: &CollarPoint, _params: &CollarParams) -> HPoint {
    fermi_to_halfplane(p.xbar, p.ybar)
}

/// Inverse of [`collar_to_halfplane`]; fails off the strip `0 ≤ x̄ ≤ 1`.
pub fn halfplane_to_collar(p: &HPoint, params: &CollarParams) -> Result<CollarPoint> {
    const EDGE_TOL: f64 = 1e-12;
    let (xbar, ybar) = halfplane_to_fermi(p);
    if !(-EDGE_TOL..=1.0 + EDGE_TOL).contains(&xbar) {
        return Err(Error::Domain(format!(
            "{p:?} is at signed distance {xbar} from the collar core"
        )));
    }
    CollarPoint::new(xbar.clamp(0.0, 1.0), ybar, params)
}

/// Lift a collar unit tangent to T¹ℍ²; the chart angle is `α - gd(x̄)`.
pub fn collar_tangent_to_unit(v: &CollarUnitTangent, params: &CollarParams) -> UnitTangent {
    UnitTangent::new(
        collar_to_halfplane(&v.point, params),
        v.alpha - gudermannian(v.point.xbar),
    )
}

pub fn unit_to_collar_tangent(v: &UnitTangent, params: &CollarParams) -> Result<CollarUnitTangent> {
    let point = halfplane_to_collar(&v.base, params)?;
    Ok(CollarUnitTangent::new(point, v.theta + gudermannian(point.xbar)))
}

/// Which map of the unit tangent bundle the collar twist induces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwistMode {
    /// No twist; the reference for sweeps.
    Identity,
    /// The differential `Dρ` of the Dehn twist.
    Dehn,
    /// The volume-preserving twist `h`, which keeps the frame angle.
    Vp,
}

impl TwistMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TwistMode::Identity => "identity",
            TwistMode::Dehn => "dehn",
            TwistMode::Vp => "vp",
        }
    }
}

impl std::str::FromStr for TwistMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(TwistMode::Identity),
            "dehn" => Ok(TwistMode::Dehn),
            "vp" => Ok(TwistMode::Vp),
            other => Err(Error::Config(format!("unknown twist mode '{other}'"))),
        }
    }
}

/// Value and derivatives up to order two of the base twist lifted to ℍ².
#[derive(Debug, Clone, Copy)]
pub struct BaseJet {
    pub value: HPoint,
    pub first: Matrix2<f64>,
    /// `second[k]` is the Hessian of component `k`.
    pub second: [Matrix2<f64>; 2],
}

/// The collar twist lifted to ℍ² and T¹ℍ², fixing the core geodesic.
///
/// `sign = -1` gives the inverse map; it shares `x̄` with the forward map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedTwist {
    pub params: CollarParams,
    pub rho: TwistFunction,
    pub mode: TwistMode,
    pub sign: f64,
}

impl LiftedTwist {
    pub fn new(params: CollarParams, rho: TwistFunction, mode: TwistMode) -> Self {
        Self {
            params,
            rho,
            mode,
            sign: 1.0,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            sign: -self.sign,
            ..*self
        }
    }

    fn strength(&self) -> f64 {
        match self.mode {
            TwistMode::Identity => 0.0,
            _ => self.sign * self.params.ell,
        }
    }

    /// Base map `z ↦ z exp(±ℓ ρ(x̄(z)))`.
    pub fn apply_point(&self, p: &HPoint) -> HPoint {
        let (xbar, _) = halfplane_to_fermi(p);
        let g = (self.strength() * self.rho.value(xbar)).exp();
        HPoint { x: p.x * g, y: p.y * g }
    }

    /// Derivatives of the base map. With `u = x/y = sinh x̄` and
    /// `G(u) = exp(±ℓ ρ(asinh u))` the map is `(x G, y G)`.
    pub fn base_jet(&self, p: &HPoint) -> BaseJet {
        let (x, y) = (p.x, p.y);
        let u = x / y;
        let a = u.asinh();
        let w = 1.0 + u * u;
        let k = self.strength();
        let q1 = k * self.rho.derivative(a) / w.sqrt();
        let q2 = k * self.rho.second_derivative(a) / w - k * self.rho.derivative(a) * u / (w * w.sqrt());
        let g = (k * self.rho.value(a)).exp();
        let g1 = g * q1;
        let g2 = g * (q2 + q1 * q1);
        let (ux, uy) = (1.0 / y, -x / (y * y));
        let (uxx, uxy, uyy) = (0.0, -1.0 / (y * y), 2.0 * x / (y * y * y));

        let first = Matrix2::new(
            g + x * g1 * ux,
            x * g1 * uy, //
            y * g1 * ux,
            g + y * g1 * uy,
        );
        let f1xx = 2.0 * g1 * ux + x * (g2 * ux * ux + g1 * uxx);
        let f1xy = g1 * uy + x * (g2 * ux * uy + g1 * uxy);
        let f1yy = x * (g2 * uy * uy + g1 * uyy);
        let f2xx = y * (g2 * ux * ux + g1 * uxx);
        let f2xy = g1 * ux + y * (g2 * ux * uy + g1 * uxy);
        let f2yy = 2.0 * g1 * uy + y * (g2 * uy * uy + g1 * uyy);
        BaseJet {
            value: HPoint { x: x * g, y: y * g },
            first,
            second: [
                Matrix2::new(f1xx, f1xy, f1xy, f1yy),
                Matrix2::new(f2xx, f2xy, f2xy, f2yy),
            ],
        }
    }

    /// The induced map of T¹ℍ².
    pub fn apply(&self, v: &UnitTangent) -> UnitTangent {
        match self.mode {
            TwistMode::Identity => *v,
            TwistMode::Vp => UnitTangent::new(self.apply_point(&v.base), v.theta),
            TwistMode::Dehn => {
                let jet = self.base_jet(&v.base);
                let (s, c) = v.theta.sin_cos();
                let d = jet.first * Vector2::new(c, s);
                UnitTangent::new(jet.value, d.y.atan2(d.x))
            }
        }
    }

    /// Chart Jacobian of [`LiftedTwist::apply`] at `v`.
    pub fn jacobian(&self, v: &UnitTangent) -> Matrix3<f64> {
        match self.mode {
            TwistMode::Identity => Matrix3::identity(),
            TwistMode::Vp => {
                let j = self.base_jet(&v.base).first;
                Matrix3::new(j[(0, 0)], j[(0, 1)], 0.0, j[(1, 0)], j[(1, 1)], 0.0, 0.0, 0.0, 1.0)
            }
            TwistMode::Dehn => {
                let jet = self.base_jet(&v.base);
                let j = jet.first;
                let (s, c) = v.theta.sin_cos();
                let e = Vector2::new(c, s);
                let d = j * e;
                let n2 = d.norm_squared();
                // dθ' = (d_x dd_y - d_y dd_x) / |d|²
                let angle_rate = |dd: Vector2<f64>| (d.x * dd.y - d.y * dd.x) / n2;
                let column = |k: usize| {
                    // derivative of J along the k-th base coordinate
                    let dj = Matrix2::new(
                        jet.second[0][(0, k)],
                        jet.second[0][(1, k)],
                        jet.second[1][(0, k)],
                        jet.second[1][(1, k)],
                    );
                    angle_rate(dj * e)
                };
                let dtheta = angle_rate(j * Vector2::new(-s, c));
                Matrix3::new(
                    j[(0, 0)],
                    j[(0, 1)],
                    0.0,
                    j[(1, 0)],
                    j[(1, 1)],
                    0.0,
                    column(0),
                    column(1),
                    dtheta,
                )
            }
        }
    }
}

/// Sup-norm deviations of a lifted twist from the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RespectfulMetrics {
    /// Largest Sasaki angle between the pushed splitting and the splitting
    /// at the image, over `σ ∈ {ss, c, uu}`.
    pub angle_dev: f64,
    /// Largest `|‖v‖_{h*g} / ‖v‖_g - 1|`: the uniform distance between the
    /// pulled-back Sasaki norm and the original one.
    pub metric_dist: f64,
    /// Largest derivative deviation up to order two of the base map after
    /// normalizing the evaluation point to `i` (fiber angle to order one).
    pub c2_dist: f64,
}

/// Grid points of the unit tangent bundle of the collar, lifted to T¹ℍ².
/// Axes are `(x̄, ȳ / ℓ, α / 2π)` in the grid's own ranges.
pub fn collar_grid(params: &CollarParams, grid: &GridSpec) -> Result<Vec<UnitTangent>> {
    if grid.dimension() != 3 {
        return Err(Error::Config(format!(
            "collar grids are 3-dimensional, got {}",
            grid.dimension()
        )));
    }
    Ok(grid
        .nodes()?
        .into_iter()
        .map(|n| {
            let (xbar, ybar, alpha) = (n[0], n[1] * params.ell, n[2] * TAU);
            UnitTangent::new(fermi_to_halfplane(xbar, ybar), alpha - gudermannian(xbar))
        })
        .collect())
}

/// The standard `(x̄, ȳ, α)` collar grid with `resolution` nodes per axis.
pub fn default_collar_grid(resolution: usize) -> GridSpec {
    GridSpec::regular(vec![resolution; 3], vec![(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)])
}

fn node_metrics(twist: &LiftedTwist, v: &UnitTangent) -> RespectfulMetrics {
    let image = twist.apply(v);
    let jac = twist.jacobian(v);
    let source = anosov_frame(v);
    let target = anosov_frame(&image);
    let mut angle_dev: f64 = 0.0;
    for k in 0..3 {
        let pushed = jac * source.get(k);
        angle_dev = angle_dev.max(sasaki_line_angle(&image, &pushed, &target.get(k)));
    }

    // Distance of the norms: sup over g-unit v of |‖v‖_{h*g} - 1|. With
    // μ the eigenvalues of h*g - g in a g-orthonormal frame this is
    // max |√(1 + μ) - 1|, written to stay exact when h*g = g.
    let frame = source.matrix();
    let diff = frame.transpose() * (jac.transpose() * sasaki_gram(&image) * jac - sasaki_gram(v)) * frame;
    let eig = SymmetricEigen::new(0.5 * (diff + diff.transpose()));
    let metric_dist = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, mu| m.max((mu / (1.0 + (1.0 + mu).max(0.0).sqrt())).abs()));

    let jet = twist.base_jet(&v.base);
    let y0 = v.base.y;
    let mut c2: f64 = ((jet.value.x - v.base.x).abs().max((jet.value.y - v.base.y).abs())) / y0;
    c2 = c2.max((jet.first - Matrix2::identity()).abs().max());
    c2 = c2.max(y0 * jet.second[0].abs().max().max(jet.second[1].abs().max()));
    c2 = c2.max(wrap_angle_abs(image.theta - v.theta));
    let fiber_row = (jac.fixed_view::<1, 3>(2, 0) - Matrix3::identity().fixed_view::<1, 3>(2, 0))
        .abs()
        .max();
    c2 = c2.max(fiber_row);

    RespectfulMetrics {
        angle_dev,
        metric_dist,
        c2_dist: c2,
    }
}

fn wrap_angle_abs(d: f64) -> f64 {
    let r = wrap_angle(d);
    r.min(TAU - r)
}

/// Sup over the collar grid of the three deviations of the lifted twist.
pub fn respectful_metrics(
    params: &CollarParams,
    rho: &TwistFunction,
    mode: TwistMode,
    grid: &GridSpec,
) -> Result<RespectfulMetrics> {
    if grid.counts.iter().any(|&c| c < 16) {
        return Err(Error::Config(
            "respectful metrics need at least 16 nodes per axis".into(),
        ));
    }
    let twist = LiftedTwist::new(*params, *rho, mode);
    let points = collar_grid(params, grid)?;
    let per_node: Vec<RespectfulMetrics> = points.par_iter().map(|v| node_metrics(&twist, v)).collect();
    Ok(per_node.iter().fold(
        RespectfulMetrics {
            angle_dev: 0.0,
            metric_dist: 0.0,
            c2_dist: 0.0,
        },
        |acc, m| RespectfulMetrics {
            angle_dev: acc.angle_dev.max(m.angle_dev),
            metric_dist: acc.metric_dist.max(m.metric_dist),
            c2_dist: acc.c2_dist.max(m.c2_dist),
        },
    ))
}

/// Twist composed with the time-one geodesic map, lifted to T¹ℍ².
///
/// The forward system samples its grid at `g⁻¹(w)` for `w` in the collar so
/// that the twist acts on every sampled image; the inverse system samples
/// `w` directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollarSystem {
    pub twist: LiftedTwist,
    pub flow_time: f64,
    inverse: bool,
}

impl CollarSystem {
    pub fn new(params: CollarParams, rho: TwistFunction, mode: TwistMode) -> Self {
        Self {
            twist: LiftedTwist::new(params, rho, mode),
            flow_time: 1.0,
            inverse: false,
        }
    }

    /// The pure time-one geodesic map sampled over the same collar grid.
    pub fn pure_flow(params: CollarParams) -> Self {
        Self::new(params, TwistFunction::default(), TwistMode::Identity)
    }

    pub fn is_inverse(&self) -> bool {
        self.inverse
    }
}

impl SystemSlot for CollarSystem {
    type Point = UnitTangent;

    fn evaluate(&self, p: &UnitTangent) -> Result<UnitTangent> {
        if self.inverse {
            geodesic_flow(&self.twist.inverse().apply(p), -self.flow_time)
        } else {
            Ok(self.twist.apply(&geodesic_flow(p, self.flow_time)?))
        }
    }

    fn jacobian(&self, p: &UnitTangent) -> Result<Matrix3<f64>> {
        if self.inverse {
            let inv = self.twist.inverse();
            let mid = inv.apply(p);
            Ok(geodesic_flow_jacobian(&mid, -self.flow_time)? * inv.jacobian(p))
        } else {
            let mid = geodesic_flow(p, self.flow_time)?;
            Ok(self.twist.jacobian(&mid) * geodesic_flow_jacobian(p, self.flow_time)?)
        }
    }

    fn gram(&self, p: &UnitTangent) -> Matrix3<f64> {
        sasaki_gram(p)
    }

    fn reference_frame(&self, p: &UnitTangent) -> AnosovFrame {
        anosov_frame(p)
    }

    fn sample_points(&self, grid: &GridSpec) -> Result<Vec<UnitTangent>> {
        let images = collar_grid(&self.twist.params, grid)?;
        if self.inverse {
            Ok(images)
        } else {
            images.iter().map(|w| geodesic_flow(w, -self.flow_time)).collect()
        }
    }
}

impl crate::conecert::Invertible for CollarSystem {
    type Inverse = CollarSystem;

    fn inverse(&self) -> CollarSystem {
        CollarSystem {
            inverse: !self.inverse,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypgeo::{chart_difference, wrap_signed, TangentVec3};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const PHI_AT_03: f64 = 0.079_064_906_498_123_07; // mpmath, 30 digits

    fn params(ell: f64) -> CollarParams {
        CollarParams::new(ell).unwrap()
    }

    fn random_collar_tangent(rng: &mut ChaCha8Rng, p: &CollarParams) -> CollarUnitTangent {
        CollarUnitTangent::new(
            CollarPoint::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..p.ell), p).unwrap(),
            rng.gen_range(0.0..TAU),
        )
    }

    #[test]
    fn threshold_and_param_validation() {
        assert_relative_eq!(collar_threshold(), 1.543_873_665_810_609_6, epsilon = 1e-12);
        assert!(CollarParams::new(1e-5).is_err());
        assert!(CollarParams::new(1.6).is_err());
        assert!(CollarParams::new(0.4).is_ok());
    }

    #[test]
    fn twist_eval_examples() {
        let rho = TwistFunction::default();
        assert_eq!(rho.eval(0.0).unwrap(), (0.0, 0.0));
        assert_eq!(rho.eval(1.0).unwrap(), (1.0, 0.0));
        let (v, d) = rho.eval(0.5).unwrap();
        assert_eq!(v, 0.5);
        assert_relative_eq!(d, PROFILE_SLOPE_AT_HALF, epsilon = 1e-12);
        let h = 1e-5;
        let fd = (rho.value(0.5 + h) - rho.value(0.5 - h)) / (2.0 * h);
        assert!((fd - d).abs() < 1e-8);
        assert!(rho.eval(-0.1).is_err() && rho.eval(1.1).is_err());
    }

    #[test]
    fn profile_matches_high_precision_quadrature() {
        assert!((profile(0.3) - PHI_AT_03).abs() < 1e-14);
        assert!((profile(0.7) - (1.0 - PHI_AT_03)).abs() < 1e-14);
    }

    #[test]
    fn profile_is_monotone_and_flat() {
        let rho = TwistFunction::new(2).unwrap();
        let mut prev = -1.0;
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            let v = rho.value(x);
            assert!(v >= prev);
            // away from the ends the increments are above rounding
            if (50..=950).contains(&k) {
                assert!(v > prev);
            }
            prev = v;
        }
        assert_eq!(rho.value(0.5), 1.0);
        // derivatives up to order four vanish at the ends (finite differences)
        let h = 1e-2;
        for &end in &[0.0, 1.0] {
            let f = |t: f64| rho.derivative(end + t);
            let d1 = (f(h) - f(-h)) / (2.0 * h);
            let d2 = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
            let d3 = (f(2.0 * h) - 2.0 * f(h) + 2.0 * f(-h) - f(-2.0 * h)) / (2.0 * h * h * h);
            assert!(f(0.0).abs() < 1e-6 && d1.abs() < 1e-6 && d2.abs() < 1e-6 && d3.abs() < 1e-6);
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let rho = TwistFunction::default();
        for &x in &[0.1, 0.3, 0.5, 0.8] {
            let h = 1e-5;
            let fd = (rho.derivative(x + h) - rho.derivative(x - h)) / (2.0 * h);
            assert!((fd - rho.second_derivative(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn dehn_twist_examples() {
        let rho = TwistFunction::default();
        let p = params(0.5);
        let a = dehn_twist(&CollarPoint::new(0.0, 0.3, &p).unwrap(), &p, &rho);
        assert_relative_eq!(a.ybar, 0.3, epsilon = 1e-15);
        let b = dehn_twist(&CollarPoint::new(1.0, 0.1, &p).unwrap(), &p, &rho);
        assert_relative_eq!(b.ybar, 0.1, epsilon = 1e-15);
        let q = params(0.4);
        let c = dehn_twist(&CollarPoint::new(0.5, 0.0, &q).unwrap(), &q, &rho);
        assert_relative_eq!(c.ybar, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn twist_is_inverted_by_reverse_profile() {
        let rho = TwistFunction::default();
        let p = params(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let q = CollarPoint::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.3), &p).unwrap();
            let back = inverse_dehn_twist(&dehn_twist(&q, &p, &rho), &p, &rho);
            let d = (back.ybar - q.ybar).abs();
            assert!(d.min(p.ell - d) < 1e-12);
        }
    }

    #[test]
    fn twist_differential_examples() {
        let rho = TwistFunction::default();
        let p = params(0.4);
        let v = CollarUnitTangent::new(CollarPoint::new(0.0, 0.1, &p).unwrap(), 1.3);
        assert_eq!(dehn_twist_differential(&v, &p, &rho).alpha, v.alpha);

        let v = CollarUnitTangent::new(CollarPoint::new(0.5, 0.1, &p).unwrap(), 0.0);
        let img = dehn_twist_differential(&v, &p, &rho);
        let expected = (0.4 * PROFILE_SLOPE_AT_HALF * 0.5f64.cosh()).atan();
        assert_relative_eq!(img.alpha, expected, epsilon = 1e-12);

        // finite-difference transport of the unit vector through the base map
        let h = 1e-6;
        let (xb, yb): (f64, f64) = (0.5, 0.1);
        let dir = (0.0f64.cos(), 0.0f64.sin() / xb.cosh());
        let a = dehn_twist(&CollarPoint::new(xb + h * dir.0, yb + h * dir.1, &p).unwrap(), &p, &rho);
        let b = dehn_twist(&CollarPoint::new(xb - h * dir.0, yb - h * dir.1, &p).unwrap(), &p, &rho);
        let (dx, dy) = (a.xbar - b.xbar, a.ybar - b.ybar);
        let fd_alpha = (dy * xb.cosh()).atan2(dx);
        assert!((fd_alpha - img.alpha).abs() < 1e-7);
    }

    #[test]
    fn circle_map_deviation_is_linear_in_ell() {
        let rho = TwistFunction::default();
        let sup = |ell: f64| {
            let p = params(ell);
            let mut m: f64 = 0.0;
            for i in 0..=64 {
                for j in 0..64 {
                    let x = i as f64 / 64.0;
                    let a = TAU * j as f64 / 64.0;
                    m = m.max(wrap_signed(circle_map(x, a, &p, &rho) - a).abs());
                }
            }
            m
        };
        let ells = [0.4, 0.2, 0.1, 0.05];
        let devs: Vec<f64> = ells.iter().map(|&l| sup(l)).collect();
        for w in devs.windows(2) {
            let r = w[0] / w[1];
            assert!((1.5..=2.5).contains(&r), "ratio {r}");
        }
        // bounded by atan(ℓ max ρ' cosh 1)
        assert!(devs[3] <= (0.05 * PROFILE_SLOPE_AT_HALF * 1f64.cosh()).atan());
    }

    #[test]
    fn vp_twist_decomposes_through_dehn_differential() {
        let rho = TwistFunction::default();
        let p = params(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let v = random_collar_tangent(&mut rng, &p);
            let a = vp_twist(&v, &p, &rho);
            let b = vp_correction(&dehn_twist_differential(&v, &p, &rho), &p, &rho);
            assert!(wrap_signed(a.alpha - b.alpha).abs() < 1e-12);
            assert_eq!(a.point, b.point);
        }
        let v = CollarUnitTangent::new(CollarPoint::new(0.0, 0.2, &p).unwrap(), 2.0);
        assert_eq!(vp_twist(&v, &p, &rho), v);
        let q = params(0.4);
        let w = vp_twist(
            &CollarUnitTangent::new(CollarPoint::new(0.5, 0.0, &q).unwrap(), 1.0),
            &q,
            &rho,
        );
        assert_relative_eq!(w.point.ybar, 0.2, epsilon = 1e-15);
        assert_eq!(w.alpha, 1.0);
    }

    #[test]
    fn liouville_examples() {
        let at = |x: f64, a: f64| liouville_density(&CollarUnitTangent::new(CollarPoint { xbar: x, ybar: 0.0 }, a));
        assert_eq!(at(0.0, 1.234), 1.0);
        assert_relative_eq!(at(0.7, 0.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            at(1.0, std::f64::consts::FRAC_PI_2),
            1f64.cosh().powi(2),
            epsilon = 1e-14
        );
        assert_relative_eq!(at(1.0, std::f64::consts::FRAC_PI_2), 2.3811, epsilon = 1e-4);
        assert!(at(0.5, 0.3) > 1.0);
        assert_relative_eq!(at(0.5, PI), 1.0, epsilon = 1e-15);
    }

    /// Finite-difference Jacobian of a collar map against the Liouville density.
    fn fd_liouville_jacobian<F>(f: F, v: &CollarUnitTangent, ell: f64) -> f64
    where
        F: Fn(f64, f64, f64) -> (f64, f64, f64),
    {
        let h = 1e-6;
        let base = [v.point.xbar, v.point.ybar, v.alpha];
        let mut j = Matrix3::zeros();
        for k in 0..3 {
            let mut a = base;
            let mut b = base;
            a[k] += h;
            b[k] -= h;
            let fa = f(a[0], a[1], a[2]);
            let fb = f(b[0], b[1], b[2]);
            j[(0, k)] = (fa.0 - fb.0) / (2.0 * h);
            let dy = fa.1 - fb.1;
            j[(1, k)] = (dy - ell * (dy / ell).round()) / (2.0 * h);
            j[(2, k)] = wrap_signed(fa.2 - fb.2) / (2.0 * h);
        }
        let img = f(base[0], base[1], base[2]);
        let dens = |x: f64, a: f64| liouville_density(&CollarUnitTangent::new(CollarPoint { xbar: x, ybar: 0.0 }, a));
        dens(img.0, img.2) * j.determinant().abs() / dens(base[0], base[2])
    }

    #[test]
    fn vp_twist_preserves_liouville() {
        let rho = TwistFunction::default();
        for &ell in &[0.3, 0.4, 0.1] {
            let p = params(ell);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..1000 {
                let mut v = random_collar_tangent(&mut rng, &p);
                v.point.xbar = v.point.xbar.clamp(1e-5, 1.0 - 1e-5);
                assert_relative_eq!(vp_twist_jacobian(&v, &p, &rho), 1.0, epsilon = 1e-15);
                let fd = fd_liouville_jacobian(
                    |x, y, a| {
                        let w = vp_twist(&CollarUnitTangent::new(CollarPoint { xbar: x, ybar: y }, a), &p, &rho);
                        (w.point.xbar, w.point.ybar, w.alpha)
                    },
                    &v,
                    ell,
                );
                assert!((fd - 1.0).abs() < 1e-6, "fd jacobian {fd}");
            }
        }
    }

    #[test]
    fn dehn_jacobian_differs_from_one_and_matches_fd() {
        let rho = TwistFunction::default();
        let p = params(0.3);
        let v = CollarUnitTangent::new(CollarPoint::new(0.5, 0.1, &p).unwrap(), std::f64::consts::FRAC_PI_4);
        let j = dehn_twist_jacobian(&v, &p, &rho);
        let fd = fd_liouville_jacobian(
            |x, y, a| {
                let w = dehn_twist_differential(&CollarUnitTangent::new(CollarPoint { xbar: x, ybar: y }, a), &p, &rho);
                (w.point.xbar, w.point.ybar, w.alpha)
            },
            &v,
            0.3,
        );
        assert!((j - fd).abs() < 1e-6);
        assert!((j - 1.0).abs() > 1e-3);
    }

    #[test]
    fn collar_embedding_examples() {
        let p = params(0.3);
        let o = collar_to_halfplane(&CollarPoint::new(0.0, 0.0, &p).unwrap(), &p);
        assert_eq!((o.x, o.y), (0.0, 1.0));
        let a = fermi_to_halfplane(0.0, 0.15);
        let b = fermi_to_halfplane(0.0, 0.45);
        assert_relative_eq!(b.y / a.y, 0.3f64.exp(), epsilon = 1e-14);
        assert!(halfplane_to_collar(&HPoint::new(-1.0, 1.0).unwrap(), &p).is_err());
        assert!(halfplane_to_collar(&fermi_to_halfplane(1.3, 0.0), &p).is_err());
    }

    #[test]
    fn collar_round_trip() {
        let p = params(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let q = CollarPoint::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.3), &p).unwrap();
            let back = halfplane_to_collar(&collar_to_halfplane(&q, &p), &p).unwrap();
            assert!((back.xbar - q.xbar).abs() < 1e-12);
            let d = (back.ybar - q.ybar).abs();
            assert!(d.min(p.ell - d) < 1e-12);
        }
    }

    #[test]
    fn collar_metric_pullback() {
        for i in 0..20 {
            for j in 0..10 {
                let (xb, yb) = (i as f64 / 19.0, 0.3 * j as f64 / 10.0);
                let h = 1e-6;
                let dx = {
                    let a = fermi_to_halfplane(xb + h, yb);
                    let b = fermi_to_halfplane(xb - h, yb);
                    ((a.x - b.x) / (2.0 * h), (a.y - b.y) / (2.0 * h))
                };
                let dy = {
                    let a = fermi_to_halfplane(xb, yb + h);
                    let b = fermi_to_halfplane(xb, yb - h);
                    ((a.x - b.x) / (2.0 * h), (a.y - b.y) / (2.0 * h))
                };
                let y = fermi_to_halfplane(xb, yb).y;
                let g11 = (dx.0 * dx.0 + dx.1 * dx.1) / (y * y);
                let g12 = (dx.0 * dy.0 + dx.1 * dy.1) / (y * y);
                let g22 = (dy.0 * dy.0 + dy.1 * dy.1) / (y * y);
                assert!((g11 - 1.0).abs() < 1e-8);
                assert!(g12.abs() < 1e-8);
                assert!((g22 - xb.cosh().powi(2)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lifted_twist_agrees_with_collar_maps() {
        let rho = TwistFunction::default();
        let p = params(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for mode in [TwistMode::Dehn, TwistMode::Vp] {
            let lift = LiftedTwist::new(p, rho, mode);
            for _ in 0..300 {
                let v = random_collar_tangent(&mut rng, &p);
                let expected = match mode {
                    TwistMode::Dehn => dehn_twist_differential(&v, &p, &rho),
                    _ => vp_twist(&v, &p, &rho),
                };
                let got = unit_to_collar_tangent(&lift.apply(&collar_tangent_to_unit(&v, &p)), &p).unwrap();
                assert!((got.point.xbar - expected.point.xbar).abs() < 1e-12);
                let d = (got.point.ybar - expected.point.ybar).abs();
                assert!(d.min(p.ell - d) < 1e-12);
                assert!(wrap_signed(got.alpha - expected.alpha).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lifted_jacobians_match_finite_differences() {
        let rho = TwistFunction::default();
        let p = params(0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mode in [TwistMode::Dehn, TwistMode::Vp] {
            for sign in [1.0, -1.0] {
                let mut lift = LiftedTwist::new(p, rho, mode);
                lift.sign = sign;
                for _ in 0..100 {
                    let c = random_collar_tangent(&mut rng, &p);
                    let v = collar_tangent_to_unit(&c, &p);
                    let w = TangentVec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    let h = 1e-6;
                    let at = |s: f64| {
                        lift.apply(&UnitTangent::new(
                            HPoint {
                                x: v.base.x + s * h * w.x,
                                y: v.base.y + s * h * w.y,
                            },
                            v.theta + s * h * w.z,
                        ))
                    };
                    let fd = chart_difference(&at(-1.0), &at(1.0)) / (2.0 * h);
                    let exact = lift.jacobian(&v) * w;
                    assert!(
                        (fd - exact).norm() < 1e-6 * (1.0 + exact.norm()),
                        "{mode:?} {fd} {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn base_jet_second_derivatives_match_fd() {
        let rho = TwistFunction::default();
        let lift = LiftedTwist::new(params(0.4), rho, TwistMode::Dehn);
        let z = fermi_to_halfplane(0.4, 0.1);
        let jet = lift.base_jet(&z);
        let h = 1e-5;
        for k in 0..2 {
            let shift = |s: f64| {
                let mut q = z;
                if k == 0 {
                    q.x += s * h
                } else {
                    q.y += s * h
                }
                lift.base_jet(&q).first
            };
            let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
            for comp in 0..2 {
                for col in 0..2 {
                    // d/dk of J[comp][col] equals Hessian[comp][col][k]
                    assert!((fd[(comp, col)] - jet.second[comp][(col, k)]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn inverse_lift_inverts() {
        let rho = TwistFunction::default();
        let p = params(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for mode in [TwistMode::Dehn, TwistMode::Vp] {
            let lift = LiftedTwist::new(p, rho, mode);
            for _ in 0..100 {
                let v = collar_tangent_to_unit(&random_collar_tangent(&mut rng, &p), &p);
                let back = lift.inverse().apply(&lift.apply(&v));
                assert!(chart_difference(&v, &back).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_respectful_metrics_vanish() {
        let m = respectful_metrics(
            &params(0.2),
            &TwistFunction::default(),
            TwistMode::Identity,
            &default_collar_grid(16),
        )
        .unwrap();
        assert_eq!((m.angle_dev, m.metric_dist, m.c2_dist), (0.0, 0.0, 0.0));
        assert!(respectful_metrics(
            &params(0.2),
            &TwistFunction::default(),
            TwistMode::Dehn,
            &default_collar_grid(8)
        )
        .is_err());
    }

    #[test]
    fn respectful_metrics_decay_linearly() {
        let rho = TwistFunction::default();
        let grid = default_collar_grid(16);
        let sweep = |mode| -> Vec<RespectfulMetrics> {
            [0.4, 0.2, 0.1, 0.05]
                .iter()
                .map(|&l| respectful_metrics(&params(l), &rho, mode, &grid).unwrap())
                .collect()
        };
        let in_band = |a: f64, b: f64| a > b && (1.5..=2.5).contains(&(a / b));
        let vp = sweep(TwistMode::Vp);
        for w in vp.windows(2) {
            assert!(in_band(w[0].angle_dev, w[1].angle_dev), "{w:?}");
            assert!(in_band(w[0].metric_dist, w[1].metric_dist), "{w:?}");
            assert!(in_band(w[0].c2_dist, w[1].c2_dist), "{w:?}");
        }
        // The differential of the Dehn twist sees ℓρ'', which is still of
        // order one at ℓ = 0.05, so its angle deviation only decreases
        // monotonically over this sweep.
        let dehn = sweep(TwistMode::Dehn);
        for w in dehn.windows(2) {
            assert!(w[0].angle_dev > w[1].angle_dev);
            assert!(in_band(w[0].metric_dist, w[1].metric_dist), "{w:?}");
            assert!(in_band(w[0].c2_dist, w[1].c2_dist), "{w:?}");
        }
        for (d, v) in dehn.iter().zip(vp.iter()) {
            assert!(d.c2_dist / v.c2_dist <= 3.0 && v.c2_dist / d.c2_dist <= 3.0);
        }
    }
}
