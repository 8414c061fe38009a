//! Grid-level cone-field certification of partial hyperbolicity.
//!
//! A system supplies a map, its chart Jacobian, a Gram form and a reference
//! splitting at every point. At each grid node `p` the engine writes the
//! differential in orthonormal bases adapted to the cone axis at `p` and at
//! `F(p)` and then samples the cone:
//!
//! * the exit angle is the largest angle between `DF v` and the image axis
//!   over `v` on the cone boundary;
//! * `ν` is the smallest expansion `‖DF v‖ / ‖v‖` over the cone;
//! * `ν′` is the largest expansion over vectors whose image leaves the cone.
//!
//! A certificate passes when the cone is mapped strictly inside itself with a
//! margin and `ν > ν′`, `ν > 1` with a margin. This is floating-point grid
//! evidence, not a validated proof; [`PHCertificate::rigorous`] is always
//! `false`.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt::Debug;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypgeo::{AnosovFrame, TangentVec3};

/// A differentiable system on a three-dimensional phase space.
///
/// Implementations must be safe for concurrent read-only use; the engine
/// evaluates nodes in parallel and never mutates a system.
pub trait SystemSlot: Sync {
    type Point: Copy + Debug + Send + Sync;

    fn evaluate(&self, p: &Self::Point) -> Result<Self::Point>;

    /// Chart Jacobian of [`SystemSlot::evaluate`] at `p`.
    fn jacobian(&self, p: &Self::Point) -> Result<Matrix3<f64>>;

    fn differential(&self, p: &Self::Point, v: &TangentVec3) -> Result<TangentVec3> {
        Ok(self.jacobian(p)? * v)
    }

    /// Inner-product form on the chart tangent space at `p`.
    fn gram(&self, p: &Self::Point) -> Matrix3<f64>;

    /// Reference splitting `(ss, c, uu)` at `p`, orthonormal for [`SystemSlot::gram`].
    fn reference_frame(&self, p: &Self::Point) -> AnosovFrame;

    /// Points at which the system is certified over `grid`.
    fn sample_points(&self, grid: &GridSpec) -> Result<Vec<Self::Point>>;
}

/// A system whose inverse is available as another system on the same space.
pub trait Invertible: SystemSlot {
    type Inverse: SystemSlot<Point = Self::Point>;

    fn inverse(&self) -> Self::Inverse;
}

/// Which direction of the reference splitting a cone is centred on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeAxis {
    Ss,
    C,
    Uu,
}

impl ConeAxis {
    fn index(self) -> usize {
        match self {
            ConeAxis::Ss => 0,
            ConeAxis::C => 1,
            ConeAxis::Uu => 2,
        }
    }
}

/// The round cone `{v : ∠(v, axis) ≤ half_angle}` about a line of the splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub axis: ConeAxis,
    pub half_angle: f64,
}

impl Cone {
    pub fn new(axis: ConeAxis, half_angle: f64) -> Result<Self> {
        if !(half_angle > 0.0 && half_angle < FRAC_PI_2) {
            return Err(Error::Config(format!(
                "cone half-angle {half_angle} must lie in (0, π/2)"
            )));
        }
        Ok(Self { axis, half_angle })
    }

    pub fn unstable(half_angle: f64) -> Result<Self> {
        Self::new(ConeAxis::Uu, half_angle)
    }

    pub fn stable(half_angle: f64) -> Result<Self> {
        Self::new(ConeAxis::Ss, half_angle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Sampling {
    Regular,
    Jittered { seed: u64 },
}

/// A product grid: node `i` on an axis with range `[a, b)` and `n` nodes sits
/// at `a + (b - a)(i + δ)/n`, with `δ = 0` for regular grids and a seeded
/// uniform offset for jittered ones. Regular grids with nested counts are
/// nested point sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub counts: Vec<usize>,
    pub ranges: Vec<(f64, f64)>,
    pub sampling: Sampling,
}

impl GridSpec {
    pub fn regular(counts: Vec<usize>, ranges: Vec<(f64, f64)>) -> Self {
        Self {
            counts,
            ranges,
            sampling: Sampling::Regular,
        }
    }

    pub fn jittered(counts: Vec<usize>, ranges: Vec<(f64, f64)>, seed: u64) -> Self {
        Self {
            counts,
            ranges,
            sampling: Sampling::Jittered { seed },
        }
    }

    /// A copy with every axis count replaced by `n`.
    pub fn with_resolution(&self, n: usize) -> Self {
        Self {
            counts: vec![n; self.counts.len()],
            ..self.clone()
        }
    }

    pub fn dimension(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seed(&self) -> Option<u64> {
        match self.sampling {
            Sampling::Regular => None,
            Sampling::Jittered { seed } => Some(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() || self.counts.len() != self.ranges.len() {
            return Err(Error::Config("grid needs one range per axis".into()));
        }
        if let Some(c) = self.counts.iter().find(|&&c| c < 2) {
            return Err(Error::Config(format!("grid axis count {c} is below 2")));
        }
        if self
            .ranges
            .iter()
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return Err(Error::Config("grid ranges must be finite and increasing".into()));
        }
        Ok(())
    }

    /// All nodes, last axis varying fastest.
    pub fn nodes(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let dim = self.dimension();
        let total = self.len();
        let mut rng = self.seed().map(ChaCha8Rng::seed_from_u64);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let node = (0..dim)
                .map(|k| {
                    let (a, b) = self.ranges[k];
                    let delta = rng.as_mut().map_or(0.0, |r| r.gen::<f64>());
                    a + (b - a) * (idx[k] as f64 + delta) / self.counts[k] as f64
                })
                .collect();
            out.push(node);
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < self.counts[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Unstable,
    Stable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertStatus {
    Passed,
    Failed,
    /// A sample class was empty, so no verdict can be given.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Directions sampled on each cone boundary circle.
    pub boundary_samples: usize,
    /// Rings sampled strictly inside the cone and strictly outside it.
    pub rings: usize,
    /// Required gap `half_angle - max_exit_angle`.
    pub angle_margin: f64,
    /// Required excess of `ν` over one.
    pub growth_margin: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            boundary_samples: 64,
            rings: 4,
            angle_margin: 0.01,
            growth_margin: 0.01,
        }
    }
}

impl CertifyOptions {
    pub fn validate(&self) -> Result<()> {
        if self.boundary_samples < 4 {
            return Err(Error::Config("at least 4 cone boundary samples are required".into()));
        }
        if !(self.angle_margin >= 0.0 && self.growth_margin >= 0.0) {
            return Err(Error::Config("certificate margins must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of certifying one cone family over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PHCertificate {
    pub cone_in: Cone,
    pub direction: Direction,
    /// Largest image angle of the cone boundary; also the inner cone angle.
    pub max_exit_angle: f64,
    pub nu: f64,
    pub nu_prime: f64,
    pub grid_size: usize,
    pub seed: Option<u64>,
    pub angle_margin: f64,
    pub growth_margin: f64,
    pub status: CertStatus,
    pub passed: bool,
    /// Always false: grid evidence, not interval arithmetic.
    pub rigorous: bool,
}

impl PHCertificate {
    /// `half_angle - max_exit_angle`; positive when the cone is invariant.
    pub fn invariance_margin(&self) -> f64 {
        self.cone_in.half_angle - self.max_exit_angle
    }
}

/// Differential at a node written in orthonormal coordinates whose first
/// basis vector is the cone axis, at the source and at the image.
struct LocalMap {
    m: Matrix3<f64>,
}

/// Gram–Schmidt of `(axis, others…)` under `gram`; columns are orthonormal.
fn adapted_basis(frame: &AnosovFrame, axis: ConeAxis, gram: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let first = axis.index();
    let order = [first, (first + 1) % 3, (first + 2) % 3];
    let mut cols: Vec<Vector3<f64>> = Vec::with_capacity(3);
    for &k in &order {
        let mut v = frame.get(k);
        for c in &cols {
            v -= c * (c.dot(&(gram * v)));
        }
        let n2 = v.dot(&(gram * v));
        if !n2.is_finite() || n2 <= 1e-24 {
            return Err(Error::Evaluation {
                point: format!("{frame:?}"),
                reason: "degenerate reference frame".into(),
            });
        }
        cols.push(v / n2.sqrt());
    }
    Ok(Matrix3::from_columns(&cols))
}

fn local_map<S: SystemSlot + ?Sized>(sys: &S, axis: ConeAxis, p: &S::Point) -> Result<LocalMap> {
    let q = sys.evaluate(p)?;
    let jac = sys.jacobian(p)?;
    if jac.iter().any(|x| !x.is_finite()) {
        return Err(Error::Evaluation {
            point: format!("{p:?}"),
            reason: "non-finite differential".into(),
        });
    }
    let gp = sys.gram(p);
    let gq = sys.gram(&q);
    let lp = adapted_basis(&sys.reference_frame(p), axis, &gp)?;
    let lq = adapted_basis(&sys.reference_frame(&q), axis, &gq)?;
    Ok(LocalMap {
        m: lq.transpose() * gq * jac * lp,
    })
}

/// Angle between the line through `u` and the first coordinate axis.
#[inline]
fn axis_angle(u: &Vector3<f64>) -> f64 {
    u.y.hypot(u.z).atan2(u.x.abs())
}

#[inline]
fn cone_direction(angle: f64, phi: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(c, s * cp, s * sp)
}

fn boundary_angles(opts: &CertifyOptions) -> impl Iterator<Item = f64> + '_ {
    (0..opts.boundary_samples).map(move |k| TAU * k as f64 / opts.boundary_samples as f64)
}

#[derive(Debug, Clone, Copy)]
struct NodeStats {
    exit_angle: f64,
    nu: f64,
    nu_prime: Option<f64>,
}

fn node_stats(local: &LocalMap, half_angle: f64, opts: &CertifyOptions) -> Result<NodeStats> {
    let m = &local.m;
    let mut exit_angle: f64 = 0.0;
    let mut nu = f64::INFINITY;
    for phi in boundary_angles(opts) {
        let image = m * cone_direction(half_angle, phi);
        exit_angle = exit_angle.max(axis_angle(&image));
        nu = nu.min(image.norm());
    }
    nu = nu.min((m * Vector3::x()).norm());
    for r in 1..opts.rings {
        let a = half_angle * r as f64 / opts.rings as f64;
        for phi in boundary_angles(opts) {
            nu = nu.min((m * cone_direction(a, phi)).norm());
        }
    }

    // Vectors whose image leaves the cone are the preimages of the closed
    // complement: sample that complement at the image and pull back.
    let inv = m.try_inverse().ok_or_else(|| Error::Evaluation {
        point: format!("{m:?}"),
        reason: "singular differential".into(),
    })?;
    let mut nu_prime: Option<f64> = None;
    for r in 0..=opts.rings {
        let a = half_angle + (FRAC_PI_2 - half_angle) * r as f64 / opts.rings.max(1) as f64;
        for phi in boundary_angles(opts) {
            let w = cone_direction(a, phi);
            let pre = (inv * w).norm();
            if pre > 0.0 && pre.is_finite() {
                let ratio = 1.0 / pre;
                nu_prime = Some(nu_prime.map_or(ratio, |x: f64| x.max(ratio)));
            }
        }
    }
    if !(exit_angle.is_finite() && nu.is_finite()) {
        return Err(Error::Evaluation {
            point: format!("{m:?}"),
            reason: "non-finite cone statistics".into(),
        });
    }
    Ok(NodeStats {
        exit_angle,
        nu,
        nu_prime,
    })
}

/// Largest angle between `DF v` and the image axis over `v` on the boundary
/// of `cone` at `p`.
pub fn cone_image_angle<S: SystemSlot + ?Sized>(sys: &S, cone: &Cone, p: &S::Point) -> Result<f64> {
    cone_image_angle_with(sys, cone, p, &CertifyOptions::default())
}

pub fn cone_image_angle_with<S: SystemSlot + ?Sized>(
    sys: &S,
    cone: &Cone,
    p: &S::Point,
    opts: &CertifyOptions,
) -> Result<f64> {
    opts.validate()?;
    let local = local_map(sys, cone.axis, p)?;
    Ok(boundary_angles(opts)
        .map(|phi| axis_angle(&(local.m * cone_direction(cone.half_angle, phi))))
        .fold(0.0, f64::max))
}

struct Sweep {
    exit_angle: f64,
    nu: f64,
    nu_prime: Option<f64>,
    nodes: usize,
}

fn sweep<S: SystemSlot + ?Sized>(sys: &S, cone: &Cone, grid: &GridSpec, opts: &CertifyOptions) -> Result<Sweep> {
    opts.validate()?;
    let points = sys.sample_points(grid)?;
    let stats: Vec<Result<NodeStats>> = points
        .par_iter()
        .map(|p| node_stats(&local_map(sys, cone.axis, p)?, cone.half_angle, opts))
        .collect();
    // Sequential reduction keeps results independent of thread scheduling.
    let mut out = Sweep {
        exit_angle: 0.0,
        nu: f64::INFINITY,
        nu_prime: None,
        nodes: points.len(),
    };
    let mut nu_prime_missing = false;
    for s in stats {
        let s = s?;
        out.exit_angle = out.exit_angle.max(s.exit_angle);
        out.nu = out.nu.min(s.nu);
        match s.nu_prime {
            Some(v) => out.nu_prime = Some(out.nu_prime.map_or(v, |x: f64| x.max(v))),
            None => nu_prime_missing = true,
        }
    }
    if nu_prime_missing {
        out.nu_prime = None;
    }
    Ok(out)
}

/// `(ν, ν′)` over the grid; `None` for `ν′` when no sampled vector leaves the cone.
pub fn growth_bounds<S: SystemSlot + ?Sized>(
    sys: &S,
    cone: &Cone,
    grid: &GridSpec,
    opts: &CertifyOptions,
) -> Result<(f64, Option<f64>)> {
    let s = sweep(sys, cone, grid, opts)?;
    Ok((s.nu, s.nu_prime))
}

/// Certify one cone family for `sys` over `grid`.
pub fn certify_cone<S: SystemSlot + ?Sized>(
    sys: &S,
    cone: &Cone,
    grid: &GridSpec,
    direction: Direction,
    opts: &CertifyOptions,
) -> Result<PHCertificate> {
    let s = sweep(sys, cone, grid, opts)?;
    let (nu_prime, status) = match s.nu_prime {
        None => (f64::NAN, CertStatus::Inconclusive),
        Some(np) if s.nodes == 0 => (np, CertStatus::Inconclusive),
        Some(np) => {
            let ok =
                s.exit_angle <= cone.half_angle - opts.angle_margin && s.nu >= 1.0 + opts.growth_margin && np < s.nu;
            (np, if ok { CertStatus::Passed } else { CertStatus::Failed })
        }
    };
    Ok(PHCertificate {
        cone_in: *cone,
        direction,
        max_exit_angle: s.exit_angle,
        nu: s.nu,
        nu_prime,
        grid_size: s.nodes,
        seed: grid.seed(),
        angle_margin: opts.angle_margin,
        growth_margin: opts.growth_margin,
        status,
        passed: status == CertStatus::Passed,
        rigorous: false,
    })
}

/// Unstable certificate of `sys` with `cone_u` and stable certificate, i.e.
/// the unstable test of the inverse with `cone_s`.
pub fn certify<S: Invertible>(
    sys: &S,
    cone_u: &Cone,
    cone_s: &Cone,
    grid: &GridSpec,
    opts: &CertifyOptions,
) -> Result<(PHCertificate, PHCertificate)> {
    let unstable = certify_cone(sys, cone_u, grid, Direction::Unstable, opts)?;
    let stable = certify_cone(&sys.inverse(), cone_s, grid, Direction::Stable, opts)?;
    Ok((unstable, stable))
}

/// Both certificates pass.
pub fn verdict(unstable: &PHCertificate, stable: &PHCertificate) -> bool {
    unstable.passed && stable.passed
}

/// `max(‖DF‖, ‖DF⁻¹‖)` over the grid in the system metric.
pub fn max_derivative_norm<S: SystemSlot + ?Sized>(sys: &S, grid: &GridSpec) -> Result<f64> {
    let points = sys.sample_points(grid)?;
    let norms: Vec<Result<f64>> = points
        .par_iter()
        .map(|p| {
            let local = local_map(sys, ConeAxis::Uu, p)?;
            let sv = local.m.singular_values();
            let (lo, hi) = sv
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
            if lo.is_nan() || lo <= 0.0 {
                return Err(Error::Evaluation {
                    point: format!("{p:?}"),
                    reason: "singular differential".into(),
                });
            }
            Ok(hi.max(1.0 / lo))
        })
        .collect();
    let mut c: f64 = 0.0;
    for n in norms {
        c = c.max(n?);
    }
    Ok(c)
}

/// Empirical check of the iterated growth bounds
/// `‖DFⁿ v‖ ≥ C⁻¹ μ₀ⁿ⁻¹ ‖v‖` for `v` in the cone and
/// `‖DFⁿ v‖ ≤ C μ₁ⁿ⁻¹ ‖v‖` for `v` whose iterates stay outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerBoundsReport {
    pub n: usize,
    pub c: f64,
    pub mu0: f64,
    pub mu1: f64,
    /// Orbit segments that were propagated to length `n`.
    pub segments: usize,
    /// Segments dropped because the orbit left the modeled domain.
    pub skipped: usize,
    /// `min ‖DFⁿ v‖/‖v‖` over cone vectors, divided by `C⁻¹ μ₀ⁿ⁻¹`.
    pub lower_ratio: f64,
    /// `max ‖DFⁿ v‖/‖v‖` over outside vectors, divided by `C μ₁ⁿ⁻¹`;
    /// `None` if no sampled vector stayed outside the cone.
    pub upper_ratio: Option<f64>,
    /// Raw `min ‖DFⁿ v‖/‖v‖` over cone vectors.
    pub min_growth: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    /// Both bounds hold and the constants separate, `μ₀ > max(1, μ₁)`.
    pub passed: bool,
}

fn metric_norm(g: &Matrix3<f64>, v: &TangentVec3) -> f64 {
    v.dot(&(g * v)).max(0.0).sqrt()
}

fn angle_to(g: &Matrix3<f64>, v: &TangentVec3, axis: &TangentVec3) -> f64 {
    let nv = metric_norm(g, v);
    let na = metric_norm(g, axis);
    let par = (v.dot(&(g * axis)) / (nv * na)).abs().min(1.0);
    (1.0 - par * par).max(0.0).sqrt().atan2(par)
}

/// Propagate `segments` orbit segments of length `n` from the system's sample
/// points and compare the growth against `C⁻¹ μ₀ⁿ⁻¹` and `C μ₁ⁿ⁻¹`.
#[allow(clippy::too_many_arguments)]
pub fn composed_power_bounds<S: SystemSlot + ?Sized>(
    sys: &S,
    cone: &Cone,
    grid: &GridSpec,
    n: usize,
    c: f64,
    mu0: f64,
    mu1: f64,
    segments: usize,
) -> Result<PowerBoundsReport> {
    if n == 0 {
        return Err(Error::Config("orbit segment length must be at least 1".into()));
    }
    if !(c >= 1.0 && mu0 > 0.0 && mu1 > 0.0) {
        return Err(Error::Config(format!(
            "invalid growth constants C={c}, μ0={mu0}, μ1={mu1}"
        )));
    }
    let all = sys.sample_points(grid)?;
    if all.is_empty() {
        return Err(Error::Config("no sample points for orbit segments".into()));
    }
    let stride = (all.len() / segments.max(1)).max(1);
    let starts: Vec<S::Point> = all.iter().step_by(stride).take(segments).copied().collect();
    const DIRECTIONS: usize = 16;

    // Per start: None if skipped, else (min growth inside, max growth outside).
    let per: Vec<Option<(f64, Option<f64>)>> = starts
        .par_iter()
        .map(|p0| {
            let frame = sys.reference_frame(p0);
            let g0 = sys.gram(p0);
            let basis = adapted_basis(&frame, cone.axis, &g0).ok()?;
            let inside: Vec<TangentVec3> = std::iter::once(0.0)
                .chain((0..DIRECTIONS).map(|_| cone.half_angle))
                .enumerate()
                .map(|(k, a)| basis * cone_direction(a, TAU * k as f64 / DIRECTIONS as f64))
                .collect();
            let outside: Vec<TangentVec3> = (0..DIRECTIONS)
                .map(|k| basis * cone_direction(FRAC_PI_2, TAU * k as f64 / DIRECTIONS as f64))
                .collect();
            let mut vin = inside.clone();
            let mut vout = outside.clone();
            let mut alive = vec![true; vout.len()];
            let mut p = *p0;
            for _ in 0..n {
                let jac = sys.jacobian(&p).ok()?;
                let q = sys.evaluate(&p).ok()?;
                if jac.iter().any(|x| !x.is_finite()) {
                    return None;
                }
                for v in vin.iter_mut() {
                    *v = jac * *v;
                }
                let gq = sys.gram(&q);
                let axis = sys.reference_frame(&q).get(cone.axis.index());
                for (v, ok) in vout.iter_mut().zip(alive.iter_mut()) {
                    *v = jac * *v;
                    if angle_to(&gq, v, &axis) <= cone.half_angle {
                        *ok = false;
                    }
                }
                p = q;
            }
            let gn = sys.gram(&p);
            let min_in = vin
                .iter()
                .zip(inside.iter())
                .map(|(v, v0)| metric_norm(&gn, v) / metric_norm(&g0, v0))
                .fold(f64::INFINITY, f64::min);
            let max_out = vout
                .iter()
                .zip(outside.iter())
                .zip(alive.iter())
                .filter(|(_, &ok)| ok)
                .map(|((v, v0), _)| metric_norm(&gn, v) / metric_norm(&g0, v0))
                .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |x| x.max(r))));
            Some((min_in, max_out))
        })
        .collect();

    let lower_bound = mu0.powi(n as i32 - 1) / c;
    let upper_bound = c * mu1.powi(n as i32 - 1);
    let mut kept = 0;
    let mut skipped = 0;
    let mut min_growth = f64::INFINITY;
    let mut max_out: Option<f64> = None;
    for r in per {
        match r {
            None => skipped += 1,
            Some((lo, hi)) => {
                kept += 1;
                min_growth = min_growth.min(lo);
                if let Some(h) = hi {
                    max_out = Some(max_out.map_or(h, |x: f64| x.max(h)));
                }
            }
        }
    }
    let lower_ratio = min_growth / lower_bound;
    let upper_ratio = max_out.map(|m| m / upper_bound);
    let lower_holds = kept > 0 && lower_ratio >= 1.0;
    let upper_holds = upper_ratio.is_some_and(|r| r <= 1.0);
    Ok(PowerBoundsReport {
        n,
        c,
        mu0,
        mu1,
        segments: kept,
        skipped,
        lower_ratio,
        upper_ratio,
        min_growth,
        lower_holds,
        upper_holds,
        passed: lower_holds && upper_holds && mu0 > 1.0 && mu0 > mu1,
    })
}

/// Linear map `diag(r_ss, r_c, r_uu)` on ℝ³ with the standard frame; a
/// closed-form test system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub rates: [f64; 3],
}

impl LinearModel {
    pub fn new(rates: [f64; 3]) -> Result<Self> {
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("linear model rates {rates:?} must be positive")));
        }
        Ok(Self { rates })
    }

    pub fn identity() -> Self {
        Self { rates: [1.0; 3] }
    }
}

impl SystemSlot for LinearModel {
    type Point = Vector3<f64>;

    fn evaluate(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(Vector3::new(
            self.rates[0] * p.x,
            self.rates[1] * p.y,
            self.rates[2] * p.z,
        ))
    }

    fn jacobian(&self, _p: &Vector3<f64>) -> Result<Matrix3<f64>> {
        Ok(Matrix3::from_diagonal(&Vector3::from(self.rates)))
    }

    fn gram(&self, _p: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::identity()
    }

    fn reference_frame(&self, _p: &Vector3<f64>) -> AnosovFrame {
        AnosovFrame {
            e_ss: Vector3::x(),
            e_c: Vector3::y(),
            e_uu: Vector3::z(),
        }
    }

    fn sample_points(&self, grid: &GridSpec) -> Result<Vec<Vector3<f64>>> {
        if grid.dimension() != 3 {
            return Err(Error::Config("linear model grids are 3-dimensional".into()));
        }
        Ok(grid
            .nodes()?
            .into_iter()
            .map(|n| Vector3::new(n[0], n[1], n[2]))
            .collect())
    }
}

impl Invertible for LinearModel {
    type Inverse = LinearModel;

    fn inverse(&self) -> LinearModel {
        LinearModel {
            rates: self.rates.map(|r| 1.0 / r),
        }
    }
}
