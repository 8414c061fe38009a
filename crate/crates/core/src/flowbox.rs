//! Flow-box twists on a cyclic cover of the suspension of a hyperbolic toral
//! automorphism.
//!
//! The cover is `K` copies of `[0, N) × 𝕋²` with flow direction `∂t`; leaving
//! copy `i` at `t = N` enters copy `i + 1 (mod K)` with the torus coordinate
//! mapped by `A`. The marked block is the flow box of height `N` over a
//! tilted section `t = σ(x, y)` in copy 0, so it spills into copy 1. The
//! straightening chart sends `Ŷ_t(p)` (`p` on the section) to `(t/N, p)`,
//! and the twist acts as `(s, x, y) ↦ (s, x + τ(s), y)` in that chart. The
//! assembled map is `F = h ∘ f` with `f` the time-`N` map and `h` the twist
//! conjugated back by the chart.
//!
//! Chart tangent vectors are ordered `(t, x, y)`; the metric is
//! `dt² + dx² + dy²`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collar::TwistFunction;
use crate::conecert::{
    certify, composed_power_bounds, max_derivative_norm, verdict, CertifyOptions, Cone, GridSpec, Invertible,
    PHCertificate, PowerBoundsReport, SystemSlot,
};
use crate::error::{Error, Result};
use crate::hypgeo::AnosovFrame;

/// Report flag for a twist path that is homotopic to the identity.
pub const DEGENERATE_TWIST_WARNING: &str = "twist homotopically trivial: construction degenerate";

/// Bound on the derivative of the leaf graphs in the slope-bounded model.
pub const SLOPE_BOUND: f64 = 0.25;

/// Default cone half-angle for flow-box certificates.
pub const FLOWBOX_CONE_HALF_ANGLE: f64 = std::f64::consts::FRAC_PI_4;

/// Default roof-time candidates for the `N` search.
pub const DEFAULT_N_CANDIDATES: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];

/// Default cap on the number of copies scanned for each `N`.
pub const DEFAULT_K_CAP: usize = 16;

/// A hyperbolic automorphism of `𝕋² = ℝ²/ℤ²` given by an integer matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToralAuto {
    matrix: [[i64; 2]; 2],
    /// Eigenvalue of modulus `μ_A > 1` and of modulus `1/μ_A`.
    lambda_u: f64,
    lambda_s: f64,
    e_u: [f64; 2],
    e_s: [f64; 2],
}

fn eigenvector(m: &[[i64; 2]; 2], lambda: f64) -> Vector2<f64> {
    let (a, b, c, d) = (m[0][0] as f64, m[0][1] as f64, m[1][0] as f64, m[1][1] as f64);
    let v1 = Vector2::new(b, lambda - a);
    let v2 = Vector2::new(lambda - d, c);
    let v = if v1.norm() >= v2.norm() { v1 } else { v2 };
    let v = v / v.norm();
    if v.x < 0.0 || (v.x == 0.0 && v.y < 0.0) {
        -v
    } else {
        v
    }
}

impl ToralAuto {
    pub fn new(matrix: [[i64; 2]; 2]) -> Result<Self> {
        let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
        if det.abs() != 1 {
            return Err(Error::Config(format!(
                "toral automorphism needs |det A| = 1, got det A = {det}"
            )));
        }
        let tr = matrix[0][0] + matrix[1][1];
        if tr.abs() <= 2 {
            return Err(Error::Config(format!(
                "toral automorphism is not hyperbolic: |trace A| = {} must exceed 2",
                tr.abs()
            )));
        }
        let (trf, detf) = (tr as f64, det as f64);
        let disc = (trf * trf - 4.0 * detf).sqrt();
        // Larger root without cancellation, smaller from the determinant.
        let big = 0.5 * (trf + trf.signum() * disc);
        let small = detf / big;
        Ok(Self {
            matrix,
            lambda_u: big,
            lambda_s: small,
            e_u: eigenvector(&matrix, big).into(),
            e_s: eigenvector(&matrix, small).into(),
        })
    }

    /// `[[2, 1], [1, 1]]`.
    pub fn cat_map() -> Self {
        Self::new([[2, 1], [1, 1]]).expect("hyperbolic")
    }

    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.matrix
    }

    pub fn trace(&self) -> i64 {
        self.matrix[0][0] + self.matrix[1][1]
    }

    pub fn det(&self) -> i64 {
        self.matrix[0][0] * self.matrix[1][1] - self.matrix[0][1] * self.matrix[1][0]
    }

    /// `μ_A = |λ_u| > 1`.
    pub fn mu(&self) -> f64 {
        self.lambda_u.abs()
    }

    pub fn unstable_eigenvalue(&self) -> f64 {
        self.lambda_u
    }

    pub fn stable_eigenvalue(&self) -> f64 {
        self.lambda_s
    }

    /// Unit unstable eigendirection.
    pub fn unstable_direction(&self) -> Vector2<f64> {
        Vector2::from(self.e_u)
    }

    /// Unit stable eigendirection.
    pub fn stable_direction(&self) -> Vector2<f64> {
        Vector2::from(self.e_s)
    }

    /// Angle in `(0, π/2]` between the eigenlines.
    pub fn eigen_angle(&self) -> f64 {
        line_angle(&self.unstable_direction(), &self.stable_direction())
    }

    pub fn linear(&self) -> Matrix2<f64> {
        let m = self.matrix;
        Matrix2::new(m[0][0] as f64, m[0][1] as f64, m[1][0] as f64, m[1][1] as f64)
    }

    /// The inverse matrix, again integral.
    pub fn inverse_matrix(&self) -> [[i64; 2]; 2] {
        let m = self.matrix;
        let det = self.det();
        [[m[1][1] * det, -m[0][1] * det], [-m[1][0] * det, m[0][0] * det]]
    }

    pub fn inverse_linear(&self) -> Matrix2<f64> {
        let m = self.inverse_matrix();
        Matrix2::new(m[0][0] as f64, m[0][1] as f64, m[1][0] as f64, m[1][1] as f64)
    }

    /// `Aᵏ` in exact integer arithmetic (negative `k` uses `A⁻¹`).
    pub fn power(&self, k: i64) -> Result<[[i64; 2]; 2]> {
        let base = if k >= 0 { self.matrix } else { self.inverse_matrix() };
        let mut out = [[1, 0], [0, 1]];
        for _ in 0..k.unsigned_abs() {
            out = int_mul(&out, &base).ok_or_else(|| Error::Range(format!("A^{k} overflows 64-bit integers")))?;
        }
        Ok(out)
    }
}

fn int_mul(a: &[[i64; 2]; 2], b: &[[i64; 2]; 2]) -> Option<[[i64; 2]; 2]> {
    let e = |i: usize, j: usize| a[i][0].checked_mul(b[0][j])?.checked_add(a[i][1].checked_mul(b[1][j])?);
    Some([[e(0, 0)?, e(0, 1)?], [e(1, 0)?, e(1, 1)?]])
}

/// Angle in `[0, π/2]` between the lines spanned by `u` and `v`.
pub fn line_angle(u: &Vector2<f64>, v: &Vector2<f64>) -> f64 {
    let cross = (u.x * v.y - u.y * v.x).abs();
    let dot = u.dot(v).abs();
    cross.atan2(dot)
}

fn torus_mod(p: Vector2<f64>) -> Vector2<f64> {
    p.map(|c| c.rem_euclid(1.0))
}

/// The marked transverse torus `t = h + a(sin 2πx + sin 2πy)` in copy 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltedSection {
    pub height: f64,
    pub amplitude: f64,
}

impl Default for TiltedSection {
    fn default() -> Self {
        Self {
            height: 0.5,
            amplitude: 0.02,
        }
    }
}

impl TiltedSection {
    pub fn value(&self, p: &Vector2<f64>) -> f64 {
        self.height + self.amplitude * ((TAU * p.x).sin() + (TAU * p.y).sin())
    }

    pub fn gradient(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((TAU * p.x).cos(), (TAU * p.y).cos()) * (TAU * self.amplitude)
    }

    pub fn min(&self) -> f64 {
        self.height - 2.0 * self.amplitude.abs()
    }

    pub fn max(&self) -> f64 {
        self.height + 2.0 * self.amplitude.abs()
    }
}

/// A point of the cover in the flat chart of copy `copy`, `t ∈ [0, N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverPoint {
    pub copy: usize,
    pub t: f64,
    pub torus: Vector2<f64>,
}

/// A point of the straightened block `[0, 1] × 𝕋²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPoint {
    pub s: f64,
    pub torus: Vector2<f64>,
}

/// `K` copies of `[0, N) × 𝕋²` glued cyclically by `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverModel {
    pub auto: ToralAuto,
    pub n: f64,
    pub k: usize,
    pub section: TiltedSection,
}

impl CoverModel {
    pub fn new(auto: ToralAuto, n: f64, k: usize) -> Result<Self> {
        Self::with_section(auto, n, k, TiltedSection::default())
    }

    pub fn with_section(auto: ToralAuto, n: f64, k: usize, section: TiltedSection) -> Result<Self> {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Config(format!("roof time N = {n} must be positive")));
        }
        if k == 0 {
            return Err(Error::Config("the cover needs at least one copy".into()));
        }
        if !(section.min() > 0.0 && section.max() < n) {
            return Err(Error::Config(format!(
                "marked section heights [{}, {}] must lie inside (0, N = {n})",
                section.min(),
                section.max()
            )));
        }
        Ok(Self { auto, n, k, section })
    }

    /// Flow for `time` (any sign), crossing seams with `A` or `A⁻¹`.
    pub fn flow(&self, p: &CoverPoint, time: f64) -> CoverPoint {
        let total = p.t + time;
        let crossings = (total / self.n).floor();
        let mut t = total - crossings * self.n;
        let mut c = crossings as i64;
        if t >= self.n {
            t -= self.n;
            c += 1;
        }
        let m = if c >= 0 {
            self.auto.linear()
        } else {
            self.auto.inverse_linear()
        };
        let mut torus = p.torus;
        for _ in 0..c.unsigned_abs() {
            torus = torus_mod(m * torus);
        }
        CoverPoint {
            copy: (p.copy as i64 + c).rem_euclid(self.k as i64) as usize,
            t: t.max(0.0),
            torus,
        }
    }

    /// The time-`N` map `f_{N,K}`.
    pub fn time_n_map(&self, p: &CoverPoint) -> CoverPoint {
        CoverPoint {
            copy: (p.copy + 1) % self.k,
            t: p.t,
            torus: torus_mod(self.auto.linear() * p.torus),
        }
    }

    pub fn inverse_time_n_map(&self, p: &CoverPoint) -> CoverPoint {
        CoverPoint {
            copy: (p.copy + self.k - 1) % self.k,
            t: p.t,
            torus: torus_mod(self.auto.inverse_linear() * p.torus),
        }
    }

    /// The marked-block chart of `q` and its chart Jacobian, if `q` lies in
    /// the block.
    pub fn block_chart(&self, q: &CoverPoint) -> Option<(BoxPoint, Matrix3<f64>)> {
        let inv_n = 1.0 / self.n;
        if q.copy == 0 {
            let sigma = self.section.value(&q.torus);
            if q.t < sigma {
                return None;
            }
            let g = self.section.gradient(&q.torus) * inv_n;
            let jac = Matrix3::new(inv_n, -g.x, -g.y, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
            return Some((
                BoxPoint {
                    s: (q.t - sigma) * inv_n,
                    torus: q.torus,
                },
                jac,
            ));
        }
        if q.copy == 1 % self.k && self.k >= 2 {
            let ainv = self.auto.inverse_linear();
            let theta = torus_mod(ainv * q.torus);
            let sigma = self.section.value(&theta);
            if q.t >= sigma {
                return None;
            }
            let g = (ainv.transpose() * self.section.gradient(&theta)) * inv_n;
            let mut jac = Matrix3::zeros();
            jac[(0, 0)] = inv_n;
            jac[(0, 1)] = -g.x;
            jac[(0, 2)] = -g.y;
            jac.fixed_view_mut::<2, 2>(1, 1).copy_from(&ainv);
            return Some((
                BoxPoint {
                    s: (self.n + q.t - sigma) * inv_n,
                    torus: theta,
                },
                jac,
            ));
        }
        None
    }

    /// Inverse of [`CoverModel::block_chart`] and its Jacobian.
    pub fn unstraighten(&self, b: &BoxPoint) -> (CoverPoint, Matrix3<f64>) {
        let theta = torus_mod(b.torus);
        let g = self.section.gradient(&theta);
        let t = self.section.value(&theta) + b.s * self.n;
        if t < self.n {
            let jac = Matrix3::new(self.n, g.x, g.y, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
            (
                CoverPoint {
                    copy: 0,
                    t,
                    torus: theta,
                },
                jac,
            )
        } else {
            let a = self.auto.linear();
            let mut jac = Matrix3::zeros();
            jac[(0, 0)] = self.n;
            jac[(0, 1)] = g.x;
            jac[(0, 2)] = g.y;
            jac.fixed_view_mut::<2, 2>(1, 1).copy_from(&a);
            (
                CoverPoint {
                    copy: 1 % self.k,
                    t: t - self.n,
                    torus: torus_mod(a * theta),
                },
                jac,
            )
        }
    }
}

/// `H_N(Ŷ_t(p)) = (t/N, p)` for `p` on the marked section of copy 0.
pub fn straighten(model: &CoverModel, copy: usize, t: f64, p: Vector2<f64>) -> Result<BoxPoint> {
    if copy != 0 || !(0.0..=model.n).contains(&t) {
        return Err(Error::Domain(format!(
            "orbit point (copy {copy}, t = {t}) is outside the marked block of height {}",
            model.n
        )));
    }
    Ok(BoxPoint {
        s: t / model.n,
        torus: torus_mod(p),
    })
}

/// A loop of torus translations `φ_s = (x + τ(s), y)` with
/// `τ = winding · Φ(s)` and `Φ` the flat-ended collar profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwistPath {
    pub winding: u32,
}

impl TwistPath {
    pub fn new(winding: u32) -> Self {
        Self { winding }
    }

    /// The constant identity path.
    pub fn identity() -> Self {
        Self { winding: 0 }
    }

    fn profile(&self) -> TwistFunction {
        TwistFunction { winding: self.winding }
    }

    pub fn tau(&self, s: f64) -> f64 {
        self.profile().value(s)
    }

    pub fn tau_derivative(&self, s: f64) -> f64 {
        self.profile().derivative(s)
    }

    /// `φ_s(p)` on the torus.
    pub fn apply(&self, s: f64, p: &Vector2<f64>) -> Vector2<f64> {
        torus_mod(Vector2::new(p.x + self.tau(s), p.y))
    }

    pub fn is_degenerate(&self) -> bool {
        self.winding == 0
    }

    pub fn warning(&self) -> Option<&'static str> {
        self.is_degenerate().then_some(DEGENERATE_TWIST_WARNING)
    }
}

/// `(s, x, y) ↦ (s, φ_s(x, y))`.
pub fn box_twist(b: &BoxPoint, path: &TwistPath) -> Result<BoxPoint> {
    if !(0.0..=1.0).contains(&b.s) {
        return Err(Error::Domain(format!("box coordinate s = {} outside [0, 1]", b.s)));
    }
    Ok(BoxPoint {
        s: b.s,
        torus: path.apply(b.s, &b.torus),
    })
}

/// Jacobian of [`box_twist`] in `(s, x, y)` coordinates.
pub fn box_twist_jacobian(b: &BoxPoint, path: &TwistPath) -> Matrix3<f64> {
    let mut j = Matrix3::identity();
    j[(1, 0)] = path.tau_derivative(b.s);
    j
}

/// The strong line fields on the torus used for transversality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoxFoliations {
    /// Constant eigendirections of `A`.
    Linear { auto: ToralAuto },
    /// uu leaves `y = c + g_u(x)` and ss leaves `x = c + g_s(y)` with
    /// `g_u' = a_u cos 2πx`, `g_s' = a_s cos 2πy`.
    SlopeBounded { uu_amplitude: f64, ss_amplitude: f64 },
}

impl BoxFoliations {
    pub fn linear(auto: ToralAuto) -> Self {
        Self::Linear { auto }
    }

    /// Slope-bounded model; the extremal amplitude `1/4` is admitted.
    pub fn slope_bounded(uu_amplitude: f64, ss_amplitude: f64) -> Result<Self> {
        for a in [uu_amplitude, ss_amplitude] {
            if !(a.is_finite() && a.abs() <= SLOPE_BOUND) {
                return Err(Error::Config(format!(
                    "leaf slope amplitude {a} exceeds the bound {SLOPE_BOUND}"
                )));
            }
        }
        Ok(Self::SlopeBounded {
            uu_amplitude,
            ss_amplitude,
        })
    }

    pub fn uu(&self, p: &Vector2<f64>) -> Vector2<f64> {
        match self {
            Self::Linear { auto } => auto.unstable_direction(),
            Self::SlopeBounded { uu_amplitude, .. } => Vector2::new(1.0, uu_amplitude * (TAU * p.x).cos()),
        }
    }

    pub fn ss(&self, p: &Vector2<f64>) -> Vector2<f64> {
        match self {
            Self::Linear { auto } => auto.stable_direction(),
            Self::SlopeBounded { ss_amplitude, .. } => Vector2::new(ss_amplitude * (TAU * p.y).cos(), 1.0),
        }
    }
}

/// Minimum over the `(s, x, y)` grid of the angle between the pushforward of
/// the uu field under `φ_s` and the ss field.
pub fn transversality_margin(fol: &BoxFoliations, path: &TwistPath, grid: &GridSpec) -> Result<f64> {
    if grid.dimension() != 3 {
        return Err(Error::Config("transversality grids are (s, x, y)".into()));
    }
    let nodes = grid.nodes()?;
    let angles: Vec<f64> = nodes
        .par_iter()
        .map(|n| {
            let q = Vector2::new(n[1], n[2]);
            // Translations push a line field forward by translating it.
            let src = torus_mod(Vector2::new(q.x - path.tau(n[0]), q.y));
            line_angle(&fol.uu(&src), &fol.ss(&q))
        })
        .collect();
    Ok(angles.into_iter().fold(PI, f64::min))
}

/// Per-`N` slope of the straightened strong bundles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleSlope {
    pub n: f64,
    /// Largest `|s|`-component of the straightened unit uu direction.
    pub uu: f64,
    pub ss: f64,
    /// Largest deviation of the straightened torus component from the
    /// eigendirection.
    pub purity: f64,
}

/// Straightened strong-bundle slopes over a `resolution²` torus grid, one
/// entry per roof time.
pub fn box_bundle_slopes(
    auto: &ToralAuto,
    section: &TiltedSection,
    n_list: &[f64],
    resolution: usize,
) -> Result<Vec<BundleSlope>> {
    if n_list.is_empty() {
        return Err(Error::Config("empty roof-time list".into()));
    }
    let grid = GridSpec::regular(vec![resolution; 2], vec![(0.0, 1.0); 2]);
    let nodes = grid.nodes()?;
    let (eu, es) = (auto.unstable_direction(), auto.stable_direction());
    n_list
        .iter()
        .map(|&n| {
            let model = CoverModel::with_section(*auto, n, 2, *section)?;
            let mut out = BundleSlope {
                n,
                uu: 0.0,
                ss: 0.0,
                purity: 0.0,
            };
            for node in &nodes {
                let theta = Vector2::new(node[0], node[1]);
                // A point a quarter of the way up the block, in copy 0.
                let (q, _) = model.unstraighten(&BoxPoint { s: 0.25, torus: theta });
                let (_, dh) = model.block_chart(&q).expect("section point lies in the block");
                for (e, slot) in [(eu, &mut out.uu), (es, &mut out.ss)] {
                    let w = dh * Vector3::new(0.0, e.x, e.y);
                    *slot = slot.max(w.x.abs());
                    let dev = (Vector2::new(w.y, w.z) - e).norm();
                    out.purity = out.purity.max(dev);
                }
            }
            Ok(out)
        })
        .collect()
}

/// `F_{N,K} = h_N ∘ f_{N,K}` on the cover, or its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowBoxSystem {
    pub model: CoverModel,
    pub path: TwistPath,
    inverse: bool,
}

/// Assemble the twisted time-`N` map; needs `K ≥ 2` so the block and its
/// image are disjoint.
pub fn assemble_map(model: &CoverModel, path: &TwistPath) -> Result<FlowBoxSystem> {
    if model.k < 2 {
        return Err(Error::Config(format!(
            "assembling the twisted map needs K ≥ 2, got K = {}",
            model.k
        )));
    }
    Ok(FlowBoxSystem {
        model: *model,
        path: *path,
        inverse: false,
    })
}

fn seam_jacobian(m: &Matrix2<f64>) -> Matrix3<f64> {
    let mut j = Matrix3::identity();
    j.fixed_view_mut::<2, 2>(1, 1).copy_from(m);
    j
}

impl FlowBoxSystem {
    pub fn is_inverse(&self) -> bool {
        self.inverse
    }

    /// `h_N^{±1}` and its Jacobian; the identity off the marked block.
    pub fn twist(&self, q: &CoverPoint, sign: f64) -> (CoverPoint, Matrix3<f64>) {
        match self.model.block_chart(q) {
            None => (*q, Matrix3::identity()),
            Some((b, dh)) => {
                let theta = torus_mod(Vector2::new(b.torus.x + sign * self.path.tau(b.s), b.torus.y));
                let mut dt = Matrix3::identity();
                dt[(1, 0)] = sign * self.path.tau_derivative(b.s);
                let (out, dhinv) = self.model.unstraighten(&BoxPoint { s: b.s, torus: theta });
                (out, dhinv * dt * dh)
            }
        }
    }

    fn forward(&self, p: &CoverPoint) -> (CoverPoint, Matrix3<f64>) {
        let mid = self.model.time_n_map(p);
        let (out, jh) = self.twist(&mid, 1.0);
        (out, jh * seam_jacobian(&self.model.auto.linear()))
    }

    fn backward(&self, p: &CoverPoint) -> (CoverPoint, Matrix3<f64>) {
        let (mid, jh) = self.twist(p, -1.0);
        (
            self.model.inverse_time_n_map(&mid),
            seam_jacobian(&self.model.auto.inverse_linear()) * jh,
        )
    }

    fn step(&self, p: &CoverPoint) -> (CoverPoint, Matrix3<f64>) {
        if self.inverse {
            self.backward(p)
        } else {
            self.forward(p)
        }
    }
}

impl SystemSlot for FlowBoxSystem {
    type Point = CoverPoint;

    fn evaluate(&self, p: &CoverPoint) -> Result<CoverPoint> {
        Ok(self.step(p).0)
    }

    fn jacobian(&self, p: &CoverPoint) -> Result<Matrix3<f64>> {
        Ok(self.step(p).1)
    }

    fn gram(&self, _p: &CoverPoint) -> Matrix3<f64> {
        Matrix3::identity()
    }

    fn reference_frame(&self, _p: &CoverPoint) -> AnosovFrame {
        let (eu, es) = (self.model.auto.unstable_direction(), self.model.auto.stable_direction());
        AnosovFrame {
            e_ss: Vector3::new(0.0, es.x, es.y),
            e_c: Vector3::x(),
            e_uu: Vector3::new(0.0, eu.x, eu.y),
        }
    }

    /// Grid nodes `(s, x, y)` of the straightened block; the forward map is
    /// sampled at their preimages so every image meets the twist region.
    fn sample_points(&self, grid: &GridSpec) -> Result<Vec<CoverPoint>> {
        if grid.dimension() != 3 {
            return Err(Error::Config("flow-box grids are (s, x, y)".into()));
        }
        Ok(grid
            .nodes()?
            .into_iter()
            .map(|n| {
                let (w, _) = self.model.unstraighten(&BoxPoint {
                    s: n[0],
                    torus: Vector2::new(n[1], n[2]),
                });
                if self.inverse {
                    w
                } else {
                    self.model.inverse_time_n_map(&w)
                }
            })
            .collect())
    }
}

impl Invertible for FlowBoxSystem {
    type Inverse = FlowBoxSystem;

    fn inverse(&self) -> FlowBoxSystem {
        FlowBoxSystem {
            inverse: !self.inverse,
            ..*self
        }
    }
}

/// Regular `n³` grid over the straightened block.
pub fn default_flowbox_grid(n: usize) -> GridSpec {
    GridSpec::regular(vec![n; 3], vec![(0.0, 1.0); 3])
}

/// Largest `|det DF - 1|` over the sample points of `sys` and its inverse.
pub fn determinant_deviation(sys: &FlowBoxSystem, grid: &GridSpec) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in [*sys, sys.inverse()] {
        for p in s.sample_points(grid)? {
            worst = worst.max((s.jacobian(&p)?.determinant() - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Cones and options for the flow-box certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowBoxCertConfig {
    pub cone_u: Cone,
    pub cone_s: Cone,
    pub options: CertifyOptions,
}

impl Default for FlowBoxCertConfig {
    fn default() -> Self {
        Self {
            cone_u: Cone::unstable(FLOWBOX_CONE_HALF_ANGLE).expect("valid cone"),
            cone_s: Cone::stable(FLOWBOX_CONE_HALF_ANGLE).expect("valid cone"),
            options: CertifyOptions::default(),
        }
    }
}

/// One `(N, K)` entry of the search table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub n: f64,
    pub k: usize,
    pub unstable: PHCertificate,
    pub stable: PHCertificate,
    pub passed: bool,
}

impl SearchRow {
    /// The smaller of the two cone invariance margins.
    pub fn margin(&self) -> f64 {
        self.unstable.invariance_margin().min(self.stable.invariance_margin())
    }
}

/// Outcome of [`min_n_search`]; `found` is `None` when no candidate passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinNSearch {
    pub found: Option<(f64, usize)>,
    pub rows: Vec<SearchRow>,
}

/// Certify `F_{N,K}` for each candidate `N` with `K = 2, 3, …, k_cap`,
/// stopping the `K` scan at the first pass. Every candidate `N` is tabulated
/// so margins can be compared across `N`; `found` is the smallest passing
/// `(N, K)`.
pub fn min_n_search(
    auto: &ToralAuto,
    section: &TiltedSection,
    path: &TwistPath,
    n_candidates: &[f64],
    k_cap: usize,
    grid: &GridSpec,
    cert: &FlowBoxCertConfig,
) -> Result<MinNSearch> {
    if n_candidates.is_empty() {
        return Err(Error::Config("empty roof-time candidate list".into()));
    }
    if n_candidates
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::Config("roof-time candidates must be strictly increasing".into()));
    }
    if k_cap < 2 {
        return Err(Error::Config(format!("copy cap {k_cap} is below 2")));
    }
    let mut rows = Vec::new();
    let mut found = None;
    for &n in n_candidates {
        for k in 2..=k_cap {
            let model = CoverModel::with_section(*auto, n, k, *section)?;
            let sys = assemble_map(&model, path)?;
            let (u, s) = certify(&sys, &cert.cone_u, &cert.cone_s, grid, &cert.options)?;
            let passed = verdict(&u, &s);
            rows.push(SearchRow {
                n,
                k,
                unstable: u,
                stable: s,
                passed,
            });
            if passed {
                if found.is_none() {
                    found = Some((n, k));
                }
                break;
            }
        }
    }
    Ok(MinNSearch { found, rows })
}

/// Orbit-length bookkeeping `n = 2·ℓ·n₀` with `n₀ = K` (first return of the
/// marked block) and `ℓ = 2`.
pub fn power_segment_length(model: &CoverModel) -> usize {
    2 * 2 * model.k
}

/// Iterated growth check on `segments` orbit segments of length
/// [`power_segment_length`], with `C` the largest one-step derivative norm
/// and `μ₀ = ν`, `μ₁ = ν′` from the unstable certificate.
pub fn flowbox_power_bounds(
    sys: &FlowBoxSystem,
    unstable: &PHCertificate,
    grid: &GridSpec,
    segments: usize,
) -> Result<PowerBoundsReport> {
    let c = max_derivative_norm(sys, grid)?;
    let mu1 = if unstable.nu_prime.is_finite() {
        unstable.nu_prime
    } else {
        1.0
    };
    composed_power_bounds(
        sys,
        &unstable.cone_in,
        grid,
        power_segment_length(&sys.model),
        c,
        unstable.nu,
        mu1,
        segments,
    )
}
