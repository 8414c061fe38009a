//! A closed genus-two hyperbolic surface with a short separating geodesic,
//! and orbit experiments on its unit tangent bundle.
//!
//! The surface is two one-holed tori glued along `γ`. Each torus is a pair
//! of pants with cuffs `(ℓ_γ, ℓ, ℓ)` whose two `ℓ`-cuffs are glued to each
//! other: `a` translates along one cuff, `b` along the other, and the gluing
//! element `t` conjugates `a` to `b⁻¹`, so `[a, t] = ab` is the `γ`-cuff.
//! The group is normalized so that `γ` translates along the imaginary axis
//! and `i` is on its axis; `i` is the base point of the Dirichlet domain.
//!
//! Everything that iterates maps (Lyapunov exponents, coverage, the volume
//! check) is a heuristic experiment and labeled as such by callers.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::collar::{
    collar_threshold, fermi_to_halfplane, halfplane_to_fermi, CollarParams, LiftedTwist, TwistFunction, TwistMode,
};
use crate::ddmobius::{self, DdMobius};
use crate::error::{Error, Result};
use crate::hypgeo::{anosov_frame, geodesic_flow, geodesic_flow_jacobian, sasaki_gram, HPoint, MobiusMap, UnitTangent};

/// Largest `ℓ_γ` for which the unit collar piece sits inside the Dirichlet
/// domain about a point of `γ` (needs collar width `> 1 + ℓ_γ/4`).
pub const MAX_PINCHED_LENGTH: f64 = 1.0;

/// Fenchel–Nielsen data of the two-torus decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FNData {
    pub ell_gamma: f64,
    /// Cuff length of the first torus (pants `(ℓ_γ, ℓ₂, ℓ₂)`).
    pub ell2: f64,
    /// Cuff length of the second torus (pants `(ℓ_γ, ℓ₃, ℓ₃)`).
    pub ell3: f64,
    /// Twist along `γ`, in length units.
    pub twist_gamma: f64,
    pub twist2: f64,
    pub twist3: f64,
}

impl FNData {
    /// Defaults `ℓ₂ = ℓ₃ = 2`, all twists zero.
    pub fn pinched(ell_gamma: f64) -> Self {
        Self {
            ell_gamma,
            ell2: 2.0,
            ell3: 2.0,
            twist_gamma: 0.0,
            twist2: 0.0,
            twist3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ell_gamma", self.ell_gamma), ("ell2", self.ell2), ("ell3", self.ell3)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be a positive length")));
            }
        }
        for v in [self.twist_gamma, self.twist2, self.twist3] {
            if !v.is_finite() {
                return Err(Error::Config("twist parameters must be finite".into()));
            }
        }
        if self.ell_gamma >= collar_threshold() {
            return Err(Error::Config(format!(
                "ell_gamma = {} is not below the collar threshold {:.6}",
                self.ell_gamma,
                collar_threshold()
            )));
        }
        Ok(())
    }
}

/// A genus-two Fuchsian group with generators `(a₁, t₁, a₂, t₂)` and
/// relation `[a₁, t₁][a₂, t₂] = ±I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuchsianGroup {
    pub fn_data: FNData,
    pub generators: [MobiusMap; 4],
    /// The element translating by `ℓ_γ` along the imaginary axis (towards ∞).
    pub gamma: MobiusMap,
    /// `gamma` as a word: `[a₁, t₁]` or its inverse.
    pub gamma_word: Vec<i32>,
}

pub const GENERATOR_NAMES: [&str; 4] = ["a1", "t1", "a2", "t2"];

/// Letters are `±1..=±4` for `(a₁, t₁, a₂, t₂)^{±1}`.
pub fn word_name(word: &[i32]) -> String {
    word.iter()
        .map(|&l| {
            let n = GENERATOR_NAMES[(l.unsigned_abs() - 1) as usize];
            if l < 0 {
                format!("{n}^-1")
            } else {
                n.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn commutator(x: MobiusMap, y: MobiusMap) -> MobiusMap {
    x * y * x.inverse() * y.inverse()
}

impl FuchsianGroup {
    pub fn letter(&self, l: i32) -> MobiusMap {
        let g = self.generators[(l.unsigned_abs() - 1) as usize];
        if l < 0 {
            g.inverse()
        } else {
            g
        }
    }

    pub fn word(&self, word: &[i32]) -> MobiusMap {
        word.iter().fold(MobiusMap::identity(), |acc, &l| acc * self.letter(l))
    }

    /// `[a₁, t₁][a₂, t₂]`; equals `±I`.
    pub fn relation(&self) -> MobiusMap {
        let [a1, t1, a2, t2] = self.generators;
        commutator(a1, t1) * commutator(a2, t2)
    }

    /// All freely reduced words of length `1..=max_len`, in a fixed order.
    pub fn short_words(max_len: usize) -> Vec<Vec<i32>> {
        let letters = [1, -1, 2, -2, 3, -3, 4, -4];
        let mut out: Vec<Vec<i32>> = Vec::new();
        let mut frontier: Vec<Vec<i32>> = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for w in &frontier {
                for &l in &letters {
                    if w.last() == Some(&-l) {
                        continue;
                    }
                    let mut v = w.clone();
                    v.push(l);
                    next.push(v);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }
}

/// Fixed points `(repelling, attracting)` of a hyperbolic map, `None` for ∞.
pub fn fixed_points(m: &MobiusMap) -> Result<(Option<f64>, Option<f64>)> {
    let tr = m.trace();
    let disc = tr * tr - 4.0;
    if disc <= 0.0 {
        return Err(Error::Construction {
            word: "fixed points".into(),
            trace: tr,
        });
    }
    if m.c.abs() < 1e-300 {
        let finite = m.b / (m.d - m.a);
        return Ok(if m.a.abs() > m.d.abs() {
            (Some(finite), None)
        } else {
            (None, Some(finite))
        });
    }
    let s = disc.sqrt();
    let z1 = (m.a - m.d + s) / (2.0 * m.c);
    let z2 = (m.a - m.d - s) / (2.0 * m.c);
    // attracting where |cz + d| > 1
    if (m.c * z1 + m.d).abs() > 1.0 {
        Ok((Some(z2), Some(z1)))
    } else {
        Ok((Some(z1), Some(z2)))
    }
}

/// One-holed torus `(a, t)` whose boundary `[a, t]` translates by `ℓ_γ`
/// towards ∞ along the imaginary axis, with the torus on the side `Re z > 0`.
///
/// The pants `(ℓ_γ, ℓ, ℓ)` are built from their seams: the cuff `a` is at
/// seam distance `D` from `γ` along the unit semicircle, and the cuff `b` is
/// its translate by `ℓ_γ/2` along `γ` (seams bisect the cuffs). `t` pairs the
/// two `ℓ`-cuffs, `t a t⁻¹ = b⁻¹`, so `[a, t] = ab`.
fn one_holed_torus(ell_gamma: f64, ell: f64, twist: f64) -> Result<(DdMobius, DdMobius)> {
    let half = |x: f64| {
        let e = ddmobius::exp(0.5 * x);
        let inv = ddmobius::div(TwoFloat::from(1.0), e);
        ((e + inv) * 0.5, (e - inv) * 0.5)
    };
    let (chg, shg) = half(ell_gamma);
    let (chl, shl) = half(ell);
    let cosh_d = ddmobius::div(chl + chg * chl, shg * shl);
    let td = DdMobius::semicircle_translation(cosh_d);
    let a = td * DdMobius::axial(ell) * td.inverse();
    let gamma = DdMobius::axial(ell_gamma);
    let half_turn = td * DdMobius::half_turn() * td.inverse();
    let mut best: Option<(f64, DdMobius)> = None;
    for h in [DdMobius::axial(0.5 * ell_gamma), DdMobius::axial(-0.5 * ell_gamma)] {
        for s in [1.0, -1.0] {
            let b = if s > 0.0 {
                h * a * h.inverse()
            } else {
                h * a.inverse() * h.inverse()
            };
            let err = (a * b).projective_distance(&gamma);
            // t a t⁻¹ = b⁻¹ = h a^{-s} h⁻¹
            let t0 = if s > 0.0 { h * half_turn } else { h };
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, t0));
            }
        }
    }
    let (err, t0) = best.expect("four candidates");
    if err > 1e-20 {
        return Err(Error::Construction {
            word: "ab".into(),
            trace: err,
        });
    }
    // twist along the axis of a
    let t = t0 * td * DdMobius::axial(twist) * td.inverse();
    Ok((a, t))
}

fn dd_commutator(x: DdMobius, y: DdMobius) -> DdMobius {
    x * y * x.inverse() * y.inverse()
}

/// Generators `(a₁, t₁, a₂, t₂)` in double-double precision.
fn dd_generators(fn_data: &FNData) -> Result<[DdMobius; 4]> {
    let (a1, t1) = one_holed_torus(fn_data.ell_gamma, fn_data.ell2, fn_data.twist2)?;
    let (a2, t2) = one_holed_torus(fn_data.ell_gamma, fn_data.ell3, fn_data.twist3)?;
    // Rotating by π about i swaps sides and reverses γ, so the second
    // boundary becomes γ⁻¹ and the relation closes; then twist along γ.
    let c = DdMobius::axial(fn_data.twist_gamma) * DdMobius::half_turn();
    Ok([a1, t1, c * a2 * c.inverse(), c * t2 * c.inverse()])
}

/// Build the genus-two group from Fenchel–Nielsen data.
pub fn build_genus2(fn_data: &FNData) -> Result<FuchsianGroup> {
    fn_data.validate()?;
    let dd = dd_generators(fn_data)?;
    let gamma_dd = dd_commutator(dd[0], dd[1]);
    if gamma_dd.projective_distance(&DdMobius::axial(fn_data.ell_gamma)) > 1e-20 {
        return Err(Error::Construction {
            word: "[a1, t1]".into(),
            trace: gamma_dd.to_mobius().trace(),
        });
    }
    let relation = gamma_dd * dd_commutator(dd[2], dd[3]);
    if relation.distance_to_identity() > 1e-20 {
        return Err(Error::Construction {
            word: "[a1,t1][a2,t2]".into(),
            trace: relation.to_mobius().trace(),
        });
    }
    let group = FuchsianGroup {
        fn_data: *fn_data,
        generators: dd.map(|g| g.to_mobius()),
        gamma: gamma_dd.to_mobius(),
        gamma_word: vec![1, 2, -1, -2],
    };
    for w in FuchsianGroup::short_words(3) {
        let tr = group.word(&w).trace().abs();
        if tr < 2.0 - 1e-9 {
            return Err(Error::Construction {
                word: word_name(&w),
                trace: tr,
            });
        }
    }
    Ok(group)
}

/// Hyperboloid coordinates of `z` with `i ↦ (1, 0, 0)`.
fn hyperboloid(p: &HPoint) -> [f64; 3] {
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    [(r2 + 1.0) / (2.0 * y), (r2 - 1.0) / (2.0 * y), -x / y]
}

fn klein(p: &HPoint) -> [f64; 2] {
    let q = hyperboloid(p);
    [q[1] / q[0], q[2] / q[0]]
}

fn klein_to_hyperboloid(k: [f64; 2]) -> [f64; 3] {
    let q0 = 1.0 / (1.0 - k[0] * k[0] - k[1] * k[1]).sqrt();
    [q0, q0 * k[0], q0 * k[1]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Face {
    element: MobiusMap,
    inverse: MobiusMap,
    /// `element · i`.
    image: HPoint,
    normal: [f64; 2],
    offset: f64,
}

impl Face {
    fn new(g: &DdMobius) -> Self {
        let element = g.to_mobius();
        let (q, offset) = g.orbit_point();
        Self {
            element,
            inverse: element.inverse(),
            image: element.apply(&HPoint { x: 0.0, y: 1.0 }).expect("isometry"),
            normal: [q[1], q[2]],
            offset,
        }
    }

    fn slack(&self, k: [f64; 2]) -> f64 {
        self.offset - (self.normal[0] * k[0] + self.normal[1] * k[1])
    }
}

struct Polygon {
    vertices: Vec<[f64; 2]>,
    /// Label of the edge starting at each vertex (`usize::MAX` for the frame).
    labels: Vec<usize>,
}

fn clip(poly: &Polygon, face: &Face, id: usize) -> Polygon {
    let n = poly.vertices.len();
    let mut vertices = Vec::with_capacity(n + 1);
    let mut labels = Vec::with_capacity(n + 1);
    for i in 0..n {
        let p = poly.vertices[i];
        let q = poly.vertices[(i + 1) % n];
        let (fp, fq) = (face.slack(p), face.slack(q));
        let cut = |fp: f64, fq: f64| {
            let s = fp / (fp - fq);
            [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]
        };
        match (fp >= 0.0, fq >= 0.0) {
            (true, true) => {
                vertices.push(p);
                labels.push(poly.labels[i]);
            }
            (true, false) => {
                vertices.push(p);
                labels.push(poly.labels[i]);
                vertices.push(cut(fp, fq));
                labels.push(id);
            }
            (false, true) => {
                vertices.push(cut(fp, fq));
                labels.push(poly.labels[i]);
            }
            (false, false) => {}
        }
    }
    Polygon { vertices, labels }
}

/// Interior angle between two bisector sides meeting at a vertex with
/// hyperboloid time coordinate `p0`. Inward normals on the hyperboloid are
/// `N = (cosh d - 1, q₁, q₂)` with `-⟨N, N⟩ = 2 (cosh d - 1)`; their Lorentz
/// cross product points at the vertex and gives the sine without
/// cancellation.
fn face_angle(f: &Face, g: &Face, p0: f64) -> f64 {
    let norms = 2.0 * (f.offset * g.offset).sqrt();
    let cos = (f.offset * g.offset - f.normal[0] * g.normal[0] - f.normal[1] * g.normal[1]) / norms;
    let v0 = f.normal[0] * g.normal[1] - f.normal[1] * g.normal[0];
    let sin = v0.abs() / (p0 * norms);
    sin.atan2(cos)
}

/// The Dirichlet domain about `i` with its side pairings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReducer {
    faces: Vec<Face>,
    /// Vertices in the Klein model centred at `i`.
    pub vertices: Vec<[f64; 2]>,
    /// Largest distance from `i` to a vertex.
    pub radius: f64,
    /// Hyperbolic area from the vertex fan; `4π` for genus two.
    pub area: f64,
}

/// Hash key of a group element by the image of `i` (the group is torsion
/// free); scale invariant so far images stay distinguishable.
fn element_key(g: &DdMobius) -> (i64, i64) {
    let (u, v) = g.orbit_chart();
    ((u * 1e9).round() as i64, (v * 1e9).round() as i64)
}

fn free_reduce(word: Vec<i32>) -> Vec<i32> {
    let mut out: Vec<i32> = Vec::with_capacity(word.len());
    for l in word {
        if out.last() == Some(&-l) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

fn inverse_word(word: &[i32]) -> Vec<i32> {
    word.iter().rev().map(|l| -l).collect()
}

/// Longer words lose accuracy through large intermediate products.
const MAX_WORD_LENGTH: usize = 64;

/// Displacement cap while the polygon is still unbounded.
const UNBOUNDED_DISPLACEMENT: f64 = 30.0;

impl DomainReducer {
    /// Iterated Dirichlet construction: clip by the current candidates, keep
    /// the elements that contribute sides, add their products with sides and
    /// generators, and stop once the polygon is compact with area `4π` (a
    /// convex polygon containing the domain with the same area is the domain).
    /// Candidates are kept as words and evaluated from the generators so
    /// products do not accumulate rounding.
    pub fn dirichlet(group: &FuchsianGroup) -> Result<Self> {
        const MAX_ROUNDS: usize = 40;
        let dd = dd_generators(&group.fn_data)?;
        let letter = |l: i32| {
            let g = dd[(l.unsigned_abs() - 1) as usize];
            if l < 0 {
                g.inverse()
            } else {
                g
            }
        };
        let letters: Vec<Vec<i32>> = [1, -1, 2, -2, 3, -3, 4, -4].iter().map(|&l| vec![l]).collect();
        type Entry = (DdMobius, Vec<i32>);
        let mut candidates: BTreeMap<(i64, i64), Entry> = BTreeMap::new();
        let add = |map: &mut BTreeMap<(i64, i64), Entry>, word: Vec<i32>, bound: f64| {
            let word = free_reduce(word);
            if word.is_empty() || word.len() > MAX_WORD_LENGTH {
                return;
            }
            let g = word.iter().fold(DdMobius::identity(), |acc, &l| acc * letter(l));
            let (_, excess) = g.orbit_point();
            if excess > 1e-12 && excess <= bound - 1.0 {
                let slot = map.entry(element_key(&g)).or_insert_with(|| (g, word.clone()));
                if word.len() < slot.1.len() {
                    *slot = (g, word);
                }
            }
        };
        for w in FuchsianGroup::short_words(2) {
            add(&mut candidates, w, f64::INFINITY);
        }
        for w in [group.gamma_word.clone(), inverse_word(&group.gamma_word)] {
            add(&mut candidates, w, f64::INFINITY);
        }

        let target = 4.0 * PI;
        let mut last_area = f64::NAN;
        for _ in 0..MAX_ROUNDS {
            let entries: Vec<&Entry> = candidates.values().collect();
            let faces: Vec<Face> = entries.iter().map(|(g, _)| Face::new(g)).collect();
            let mut poly = Polygon {
                vertices: vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
                labels: vec![usize::MAX; 4],
            };
            // Clip nearest bisectors first; it keeps the polygon small.
            let mut order: Vec<usize> = (0..faces.len()).collect();
            order.sort_by(|&i, &j| faces[i].offset.total_cmp(&faces[j].offset));
            for &k in &order {
                poly = clip(&poly, &faces[k], k);
                if poly.vertices.is_empty() {
                    return Err(Error::NonConvergence {
                        steps: 0,
                        reason: "Dirichlet polygon became empty".into(),
                    });
                }
            }
            let n = poly.vertices.len();
            let bounded = poly.vertices.iter().all(|v| v[0] * v[0] + v[1] * v[1] < 1.0 - 1e-13);
            let mut used: Vec<usize> = Vec::new();
            for i in 0..n {
                let (p, q) = (poly.vertices[i], poly.vertices[(i + 1) % n]);
                let len = (p[0] - q[0]).hypot(p[1] - q[1]);
                let l = poly.labels[i];
                if l != usize::MAX && len > 1e-12 && !used.contains(&l) {
                    used.push(l);
                }
            }

            let (radius, area) = if bounded {
                // Merge vertices closer than ~1e-7 in hyperbolic terms (the
                // tangential metric scale at k is 1/sqrt(1 - |k|²)), keeping
                // the label of the edge that continues.
                let close = |p: &[f64; 2], q: &[f64; 2]| {
                    (p[0] - q[0]).hypot(p[1] - q[1]) < 1e-7 * (1.0 - p[0] * p[0] - p[1] * p[1]).sqrt()
                };
                let mut kv: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
                for (k, &l) in poly.vertices.iter().zip(&poly.labels) {
                    match kv.last_mut() {
                        Some(last) if close(&last.0, k) => last.1 = l,
                        _ => kv.push((*k, l)),
                    }
                }
                while kv.len() > 1 && close(&kv[kv.len() - 1].0, &kv[0].0) {
                    kv.pop();
                }
                let p0: Vec<f64> = kv.iter().map(|(k, _)| klein_to_hyperboloid(*k)[0]).collect();
                let radius = p0.iter().map(|q| q.acosh()).fold(0.0, f64::max);
                let m = kv.len();
                let angles: f64 = (0..m)
                    .map(|j| face_angle(&faces[kv[(j + m - 1) % m].1], &faces[kv[j].1], p0[j]))
                    .sum();
                let area = (m as f64 - 2.0) * PI - angles;
                (radius, area)
            } else {
                (f64::INFINITY, f64::INFINITY)
            };
            if bounded && (area - target).abs() < 1e-8 {
                return Ok(Self {
                    faces: used.iter().map(|&l| faces[l].clone()).collect(),
                    vertices: poly.vertices,
                    radius,
                    area,
                });
            }
            last_area = area;

            // Next candidates: sides, generators and products of sides with
            // sides and generators, pruned to displacement at most 2·radius.
            let reach = if radius.is_finite() {
                2.0 * radius + 1e-9
            } else {
                UNBOUNDED_DISPLACEMENT
            };
            let bound = reach.min(UNBOUNDED_DISPLACEMENT).cosh();
            let sides: Vec<&Vec<i32>> = used.iter().map(|&l| &entries[l].1).collect();
            let mut next = BTreeMap::new();
            for l in &letters {
                add(&mut next, l.clone(), bound);
            }
            for s in &sides {
                add(&mut next, (*s).clone(), bound);
                for t in sides.iter().copied().chain(letters.iter()) {
                    add(&mut next, [s.as_slice(), t.as_slice()].concat(), bound);
                    add(&mut next, [t.as_slice(), s.as_slice()].concat(), bound);
                }
            }
            if next.keys().all(|k| candidates.contains_key(k)) {
                // stalled (possibly inside a subgroup): grow by generators
                for (_, w) in candidates.values() {
                    for l in &letters {
                        add(&mut next, [w.as_slice(), l.as_slice()].concat(), bound);
                        add(&mut next, [l.as_slice(), w.as_slice()].concat(), bound);
                    }
                }
            }
            candidates = next;
        }
        Err(Error::NonConvergence {
            steps: MAX_ROUNDS,
            reason: format!("Dirichlet construction did not close; last area {last_area:.9} vs 4π"),
        })
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn side_pairings(&self) -> Vec<MobiusMap> {
        self.faces.iter().map(|f| f.element).collect()
    }

    /// Whether `p` lies in the closed domain (relative tolerance `tol`).
    pub fn contains(&self, p: &HPoint, tol: f64) -> bool {
        let k = klein(p);
        self.faces.iter().all(|f| f.slack(k) >= -tol * (1.0 + f.offset))
    }

    /// Move `p` into the domain by side pairings; returns the representative
    /// and the deck element `m` with `m·p` = representative.
    pub fn reduce(&self, p: &HPoint) -> Result<(HPoint, MobiusMap)> {
        let mut cur = *p;
        let deck = self.descend(p, |f| {
            cur = f.inverse.apply(&cur)?;
            Ok(cur)
        })?;
        Ok((cur, deck))
    }

    /// Greedy descent towards the base point by inverse side pairings, each
    /// applied through `step` (which returns the moved base point), so the
    /// caller's object is moved by small matrices one at a time.
    fn descend(&self, p: &HPoint, mut step: impl FnMut(&Face) -> Result<HPoint>) -> Result<MobiusMap> {
        const MAX_STEPS: usize = 10_000;
        let base = HPoint { x: 0.0, y: 1.0 };
        let mut cur = *p;
        let mut deck = MobiusMap::identity();
        for _ in 0..MAX_STEPS {
            let here = cur.cosh_distance(&base);
            let mut best: Option<(f64, usize)> = None;
            for (k, f) in self.faces.iter().enumerate() {
                let c = cur.cosh_distance(&f.image);
                if c < here * (1.0 - 1e-13) && best.is_none_or(|(b, _)| c < b) {
                    best = Some((c, k));
                }
            }
            match best {
                None => return Ok(deck),
                Some((_, k)) => {
                    let f = &self.faces[k];
                    cur = step(f)?;
                    deck = f.inverse * deck;
                }
            }
        }
        Err(Error::NonConvergence {
            steps: MAX_STEPS,
            reason: format!("reduction of {p:?} did not terminate"),
        })
    }

    /// Reduce a unit tangent; also returns the deck element used.
    pub fn reduce_unit(&self, v: &UnitTangent) -> Result<(UnitTangent, MobiusMap)> {
        let mut cur = *v;
        let deck = self.descend(&v.base, |f| {
            cur = f.inverse.apply_unit(&cur)?;
            Ok(cur.base)
        })?;
        Ok((cur, deck))
    }

    /// A point uniformly distributed (hyperbolic area) in the domain.
    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> HPoint {
        let ch_max = self.radius.cosh();
        loop {
            let r = (1.0 + rng.gen::<f64>() * (ch_max - 1.0)).acosh();
            let phi = rng.gen::<f64>() * TAU;
            let s = (0.5 * r).tanh();
            let (wr, wi) = (s * phi.cos(), s * phi.sin());
            let den = (1.0 - wr) * (1.0 - wr) + wi * wi;
            let p = HPoint {
                x: -2.0 * wi / den,
                y: (1.0 - wr * wr - wi * wi) / den,
            };
            if self.contains(&p, 0.0) {
                return p;
            }
        }
    }
}

/// A closed genus-two surface: group plus Dirichlet domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub group: FuchsianGroup,
    pub reducer: DomainReducer,
}

/// Which side of `γ` carries the one-sided collar chart.
pub const COLLAR_SIDE: &str = "first torus (Re z > 0)";

impl Surface {
    pub fn build(fn_data: &FNData) -> Result<Self> {
        if fn_data.ell_gamma > MAX_PINCHED_LENGTH {
            return Err(Error::Config(format!(
                "ell_gamma = {} exceeds {MAX_PINCHED_LENGTH}: the collar would not fit the Dirichlet domain",
                fn_data.ell_gamma
            )));
        }
        let group = build_genus2(fn_data)?;
        let reducer = DomainReducer::dirichlet(&group)?;
        Ok(Self { group, reducer })
    }

    pub fn ell_gamma(&self) -> f64 {
        self.group.fn_data.ell_gamma
    }

    /// The collar twist about `γ` for this surface.
    pub fn twist(&self, rho: TwistFunction, mode: TwistMode) -> Result<LiftedTwist> {
        Ok(LiftedTwist::new(CollarParams::new(self.ell_gamma())?, rho, mode))
    }

    /// Whether a domain point lies in the one-sided collar `0 ≤ x̄ ≤ 1`.
    pub fn in_collar(&self, p: &HPoint) -> bool {
        let (xbar, _) = halfplane_to_fermi(p);
        (0.0..=1.0).contains(&xbar)
    }

    fn check_twist(&self, twist: Option<&LiftedTwist>) -> Result<()> {
        if let Some(tw) = twist {
            if (tw.params.ell - self.ell_gamma()).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "twist length {} does not match ell_gamma {}",
                    tw.params.ell,
                    self.ell_gamma()
                )));
            }
        }
        Ok(())
    }

    fn step_impl(
        &self,
        v: &UnitTangent,
        twist: Option<&LiftedTwist>,
        inverse: bool,
    ) -> Result<(UnitTangent, Matrix3<f64>)> {
        self.check_twist(twist)?;
        let mut jac = Matrix3::identity();
        let mut cur = *v;
        let twist_stage = |cur: UnitTangent, jac: Matrix3<f64>| -> Result<(UnitTangent, Matrix3<f64>)> {
            match twist {
                Some(tw) if self.in_collar(&cur.base) => {
                    let tw = if inverse { tw.inverse() } else { *tw };
                    let moved = tw.apply(&cur);
                    let jac = tw.jacobian(&cur) * jac;
                    let (red, deck) = self.reducer.reduce_unit(&moved)?;
                    Ok((red, deck.tangent_jacobian(&moved) * jac))
                }
                _ => Ok((cur, jac)),
            }
        };
        if inverse {
            (cur, jac) = twist_stage(cur, jac)?;
        }
        let t = if inverse { -1.0 } else { 1.0 };
        let flowed = geodesic_flow(&cur, t)?;
        jac = geodesic_flow_jacobian(&cur, t)? * jac;
        let (red, deck) = self.reducer.reduce_unit(&flowed)?;
        jac = deck.tangent_jacobian(&flowed) * jac;
        cur = red;
        if !inverse {
            (cur, jac) = twist_stage(cur, jac)?;
        }
        Ok((cur, jac))
    }

    /// One step of (twist ∘ time-one geodesic map) on the quotient.
    pub fn step(&self, v: &UnitTangent, twist: Option<&LiftedTwist>) -> Result<UnitTangent> {
        Ok(self.step_impl(v, twist, false)?.0)
    }

    /// The step together with its chart Jacobian.
    pub fn step_with_jacobian(
        &self,
        v: &UnitTangent,
        twist: Option<&LiftedTwist>,
    ) -> Result<(UnitTangent, Matrix3<f64>)> {
        self.step_impl(v, twist, false)
    }

    /// Inverse of [`Surface::step`].
    pub fn step_inverse(&self, v: &UnitTangent, twist: Option<&LiftedTwist>) -> Result<UnitTangent> {
        Ok(self.step_impl(v, twist, true)?.0)
    }

    /// A Liouville-uniform unit tangent in the domain.
    pub fn sample_tangent<R: Rng>(&self, rng: &mut R) -> UnitTangent {
        let p = self.reducer.sample_point(rng);
        UnitTangent::new(p, rng.gen::<f64>() * TAU)
    }
}

/// One application of (twist ∘ time-one map) on the surface.
pub fn surface_map_step(surface: &Surface, v: &UnitTangent, twist: Option<&LiftedTwist>) -> Result<UnitTangent> {
    surface.step(v, twist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovExponents {
    pub uu: f64,
    pub c: f64,
    pub ss: f64,
}

fn lyapunov_impl(
    surface: &Surface,
    twist: Option<&LiftedTwist>,
    v0: &UnitTangent,
    n_steps: usize,
    inverse: bool,
) -> Result<LyapunovExponents> {
    if n_steps < 1000 {
        return Err(Error::Config(format!(
            "Lyapunov estimates need at least 1000 steps, got {n_steps}"
        )));
    }
    let (mut v, _) = surface.reducer.reduce_unit(v0)?;
    let mut q = Matrix3::identity();
    let mut sums = [0.0f64; 3];
    for _ in 0..n_steps {
        let (w, jac) = surface.step_impl(&v, twist, inverse)?;
        let fv = anosov_frame(&v).matrix();
        let fw = anosov_frame(&w).matrix();
        let m = fw.transpose() * sasaki_gram(&w) * jac * fv;
        let qr = (m * q).qr();
        let r = qr.r();
        let mut qn = qr.q();
        for k in 0..3 {
            let d = r[(k, k)];
            if !(d.is_finite() && d != 0.0) {
                return Err(Error::Evaluation {
                    point: format!("{v:?}"),
                    reason: "degenerate cocycle".into(),
                });
            }
            sums[k] += d.abs().ln();
            if d < 0.0 {
                let col = -qn.column(k);
                qn.set_column(k, &col);
            }
        }
        q = qn;
        v = w;
    }
    let mut l = sums.map(|s| s / n_steps as f64);
    l.sort_by(|a, b| b.total_cmp(a));
    Ok(LyapunovExponents {
        uu: l[0],
        c: l[1],
        ss: l[2],
    })
}

/// QR estimate of the Lyapunov exponents of the step map in Sasaki norm,
/// in decreasing order. Heuristic.
pub fn lyapunov_estimate(
    surface: &Surface,
    twist: Option<&LiftedTwist>,
    v0: &UnitTangent,
    n_steps: usize,
) -> Result<LyapunovExponents> {
    lyapunov_impl(surface, twist, v0, n_steps, false)
}

/// Exponents of the inverse map.
pub fn lyapunov_estimate_inverse(
    surface: &Surface,
    twist: Option<&LiftedTwist>,
    v0: &UnitTangent,
    n_steps: usize,
) -> Result<LyapunovExponents> {
    lyapunov_impl(surface, twist, v0, n_steps, true)
}

/// Number of angle bins per spatial cell in [`transitivity_probe`].
pub const ANGLE_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitivityReport {
    pub coverage: f64,
    pub visited: usize,
    pub cells: usize,
    pub n_orbits: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub heuristic: bool,
}

/// Fraction of phase-space cells visited by sampled orbits. Cells are the
/// Voronoi cells of `cell_count / 16` uniform sites in the domain times 16
/// angle bins. Heuristic.
pub fn transitivity_probe(
    surface: &Surface,
    twist: Option<&LiftedTwist>,
    n_orbits: usize,
    n_steps: usize,
    cell_count: usize,
    seed: u64,
) -> Result<TransitivityReport> {
    if cell_count == 0 || !cell_count.is_multiple_of(ANGLE_BINS) {
        return Err(Error::Config(format!(
            "cell count {cell_count} must be a positive multiple of {ANGLE_BINS}"
        )));
    }
    surface.check_twist(twist)?;
    let n_sites = cell_count / ANGLE_BINS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<[f64; 3]> = (0..n_sites)
        .map(|_| hyperboloid(&surface.reducer.sample_point(&mut rng)))
        .collect();
    let cell_of = |v: &UnitTangent| {
        let h = hyperboloid(&v.base);
        let mut best = (f64::INFINITY, 0usize);
        for (k, s) in sites.iter().enumerate() {
            let c = h[0] * s[0] - h[1] * s[1] - h[2] * s[2];
            if c < best.0 {
                best = (c, k);
            }
        }
        let bin = ((v.theta / TAU * ANGLE_BINS as f64) as usize).min(ANGLE_BINS - 1);
        best.1 * ANGLE_BINS + bin
    };
    let visited: Vec<Result<Vec<bool>>> = (0..n_orbits)
        .into_par_iter()
        .map(|k| {
            let mut orng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + k as u64));
            let mut v = surface.sample_tangent(&mut orng);
            let mut seen = vec![false; cell_count];
            seen[cell_of(&v)] = true;
            for _ in 0..n_steps {
                v = surface.step(&v, twist)?;
                seen[cell_of(&v)] = true;
            }
            Ok(seen)
        })
        .collect();
    let mut all = vec![false; cell_count];
    for s in visited {
        for (a, b) in all.iter_mut().zip(s?) {
            *a |= b;
        }
    }
    let count = all.iter().filter(|&&b| b).count();
    Ok(TransitivityReport {
        coverage: count as f64 / cell_count as f64,
        visited: count,
        cells: cell_count,
        n_orbits,
        n_steps,
        seed,
        heuristic: true,
    })
}

/// A box in collar coordinates `(x̄, ȳ/ℓ, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollarBox {
    pub xbar: (f64, f64),
    /// Fraction of the core length, within `[-1/2, 1/2]`.
    pub ybar: (f64, f64),
    pub alpha: (f64, f64),
}

impl Default for CollarBox {
    fn default() -> Self {
        Self {
            xbar: (0.3, 0.7),
            ybar: (-0.25, 0.25),
            alpha: (0.0, 0.5 * PI),
        }
    }
}

impl CollarBox {
    /// Liouville share of the box within the collar piece.
    fn share(&self) -> f64 {
        let sinh1 = 1f64.sinh();
        (self.xbar.1.sinh() - self.xbar.0.sinh()) / sinh1 * (self.ybar.1 - self.ybar.0) * (self.alpha.1 - self.alpha.0)
            / TAU
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeCheck {
    pub samples: usize,
    pub observed: f64,
    pub expected: f64,
    pub sigma: f64,
    pub z_score: f64,
    pub within_3_sigma: bool,
    pub heuristic: bool,
}

/// Monte Carlo test that the step map preserves Liouville measure.
///
/// Samples are Liouville-uniform on the collar piece `R` pulled back by the
/// time-one flow; the step maps that set onto `R` (the twist preserves the
/// collar), so for a volume-preserving step the images are uniform on `R`
/// and the share landing in `bx` is its Liouville share.
pub fn volume_check(
    surface: &Surface,
    twist: Option<&LiftedTwist>,
    bx: &CollarBox,
    samples: usize,
    seed: u64,
) -> Result<VolumeCheck> {
    if samples == 0 {
        return Err(Error::Config("volume check needs samples".into()));
    }
    surface.check_twist(twist)?;
    let ell = surface.ell_gamma();
    let sinh1 = 1f64.sinh();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<UnitTangent> = (0..samples)
        .map(|_| {
            let xbar = (rng.gen::<f64>() * sinh1).asinh();
            let ybar = (rng.gen::<f64>() - 0.5) * ell;
            let theta = rng.gen::<f64>() * TAU;
            UnitTangent::new(fermi_to_halfplane(xbar, ybar), theta)
        })
        .collect();
    let hits: Vec<Result<bool>> = starts
        .par_iter()
        .map(|w| {
            let (v, _) = surface.reducer.reduce_unit(&geodesic_flow(w, -1.0)?)?;
            let img = surface.step(&v, twist)?;
            let (xbar, ybar) = halfplane_to_fermi(&img.base);
            let alpha = crate::hypgeo::wrap_angle(img.theta + xbar.sinh().atan());
            let yfrac = ybar / ell;
            Ok((bx.xbar.0..bx.xbar.1).contains(&xbar)
                && (bx.ybar.0..bx.ybar.1).contains(&yfrac)
                && (bx.alpha.0..bx.alpha.1).contains(&alpha))
        })
        .collect();
    let mut count = 0usize;
    for h in hits {
        if h? {
            count += 1;
        }
    }
    let expected = bx.share();
    let observed = count as f64 / samples as f64;
    let sigma = (expected * (1.0 - expected) / samples as f64).sqrt();
    let z = (observed - expected) / sigma;
    Ok(VolumeCheck {
        samples,
        observed,
        expected,
        sigma,
        z_score: z,
        within_3_sigma: z.abs() <= 3.0,
        heuristic: true,
    })
}
