//! 2D primitives, rational angles, symbolic coordinates and billiard specs.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_integer::Integer;
use num_rational::Rational64;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{q_from_r64, CycField, Poly};

/// Length tolerance for simplicity and containment predicates.
pub const GEOM_TOL: f64 = 1e-9;
/// Largest angle denominator accepted when recognizing angles from coordinates.
pub const MAX_ANGLE_DENOMINATOR: i64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon {polygon} has fewer than 3 vertices")]
    TooFewVertices { polygon: usize },
    #[error("polygon {polygon} is not simple")]
    NonSimplePolygon { polygon: usize },
    #[error("hole {hole} is not strictly inside the outer polygon or overlaps another hole")]
    HoleOutsideOuter { hole: usize },
    #[error("angle at polygon {polygon} vertex {vertex} is not a rational multiple of pi ({value} pi)")]
    IrrationalAngle { polygon: usize, vertex: usize, value: f64 },
    #[error("side direction of polygon {polygon} side {side} is not commensurate with the outer boundary")]
    IrrationalDirection { polygon: usize, side: usize },
    #[error("angle sum {found} differs from the closure constant {expected}")]
    AngleSumViolation { found: String, expected: String },
    #[error("unknown basis index {0}")]
    UnknownBasisIndex(usize),
    #[error("degenerate line: endpoints coincide")]
    DegenerateLine,
    #[error("surd sqrt({0}) is not supported in exact mode")]
    UnsupportedSurd(u32),
    #[error("billiard sides are not aligned to multiples of pi/C; exact mode unavailable")]
    NotAligned,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn polar(r: f64, theta: f64) -> Self {
        Vec2::new(r * theta.cos(), r * theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Vec2 {
        self * (1.0 / self.norm())
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, a: f64) -> Vec2 {
        let (s, c) = a.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Mirror image of `p` across the line through `a` and `b`.
pub fn reflect_point(p: Vec2, a: Vec2, b: Vec2) -> Result<Vec2, GeometryError> {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return Err(GeometryError::DegenerateLine);
    }
    let foot = a + d * ((p - a).dot(d) / len2);
    Ok(foot * 2.0 - p)
}

pub fn rotate_point(p: Vec2, angle: f64, center: Vec2) -> Vec2 {
    center + (p - center).rotated(angle)
}

/// Element of the dihedral group of order 2C acting linearly on the plane:
/// even `k` is z ↦ e^{2πik/C}·z, odd `k` is z ↦ e^{i(ω + 2πk/C)}·z̄.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dihedral {
    pub odd: bool,
    pub k: i64,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { odd: false, k: 0 };

    pub fn new(odd: bool, k: i64, c: u64) -> Self {
        Dihedral { odd, k: k.rem_euclid(c as i64) }
    }

    /// self ∘ other.
    pub fn compose(self, other: Dihedral, c: u64) -> Dihedral {
        let k = if self.odd { self.k - other.k } else { self.k + other.k };
        Dihedral::new(self.odd != other.odd, k, c)
    }

    pub fn inverse(self, c: u64) -> Dihedral {
        if self.odd {
            self
        } else {
            Dihedral::new(false, -self.k, c)
        }
    }

    pub fn det(self) -> f64 {
        if self.odd {
            -1.0
        } else {
            1.0
        }
    }

    pub fn apply(self, v: Vec2, c: u64, omega: f64) -> Vec2 {
        let a = 2.0 * std::f64::consts::PI * self.k as f64 / c as f64;
        if self.odd {
            Vec2::new(v.x, -v.y).rotated(a + omega)
        } else {
            v.rotated(a)
        }
    }

    /// Transpose (inverse) action, used to pull momenta back: (Lᵀp)·x = p·(Lx).
    pub fn apply_transpose(self, v: Vec2, c: u64, omega: f64) -> Vec2 {
        let a = 2.0 * std::f64::consts::PI * self.k as f64 / c as f64;
        if self.odd {
            // reflections are symmetric
            self.apply(v, c, omega)
        } else {
            v.rotated(-a)
        }
    }
}

/// Affine map z ↦ L(z) + t with L dihedral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Isometry {
    pub linear: Dihedral,
    pub c: u64,
    /// Reflection frame offset ω in radians (zero for aligned billiards).
    pub omega: f64,
    pub translation: Vec2,
}

impl Isometry {
    pub fn apply(&self, v: Vec2) -> Vec2 {
        self.linear.apply(v, self.c, self.omega) + self.translation
    }

    pub fn is_odd(&self) -> bool {
        self.linear.odd
    }

    /// Rotation angle in radians; for odd maps, the angle applied after
    /// reflecting across the x-axis.
    pub fn rotation_angle(&self) -> f64 {
        let a = 2.0 * std::f64::consts::PI * self.linear.k as f64 / self.c as f64;
        if self.linear.odd {
            a + self.omega
        } else {
            a
        }
    }

    pub fn compose(&self, other: &Isometry) -> Isometry {
        Isometry {
            linear: self.linear.compose(other.linear, self.c),
            c: self.c,
            omega: self.omega,
            translation: self.apply(other.translation),
        }
    }
}

/// Angle p/q in units of π.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RationalAngle {
    pub p: i64,
    pub q: i64,
}

impl RationalAngle {
    pub fn new(p: i64, q: i64) -> Self {
        let r = Rational64::new(p, q);
        RationalAngle { p: *r.numer(), q: *r.denom() }
    }

    pub fn ratio(self) -> Rational64 {
        Rational64::new(self.p, self.q)
    }

    pub fn radians(self) -> f64 {
        std::f64::consts::PI * self.p as f64 / self.q as f64
    }
}

impl fmt::Display for RationalAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.p, self.q)
    }
}

/// Best rational approximation p/q of `x` with q ≤ `max_den` via continued fractions.
pub fn best_rational(x: f64, max_den: i64) -> (i64, i64) {
    let (mut h0, mut h1, mut k0, mut k1) = (0i64, 1i64, 1i64, 0i64);
    let mut v = x;
    let mut best = (x.round() as i64, 1);
    for _ in 0..64 {
        let a = v.floor();
        let ai = a as i64;
        let h2 = ai.saturating_mul(h1).saturating_add(h0);
        let k2 = ai.saturating_mul(k1).saturating_add(k0);
        if k2 > max_den || k2 <= 0 {
            break;
        }
        best = (h2, k2);
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = v - a;
        if frac.abs() < 1e-15 {
            break;
        }
        v = 1.0 / frac;
        if !v.is_finite() {
            break;
        }
    }
    best
}

/// Recognizes `x` as a fraction with small denominator within `tol`.
pub fn recognize_rational(x: f64, max_den: i64, tol: f64) -> Option<Rational64> {
    let (p, q) = best_rational(x, max_den);
    (((p as f64) / (q as f64) - x).abs() <= tol).then(|| Rational64::new(p, q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisElement {
    pub name: String,
    pub value: f64,
}

/// One term coeff·√surd·basis (basis `None` means the constant 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: Rational64,
    pub basis: Option<usize>,
    pub surd: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TermRepr {
    Plain(Rational64, usize),
    Surd(Rational64, Option<usize>, u32),
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match (self.basis, self.surd) {
            (Some(b), 1) => TermRepr::Plain(self.coeff, b),
            (b, d) => TermRepr::Surd(self.coeff, b, d),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match TermRepr::deserialize(d)? {
            TermRepr::Plain(c, b) => Term { coeff: normalize(c), basis: Some(b), surd: 1 },
            TermRepr::Surd(c, b, s) => Term { coeff: normalize(c), basis: b, surd: s },
        })
    }
}

fn normalize(r: Rational64) -> Rational64 {
    Rational64::new(*r.numer(), *r.denom())
}

/// rational + Σ coeff·√surd·basis_value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicCoord {
    pub rat: Rational64,
    #[serde(default)]
    pub terms: Vec<Term>,
}

impl SymbolicCoord {
    pub fn rational(r: Rational64) -> Self {
        SymbolicCoord { rat: r, terms: Vec::new() }
    }

    pub fn int(n: i64) -> Self {
        Self::rational(Rational64::from_integer(n))
    }

    pub fn param(idx: usize) -> Self {
        SymbolicCoord { rat: Rational64::zero(), terms: vec![Term { coeff: Rational64::one(), basis: Some(idx), surd: 1 }] }
    }

    pub fn plus(mut self, coeff: Rational64, basis: Option<usize>, surd: u32) -> Self {
        if basis.is_none() && surd == 1 {
            self.rat += coeff;
        } else {
            self.terms.push(Term { coeff, basis, surd });
        }
        self
    }

    pub fn add(&self, o: &SymbolicCoord) -> SymbolicCoord {
        SymbolicCoord { rat: self.rat + o.rat, terms: self.terms.iter().chain(&o.terms).cloned().collect() }
    }

    pub fn scaled(&self, s: Rational64) -> SymbolicCoord {
        SymbolicCoord {
            rat: self.rat * s,
            terms: self.terms.iter().map(|t| Term { coeff: t.coeff * s, ..t.clone() }).collect(),
        }
    }
}

pub fn evaluate_symbolic(c: &SymbolicCoord, basis: &[f64]) -> Result<f64, GeometryError> {
    let mut v = c.rat.to_f64().unwrap_or(f64::NAN);
    for t in &c.terms {
        let b = match t.basis {
            Some(i) => *basis.get(i).ok_or(GeometryError::UnknownBasisIndex(i))?,
            None => 1.0,
        };
        v += t.coeff.to_f64().unwrap_or(f64::NAN) * (t.surd as f64).sqrt() * b;
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicPoint(pub SymbolicCoord, pub SymbolicCoord);

impl SymbolicPoint {
    pub fn new(x: SymbolicCoord, y: SymbolicCoord) -> Self {
        SymbolicPoint(x, y)
    }

    pub fn ints(x: i64, y: i64) -> Self {
        SymbolicPoint(SymbolicCoord::int(x), SymbolicCoord::int(y))
    }

    pub fn eval(&self, basis: &[f64]) -> Result<Vec2, GeometryError> {
        Ok(Vec2::new(evaluate_symbolic(&self.0, basis)?, evaluate_symbolic(&self.1, basis)?))
    }
}

/// Unvalidated billiard description; this is the JSON interchange format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawBilliard {
    #[serde(default)]
    pub basis: Vec<BasisElement>,
    pub outer: Vec<SymbolicPoint>,
    #[serde(default)]
    pub holes: Vec<Vec<SymbolicPoint>>,
}

/// Validated rational multi-connected polygon billiard.
#[derive(Clone, Debug, PartialEq)]
pub struct BilliardSpec {
    pub raw: RawBilliard,
    /// Numeric vertices; index 0 is the outer polygon.
    pub polygons: Vec<Vec<Vec2>>,
    /// Interior angle of the billiard domain at each vertex.
    pub angles: Vec<Vec<RationalAngle>>,
    /// Per-polygon LCM of angle denominators.
    pub c_per_polygon: Vec<u64>,
    /// Order of the rotation group of the unfolding.
    pub c: u64,
    /// Direction of every side relative to outer side 0, in units of π/C (mod 2C).
    pub side_dir: Vec<Vec<i64>>,
    /// Direction of outer side 0 in radians.
    pub frame: f64,
}

pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>() / 2.0
}

pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(d) / len2).clamp(0.0, 1.0);
    p.dist(a + d * t)
}

pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o1 = (b - a).cross(c - a);
    let o2 = (b - a).cross(d - a);
    let o3 = (d - c).cross(a - c);
    let o4 = (d - c).cross(b - c);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

pub fn segment_distance(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

fn is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if signed_area(poly).abs() < GEOM_TOL {
        return false;
    }
    for i in 0..n {
        if poly[i].dist(poly[(i + 1) % n]) < GEOM_TOL {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let d = segment_distance(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]);
            if d < GEOM_TOL {
                return false;
            }
        }
    }
    true
}

fn polygons_apart(p: &[Vec2], h: &[Vec2]) -> bool {
    for i in 0..p.len() {
        for j in 0..h.len() {
            if segment_distance(p[i], p[(i + 1) % p.len()], h[j], h[(j + 1) % h.len()]) < GEOM_TOL {
                return false;
            }
        }
    }
    true
}

/// Interior angle of the domain at each vertex, in radians.
pub fn domain_angles(poly: &[Vec2], is_hole: bool) -> Vec<f64> {
    let n = poly.len();
    let ccw = signed_area(poly) > 0.0;
    (0..n)
        .map(|i| {
            let prev = poly[(i + n - 1) % n] - poly[i];
            let next = poly[(i + 1) % n] - poly[i];
            // polygon interior angle: from next to prev, counterclockwise for ccw polygons
            let mut a = if ccw { next.cross(prev).atan2(next.dot(prev)) } else { prev.cross(next).atan2(prev.dot(next)) };
            if a <= 0.0 {
                a += 2.0 * std::f64::consts::PI;
            }
            if is_hole {
                2.0 * std::f64::consts::PI - a
            } else {
                a
            }
        })
        .collect()
}

/// Validates a raw description, recognizing rational angles from coordinates.
pub fn make_billiard(raw: RawBilliard) -> Result<BilliardSpec, GeometryError> {
    build(raw, None)
}

/// Validates a raw description whose angles are supplied by the caller; they
/// must agree with the coordinates within 1e−9 rad.
pub fn make_billiard_with_angles(raw: RawBilliard, angles: Vec<Vec<RationalAngle>>) -> Result<BilliardSpec, GeometryError> {
    build(raw, Some(angles))
}

fn build(raw: RawBilliard, given: Option<Vec<Vec<RationalAngle>>>) -> Result<BilliardSpec, GeometryError> {
    let basis: Vec<f64> = raw.basis.iter().map(|b| b.value).collect();
    let mut polygons = Vec::new();
    for (pi, verts) in std::iter::once(&raw.outer).chain(&raw.holes).enumerate() {
        if verts.len() < 3 {
            return Err(GeometryError::TooFewVertices { polygon: pi });
        }
        let pts = verts.iter().map(|v| v.eval(&basis)).collect::<Result<Vec<_>, _>>()?;
        if !is_simple(&pts) {
            return Err(GeometryError::NonSimplePolygon { polygon: pi });
        }
        polygons.push(pts);
    }
    let outer = &polygons[0];
    for (hi, hole) in polygons.iter().enumerate().skip(1) {
        let inside = hole.iter().all(|&p| point_in_polygon(p, outer));
        if !inside || !polygons_apart(outer, hole) {
            return Err(GeometryError::HoleOutsideOuter { hole: hi - 1 });
        }
        for (hj, other) in polygons.iter().enumerate().skip(hi + 1) {
            let nested = hole.iter().any(|&p| point_in_polygon(p, other)) || other.iter().any(|&p| point_in_polygon(p, hole));
            if nested || !polygons_apart(hole, other) {
                return Err(GeometryError::HoleOutsideOuter { hole: hj - 1 });
            }
        }
    }

    let pi = std::f64::consts::PI;
    let mut angles = Vec::new();
    for (i, poly) in polygons.iter().enumerate() {
        let numeric = domain_angles(poly, i > 0);
        let row = match &given {
            Some(g) => {
                let row = g.get(i).cloned().unwrap_or_default();
                if row.len() != poly.len() {
                    return Err(GeometryError::IrrationalAngle { polygon: i, vertex: row.len(), value: f64::NAN });
                }
                for (v, (a, x)) in row.iter().zip(&numeric).enumerate() {
                    if (a.radians() - x).abs() > 1e-9 {
                        return Err(GeometryError::IrrationalAngle { polygon: i, vertex: v, value: x / pi });
                    }
                }
                row.iter().map(|a| RationalAngle::new(a.p, a.q)).collect()
            }
            None => numeric
                .iter()
                .enumerate()
                .map(|(v, &x)| {
                    recognize_rational(x / pi, MAX_ANGLE_DENOMINATOR, 1e-9)
                        .map(|r| RationalAngle::new(*r.numer(), *r.denom()))
                        .ok_or(GeometryError::IrrationalAngle { polygon: i, vertex: v, value: x / pi })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        angles.push(row);
    }

    let total: Rational64 = angles.iter().flatten().map(|a| a.ratio()).sum();
    let n_total: i64 = polygons.iter().map(|p| p.len() as i64).sum();
    let k = polygons.len() as i64;
    let expected = Rational64::from_integer(n_total + 2 * k - 4);
    if total != expected {
        return Err(GeometryError::AngleSumViolation { found: total.to_string(), expected: expected.to_string() });
    }

    let c_per_polygon: Vec<u64> =
        angles.iter().map(|row| row.iter().fold(1u64, |acc, a| acc.lcm(&(a.q as u64)))).collect();
    let frame = (polygons[0][1] - polygons[0][0]).angle();
    // Relative side directions (in π units) fix the rotation group order.
    let mut rel = Vec::new();
    let mut c = c_per_polygon.iter().fold(1u64, |acc, &x| acc.lcm(&x));
    for (i, poly) in polygons.iter().enumerate() {
        let n = poly.len();
        let mut row = Vec::new();
        for s in 0..n {
            let d = (poly[(s + 1) % n] - poly[s]).angle() - frame;
            let x = (d / pi).rem_euclid(2.0);
            let r = recognize_rational(x, MAX_ANGLE_DENOMINATOR, 1e-9)
                .ok_or(GeometryError::IrrationalDirection { polygon: i, side: s })?;
            c = c.lcm(&(*r.denom() as u64));
            row.push(r);
        }
        rel.push(row);
    }
    let side_dir = rel
        .iter()
        .map(|row| {
            row.iter()
                .map(|r| ((r * Rational64::from_integer(c as i64)).to_integer()).rem_euclid(2 * c as i64))
                .collect()
        })
        .collect();

    Ok(BilliardSpec { raw, polygons, angles, c_per_polygon, c, side_dir, frame })
}

impl BilliardSpec {
    pub fn basis_values(&self) -> Vec<f64> {
        self.raw.basis.iter().map(|b| b.value).collect()
    }

    pub fn holes(&self) -> usize {
        self.polygons.len() - 1
    }

    pub fn total_sides(&self) -> usize {
        self.polygons.iter().map(Vec::len).sum()
    }

    pub fn vertex(&self, polygon: usize, i: usize) -> Vec2 {
        let p = &self.polygons[polygon];
        p[i % p.len()]
    }

    pub fn symbolic_vertex(&self, polygon: usize, i: usize) -> &SymbolicPoint {
        let poly = if polygon == 0 { &self.raw.outer } else { &self.raw.holes[polygon - 1] };
        &poly[i % poly.len()]
    }

    /// Side `s` of `polygon` as (start, end).
    pub fn side(&self, polygon: usize, s: usize) -> (Vec2, Vec2) {
        (self.vertex(polygon, s), self.vertex(polygon, s + 1))
    }

    /// Whether outer side 0 lies at a multiple of π/C from the x-axis.
    pub fn is_aligned(&self) -> bool {
        let x = self.frame * self.c as f64 / std::f64::consts::PI;
        (x - x.round()).abs() < 1e-9
    }

    /// Frame direction of outer side 0 in units of π/C (requires alignment).
    pub fn frame_index(&self) -> i64 {
        (self.frame * self.c as f64 / std::f64::consts::PI).round() as i64
    }

    /// Distance from `p` to the billiard boundary.
    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        let mut d = f64::INFINITY;
        for poly in &self.polygons {
            for s in 0..poly.len() {
                d = d.min(point_segment_distance(p, poly[s], poly[(s + 1) % poly.len()]));
            }
        }
        d
    }

    /// True for points in the closed billiard domain (tolerance 1e−9).
    pub fn contains(&self, p: Vec2) -> bool {
        if self.boundary_distance(p) <= GEOM_TOL {
            return true;
        }
        point_in_polygon(p, &self.polygons[0]) && self.polygons[1..].iter().all(|h| !point_in_polygon(p, h))
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let o = &self.polygons[0];
        let lo = Vec2::new(o.iter().map(|p| p.x).fold(f64::INFINITY, f64::min), o.iter().map(|p| p.y).fold(f64::INFINITY, f64::min));
        let hi =
            Vec2::new(o.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max), o.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max));
        (lo, hi)
    }

    /// Surd radicands used by any coordinate.
    pub fn surds(&self) -> Vec<u32> {
        let mut out: Vec<u32> = std::iter::once(&self.raw.outer)
            .chain(&self.raw.holes)
            .flatten()
            .flat_map(|p| p.0.terms.iter().chain(&p.1.terms))
            .map(|t| t.surd)
            .filter(|&d| d != 1)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Order of the cyclotomic field that holds every exact quantity.
    pub fn exact_order(&self) -> Result<usize, GeometryError> {
        let mut m = (4u64).lcm(&self.c).lcm(&2);
        for d in self.surds() {
            m = match d {
                2 => m.lcm(&8),
                3 => m.lcm(&12),
                6 => m.lcm(&24),
                other => return Err(GeometryError::UnsupportedSurd(other)),
            };
        }
        // rotations by π/C need ζ_{2C}
        m = m.lcm(&(2 * self.c));
        Ok(m as usize)
    }

    /// Exact complex form x + iy of a symbolic point.
    pub fn exact_point(&self, f: &CycField, p: &SymbolicPoint) -> Result<Poly, GeometryError> {
        let coord = |c: &SymbolicCoord, unit: &crate::exact::Cyc| -> Result<Poly, GeometryError> {
            let mut out = Poly::constant(f, f.mul(&f.from_q(q_from_r64(&c.rat)), unit));
            for t in &c.terms {
                let s = f.sqrt(t.surd).ok_or(GeometryError::UnsupportedSurd(t.surd))?;
                let coeff = f.mul(&f.scale(&s, &q_from_r64(&t.coeff)), unit);
                let term = match t.basis {
                    Some(b) => {
                        if b >= self.raw.basis.len() {
                            return Err(GeometryError::UnknownBasisIndex(b));
                        }
                        Poly::param(f, b, coeff)
                    }
                    None => Poly::constant(f, coeff),
                };
                out = out.add(f, &term);
            }
            Ok(out)
        };
        Ok(coord(&p.0, &f.one())?.add(f, &coord(&p.1, &f.i())?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.raw).expect("spec serializes")
    }
}

/// Rational angle sum of every vertex, for checking closure.
pub fn angle_sum(spec: &BilliardSpec) -> Rational64 {
    spec.angles.iter().flatten().map(|a| a.ratio()).sum()
}

pub fn is_integer(r: Rational64) -> bool {
    r.denom().is_one()
}

pub fn rational_abs(r: Rational64) -> Rational64 {
    r.abs()
}
