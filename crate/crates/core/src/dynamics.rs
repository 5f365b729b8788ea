//! Ray dynamics in billiards bounded by segments and circles: tracing,
//! periodic-orbit search and tangent-envelope polygonization of circles.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use num_rational::Rational64;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diophantine::{rationalize_angles, DiophantineError};
use crate::families::trig_pi_6;
use crate::geometry::{
    make_billiard, make_billiard_with_angles, point_in_polygon, point_segment_distance, recognize_rational, BasisElement, BilliardSpec,
    GeometryError, RationalAngle, RawBilliard, SymbolicCoord, SymbolicPoint, Term, Vec2,
};

pub const CORNER_TOL: f64 = 1e-9;
pub const TANGENT_TOL: f64 = 1e-9;
pub const CLOSURE_TOL: f64 = 1e-9;
pub const SEEDS_PER_SEQUENCE: usize = 64;
/// Distance (radians) within which a reflection point counts as on the mirror grid.
pub const GRID_TOL: f64 = 1e-7;
pub const CLUSTER_TOL: f64 = TAU / 100.0;
const MAX_SEARCH_BOUNCES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Diophantine(#[from] DiophantineError),
    #[error("circle {0} is not strictly inside the outer polygon")]
    CircleOutside(usize),
    #[error("start point is not strictly inside the billiard")]
    StartOutside,
    #[error("direction must be a nonzero finite vector")]
    BadDirection,
    #[error("at most {MAX_SEARCH_BOUNCES} bounces are supported, got {0}")]
    TooManyBounces(usize),
    #[error("need at least 3 distinct tangency angles, got {0}")]
    TooFewPoints(usize),
    #[error("angular gap {0} rad between tangency points is not below π")]
    AdjacentGapTooWide(f64),
    #[error("orbit budget must be at least 3, got {0}")]
    BadBudget(usize),
    #[error("billiard has no circular hole")]
    NoCircle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleSpec {
    pub center: SymbolicPoint,
    pub radius: SymbolicCoord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvedBilliard {
    pub raw: RawBilliard,
    pub circles: Vec<CircleSpec>,
    pub outer: Vec<Vec2>,
    pub centers: Vec<Vec2>,
    pub radii: Vec<f64>,
}

impl CurvedBilliard {
    pub fn new(raw: RawBilliard, circles: Vec<CircleSpec>) -> Result<Self, DynamicsError> {
        let basis: Vec<f64> = raw.basis.iter().map(|b| b.value).collect();
        let mut outer = raw.outer.iter().map(|p| p.eval(&basis)).collect::<Result<Vec<_>, _>>()?;
        if crate::geometry::signed_area(&outer) < 0.0 {
            outer.reverse();
        }
        let mut centers = Vec::new();
        let mut radii = Vec::new();
        for (i, c) in circles.iter().enumerate() {
            let center = c.center.eval(&basis)?;
            let r = crate::geometry::evaluate_symbolic(&c.radius, &basis)?;
            let clear = (0..outer.len()).all(|s| point_segment_distance(center, outer[s], outer[(s + 1) % outer.len()]) > r);
            if !(r > 0.0) || !point_in_polygon(center, &outer) || !clear {
                return Err(DynamicsError::CircleOutside(i));
            }
            centers.push(center);
            radii.push(r);
        }
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if centers[i].dist(centers[j]) <= radii[i] + radii[j] {
                    return Err(DynamicsError::CircleOutside(j));
                }
            }
        }
        Ok(CurvedBilliard { raw, circles, outer, centers, radii })
    }

    /// A polygon-only billiard, for tracing in plain polygons.
    pub fn polygon(outer: Vec<Vec2>) -> Result<Self, DynamicsError> {
        Self::numeric(outer, &[])
    }

    /// Billiard from plain coordinates, every number its own basis element.
    pub fn numeric(outer: Vec<Vec2>, circles: &[(Vec2, f64)]) -> Result<Self, DynamicsError> {
        let mut basis: Vec<BasisElement> = outer
            .iter()
            .enumerate()
            .flat_map(|(i, p)| [BasisElement { name: format!("x{i}"), value: p.x }, BasisElement { name: format!("y{i}"), value: p.y }])
            .collect();
        let outer_sym = (0..outer.len()).map(|i| SymbolicPoint(SymbolicCoord::param(2 * i), SymbolicCoord::param(2 * i + 1))).collect();
        let mut specs = Vec::new();
        for (j, (c, r)) in circles.iter().enumerate() {
            let at = basis.len();
            basis.push(BasisElement { name: format!("cx{j}"), value: c.x });
            basis.push(BasisElement { name: format!("cy{j}"), value: c.y });
            basis.push(BasisElement { name: format!("r{j}"), value: *r });
            specs.push(CircleSpec {
                center: SymbolicPoint(SymbolicCoord::param(at), SymbolicCoord::param(at + 1)),
                radius: SymbolicCoord::param(at + 2),
            });
        }
        CurvedBilliard::new(RawBilliard { basis, outer: outer_sym, holes: vec![] }, specs)
    }

    pub fn surfaces(&self) -> Vec<Surface> {
        (0..self.outer.len()).map(Surface::Side).chain((0..self.centers.len()).map(Surface::Circle)).collect()
    }

    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(p, &self.outer)
            && self.centers.iter().zip(&self.radii).all(|(c, r)| p.dist(*c) > *r)
            && (0..self.outer.len()).all(|s| point_segment_distance(p, self.outer[s], self.outer[(s + 1) % self.outer.len()]) > CORNER_TOL)
    }

    fn side(&self, s: usize) -> (Vec2, Vec2) {
        (self.outer[s], self.outer[(s + 1) % self.outer.len()])
    }

    /// Point of surface `s` at parameter `t`: fraction along a side, or
    /// angle on a circle.
    pub fn point(&self, s: Surface, t: f64) -> Vec2 {
        match s {
            Surface::Side(i) => {
                let (a, b) = self.side(i);
                a + (b - a) * t
            }
            Surface::Circle(j) => self.centers[j] + Vec2::polar(self.radii[j], t),
        }
    }

    /// Unit normal pointing into the billiard.
    pub fn normal(&self, s: Surface, t: f64) -> Vec2 {
        match s {
            Surface::Side(i) => {
                let (a, b) = self.side(i);
                (b - a).normalized().perp()
            }
            Surface::Circle(_) => Vec2::polar(1.0, t),
        }
    }

    /// First boundary hit along from + t·dir, t > 0, ignoring `skip`.
    pub fn first_hit(&self, from: Vec2, dir: Vec2, skip: Option<Surface>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |h: Hit| {
            if best.as_ref().map_or(true, |b| h.t < b.t) {
                best = Some(h);
            }
        };
        for i in 0..self.outer.len() {
            if skip == Some(Surface::Side(i)) {
                continue;
            }
            let (a, b) = self.side(i);
            let e = b - a;
            let den = dir.cross(e);
            if den.abs() < 1e-15 {
                continue;
            }
            let w = a - from;
            let t = w.cross(e) / den;
            let u = w.cross(dir) / den;
            if t > 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&u) {
                consider(Hit { t, point: from + dir * t, surface: Surface::Side(i), param: u.clamp(0.0, 1.0) });
            }
        }
        for j in 0..self.centers.len() {
            if skip == Some(Surface::Circle(j)) {
                continue;
            }
            let w = from - self.centers[j];
            let b = w.dot(dir);
            let c = w.dot(w) - self.radii[j] * self.radii[j];
            let disc = b * b - c;
            if disc < 0.0 {
                continue;
            }
            let t = -b - disc.sqrt();
            if t > 1e-12 {
                let point = from + dir * t;
                consider(Hit { t, point, surface: Surface::Circle(j), param: (point - self.centers[j]).angle().rem_euclid(TAU) });
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Surface {
    Side(usize),
    Circle(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec2,
    pub surface: Surface,
    pub param: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxBounces,
    CornerHit,
    TangentHit,
    Escaped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Path {
    /// Start point followed by every bounce point.
    pub points: Vec<Vec2>,
    pub surfaces: Vec<Surface>,
    pub termination: Termination,
}

fn reflect(d: Vec2, n: Vec2) -> Vec2 {
    d - n * (2.0 * d.dot(n))
}

/// Follows a ray with specular reflection for at most `max_bounces`
/// bounces. Corner and grazing hits end the path and are flagged.
pub fn trace(b: &CurvedBilliard, start: Vec2, direction: Vec2, max_bounces: usize) -> Result<Path, DynamicsError> {
    if !b.contains(start) {
        return Err(DynamicsError::StartOutside);
    }
    let norm = direction.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(DynamicsError::BadDirection);
    }
    let mut d = direction * (1.0 / norm);
    let mut p = start;
    let mut skip = None;
    let mut path = Path { points: vec![start], surfaces: vec![], termination: Termination::MaxBounces };
    for _ in 0..max_bounces {
        let Some(hit) = b.first_hit(p, d, skip) else {
            path.termination = Termination::Escaped;
            return Ok(path);
        };
        path.points.push(hit.point);
        path.surfaces.push(hit.surface);
        let n = b.normal(hit.surface, hit.param);
        match hit.surface {
            Surface::Side(i) => {
                let (a, c) = b.side(i);
                if hit.point.dist(a) < CORNER_TOL || hit.point.dist(c) < CORNER_TOL {
                    path.termination = Termination::CornerHit;
                    return Ok(path);
                }
            }
            Surface::Circle(_) => {
                if d.dot(n).abs() < TANGENT_TOL {
                    path.termination = Termination::TangentHit;
                    return Ok(path);
                }
            }
        }
        d = reflect(d, n);
        p = hit.point;
        skip = Some(hit.surface);
    }
    Ok(path)
}

/// Angle between the outgoing direction and the mirror image of the
/// incoming one at bounce point `x` with normal `n`.
pub fn reflection_residual(prev: Vec2, x: Vec2, next: Vec2, n: Vec2) -> f64 {
    let u = (x - prev).normalized();
    let v = (next - x).normalized();
    let r = reflect(u, n);
    r.cross(v).atan2(r.dot(v)).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    /// Member of a continuous family of parallel orbits.
    Family,
    Isolated,
}

#[derive(Clone, Debug, Serialize)]
pub struct Orbit {
    pub points: Vec<Vec2>,
    pub surfaces: Vec<Surface>,
    /// Side fraction or circle angle of each bounce.
    pub params: Vec<f64>,
    pub length: f64,
    pub stability: Stability,
}

impl Orbit {
    pub fn bounces(&self) -> usize {
        self.points.len()
    }

    pub fn touches_circle(&self) -> bool {
        self.surfaces.iter().any(|s| matches!(s, Surface::Circle(_)))
    }

    /// Largest reflection-law residual over all bounces, in radians.
    pub fn max_reflection_residual(&self, b: &CurvedBilliard) -> f64 {
        let k = self.points.len();
        (0..k)
            .map(|i| {
                let prev = self.points[(i + k - 1) % k];
                let next = self.points[(i + 1) % k];
                reflection_residual(prev, self.points[i], next, b.normal(self.surfaces[i], self.params[i]))
            })
            .fold(0.0, f64::max)
    }
}

fn cycle_length(points: &[Vec2]) -> f64 {
    let k = points.len();
    (0..k).map(|i| points[i].dist(points[(i + 1) % k])).sum()
}

/// Halton point `index` in `dim` dimensions.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    PRIMES[..dim]
        .iter()
        .map(|&b| {
            let (mut f, mut r, mut i) = (1.0, 0.0, index);
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

/// Bounce sequences of length k with no surface repeated consecutively
/// (cyclically), one per class under rotation and reversal.
pub fn canonical_sequences(n_surfaces: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut seq = vec![0usize; k];
    fn canonical(seq: &[usize]) -> bool {
        let k = seq.len();
        let mut rev: Vec<usize> = seq.to_vec();
        rev.reverse();
        (0..k).all(|r| {
            let rot = |s: &[usize]| -> Vec<usize> { (0..k).map(|i| s[(i + r) % k]).collect() };
            seq <= rot(seq).as_slice() && seq <= rot(&rev).as_slice()
        })
    }
    fn rec(pos: usize, n: usize, seq: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let k = seq.len();
        if pos == k {
            if seq[k - 1] != seq[0] && canonical(seq) {
                out.push(seq.clone());
            }
            return;
        }
        for s in 0..n {
            if pos > 0 && seq[pos - 1] == s {
                continue;
            }
            seq[pos] = s;
            rec(pos + 1, n, seq, out);
        }
    }
    if k >= 2 {
        rec(0, n_surfaces, &mut seq, &mut out);
    }
    out
}

fn residuals(b: &CurvedBilliard, surf: &[Surface], t: &[f64]) -> Vec<f64> {
    let k = surf.len();
    let pts: Vec<Vec2> = surf.iter().zip(t).map(|(&s, &x)| b.point(s, x)).collect();
    (0..k)
        .map(|i| {
            let u = (pts[i] - pts[(i + k - 1) % k]).normalized();
            let v = (pts[(i + 1) % k] - pts[i]).normalized();
            (v - u).dot(b.normal(surf[i], t[i]).perp())
        })
        .collect()
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap_or(Ordering::Equal))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        rhs.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            rhs[r] -= f * rhs[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (rhs[c] - s) / a[c][c];
    }
    Some(x)
}

/// Levenberg–Marquardt on the reflection residuals.
fn refine(b: &CurvedBilliard, surf: &[Surface], mut t: Vec<f64>) -> Option<Vec<f64>> {
    let k = surf.len();
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut r = residuals(b, surf, &t);
    let mut lambda = 1e-3;
    for it in 0..200 {
        if r.iter().all(|x| x.abs() < 1e-13) {
            return Some(t);
        }
        // converging runs are quadratic long before this
        if (it == 25 && norm(&r) > 1e-6) || (it == 60 && norm(&r) > 1e-16) {
            return None;
        }
        let h = 1e-7;
        let mut jac = vec![vec![0.0; k]; k];
        for j in 0..k {
            let mut tp = t.clone();
            let mut tm = t.clone();
            tp[j] += h;
            tm[j] -= h;
            let (rp, rm) = (residuals(b, surf, &tp), residuals(b, surf, &tm));
            for i in 0..k {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let jtj: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| (0..k).map(|l| jac[l][i] * jac[l][j]).sum()).collect()).collect();
        let jtr: Vec<f64> = (0..k).map(|i| -(0..k).map(|l| jac[l][i] * r[l]).sum::<f64>()).collect();
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..k {
                a[i][i] += lambda * (1.0 + jtj[i][i]);
            }
            let Some(step) = solve_dense(a, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = t.iter().zip(&step).map(|(a, s)| a + s).collect();
            let rc = residuals(b, surf, &cand);
            if rc.iter().all(|x| x.is_finite()) && norm(&rc) < norm(&r) {
                t = cand;
                r = rc;
                lambda = (lambda * 0.3).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    r.iter().all(|x| x.abs() < 1e-11).then_some(t)
}

/// Checks a refined candidate: bounce points on their pieces away from
/// corners, every leg free of other walls, reflection law and closure.
fn validate(b: &CurvedBilliard, surf: &[Surface], t: &[f64]) -> Option<Orbit> {
    let k = surf.len();
    let mut params = Vec::with_capacity(k);
    for (&s, &x) in surf.iter().zip(t) {
        match s {
            Surface::Side(i) => {
                let (a, c) = b.side(i);
                let len = a.dist(c);
                if x * len < CORNER_TOL || (1.0 - x) * len < CORNER_TOL {
                    return None;
                }
                params.push(x);
            }
            Surface::Circle(_) => params.push(x.rem_euclid(TAU)),
        }
    }
    let points: Vec<Vec2> = surf.iter().zip(&params).map(|(&s, &x)| b.point(s, x)).collect();
    for i in 0..k {
        let (p, q) = (points[i], points[(i + 1) % k]);
        let leg = q - p;
        if leg.norm() < CLOSURE_TOL {
            return None;
        }
        let d = leg.normalized();
        // leaves into the domain and arrives from it
        if d.dot(b.normal(surf[i], params[i])) <= TANGENT_TOL {
            return None;
        }
        let hit = b.first_hit(p, d, Some(surf[i]))?;
        if hit.surface != surf[(i + 1) % k] || hit.point.dist(q) > CLOSURE_TOL {
            return None;
        }
    }
    let orbit = Orbit {
        length: cycle_length(&points),
        stability: if surf.iter().all(|s| matches!(s, Surface::Side(_))) && k % 2 == 0 { Stability::Family } else { Stability::Isolated },
        points,
        surfaces: surf.to_vec(),
        params,
    };
    (orbit.max_reflection_residual(b) < 1e-9).then_some(orbit)
}

fn is_repetition(o: &Orbit) -> bool {
    let k = o.points.len();
    (1..k).filter(|d| k % d == 0).any(|d| (0..k).all(|i| o.surfaces[i] == o.surfaces[(i + d) % k] && o.points[i].dist(o.points[(i + d) % k]) < 1e-7))
}

type Key = Vec<(Surface, i64)>;

fn orbit_key(o: &Orbit) -> Key {
    let k = o.points.len();
    let q = |i: usize| -> (Surface, i64) {
        let p = o.points[i];
        (o.surfaces[i], ((p.x * 1e6).round() as i64) * 4_000_000_000 + (p.y * 1e6).round() as i64)
    };
    let base: Vec<(Surface, i64)> = (0..k).map(q).collect();
    let mut best: Option<Key> = None;
    for rev in [false, true] {
        for r in 0..k {
            let cand: Key = (0..k).map(|i| if rev { base[(r + k - i) % k] } else { base[(i + r) % k] }).collect();
            if best.as_ref().map_or(true, |b| cand < *b) {
                best = Some(cand);
            }
        }
    }
    best.unwrap_or_default()
}

fn family_key(o: &Orbit) -> (Vec<Surface>, i64) {
    let k = o.surfaces.len();
    let mut best: Option<Vec<Surface>> = None;
    for rev in [false, true] {
        for r in 0..k {
            let cand: Vec<Surface> = (0..k).map(|i| if rev { o.surfaces[(r + k - i) % k] } else { o.surfaces[(i + r) % k] }).collect();
            if best.as_ref().map_or(true, |b| cand < *b) {
                best = Some(cand);
            }
        }
    }
    (best.unwrap_or_default(), (o.length * 1e6).round() as i64)
}

/// Rotates an orbit so that its canonical bounce comes first.
fn normalize(o: Orbit) -> Orbit {
    let k = o.points.len();
    let start = (0..k)
        .min_by(|&i, &j| (o.surfaces[i], o.points[i].x, o.points[i].y).partial_cmp(&(o.surfaces[j], o.points[j].x, o.points[j].y)).unwrap_or(Ordering::Equal))
        .unwrap_or(0);
    let idx: Vec<usize> = (0..k).map(|i| (i + start) % k).collect();
    Orbit {
        points: idx.iter().map(|&i| o.points[i]).collect(),
        surfaces: idx.iter().map(|&i| o.surfaces[i]).collect(),
        params: idx.iter().map(|&i| o.params[i]).collect(),
        length: o.length,
        stability: o.stability,
    }
}

fn seed_params(surf: &[Surface], h: &[f64]) -> Vec<f64> {
    surf.iter()
        .zip(h)
        .map(|(&s, &x)| match s {
            Surface::Side(_) => 0.02 + 0.96 * x,
            Surface::Circle(_) => TAU * x,
        })
        .collect()
}

/// Distinct primitive periodic orbits with 2..=max_bounces bounces and
/// length at most `max_length`, sorted by length and then bounce sequence.
/// Each parallel family is represented once.
pub fn find_periodic_orbits(b: &CurvedBilliard, max_bounces: usize, max_length: f64) -> Result<Vec<Orbit>, DynamicsError> {
    if max_bounces > MAX_SEARCH_BOUNCES {
        return Err(DynamicsError::TooManyBounces(max_bounces));
    }
    let surfaces = b.surfaces();
    let seqs: Vec<Vec<Surface>> =
        (2..=max_bounces).flat_map(|k| canonical_sequences(surfaces.len(), k)).map(|s| s.into_iter().map(|i| surfaces[i]).collect()).collect();
    let found: Vec<Orbit> = seqs
        .par_iter()
        .flat_map_iter(|surf| {
            (1..=SEEDS_PER_SEQUENCE).filter_map(move |i| {
                let t0 = seed_params(surf, &halton(i, surf.len()));
                let t = refine(b, surf, t0)?;
                validate(b, surf, &t)
            })
        })
        .filter(|o| o.length <= max_length && !is_repetition(o))
        .collect();
    let mut isolated: BTreeMap<Key, Orbit> = BTreeMap::new();
    let mut families: BTreeMap<(Vec<Surface>, i64), (Key, Orbit)> = BTreeMap::new();
    for o in found {
        let key = orbit_key(&o);
        match o.stability {
            Stability::Isolated => {
                isolated.entry(key).or_insert(o);
            }
            Stability::Family => {
                let fk = family_key(&o);
                match families.get(&fk) {
                    Some((k0, _)) if *k0 <= key => {}
                    _ => {
                        families.insert(fk, (key, o));
                    }
                }
            }
        }
    }
    let mut out: Vec<Orbit> = isolated.into_values().chain(families.into_values().map(|(_, o)| o)).map(normalize).collect();
    out.sort_by(|a, c| {
        a.length
            .partial_cmp(&c.length)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.surfaces.cmp(&c.surfaces))
            .then_with(|| orbit_key(a).cmp(&orbit_key(c)))
    });
    Ok(out)
}

/// Wall-hit sequence of the radial ray leaving circle `j` at angle θ, and
/// the tangential direction component at its last hit.
fn radial_probe(b: &CurvedBilliard, j: usize, theta: f64, hits: usize) -> Option<(Vec<Surface>, f64)> {
    let start = b.point(Surface::Circle(j), theta);
    let mut d = Vec2::polar(1.0, theta);
    let mut p = start;
    let mut skip = Some(Surface::Circle(j));
    let mut seq = Vec::with_capacity(hits);
    let mut last = 0.0;
    for _ in 0..hits {
        let hit = b.first_hit(p, d, skip)?;
        let Surface::Side(i) = hit.surface else { return None };
        let (a, c) = b.side(i);
        if hit.point.dist(a) < CORNER_TOL || hit.point.dist(c) < CORNER_TOL {
            return None;
        }
        seq.push(hit.surface);
        last = d.dot((c - a).normalized());
        d = reflect(d, b.normal(hit.surface, hit.param));
        p = hit.point;
        skip = Some(hit.surface);
    }
    Some((seq, last))
}

fn emerging_orbit(b: &CurvedBilliard, j: usize, theta: f64, hits: usize) -> Option<Orbit> {
    let mut d = Vec2::polar(1.0, theta);
    let mut p = b.point(Surface::Circle(j), theta);
    let mut skip = Some(Surface::Circle(j));
    let mut out: Vec<(Surface, f64)> = vec![(Surface::Circle(j), theta.rem_euclid(TAU))];
    for _ in 0..hits {
        let hit = b.first_hit(p, d, skip)?;
        out.push((hit.surface, hit.param));
        d = reflect(d, b.normal(hit.surface, hit.param));
        p = hit.point;
        skip = Some(hit.surface);
    }
    // retrace: the middle hit is perpendicular, walk back over the others
    let back: Vec<(Surface, f64)> = out[1..hits].iter().rev().cloned().collect();
    out.extend(back);
    let surf: Vec<Surface> = out.iter().map(|x| x.0).collect();
    let t: Vec<f64> = out.iter().map(|x| x.1).collect();
    let t = refine(b, &surf, t)?;
    validate(b, &surf, &t)
}

/// Periodic orbits that leave a circle along its normal and retrace
/// themselves after hitting a wall perpendicularly, with at most
/// `max_hits` wall hits on the way out. Sorted by length.
pub fn find_emerging_orbits(b: &CurvedBilliard, max_hits: usize, resolution: usize) -> Vec<Orbit> {
    let mut found: Vec<Orbit> = (0..b.centers.len())
        .flat_map(|j| (1..=max_hits).map(move |h| (j, h)))
        .collect::<Vec<_>>()
        .par_iter()
        .flat_map_iter(|&(j, hits)| {
            let probe = move |th: f64| radial_probe(b, j, th, hits);
            let grid: Vec<(f64, Option<(Vec<Surface>, f64)>)> =
                (0..resolution).map(|i| TAU * i as f64 / resolution as f64).map(|th| (th, probe(th))).collect();
            let mut roots = Vec::new();
            for w in 0..resolution {
                let (t0, p0) = &grid[w];
                let (t1, p1) = &grid[(w + 1) % resolution];
                let t1 = if w + 1 == resolution { t1 + TAU } else { *t1 };
                let (Some((s0, f0)), Some((s1, f1))) = (p0, p1) else { continue };
                if s0 != s1 || f0.signum() == f1.signum() {
                    continue;
                }
                let (mut lo, mut hi, flo) = (*t0, t1, *f0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    match probe(mid) {
                        Some((s, f)) if s == *s0 => {
                            if f.signum() == flo.signum() {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        _ => break,
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            roots.into_iter().filter_map(move |th| emerging_orbit(b, j, th, hits))
        })
        .filter(|o| !is_repetition(o))
        .collect();
    found.sort_by(|a, c| a.length.partial_cmp(&c.length).unwrap_or(Ordering::Equal).then_with(|| orbit_key(a).cmp(&orbit_key(c))));
    found.dedup_by(|a, c| orbit_key(a) == orbit_key(c));
    found.into_iter().map(normalize).collect()
}

/// Merges angles (radians) closer than `tol` along the circle into their
/// circular mean; the result is sorted in [0, 2π).
pub fn cluster_angles(angles: &[f64], tol: f64) -> Vec<f64> {
    let mut a: Vec<f64> = angles.iter().map(|x| x.rem_euclid(TAU)).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    if a.is_empty() {
        return a;
    }
    let n = a.len();
    // start after the widest gap so no cluster straddles the cut
    let start = (0..n)
        .max_by(|&i, &j| {
            let gap = |i: usize| (a[(i + 1) % n] - a[i]).rem_euclid(TAU);
            gap(i).partial_cmp(&gap(j)).unwrap_or(Ordering::Equal)
        })
        .map_or(0, |i| (i + 1) % n);
    let seq: Vec<f64> = (0..n).map(|i| a[(start + i) % n]).collect();
    let mut groups: Vec<Vec<f64>> = vec![vec![seq[0]]];
    for &x in &seq[1..] {
        let g = groups.last_mut().unwrap();
        if (x - g[0]).rem_euclid(TAU) < tol {
            g.push(x);
        } else {
            groups.push(vec![x]);
        }
    }
    let mut out: Vec<f64> = groups
        .iter()
        .map(|g| {
            let (s, c) = g.iter().fold((0.0, 0.0), |(s, c), x| (s + x.sin(), c + x.cos()));
            s.atan2(c).rem_euclid(TAU)
        })
        .collect();
    out.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    out
}

/// Largest angular gap between consecutive sorted angles, as (start, width).
pub fn largest_gap(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    if n == 0 {
        return (0.0, TAU);
    }
    (0..n)
        .map(|i| (sorted[i], (sorted[(i + 1) % n] - sorted[i]).rem_euclid(TAU)))
        .map(|(s, g)| if n == 1 { (s, TAU) } else { (s, g) })
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
        .unwrap_or((0.0, TAU))
}

/// Polygon whose sides are tangent to the circle at the given angles,
/// vertices counter-clockwise.
pub fn envelope_polygon(center: Vec2, r: f64, angles: &[f64]) -> Result<Vec<Vec2>, DynamicsError> {
    let a = cluster_angles(angles, 1e-12);
    if a.len() < 3 {
        return Err(DynamicsError::TooFewPoints(a.len()));
    }
    let (_, gap) = largest_gap(&a);
    if gap >= PI - 1e-12 {
        return Err(DynamicsError::AdjacentGapTooWide(gap));
    }
    let n = a.len();
    Ok((0..n)
        .map(|i| {
            let (u, v) = (Vec2::polar(1.0, a[i]), Vec2::polar(1.0, a[(i + 1) % n]));
            center + (u + v) * (r / (1.0 + u.dot(v)))
        })
        .collect())
}

/// Interior angles (radians) of a counter-clockwise polygon.
pub fn polygon_angles(poly: &[Vec2]) -> Vec<f64> {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let prev = poly[(i + n - 1) % n] - poly[i];
            let next = poly[(i + 1) % n] - poly[i];
            next.cross(prev).atan2(next.dot(prev)).rem_euclid(TAU)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Approximation {
    #[serde(skip)]
    pub spec: BilliardSpec,
    /// Orbits whose reflection points define the tangencies.
    pub orbits: Vec<Orbit>,
    /// Angular step of the mirror grid, if the outer polygon is rational.
    pub grid_step: Option<f64>,
    /// Tangency angles after clustering.
    pub tangency: Vec<f64>,
    /// Envelope before any rationalization.
    pub envelope: Vec<Vec2>,
    pub envelope_angles: Vec<f64>,
    /// Start and width of the empty β-sector.
    pub beta_sector: (f64, f64),
    /// Tangency angles were recognized as multiples of π/denominator.
    pub denominator: i64,
    /// Whether Dirichlet rationalization of the hole angles was needed.
    pub rationalized: bool,
    /// Bound on the hole-angle errors when rationalized (0 otherwise).
    pub angle_error_bound: f64,
}

/// Search and rationalization settings for [`approximate_billiard`].
#[derive(Clone, Copy, Debug)]
pub struct ApproxOptions {
    pub max_bounces: usize,
    /// Keep only orbits whose circle reflections lie on the mirror grid.
    pub grid_orbits: bool,
    pub max_length: f64,
    pub cluster_tol: f64,
    /// Quality N used when hole angles must be rationalized.
    pub n_quality: u64,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        ApproxOptions { max_bounces: 8, grid_orbits: true, max_length: f64::INFINITY, cluster_tol: CLUSTER_TOL, n_quality: 10_000 }
    }
}

/// a + b√3 as a pair of rationals.
type S3 = (Rational64, Rational64);

fn s3_mul(x: S3, y: S3) -> S3 {
    (x.0 * y.0 + Rational64::from_integer(3) * x.1 * y.1, x.0 * y.1 + x.1 * y.0)
}

fn s3_inv(x: S3) -> Option<S3> {
    let den = x.0 * x.0 - Rational64::from_integer(3) * x.1 * x.1;
    (!den.is_zero()).then(|| (x.0 / den, -x.1 / den))
}

/// coord·(a + b√3), if the product stays within single surds.
fn scale_coord(c: &SymbolicCoord, k: S3) -> Option<SymbolicCoord> {
    let mut out = SymbolicCoord { rat: c.rat * k.0, terms: vec![] };
    if !k.1.is_zero() && !c.rat.is_zero() {
        out.terms.push(Term { coeff: c.rat * k.1, basis: None, surd: 3 });
    }
    for t in &c.terms {
        out.terms.push(Term { coeff: t.coeff * k.0, basis: t.basis, surd: t.surd });
        if k.1.is_zero() {
            continue;
        }
        match t.surd {
            1 => out.terms.push(Term { coeff: t.coeff * k.1, basis: t.basis, surd: 3 }),
            3 => match t.basis {
                Some(_) => out.terms.push(Term { coeff: t.coeff * k.1 * Rational64::from_integer(3), basis: t.basis, surd: 1 }),
                None => out.rat += t.coeff * k.1 * Rational64::from_integer(3),
            },
            _ => return None,
        }
    }
    out.terms.retain(|t| !t.coeff.is_zero());
    Some(out)
}

/// Exact tangent polygon for tangency angles k_i·π/6, clockwise as a hole.
fn exact_tangent_hole(circle: &CircleSpec, ks: &[i64]) -> Option<Vec<SymbolicPoint>> {
    let n = ks.len();
    let mut verts = Vec::with_capacity(n);
    for i in 0..n {
        let (ka, kb) = (ks[i], ks[(i + 1) % n]);
        let ((ca, cas), (sa, sas)) = trig_pi_6(ka);
        let ((cb, cbs), (sb, sbs)) = trig_pi_6(kb);
        let ((cd, cds), _) = trig_pi_6(kb - ka);
        let inv = s3_inv((Rational64::one() + cd, cds))?;
        let x = scale_coord(&circle.radius, s3_mul((ca + cb, cas + cbs), inv))?;
        let y = scale_coord(&circle.radius, s3_mul((sa + sb, sas + sbs), inv))?;
        verts.push(SymbolicPoint(circle.center.0.add(&x), circle.center.1.add(&y)));
    }
    verts.reverse();
    Some(verts)
}

/// The K shortest circle-touching periodic orbits fix tangency points; the
/// circle is replaced by the polygon tangent there. Tangency angles that are
/// multiples of π/6 give an exact hole; otherwise the hole angles are
/// rationalized and the polygon rebuilt from the rational directions.
pub fn approximate_billiard(b: &CurvedBilliard, k: usize, opts: ApproxOptions) -> Result<Approximation, DynamicsError> {
    if k < 3 {
        return Err(DynamicsError::BadBudget(k));
    }
    if b.circles.is_empty() {
        return Err(DynamicsError::NoCircle);
    }
    let circle_orbits: Vec<Orbit> = find_periodic_orbits(b, opts.max_bounces, opts.max_length)?.into_iter().filter(|o| o.touches_circle()).collect();
    let circle_angles = |os: &[Orbit]| -> Vec<f64> {
        os.iter().flat_map(|o| o.surfaces.iter().zip(&o.params).filter(|(s, _)| **s == Surface::Circle(0)).map(|(_, &t)| t)).collect()
    };
    let shortest: Vec<Orbit> = circle_orbits.iter().take(k).cloned().collect();
    let beta_sector = largest_gap(&cluster_angles(&circle_angles(&shortest), opts.cluster_tol));
    let outer_spec = make_billiard(RawBilliard { basis: b.raw.basis.clone(), outer: b.raw.outer.clone(), holes: vec![] })?;
    let grid_step = PI / outer_spec.c as f64;
    let on_grid = |t: f64| {
        let x = (t - outer_spec.frame) / grid_step;
        (x - x.round()).abs() * grid_step < GRID_TOL
    };
    let grid: Vec<Orbit> = circle_orbits
        .iter()
        .filter(|o| o.surfaces.iter().zip(&o.params).all(|(s, &t)| !matches!(s, Surface::Circle(_)) || on_grid(t)))
        .take(k)
        .cloned()
        .collect();
    let use_grid = opts.grid_orbits && cluster_angles(&circle_angles(&grid), opts.cluster_tol).len() >= 3;
    let orbits = if use_grid { grid } else { shortest };
    let raw_angles = circle_angles(&orbits);
    let tangency = cluster_angles(&raw_angles, opts.cluster_tol);
    let (center, r) = (b.centers[0], b.radii[0]);
    let envelope = envelope_polygon(center, r, &tangency)?;
    let envelope_angles = polygon_angles(&envelope);

    let mut raw = RawBilliard { basis: b.raw.basis.clone(), outer: b.raw.outer.clone(), holes: vec![] };
    let recognized: Option<Vec<i64>> = tangency
        .iter()
        .map(|t| recognize_rational(t / PI, 6, 1e-7).filter(|q| 6 % *q.denom() == 0).map(|q| (q * Rational64::from_integer(6)).to_integer()))
        .collect();
    if let Some(ks) = recognized {
        if let Some(hole) = exact_tangent_hole(&b.circles[0], &ks) {
            raw.holes.push(hole);
            let spec = make_billiard(raw)?;
            return Ok(Approximation { spec, orbits, grid_step: use_grid.then_some(grid_step), tangency, envelope, envelope_angles, beta_sector, denominator: 6, rationalized: false, angle_error_bound: 0.0 });
        }
    }

    // hole domain angles are 2π − interior, in units of π
    let outer_angles: Vec<f64> = outer_spec.angles[0].iter().map(|a| a.p as f64 / a.q as f64).collect();
    let hole_angles: Vec<f64> = envelope_angles.iter().rev().map(|a| 2.0 - a / PI).collect();
    let rat = rationalize_angles(&[outer_angles, hole_angles], opts.n_quality)?;
    let z = rat.z as i64;
    // first normal snapped to a multiple of π/z, then turned by the exterior angles
    let mut normals = vec![(tangency[0] / PI * z as f64).round() / z as f64];
    let turns: Vec<f64> = rat.angles[1].iter().rev().map(|a| a.p as f64 / a.q as f64 - 1.0).collect();
    for t in turns.iter().take(tangency.len() - 1) {
        let last = *normals.last().unwrap();
        normals.push(last + t);
    }
    let snapped: Vec<f64> = normals.iter().map(|x| x * PI).collect();
    let poly = envelope_polygon(center, r, &snapped)?;
    let base = raw.basis.len();
    let mut hole = Vec::new();
    for (i, p) in poly.iter().enumerate().rev() {
        raw.basis.push(BasisElement { name: format!("hx{i}"), value: p.x });
        raw.basis.push(BasisElement { name: format!("hy{i}"), value: p.y });
        let j = base + 2 * (poly.len() - 1 - i);
        hole.push(SymbolicPoint(SymbolicCoord::param(j), SymbolicCoord::param(j + 1)));
    }
    raw.holes.push(hole);
    let angles = vec![outer_spec.angles[0].clone(), rat.angles[1].iter().map(|a| RationalAngle::new(a.p, a.q)).collect()];
    let spec = make_billiard_with_angles(raw, angles)?;
    Ok(Approximation {
        spec,
        orbits,
        grid_step: use_grid.then_some(grid_step),
        tangency,
        envelope,
        envelope_angles,
        beta_sector,
        denominator: z,
        rationalized: true,
        angle_error_bound: rat.per_angle_bound,
    })
}
