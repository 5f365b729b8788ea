//! Elementary polygon patterns: the 2C mirror images of a rational billiard
//! arranged around a base vertex, their side pairings and periods.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::Rational64;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{self, cross, q_to_f64, CycField, Poly, Q};
use crate::geometry::{signed_area, BilliardSpec, Dihedral, GeometryError, Isometry, Vec2};

/// Tolerance for matching twin sides.
pub const TWIN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EppError {
    #[error("invalid base vertex ({0}, {1})")]
    InvalidVertex(usize, usize),
    #[error("no side connects the rotated sectors")]
    NoGluingSide,
    #[error("side ({polygon}, {index}) of cell {cell} has no twin")]
    UnpairedSide { cell: usize, polygon: usize, index: usize },
    #[error("cell {0} is not on the pattern boundary")]
    NotBoundaryCell(usize),
    #[error("side ({0}, {1}) of the cell is glued, not paired by a period")]
    NotTwinSide(usize, usize),
    #[error("exact arithmetic unavailable: {0}")]
    Exact(#[from] GeometryError),
    #[error("period {0} is not expressible in the declared basis")]
    MixedBasis(usize),
    #[error("reference periods are parallel")]
    DegeneratePeriods,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SideId {
    pub polygon: usize,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId {
    pub polygon: usize,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EppCell {
    pub r: usize,
    pub u: usize,
    pub isometry: Isometry,
}

impl EppCell {
    pub fn parity(&self) -> Parity {
        if self.isometry.is_odd() {
            Parity::Odd
        } else {
            Parity::Even
        }
    }
}

/// The side `side` of the even cell `cell` and the same side of `twin`,
/// related by the translation `period` (zero when glued).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub cell: usize,
    pub side: SideId,
    pub twin: usize,
    pub period: Vec2,
    pub glued: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub vector: Vec2,
    pub pairing: usize,
    pub cell: usize,
    pub twin: usize,
    pub side: SideId,
}

/// Exact translations and periods in Q(ζ_M)[params].
#[derive(Clone, Debug)]
pub struct ExactEpp {
    pub field: CycField,
    pub translations: Vec<Poly>,
    pub periods: Vec<Poly>,
}

#[derive(Clone, Debug)]
pub struct Epp {
    pub spec: BilliardSpec,
    pub base: VertexId,
    pub q: u64,
    pub m: u64,
    pub c: u64,
    pub omega: f64,
    pub cells: Vec<EppCell>,
    pub sector_shifts: Vec<Vec2>,
    pub pairings: Vec<Pairing>,
    pub exact: Option<ExactEpp>,
    reflection_index: Vec<Vec<i64>>,
    lookup: HashMap<Dihedral, usize>,
}

/// 2q cells of the rotation sector around the base vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct EppSector {
    pub q: u64,
    pub base: Vec2,
    pub cells: Vec<EppCell>,
}

struct Frame {
    c: u64,
    omega: f64,
    refl: Vec<Vec<i64>>,
    a: SideId,
    b: SideId,
    q: u64,
    m: u64,
    gen: i64,
    v: Vec2,
}

fn frame(spec: &BilliardSpec, base: VertexId) -> Result<Frame, EppError> {
    let poly = spec.polygons.get(base.polygon).ok_or(EppError::InvalidVertex(base.polygon, base.index))?;
    if base.index >= poly.len() {
        return Err(EppError::InvalidVertex(base.polygon, base.index));
    }
    let c = spec.c;
    let aligned = spec.is_aligned();
    let shift = if aligned { spec.frame_index() } else { 0 };
    let omega = if aligned { 0.0 } else { 2.0 * spec.frame };
    let refl: Vec<Vec<i64>> =
        spec.side_dir.iter().map(|row| row.iter().map(|d| (d + shift).rem_euclid(c as i64)).collect()).collect();
    let n = poly.len();
    let a = SideId { polygon: base.polygon, index: base.index };
    let b = SideId { polygon: base.polygon, index: (base.index + n - 1) % n };
    let q = spec.angles[base.polygon][base.index].q as u64;
    let m = c / q;
    let gen = (refl[a.polygon][a.index] - refl[b.polygon][b.index]).rem_euclid(c as i64);
    if (gen as u64).gcd(&c) != m {
        return Err(EppError::InvalidVertex(base.polygon, base.index));
    }
    Ok(Frame { c, omega, refl, a, b, q, m, gen, v: poly[base.index] })
}

fn sector_of(d: Dihedral, f: &Frame) -> usize {
    let m = f.m as i64;
    let k = if d.odd { d.k - f.refl[f.a.polygon][f.a.index] } else { d.k };
    k.rem_euclid(m) as usize
}

fn r_index(d: Dihedral, f: &Frame) -> usize {
    let u = sector_of(d, f) as i64;
    let base = if d.odd { f.refl[f.a.polygon][f.a.index] + u } else { u };
    (0..f.q as i64).find(|r| (base + r * f.gen - d.k).rem_euclid(f.c as i64) == 0).expect("cell lies in its sector") as usize
}

/// Cells of the sector: q rotations of the billiard about the base vertex and
/// q mirror images.
pub fn build_sector(spec: &BilliardSpec, base: VertexId) -> Result<EppSector, EppError> {
    let f = frame(spec, base)?;
    let mut cells = Vec::new();
    for odd in [false, true] {
        for r in 0..f.q as i64 {
            let k0 = if odd { f.refl[f.a.polygon][f.a.index] } else { 0 };
            let lin = Dihedral::new(odd, k0 + r * f.gen, f.c);
            let t = f.v - lin.apply(f.v, f.c, f.omega);
            cells.push(EppCell { r: r as usize, u: 0, isometry: Isometry { linear: lin, c: f.c, omega: f.omega, translation: t } });
        }
    }
    Ok(EppSector { q: f.q, base: f.v, cells })
}

struct ExactCtx<'a> {
    f: CycField,
    spec: &'a BilliardSpec,
    c: u64,
}

impl ExactCtx<'_> {
    fn lin(&self, d: Dihedral, z: &Poly) -> Poly {
        let rot = self.f.root(d.k, self.c as usize);
        if d.odd {
            z.conj(&self.f).mul_cyc(&self.f, &rot)
        } else {
            z.mul_cyc(&self.f, &rot)
        }
    }

    fn vertex(&self, polygon: usize, i: usize) -> Result<Poly, GeometryError> {
        self.spec.exact_point(&self.f, self.spec.symbolic_vertex(polygon, i))
    }
}

impl Epp {
    pub fn cell_index(&self, d: Dihedral) -> usize {
        self.lookup[&d]
    }

    pub fn reflection(&self, side: SideId) -> Dihedral {
        Dihedral::new(true, self.reflection_index[side.polygon][side.index], self.c)
    }

    /// Translation part of the reflection across `side`: σ(z) = ρ(z) + c_s.
    fn reflection_offset(&self, side: SideId) -> Vec2 {
        let a = self.spec.vertex(side.polygon, side.index);
        a - self.reflection(side).apply(a, self.c, self.omega)
    }

    pub fn base_point(&self) -> Vec2 {
        self.spec.vertex(self.base.polygon, self.base.index)
    }

    pub fn sides(&self) -> impl Iterator<Item = SideId> + '_ {
        self.spec
            .polygons
            .iter()
            .enumerate()
            .flat_map(|(p, poly)| (0..poly.len()).map(move |i| SideId { polygon: p, index: i }))
    }

    pub fn periods(&self) -> Vec<Period> {
        enumerate_periods(self)
    }

    /// Image of a billiard point in cell `cell`.
    pub fn image(&self, cell: usize, p: Vec2) -> Vec2 {
        self.cells[cell].isometry.apply(p)
    }

    /// Image polygon of polygon `poly` in cell `cell`.
    pub fn cell_polygon(&self, cell: usize, poly: usize) -> Vec<Vec2> {
        self.spec.polygons[poly].iter().map(|&p| self.image(cell, p)).collect()
    }

    fn recompute_pairings(&mut self) {
        for i in 0..self.pairings.len() {
            let pr = &self.pairings[i];
            let lin = self.cells[pr.cell].isometry.linear;
            let cs = self.reflection_offset(pr.side);
            let p = self.cells[pr.twin].isometry.translation - self.cells[pr.cell].isometry.translation - lin.apply(cs, self.c, self.omega);
            self.pairings[i].period = p;
        }
        if let Some(ex) = &mut self.exact {
            let ctx = ExactCtx { f: ex.field.clone(), spec: &self.spec, c: self.c };
            for (i, pr) in self.pairings.iter().enumerate() {
                let lin = self.cells[pr.cell].isometry.linear;
                let rho = Dihedral::new(true, self.reflection_index[pr.side.polygon][pr.side.index], self.c);
                let a = ctx.vertex(pr.side.polygon, pr.side.index).expect("exact vertex");
                let cs = a.sub(&ctx.f, &ctx.lin(rho, &a));
                ex.periods[i] = ex.translations[pr.twin].sub(&ctx.f, &ex.translations[pr.cell]).sub(&ctx.f, &ctx.lin(lin, &cs));
            }
        }
    }

    /// Geometric check: each pairing's translation maps the side image onto its twin.
    pub fn check_pairings(&self) -> Result<(), EppError> {
        let scale = self.length_scale();
        for pr in &self.pairings {
            let (a, b) = self.spec.side(pr.side.polygon, pr.side.index);
            let (a1, b1) = (self.image(pr.cell, a) + pr.period, self.image(pr.cell, b) + pr.period);
            let (a2, b2) = (self.image(pr.twin, a), self.image(pr.twin, b));
            if a1.dist(a2) > TWIN_TOL * scale || b1.dist(b2) > TWIN_TOL * scale {
                return Err(EppError::UnpairedSide { cell: pr.cell, polygon: pr.side.polygon, index: pr.side.index });
            }
        }
        Ok(())
    }

    fn length_scale(&self) -> f64 {
        let (lo, hi) = self.spec.bounding_box();
        (hi - lo).norm().max(1.0)
    }

    /// Every side image of every cell appears in exactly one pairing.
    pub fn check_completeness(&self) -> bool {
        let mut seen = BTreeSet::new();
        for pr in &self.pairings {
            if !seen.insert((pr.cell, pr.side)) || !seen.insert((pr.twin, pr.side)) {
                return false;
            }
        }
        seen.len() == self.cells.len() * self.spec.total_sides()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let periods: Vec<_> = self
            .pairings
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.glued)
            .map(|(i, p)| {
                let mut v = serde_json::json!({
                    "pairing": i, "cell": p.cell, "twin": p.twin,
                    "side": [p.side.polygon, p.side.index], "vector": [p.period.x, p.period.y],
                });
                if let Some(ex) = &self.exact {
                    v["exact"] = exact_json(&ex.field, &ex.periods[i], &self.spec);
                }
                v
            })
            .collect();
        serde_json::json!({
            "schema": "v1",
            "base_vertex": [self.base.polygon, self.base.index],
            "C": self.c, "q": self.q, "m": self.m,
            "cells": self.cells.iter().map(|c| serde_json::json!({
                "r": c.r, "u": c.u,
                "parity": c.parity(),
                "rotation_index": c.isometry.linear.k,
                "translation": [c.isometry.translation.x, c.isometry.translation.y],
            })).collect::<Vec<_>>(),
            "sector_shifts": self.sector_shifts.iter().map(|r| [r.x, r.y]).collect::<Vec<_>>(),
            "pairings": self.pairings.iter().map(|p| serde_json::json!({
                "cell": p.cell, "twin": p.twin, "side": [p.side.polygon, p.side.index], "glued": p.glued,
                "vector": [p.period.x, p.period.y],
            })).collect::<Vec<_>>(),
            "periods": periods,
        })
    }
}

/// Exact period as x and y coordinates over the parameter monomials, with
/// irrational constants written as real cyclotomic combinations.
pub fn exact_json(f: &CycField, z: &Poly, spec: &BilliardSpec) -> serde_json::Value {
    let half = exact::q(1, 2);
    let re = z.add(f, &z.conj(f)).scale(f, &half);
    let minus_i_half = f.scale(&f.neg(&f.i()), &half);
    let im = z.sub(f, &z.conj(f)).mul_cyc(f, &minus_i_half);
    let fmt = |p: &Poly| -> Vec<serde_json::Value> {
        p.terms
            .iter()
            .map(|(mono, c)| {
                let names: Vec<&str> = mono.iter().map(|&i| spec.raw.basis[i].name.as_str()).collect();
                serde_json::json!({
                    "monomial": names,
                    "coefficient": c.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
                    "value": f.to_complex(c).re,
                })
            })
            .collect()
    };
    serde_json::json!({ "field_order": f.order(), "x": fmt(&re), "y": fmt(&im) })
}

/// Full pattern: m rotated sectors glued into one connected tiling.
pub fn build_full(spec: &BilliardSpec, base: VertexId) -> Result<Epp, EppError> {
    let f = frame(spec, base)?;
    let c = f.c;
    let ci = c as i64;
    let sides: Vec<SideId> =
        spec.polygons.iter().enumerate().flat_map(|(p, poly)| (0..poly.len()).map(move |i| SideId { polygon: p, index: i })).collect();
    let refl = |s: SideId| Dihedral::new(true, f.refl[s.polygon][s.index], c);
    let lin_apply = |d: Dihedral, v: Vec2| d.apply(v, c, f.omega);
    let offset = |s: SideId| {
        let a = spec.vertex(s.polygon, s.index);
        a - lin_apply(refl(s), a)
    };

    // Sector connection tree.
    let m = f.m as usize;
    let ja = f.refl[f.a.polygon][f.a.index];
    let delta = |s: SideId| (f.refl[s.polygon][s.index] - ja).rem_euclid(m as i64) as usize;
    let mut candidates: Vec<(usize, SideId)> = sides.iter().map(|&s| (delta(s), s)).filter(|(d, _)| *d != 0).collect();
    candidates.sort();
    let mut glue: Vec<(usize, SideId, usize)> = Vec::new();
    if m > 1 {
        if let Some(&(d, s)) = candidates.iter().find(|(d, _)| d.gcd(&m) == 1) {
            let mut u = 0;
            for _ in 0..m - 1 {
                glue.push((u, s, (u + d) % m));
                u = (u + d) % m;
            }
        } else {
            let mut seen = vec![false; m];
            seen[0] = true;
            let mut queue = VecDeque::from([0usize]);
            while let Some(u) = queue.pop_front() {
                for &(d, s) in &candidates {
                    let v = (u + d) % m;
                    if !seen[v] {
                        seen[v] = true;
                        glue.push((u, s, v));
                        queue.push_back(v);
                    }
                }
            }
            if seen.iter().any(|x| !x) {
                return Err(EppError::NoGluingSide);
            }
        }
    }

    let v = f.v;
    let mut shifts = vec![Vec2::ZERO; m];
    for &(u, s, u2) in &glue {
        let l = Dihedral::new(false, u as i64, c);
        let l2 = l.compose(refl(s), c);
        shifts[u2] = shifts[u] + lin_apply(l, offset(s)) + lin_apply(l2, v) - lin_apply(l, v);
    }

    let mut cells = Vec::with_capacity(2 * c as usize);
    let mut lookup = HashMap::new();
    for u in 0..m {
        for odd in [false, true] {
            for r in 0..f.q as i64 {
                let k0 = if odd { ja } else { 0 };
                let lin = Dihedral::new(odd, k0 + u as i64 + r * f.gen, c);
                debug_assert_eq!(sector_of(lin, &f), u);
                debug_assert_eq!(r_index(lin, &f), r as usize);
                let t = v - lin_apply(lin, v) + shifts[u];
                lookup.insert(lin, cells.len());
                cells.push(EppCell { r: r as usize, u, isometry: Isometry { linear: lin, c, omega: f.omega, translation: t } });
            }
        }
    }

    let glue_set: BTreeSet<(usize, SideId)> = glue.iter().map(|&(u, s, _)| (u, s)).collect();
    let mut pairings = Vec::new();
    for k in 0..ci {
        let l = Dihedral::new(false, k, c);
        for &s in &sides {
            let twin = l.compose(refl(s), c);
            let glued = s == f.a || s == f.b || glue_set.contains(&(k as usize, s));
            pairings.push(Pairing { cell: lookup[&l], side: s, twin: lookup[&twin], period: Vec2::ZERO, glued });
        }
    }

    let exact = build_exact(spec, &f, &cells, &shifts_exact_plan(&glue))?;
    let mut epp = Epp {
        spec: spec.clone(),
        base,
        q: f.q,
        m: f.m,
        c,
        omega: f.omega,
        cells,
        sector_shifts: shifts,
        pairings,
        exact,
        reflection_index: f.refl.clone(),
        lookup,
    };
    epp.recompute_pairings();
    let scale = epp.length_scale();
    for pr in &epp.pairings {
        if pr.glued && pr.period.norm() > TWIN_TOL * scale {
            return Err(EppError::UnpairedSide { cell: pr.cell, polygon: pr.side.polygon, index: pr.side.index });
        }
    }
    epp.check_pairings()?;
    Ok(epp)
}

fn shifts_exact_plan(glue: &[(usize, SideId, usize)]) -> Vec<(usize, SideId, usize)> {
    glue.to_vec()
}

fn build_exact(spec: &BilliardSpec, f: &Frame, cells: &[EppCell], glue: &[(usize, SideId, usize)]) -> Result<Option<ExactEpp>, EppError> {
    if !spec.is_aligned() {
        return Ok(None);
    }
    let order = match spec.exact_order() {
        Ok(o) => o,
        Err(GeometryError::UnsupportedSurd(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let ctx = ExactCtx { f: CycField::new(order), spec, c: f.c };
    let fld = &ctx.f;
    let v = ctx.vertex(f_base(f, spec).0, f_base(f, spec).1)?;
    let refl = |s: SideId| Dihedral::new(true, f.refl[s.polygon][s.index], f.c);
    let mut shifts = vec![Poly::zero(); f.m as usize];
    for &(u, s, u2) in glue {
        let l = Dihedral::new(false, u as i64, f.c);
        let l2 = l.compose(refl(s), f.c);
        let a = ctx.vertex(s.polygon, s.index)?;
        let cs = a.sub(fld, &ctx.lin(refl(s), &a));
        shifts[u2] = shifts[u].add(fld, &ctx.lin(l, &cs)).add(fld, &ctx.lin(l2, &v)).sub(fld, &ctx.lin(l, &v));
    }
    let translations =
        cells.iter().map(|cell| v.sub(fld, &ctx.lin(cell.isometry.linear, &v)).add(fld, &shifts[cell.u])).collect();
    let n_pairs = f.c as usize * spec.total_sides();
    Ok(Some(ExactEpp { field: ctx.f.clone(), translations, periods: vec![Poly::zero(); n_pairs] }))
}

fn f_base(f: &Frame, _spec: &BilliardSpec) -> (usize, usize) {
    (f.a.polygon, f.a.index)
}

/// Non-glued pairings as periods.
pub fn enumerate_periods(epp: &Epp) -> Vec<Period> {
    epp.pairings
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.glued)
        .map(|(i, p)| Period { vector: p.period, pairing: i, cell: p.cell, twin: p.twin, side: p.side })
        .collect()
}

/// Expected number of periods, C(Σn − 2) − m + 1.
pub fn expected_period_count(spec: &BilliardSpec, base: VertexId) -> i64 {
    let c = spec.c as i64;
    let q = spec.angles[base.polygon][base.index].q;
    c * (spec.total_sides() as i64 - 2) - c / q + 1
}

/// Displacement from (x, y) to its mirror image in the line through the
/// origin at angle −πγ (side angles measured clockwise).
pub fn twin_displacement(x: f64, y: f64, gamma: f64) -> Vec2 {
    let a = std::f64::consts::PI * gamma;
    let (s, c) = a.sin_cos();
    let s2 = (2.0 * a).sin();
    -Vec2::new(2.0 * x * s * s + y * s2, x * s2 + 2.0 * y * c * c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genus {
    pub g: i64,
    pub e: i64,
    pub v: i64,
    pub s: i64,
}

/// Genus from the vertex, edge and face counts of the pattern, checked
/// against the closed form 1 + (C/2)·Σ(p − 1)/q.
pub fn compute_genus(spec: &BilliardSpec) -> Genus {
    let c = Rational64::from_integer(spec.c as i64);
    let angles = spec.angles.iter().flatten();
    let sum_pq: Rational64 = angles.clone().map(|a| a.ratio()).sum();
    let sum_inv: Rational64 = angles.clone().map(|a| Rational64::new(1, a.q)).sum();
    let e = c * sum_pq + c * 4;
    let v = c * sum_inv;
    let s = c * 4;
    let g = (e - v - s + 2) / 2;
    let closed = Rational64::one() + c / 2 * angles.map(|a| Rational64::new(a.p - 1, a.q)).sum::<Rational64>();
    assert_eq!(g, closed, "Euler and closed-form genus disagree");
    assert!(g.is_integer() && e.is_integer() && v.is_integer());
    Genus { g: g.to_integer(), e: e.to_integer(), v: v.to_integer(), s: s.to_integer() }
}

/// Closed-form genus 1 + (C/2)·Σ(p − 1)/q.
pub fn closed_form_genus(spec: &BilliardSpec) -> Rational64 {
    let c = Rational64::from_integer(spec.c as i64);
    Rational64::one() + c / 2 * spec.angles.iter().flatten().map(|a| Rational64::new(a.p - 1, a.q)).sum::<Rational64>()
}

/// Cellular chain data of the closed surface obtained by identifying paired sides.
pub struct SurfaceComplex {
    /// Edge endpoints (start, end) as vertex classes.
    pub edges: Vec<(usize, usize)>,
    pub n_vertices: usize,
    /// Face boundaries: sparse (edge, coefficient).
    pub faces: Vec<Vec<(usize, i64)>>,
    /// Crossing cochain of each period's closed dual loop.
    pub period_cocycles: Vec<Vec<i64>>,
    /// Loops around each hole image inside a single cell (zero translation).
    pub hole_cocycles: Vec<Vec<i64>>,
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

impl Epp {
    pub fn surface_complex(&self) -> SurfaceComplex {
        let spec = &self.spec;
        let offsets: Vec<usize> = spec.polygons.iter().scan(0, |acc, p| {
            let o = *acc;
            *acc += p.len();
            Some(o)
        }).collect();
        let nv_cell = spec.total_sides();
        let vid = |cell: usize, poly: usize, i: usize| cell * nv_cell + offsets[poly] + i % spec.polygons[poly].len();
        let mut parent: Vec<usize> = (0..self.cells.len() * nv_cell).collect();
        for pr in &self.pairings {
            let s = pr.side;
            for i in [s.index, s.index + 1] {
                let (x, y) = (find(&mut parent, vid(pr.cell, s.polygon, i)), find(&mut parent, vid(pr.twin, s.polygon, i)));
                parent[x] = y;
            }
        }
        let mut class = HashMap::new();
        let mut vclass = vec![0; parent.len()];
        for x in 0..parent.len() {
            let r = find(&mut parent, x);
            let n = class.len();
            vclass[x] = *class.entry(r).or_insert(n);
        }
        let n_vertices = class.len();

        let mut edges = Vec::new();
        let mut edge_of = HashMap::new();
        for (i, pr) in self.pairings.iter().enumerate() {
            let s = pr.side;
            edges.push((vclass[vid(pr.cell, s.polygon, s.index)], vclass[vid(pr.cell, s.polygon, s.index + 1)]));
            edge_of.insert((pr.cell, s), i);
            edge_of.insert((pr.twin, s), i);
        }
        // cuts joining every hole to the outer boundary inside each cell
        for cell in 0..self.cells.len() {
            for h in 1..spec.polygons.len() {
                edges.push((vclass[vid(cell, h, 0)], vclass[vid(cell, 0, 0)]));
            }
        }
        let orient: Vec<i64> = spec
            .polygons
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let ccw = signed_area(p) > 0.0;
                if (i == 0) == ccw {
                    1
                } else {
                    -1
                }
            })
            .collect();
        let faces: Vec<Vec<(usize, i64)>> = self
            .cells
            .iter()
            .enumerate()
            .map(|(cell, c)| {
                let par = if c.isometry.is_odd() { -1 } else { 1 };
                self.sides().map(|s| (edge_of[&(cell, s)], par * orient[s.polygon])).collect()
            })
            .collect();
        let coeff = |cell: usize, e: usize| faces[cell].iter().find(|(x, _)| *x == e).map_or(0, |(_, c)| *c);

        // spanning paths through glued sides
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.cells.len()];
        for (i, pr) in self.pairings.iter().enumerate() {
            if pr.glued {
                adj[pr.cell].push((pr.twin, i));
                adj[pr.twin].push((pr.cell, i));
            }
        }
        let path = |from: usize, to: usize| -> Vec<(usize, usize)> {
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.cells.len()];
            let mut seen = vec![false; self.cells.len()];
            seen[from] = true;
            let mut queue = VecDeque::from([from]);
            while let Some(x) = queue.pop_front() {
                if x == to {
                    break;
                }
                for &(y, e) in &adj[x] {
                    if !seen[y] {
                        seen[y] = true;
                        prev[y] = Some((x, e));
                        queue.push_back(y);
                    }
                }
            }
            let mut steps = Vec::new();
            let mut cur = to;
            while cur != from {
                let (p, e) = prev[cur].expect("glued sides connect the pattern");
                steps.push((p, e));
                cur = p;
            }
            steps.reverse();
            steps
        };
        let n_edges = edges.len();
        let period_cocycles = self
            .pairings
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.glued)
            .map(|(i, pr)| {
                let mut phi = vec![0i64; n_edges];
                phi[i] += coeff(pr.twin, i);
                for (from, e) in path(pr.cell, pr.twin) {
                    phi[e] += coeff(from, e);
                }
                phi
            })
            .collect();
        let n_pairs = self.pairings.len();
        let hole_cocycles = (n_pairs..n_edges)
            .map(|e| {
                let mut phi = vec![0i64; n_edges];
                phi[e] = 1;
                phi
            })
            .collect();
        SurfaceComplex { edges, n_vertices, faces, period_cocycles, hole_cocycles }
    }
}

fn int_rows(rows: impl IntoIterator<Item = Vec<i64>>) -> Vec<Vec<Q>> {
    rows.into_iter().map(|r| r.into_iter().map(|x| Q::from_integer(BigInt::from(x))).collect()).collect()
}

impl SurfaceComplex {
    fn coboundary_rows(&self) -> Vec<Vec<i64>> {
        let mut rows = vec![vec![0i64; self.edges.len()]; self.n_vertices];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            rows[b][e] += 1;
            rows[a][e] -= 1;
        }
        rows
    }

    /// dim H₁ = E − rank ∂₁ − rank ∂₂.
    pub fn first_betti(&self) -> usize {
        let r1 = exact::rank(int_rows(self.coboundary_rows()));
        let face_rows = self.faces.iter().map(|f| {
            let mut row = vec![0i64; self.edges.len()];
            for &(e, c) in f {
                row[e] += c;
            }
            row
        });
        let r2 = exact::rank(int_rows(face_rows));
        self.edges.len() - r1 - r2
    }

    fn class_rank<'a>(&self, loops: impl Iterator<Item = &'a Vec<i64>>) -> usize {
        let cob = self.coboundary_rows();
        let rb = exact::rank(int_rows(cob.clone()));
        let all = exact::rank(int_rows(cob.into_iter().chain(loops.cloned())));
        all - rb
    }

    /// Rank of the period loop classes in first homology.
    pub fn period_rank(&self) -> usize {
        self.class_rank(self.period_cocycles.iter())
    }

    /// Rank of period loops together with the in-cell hole loops.
    pub fn loop_rank(&self) -> usize {
        self.class_rank(self.period_cocycles.iter().chain(&self.hole_cocycles))
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }
}

/// Number of integer-independent periods: the rank of their classes in the
/// first homology of the closed pattern surface.
pub fn integer_rank(epp: &Epp) -> usize {
    epp.surface_complex().period_rank()
}

/// Rank over Q of the exact period coordinates (coefficient matrix).
pub fn coefficient_rank(epp: &Epp) -> Option<usize> {
    let ex = epp.exact.as_ref()?;
    let rows: Vec<BTreeMap<_, Q>> =
        epp.pairings.iter().enumerate().filter(|(_, p)| !p.glued).map(|(i, _)| ex.periods[i].coordinates()).collect();
    let keys: BTreeSet<_> = rows.iter().flat_map(|r| r.keys().cloned()).collect();
    let keys: Vec<_> = keys.into_iter().collect();
    let dense = rows.iter().map(|r| keys.iter().map(|k| r.get(k).cloned().unwrap_or_else(Q::zero)).collect()).collect();
    Some(exact::rank(dense))
}

/// Moves `cell` by the period of its pairing along `side`, so that side
/// becomes adjacent to its twin.
pub fn reglue(epp: &Epp, cell: usize, side: SideId) -> Result<Epp, EppError> {
    if cell >= epp.cells.len() {
        return Err(EppError::NotBoundaryCell(cell));
    }
    let idx = epp
        .pairings
        .iter()
        .position(|p| p.side == side && (p.cell == cell || p.twin == cell))
        .ok_or(EppError::NotTwinSide(side.polygon, side.index))?;
    let pr = &epp.pairings[idx];
    if pr.glued {
        return Err(EppError::NotTwinSide(side.polygon, side.index));
    }
    // twin side = cell side + P, so the even cell moves by +P and the odd one by −P
    let shift = if pr.cell == cell { pr.period } else { -pr.period };
    let mut out = epp.clone();
    out.cells[cell].isometry.translation += shift;
    if let Some(ex) = &mut out.exact {
        let p = &epp.exact.as_ref().expect("exact data").periods[idx];
        let d = if pr.cell == cell { p.clone() } else { p.neg(&ex.field) };
        ex.translations[cell] = ex.translations[cell].add(&ex.field, &d);
    }
    out.recompute_pairings();
    let scale = out.length_scale();
    for p in &mut out.pairings {
        p.glued = p.period.norm() <= TWIN_TOL * scale;
    }
    if !out.glued_connected() {
        return Err(EppError::NotBoundaryCell(cell));
    }
    Ok(out)
}

impl Epp {
    fn glued_connected(&self) -> bool {
        let n = self.cells.len();
        let mut parent: Vec<usize> = (0..n).collect();
        for p in self.pairings.iter().filter(|p| p.glued) {
            let (a, b) = (find(&mut parent, p.cell), find(&mut parent, p.twin));
            parent[a] = b;
        }
        let r = find(&mut parent, 0);
        (0..n).all(|x| find(&mut parent, x) == r)
    }

    /// Cells with at least one side paired by a nonzero period.
    pub fn boundary_cells(&self) -> Vec<usize> {
        let mut out: BTreeSet<usize> = BTreeSet::new();
        for p in self.pairings.iter().filter(|p| !p.glued) {
            out.insert(p.cell);
            out.insert(p.twin);
        }
        out.into_iter().collect()
    }
}

/// Real irrational numbers α_k = element_k / unit in which period
/// coefficients are expanded.
#[derive(Clone, Debug)]
pub struct DirectionBasis {
    pub names: Vec<String>,
    pub elements: Vec<Poly>,
}

/// a = c₀ + Σ c_k α_k.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    pub rational: Q,
    pub terms: Vec<Q>,
}

impl Coefficient {
    pub fn value(&self, alphas: &[f64]) -> f64 {
        q_to_f64(&self.rational) + self.terms.iter().zip(alphas).map(|(c, a)| q_to_f64(c) * a).sum::<f64>()
    }

    fn denominators(&self) -> impl Iterator<Item = &Q> {
        std::iter::once(&self.rational).chain(&self.terms)
    }
}

#[derive(Clone, Debug)]
pub struct PeriodCoefficients {
    pub pairing: usize,
    pub a: Coefficient,
    pub b: Coefficient,
}

/// Period coordinates relative to (D₁, D₂): P = a·D₁ + b·D₂.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    pub d1: Vec2,
    pub d2: Vec2,
    pub x_basis: DirectionBasis,
    pub y_basis: DirectionBasis,
    pub x_alphas: Vec<f64>,
    pub y_alphas: Vec<f64>,
    pub rows: Vec<PeriodCoefficients>,
    /// Least common denominators of the a- and b-coefficients.
    pub cx: BigInt,
    pub cy: BigInt,
}

fn coords_of(polys: &[&Poly]) -> Vec<Vec<Q>> {
    let keys: BTreeSet<_> = polys.iter().flat_map(|p| p.coordinates().into_keys()).collect();
    polys
        .iter()
        .map(|p| {
            let c = p.coordinates();
            keys.iter().map(|k| c.get(k).cloned().unwrap_or_else(Q::zero)).collect()
        })
        .collect()
}

fn expand(num: &Poly, unit: &Poly, basis: &[Poly], which: usize) -> Result<Coefficient, EppError> {
    let mut all: Vec<&Poly> = vec![num, unit];
    all.extend(basis.iter());
    let cols = coords_of(&all);
    let x = exact::solve_columns(&cols[1..], &cols[0]).ok_or(EppError::MixedBasis(which))?;
    Ok(Coefficient { rational: x[0].clone(), terms: x[1..].to_vec() })
}

/// Solves num/unit = c₀ + Σ c_k·(e_k/basis_unit) over Q.
pub fn expand_ratio(f: &CycField, num: &Poly, unit: &Poly, basis: &DirectionBasis, basis_unit: &Poly) -> Option<Coefficient> {
    let lhs = num.mul(f, basis_unit);
    let mut cols = vec![unit.mul(f, basis_unit)];
    cols.extend(basis.elements.iter().map(|e| e.mul(f, unit)));
    let mut all: Vec<&Poly> = vec![&lhs];
    all.extend(cols.iter());
    let coords = coords_of(&all);
    let x = exact::solve_columns(&coords[1..], &coords[0])?;
    Some(Coefficient { rational: x[0].clone(), terms: x[1..].to_vec() })
}

/// Greedy basis from the numerators themselves: each new element is the
/// first numerator outside the span of the unit and earlier elements.
pub fn derive_basis(numerators: &[(usize, Poly)], unit: &Poly, prefix: &str) -> DirectionBasis {
    let mut elements: Vec<Poly> = Vec::new();
    let mut names = Vec::new();
    for (i, n) in numerators {
        let mut all: Vec<&Poly> = vec![n, unit];
        all.extend(elements.iter());
        let cols = coords_of(&all);
        if exact::solve_columns(&cols[1..], &cols[0]).is_none() {
            elements.push(n.clone());
            names.push(format!("{prefix}{i}"));
        }
    }
    DirectionBasis { names, elements }
}

impl Epp {
    /// Coefficients of every period relative to exact reference vectors
    /// `d1`, `d2`. Missing bases are derived from the periods.
    pub fn coefficient_table(
        &self,
        d1: &Poly,
        d2: &Poly,
        x_basis: Option<DirectionBasis>,
        y_basis: Option<DirectionBasis>,
    ) -> Result<CoefficientTable, EppError> {
        let ex = self.exact.as_ref().ok_or(EppError::Exact(GeometryError::NotAligned))?;
        let f = &ex.field;
        let unit = cross(f, d1, d2);
        if unit.is_zero() {
            return Err(EppError::DegeneratePeriods);
        }
        let params = self.spec.basis_values();
        let ids: Vec<usize> = self.pairings.iter().enumerate().filter(|(_, p)| !p.glued).map(|(i, _)| i).collect();
        let num_a: Vec<(usize, Poly)> = ids.iter().map(|&i| (i, cross(f, &ex.periods[i], d2))).collect();
        let num_b: Vec<(usize, Poly)> = ids.iter().map(|&i| (i, cross(f, d1, &ex.periods[i]))).collect();
        let xb = x_basis.unwrap_or_else(|| derive_basis(&num_a, &unit, "a"));
        let yb = y_basis.unwrap_or_else(|| derive_basis(&num_b, &unit, "b"));
        let unit_val = unit.eval(f, &params).re;
        let alphas = |b: &DirectionBasis| b.elements.iter().map(|e| e.eval(f, &params).re / unit_val).collect::<Vec<_>>();
        let mut rows = Vec::new();
        for ((i, na), (_, nb)) in num_a.iter().zip(&num_b) {
            rows.push(PeriodCoefficients {
                pairing: *i,
                a: expand(na, &unit, &xb.elements, *i)?,
                b: expand(nb, &unit, &yb.elements, *i)?,
            });
        }
        let cx = exact::lcm_of_denominators(rows.iter().flat_map(|r| r.a.denominators()));
        let cy = exact::lcm_of_denominators(rows.iter().flat_map(|r| r.b.denominators()));
        let d1n = d1.eval(f, &params);
        let d2n = d2.eval(f, &params);
        Ok(CoefficientTable {
            d1: Vec2::new(d1n.re, d1n.im),
            d2: Vec2::new(d2n.re, d2n.im),
            x_alphas: alphas(&xb),
            y_alphas: alphas(&yb),
            x_basis: xb,
            y_basis: yb,
            rows,
            cx,
            cy,
        })
    }

    /// Exact image of a billiard vertex in cell `cell`.
    pub fn exact_image(&self, cell: usize, polygon: usize, i: usize) -> Option<Poly> {
        let ex = self.exact.as_ref()?;
        let ctx = ExactCtx { f: ex.field.clone(), spec: &self.spec, c: self.c };
        let v = ctx.vertex(polygon, i).ok()?;
        Some(ctx.lin(self.cells[cell].isometry.linear, &v).add(&ctx.f, &ex.translations[cell]))
    }

    /// Exact base vertex.
    pub fn exact_base(&self) -> Option<Poly> {
        let ex = self.exact.as_ref()?;
        self.spec.exact_point(&ex.field, self.spec.symbolic_vertex(self.base.polygon, self.base.index)).ok()
    }

    /// Exact period vector of pairing `i`.
    pub fn exact_period(&self, i: usize) -> Option<&Poly> {
        self.exact.as_ref().map(|e| &e.periods[i])
    }
}

impl CoefficientTable {
    /// Largest |coefficient| sums used by the boundary bounds.
    pub fn abs_sum(c: &Coefficient) -> f64 {
        c.terms.iter().map(|t| q_to_f64(&t.abs())).sum()
    }

    pub fn row(&self, pairing: usize) -> Option<&PeriodCoefficients> {
        self.rows.iter().find(|r| r.pairing == pairing)
    }

    pub fn cx_f64(&self) -> f64 {
        self.cx.to_f64().unwrap_or(f64::INFINITY)
    }

    pub fn cy_f64(&self) -> f64 {
        self.cy.to_f64().unwrap_or(f64::INFINITY)
    }
}
