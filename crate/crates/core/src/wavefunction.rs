//! Semiclassical wavefunctions as signed plane-wave sums over the images of
//! a billiard point in its pattern, with closed forms and residual bounds.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::str::FromStr;

use num_complex::Complex64;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::diophantine::{rationalize_period_coefficients, DiophantineError, PeriodRationalization};
use crate::epp::{expand_ratio, CoefficientTable, Epp, EppError, SideId};
use crate::exact::{cross, Poly, Q};
use crate::families::QuantizationFrame;
use crate::geometry::Vec2;
use crate::spectrum::{quantize_aperiodic, QuantumState, SpectrumError};

/// Ψ_closed = CLOSED_FORM_SCALE · Ψ_raw for the rectangle and Sinai families.
pub const CLOSED_FORM_SCALE: f64 = -0.25;
pub const DEFAULT_SAMPLES: usize = 1024;
const ORTHO_TOL: f64 = 1e-9;
const KAPPA_TOL: f64 = 1e-6;
const LINE_MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum WaveError {
    #[error("point ({0}, {1}) lies outside the billiard")]
    PointOutside(f64, f64),
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("side {0}:{1} does not exist")]
    SideNotFound(usize, usize),
    #[error("reference periods are not orthogonal")]
    PeriodsNotOrthogonal,
    #[error("sine-product reduction needs a single sector with even q (got q={q}, m={m})")]
    SymmetryAbsent { q: u64, m: u64 },
    #[error("grid resolution must be at least 2x2")]
    BadResolution,
    #[error("at least two samples are required")]
    TooFewSamples,
    #[error("pattern carries no exact data")]
    NoExactData,
    #[error(transparent)]
    Epp(#[from] EppError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Diophantine(#[from] DiophantineError),
}

/// Ψ(x) = Σ_L det(L)·exp(i p·g_L(x)) over all cells, without a domain check.
///
/// Each even cell is summed together with its mirror partner across the
/// anchor side nearest to x, so the pair difference is formed analytically
/// and Ψ vanishes to rounding on both anchor sides even for large |p|.
pub fn evaluate_unchecked(epp: &Epp, p: Vec2, x: Vec2) -> Complex64 {
    let v = epp.base_point();
    let np = epp.spec.polygons[epp.base.polygon].len();
    let prev = (epp.base.index + np - 1) % np;
    let (a, b) = epp.spec.side(epp.base.polygon, epp.base.index);
    let (c, d) = epp.spec.side(epp.base.polygon, prev);
    let na = (b - a).normalized().perp();
    let nb = (d - c).normalized().perp();
    let dv = x - v;
    let (side, n) = if dv.dot(na).abs() <= dv.dot(nb).abs() { (epp.base.index, na) } else { (prev, nb) };
    let sigma = epp.reflection(SideId { polygon: epp.base.polygon, index: side });
    let w = n * (2.0 * dv.dot(n));
    epp.cells
        .iter()
        .filter(|cell| !cell.isometry.is_odd())
        .map(|cell| {
            let iso = &cell.isometry;
            let twin = &epp.cells[epp.cell_index(iso.linear.compose(sigma, epp.c))].isometry;
            let mut shift = iso.apply(v) - twin.apply(v);
            if shift.norm() < 1e-9 {
                shift = Vec2::ZERO;
            }
            let theta = p.dot(iso.linear.apply(w, iso.c, iso.omega) + shift);
            let phase = p.dot(iso.apply(x)) - theta / 2.0;
            Complex64::new(0.0, 2.0 * (theta / 2.0).sin()) * Complex64::from_polar(1.0, phase)
        })
        .sum()
}

/// Plain image sum without pairing.
pub fn evaluate_images(epp: &Epp, p: Vec2, x: Vec2) -> Complex64 {
    epp.cells
        .iter()
        .map(|cell| Complex64::from_polar(cell.isometry.linear.det(), p.dot(cell.isometry.apply(x))))
        .sum()
}

/// Image-sum form of Ψ at a billiard point.
pub fn evaluate(epp: &Epp, p: Vec2, x: Vec2) -> Result<Complex64, WaveError> {
    if !epp.spec.contains(x) {
        return Err(WaveError::PointOutside(x.x, x.y));
    }
    Ok(evaluate_unchecked(epp, p, x))
}

/// Direction-sum form: Σ_L det(L)·exp(i p·t_L)·exp(i (Lᵀp)·x).
pub fn evaluate_directions(epp: &Epp, p: Vec2, x: Vec2) -> Result<Complex64, WaveError> {
    if !epp.spec.contains(x) {
        return Err(WaveError::PointOutside(x.x, x.y));
    }
    Ok(epp
        .cells
        .iter()
        .map(|cell| {
            let iso = &cell.isometry;
            let k = iso.linear.apply_transpose(p, iso.c, iso.omega);
            Complex64::from_polar(iso.linear.det(), p.dot(iso.translation) + k.dot(x))
        })
        .sum())
}

/// The three families with printed closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    RectParallelHoles,
    RectRotatedHoles,
    SinaiTriangle,
}

impl FromStr for Family {
    type Err = WaveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rect-parallel-holes" | "rect-holes" => Ok(Family::RectParallelHoles),
            "rect-rotated-holes" => Ok(Family::RectRotatedHoles),
            "sinai-triangle" | "sinai" => Ok(Family::SinaiTriangle),
            other => Err(WaveError::UnknownFamily(other.to_string())),
        }
    }
}

/// Geometric inputs of the closed forms. `h_prime` and `w_prime` enter only
/// the phase of the rotated-hole form.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct FamilyParams {
    pub a: f64,
    pub b: f64,
    pub h_prime: f64,
    pub w_prime: f64,
}

/// sin(π·Σtᵢ) with each tᵢ reduced mod 2 exactly before summing, so
/// integer arguments give exact zeros.
pub fn sin_pi(terms: &[f64]) -> f64 {
    let mut r: f64 = terms.iter().map(|t| t - 2.0 * (t / 2.0).round()).sum();
    r -= 2.0 * (r / 2.0).round();
    if r > 0.5 {
        r = 1.0 - r;
    } else if r < -0.5 {
        r = -1.0 - r;
    }
    (PI * r).sin()
}

/// sin(πmZ₁x/a)·sin(πnZ₂y/b)
pub fn eq5(a: f64, b: f64, z1: f64, z2: f64, m: i64, n: i64, x: Vec2) -> f64 {
    sin_pi(&[m as f64 * z1 * (x.x / a)]) * sin_pi(&[n as f64 * z2 * (x.y / b)])
}

pub fn eq10(p: &FamilyParams, z1: f64, z2: f64, m: i64, n: i64, x: Vec2) -> Complex64 {
    let (mf, nf) = (m as f64, n as f64);
    let phase = Complex64::from_polar(1.0, PI * (mf * z1 / p.a + nf * z2 / p.b) * (p.h_prime + p.w_prime));
    let first = eq5(p.a, p.b, z1, z2, m, n, x);
    let second = sin_pi(&[mf * z1 * (x.y / p.a)]) * sin_pi(&[nf * z2 * (x.x / p.b)]);
    Complex64::new(first, 0.0) - phase * second
}

pub fn eq15(z: f64, m: i64, n: i64, x: Vec2) -> f64 {
    let (mf, nf, s3) = (m as f64, n as f64, 3f64.sqrt());
    let u = s3 * x.y;
    let (mx, mu) = (3.0 * mf * z * x.x, 3.0 * mf * z * u);
    let k = (2.0 * nf - mf) * z;
    let (kx, ku) = (3.0 * k * x.x, k * u);
    let t1 = sin_pi(&[2.0 * mx]) * sin_pi(&[2.0 * ku]);
    let t2 = sin_pi(&[mx, -mu]) * sin_pi(&[kx, ku]);
    let t3 = sin_pi(&[mx, mu]) * sin_pi(&[kx, -ku]);
    t1 + t2 - t3
}

fn eq15a_terms(z: f64, m: i64, n: i64, x: Vec2) -> [f64; 3] {
    let (mf, nf, s3) = (m as f64, n as f64, 3f64.sqrt());
    let u = 2.0 * s3 * z * x.y;
    let v = 6.0 * z * x.x;
    [
        sin_pi(&[mf * v]) * sin_pi(&[(2.0 * nf - mf) * u]),
        sin_pi(&[nf * v]) * sin_pi(&[(nf - 2.0 * mf) * u]),
        sin_pi(&[(nf - mf) * v]) * sin_pi(&[(nf + mf) * u]),
    ]
}

/// Direction-sum rewrite of [`eq15`]; equal to it pointwise.
pub fn eq15a(z: f64, m: i64, n: i64, x: Vec2) -> f64 {
    let [t1, t2, t3] = eq15a_terms(z, m, n, x);
    t1 + t2 - t3
}

/// The rewrite with the signs of its last two terms as printed. Differs
/// from [`eq15`] in general.
pub fn eq15a_printed(z: f64, m: i64, n: i64, x: Vec2) -> f64 {
    let [t1, t2, t3] = eq15a_terms(z, m, n, x);
    t1 - t2 + t3
}

/// Family closed form for a quantized state. Sinai states must have
/// z1 = 6Z.
pub fn closed_form(family: Family, params: &FamilyParams, state: &QuantumState, x: Vec2) -> Complex64 {
    let (z1, z2) = (state.z1 as f64, state.z2 as f64);
    match family {
        Family::RectParallelHoles => Complex64::new(eq5(params.a, params.b, z1, z2, state.m, state.n, x), 0.0),
        Family::RectRotatedHoles => eq10(params, z1, z2, state.m, state.n, x),
        Family::SinaiTriangle => Complex64::new(eq15(z1 / 6.0, state.m, state.n, x), 0.0),
    }
}

/// Ψ = −4·exp(i p·V)·Σ_{j<r} sin(p⁽ʲ⁾₁ y₁)·sin(p⁽ʲ⁾₂ y₂), where y are the
/// coordinates of x − V in the frame (e₁, e₂) and p⁽ʲ⁾ = R_jᵀp.
#[derive(Clone, Debug, Serialize)]
pub struct SineProduct {
    pub base: Vec2,
    pub e1: Vec2,
    pub e2: Vec2,
    pub phase: (f64, f64),
    pub momenta: Vec<Vec2>,
}

impl SineProduct {
    pub fn eval(&self, x: Vec2) -> Complex64 {
        let d = x - self.base;
        let (y1, y2) = (d.dot(self.e1), d.dot(self.e2));
        let s: f64 = self.momenta.iter().map(|k| (k.x * y1).sin() * (k.y * y2).sin()).sum();
        Complex64::new(self.phase.0, self.phase.1) * (-4.0 * s)
    }
}

fn is_mirror(epp: &Epp, axis: Vec2) -> bool {
    let side = epp.spec.side(epp.base.polygon, epp.base.index);
    let t = (axis.angle() - (side.1 - side.0).angle()) * epp.q as f64 / PI;
    (t - t.round()).abs() < 1e-9
}

/// Sine-product form of Ψ about the base vertex. `axis` must be a mirror
/// line of the pattern through the base vertex; the default is the first
/// side leaving it.
pub fn sine_product_reduction(epp: &Epp, p: Vec2, axis: Option<Vec2>) -> Result<SineProduct, WaveError> {
    if epp.m != 1 || epp.q % 2 != 0 {
        return Err(WaveError::SymmetryAbsent { q: epp.q, m: epp.m });
    }
    let side = epp.spec.side(epp.base.polygon, epp.base.index);
    let e1 = axis.unwrap_or(side.1 - side.0).normalized();
    if !is_mirror(epp, e1) {
        return Err(WaveError::SymmetryAbsent { q: epp.q, m: epp.m });
    }
    let e2 = e1.perp();
    let r = epp.q / 2;
    let base = epp.base_point();
    let momenta = (0..r)
        .map(|j| {
            let k = p.rotated(-2.0 * PI * j as f64 / epp.q as f64);
            Vec2::new(k.dot(e1), k.dot(e2))
        })
        .collect();
    let ph = Complex64::from_polar(1.0, p.dot(base));
    Ok(SineProduct { base, e1, e2, phase: (ph.re, ph.im), momenta })
}

/// A state quantized on an exact frame, with the rationalization behind it.
#[derive(Clone, Debug)]
pub struct Quantization {
    pub frame: QuantizationFrame,
    pub table: CoefficientTable,
    pub rat: PeriodRationalization,
    pub state: QuantumState,
}

impl Quantization {
    pub fn new(epp: &Epp, frame: QuantizationFrame, n_quality: u64, m: i64, n: i64) -> Result<Self, WaveError> {
        let table = epp.coefficient_table(&frame.d1, &frame.d2, frame.x_basis.clone(), frame.y_basis.clone())?;
        let rat = rationalize_period_coefficients(&table, n_quality)?;
        let state = quantize_aperiodic(table.d1, table.d2, rat.z1(), rat.z2(), m, n)?;
        Ok(Quantization { frame, table, rat, state })
    }

    pub fn p(&self) -> Vec2 {
        self.state.p
    }

    /// Raw bound 2π(|m|·I₁·N^(−1/μ₁) + |n|·I₂·N^(−1/μ₂)) on |1 − exp(i p·P)|
    /// for the period of pairing `pairing`; 0 for glued pairings.
    pub fn period_bound(&self, pairing: usize) -> f64 {
        match self.table.rows.iter().find(|r| r.pairing == pairing) {
            None => 0.0,
            Some(row) => {
                let (i1, i2) = self.i_terms(row);
                2.0 * PI * (self.state.m.abs() as f64 * i1 * self.rat.bound_x + self.state.n.abs() as f64 * i2 * self.rat.bound_y)
            }
        }
    }

    fn i_terms(&self, row: &crate::epp::PeriodCoefficients) -> (f64, f64) {
        let cx = self.rat.c_x as f64;
        let cy = self.rat.c_y as f64;
        (cx * CoefficientTable::abs_sum(&row.a), cy * CoefficientTable::abs_sum(&row.b))
    }
}

/// Constants entering a residual bound.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct BoundConstants {
    pub i1: f64,
    pub i2: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub mu1: usize,
    pub mu2: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub id: String,
    pub samples: usize,
    pub measured: f64,
    pub bound: f64,
    /// Tighter bound from the exact phase differences, when available.
    pub exact_bound: Option<f64>,
    pub certified: bool,
    pub constants: BoundConstants,
    /// f64 evaluation error allowance: 8ε·(terms)·|p|·(largest image coordinate).
    pub rounding: f64,
}

impl ResidualReport {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound + self.rounding.max(1e-12)
    }
}

/// Rounding allowance for the raw sum of `epp` at momentum `p`.
pub fn rounding_allowance(epp: &Epp, p: Vec2) -> f64 {
    let (lo, hi) = bbox(epp);
    let extent = lo.norm().max(hi.norm()).max(1.0);
    8.0 * f64::EPSILON * epp.cells.len() as f64 * p.norm() * extent
}

fn max_abs(points: &[Vec2], f: impl Fn(Vec2) -> Complex64 + Sync) -> f64 {
    points.par_iter().map(|&x| f(x).norm()).reduce(|| 0.0, f64::max)
}

fn segment_samples(a: Vec2, b: Vec2, samples: usize) -> Vec<Vec2> {
    (0..samples).map(|i| a + (b - a) * (i as f64 / (samples - 1) as f64)).collect()
}

/// Max |f| over `samples` uniform points of the segment [a, b].
pub fn segment_residual(id: &str, a: Vec2, b: Vec2, samples: usize, bound: f64, f: impl Fn(Vec2) -> Complex64 + Sync) -> Result<ResidualReport, WaveError> {
    if samples < 2 {
        return Err(WaveError::TooFewSamples);
    }
    let pts = segment_samples(a, b, samples);
    Ok(ResidualReport {
        id: id.to_string(),
        samples,
        measured: max_abs(&pts, f),
        bound,
        exact_bound: None,
        certified: true,
        constants: BoundConstants::default(),
        rounding: 0.0,
    })
}

/// π|m|·N^(−1/(2(k−1))) for the closed rectangle form on a hole side; pass
/// n instead of m for horizontal sides. `k` counts the outer boundary too.
pub fn rect_side_bound(quantum: i64, k: usize, n_quality: u64) -> f64 {
    PI * quantum.abs() as f64 * (n_quality as f64).powf(-1.0 / (2.0 * (k as f64 - 1.0)))
}

/// 6π(|m| + |n| + |m − n|)·N^(−1/4) for the Sinai closed form on x = w.
pub fn sinai_w_bound(m: i64, n: i64, n_quality: u64) -> f64 {
    6.0 * PI * (m.abs() + n.abs() + (m - n).abs()) as f64 * (n_quality as f64).powf(-0.25)
}

/// Residual of the raw sum on a billiard side. Sides meeting at the base
/// vertex have bound 0; all others use the per-pairing period bounds.
pub fn side_residual(epp: &Epp, quant: &Quantization, side: SideId, samples: usize) -> Result<ResidualReport, WaveError> {
    let poly = epp.spec.polygons.get(side.polygon).ok_or(WaveError::SideNotFound(side.polygon, side.index))?;
    if side.index >= poly.len() {
        return Err(WaveError::SideNotFound(side.polygon, side.index));
    }
    if samples < 2 {
        return Err(WaveError::TooFewSamples);
    }
    let p = quant.p();
    let (a, b) = epp.spec.side(side.polygon, side.index);
    let pts = segment_samples(a, b, samples);
    let measured = max_abs(&pts, |x| evaluate_unchecked(epp, p, x));
    let mut bound = 0.0;
    let mut exact = 0.0;
    let mut consts = BoundConstants {
        n: quant.rat.n,
        mu1: quant.table.x_alphas.len(),
        mu2: quant.table.y_alphas.len(),
        ..Default::default()
    };
    for (i, pr) in epp.pairings.iter().enumerate().filter(|(_, pr)| pr.side == side && !pr.glued) {
        exact += 2.0 * (p.dot(pr.period) / 2.0).sin().abs();
        bound += quant.period_bound(i).min(2.0);
        if let Some(row) = quant.table.rows.iter().find(|r| r.pairing == i) {
            let (i1, i2) = quant.i_terms(row);
            consts.i1 = consts.i1.max(i1);
            consts.i2 = consts.i2.max(i2);
        }
    }
    Ok(ResidualReport {
        id: format!("side {}:{}", side.polygon, side.index),
        samples,
        measured,
        bound,
        exact_bound: Some(exact),
        certified: true,
        constants: consts,
        rounding: rounding_allowance(epp, p),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LineDirection {
    /// Parallel to D₂′ at fixed D₁′ offset.
    AlongD2,
    /// Parallel to D₁′ at fixed D₂′ offset.
    AlongD1,
}

/// A singular diagonal through an image of a billiard vertex.
#[derive(Clone, Debug, Serialize)]
pub struct SdLine {
    pub direction: LineDirection,
    /// Signed offset from the base vertex along the normal axis.
    pub offset: f64,
    pub point: Vec2,
    pub tangent: Vec2,
    /// (cell, polygon, vertex) of the first image found on the line.
    pub through: (usize, usize, usize),
}

fn bbox(epp: &Epp) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in 0..epp.cells.len() {
        for pl in 0..epp.spec.polygons.len() {
            for v in epp.cell_polygon(c, pl) {
                lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
                hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
            }
        }
    }
    (lo, hi)
}

/// Parameter interval of the line point + t·dir inside the box.
fn clip(point: Vec2, dir: Vec2, lo: Vec2, hi: Vec2) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (p, d, l, h) in [(point.x, dir.x, lo.x, hi.x), (point.y, dir.y, lo.y, hi.y)] {
        if d.abs() < 1e-15 {
            if p < l - 1e-12 || p > h + 1e-12 {
                return None;
            }
        } else {
            let (a, b) = ((l - p) / d, (h - p) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// Maps a plane point into the billiard through the first cell whose
/// inverse lands inside, if any.
pub fn fold(epp: &Epp, y: Vec2) -> Option<Vec2> {
    epp.cells.iter().find_map(|cell| {
        let iso = &cell.isometry;
        let x = iso.linear.apply_transpose(y - iso.translation, iso.c, iso.omega);
        epp.spec.contains(x).then_some(x)
    })
}

/// Singular diagonals through every vertex image, parallel to two
/// orthogonal periods, with their residual bounds. `d1p` must lie along a
/// mirror line of the pattern through the base vertex.
pub fn singular_diagonals(epp: &Epp, quant: &Quantization, d1p: &Poly, d2p: &Poly, samples: usize) -> Result<Vec<(SdLine, ResidualReport)>, WaveError> {
    if samples < 2 {
        return Err(WaveError::TooFewSamples);
    }
    let ex = epp.exact.as_ref().ok_or(WaveError::NoExactData)?;
    let f = &ex.field;
    let params = epp.spec.basis_values();
    let ev = |z: &Poly| {
        let c = z.eval(f, &params);
        Vec2::new(c.re, c.im)
    };
    let (u1, u2) = (ev(d1p), ev(d2p));
    if u1.dot(u2).abs() > ORTHO_TOL * u1.norm() * u2.norm() || u1.cross(u2).abs() < ORTHO_TOL {
        return Err(WaveError::PeriodsNotOrthogonal);
    }
    let p = quant.p();
    let red = sine_product_reduction(epp, p, Some(u1))?;
    let e1 = u1.normalized();
    let e2 = u2.normalized();
    let unit = cross(f, d1p, d2p);
    let base_unit = cross(f, &quant.frame.d1, &quant.frame.d2);
    let base = epp.exact_base().ok_or(WaveError::NoExactData)?;
    let vbase = epp.base_point();
    // p⁽ʲ⁾ components along e₁ and e₂ (sign of e₂ may differ from the reduction frame)
    let comps: Vec<(f64, f64)> = red.momenta.iter().map(|k| (k.x, k.y * red.e2.dot(e2).signum())).collect();

    let mut lines: Vec<(SdLine, Poly)> = Vec::new();
    for cell in 0..epp.cells.len() {
        for (pl, poly) in epp.spec.polygons.iter().enumerate() {
            for i in 0..poly.len() {
                let img = epp.image(cell, poly[i]);
                let y = epp.exact_image(cell, pl, i).ok_or(WaveError::NoExactData)?.sub(f, &base);
                for dir in [LineDirection::AlongD2, LineDirection::AlongD1] {
                    let (normal, tangent) = match dir {
                        LineDirection::AlongD2 => (e1, e2),
                        LineDirection::AlongD1 => (e2, e1),
                    };
                    let offset = (img - vbase).dot(normal);
                    if lines.iter().any(|(l, _)| l.direction == dir && (l.offset - offset).abs() < LINE_MERGE_TOL) {
                        continue;
                    }
                    let sd = SdLine { direction: dir, offset, point: vbase + normal * offset, tangent, through: (cell, pl, i) };
                    lines.push((sd, y.clone()));
                }
            }
        }
    }
    lines.sort_by(|a, b| (a.0.direction as u8, a.0.offset).partial_cmp(&(b.0.direction as u8, b.0.offset)).unwrap());

    let (lo, hi) = bbox(epp);
    let two = Q::from_integer(2.into());
    let mut out = Vec::new();
    for (sd, y) in lines {
        // 2ξ/|D′| as c₀ + Σ c_k α_k, and the matching quantization data
        let (num, len, basis, z, eps, mu) = match sd.direction {
            LineDirection::AlongD2 => {
                (cross(f, &y, d2p).scale(f, &two), u1.norm(), &quant.table.x_basis, quant.rat.z_x, quant.rat.bound_x, quant.table.x_alphas.len())
            }
            LineDirection::AlongD1 => {
                (cross(f, d1p, &y).scale(f, &two), u2.norm(), &quant.table.y_basis, quant.rat.z_y, quant.rat.bound_y, quant.table.y_alphas.len())
            }
        };
        let coeff = expand_ratio(f, &num, &unit, basis, &base_unit);
        let mut bound = 0.0;
        let mut certified = true;
        let mut i_sum: f64 = 0.0;
        for &(k1, k2) in &comps {
            let k = if sd.direction == LineDirection::AlongD2 { k1 } else { k2 };
            let kappa = k * len / (2.0 * PI);
            let kr = kappa.round();
            let term = match &coeff {
                Some(c) if (kappa - kr).abs() < KAPPA_TOL => {
                    let kq = Q::from_integer((kr as i64).into());
                    let kp = &kq / Q::from_integer((z as i64).into());
                    let ok = (&kq * &c.rational).is_integer() && c.terms.iter().all(|t| (&kp * t).is_integer());
                    if ok {
                        let s: f64 = c.terms.iter().map(|t| (&kp * t).abs().to_f64().unwrap_or(f64::INFINITY)).sum();
                        i_sum += s;
                        Some((PI * s * eps).min(1.0))
                    } else {
                        None
                    }
                }
                _ => None,
            };
            if term.is_none() {
                certified = false;
            }
            bound += term.unwrap_or(1.0);
        }
        bound *= 4.0;
        let pts: Vec<Vec2> = match clip(sd.point, sd.tangent, lo, hi) {
            Some((t0, t1)) => segment_samples(sd.point + sd.tangent * t0, sd.point + sd.tangent * t1, samples)
                .into_iter()
                .filter_map(|y| fold(epp, y))
                .collect(),
            None => Vec::new(),
        };
        let measured = max_abs(&pts, |x| evaluate_unchecked(epp, p, x));
        let exact = {
            let s: f64 = comps
                .iter()
                .map(|&(k1, k2)| (if sd.direction == LineDirection::AlongD2 { k1 } else { k2 } * sd.offset).sin().abs())
                .sum();
            4.0 * s
        };
        let (i1, i2, mu1, mu2) = match sd.direction {
            LineDirection::AlongD2 => (i_sum, 0.0, mu, 0),
            LineDirection::AlongD1 => (0.0, i_sum, 0, mu),
        };
        let report = ResidualReport {
            id: format!("{:?} offset {:.9}", sd.direction, sd.offset),
            samples: pts.len(),
            measured,
            bound,
            exact_bound: Some(exact),
            certified,
            constants: BoundConstants { i1, i2, n: quant.rat.n, mu1, mu2 },
            rounding: rounding_allowance(epp, p),
        };
        out.push((sd, report));
    }
    Ok(out)
}

/// Bound on the change of Ψ when one cell is moved by the period of
/// `pairing`.
pub fn reglue_bound(quant: &Quantization, pairing: usize) -> f64 {
    quant.period_bound(pairing)
}

/// Complex field on a regular grid over the billiard's bounding box;
/// values outside the billiard are None.
#[derive(Clone, Debug, Serialize)]
pub struct ScalarField {
    pub lo: Vec2,
    pub hi: Vec2,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, row j at y = lo.y + j·dy.
    pub values: Vec<Option<Complex64>>,
    pub state: QuantumState,
}

impl ScalarField {
    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.lo.x + (self.hi.x - self.lo.x) * i as f64 / (self.nx - 1) as f64,
            self.lo.y + (self.hi.y - self.lo.y) * j as f64 / (self.ny - 1) as f64,
        )
    }

    pub fn get(&self, i: usize, j: usize) -> Option<Complex64> {
        self.values[j * self.nx + i]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Rows `x,y,re,im,abs` for in-mask points.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,re,im,abs")?;
        for j in 0..self.ny {
            for i in 0..self.nx {
                if let Some(v) = self.get(i, j) {
                    let x = self.point(i, j);
                    writeln!(w, "{},{},{},{},{}", x.x, x.y, v.re, v.im, v.norm())?;
                }
            }
        }
        Ok(())
    }

    /// Binary P5 image of |Ψ|, top row at the largest y.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.nx, self.ny)?;
        let max = self.max_abs();
        let mut bytes = Vec::with_capacity(self.nx * self.ny);
        for j in (0..self.ny).rev() {
            for i in 0..self.nx {
                let v = self.get(i, j).map_or(0.0, |v| v.norm());
                let g = if max > 0.0 { (v / max * 255.0).round() } else { 0.0 };
                bytes.push(g.clamp(0.0, 255.0) as u8);
            }
        }
        w.write_all(&bytes)
    }
}

/// Samples `f` on an nx × ny grid over the billiard.
pub fn sample_grid(epp: &Epp, state: &QuantumState, nx: usize, ny: usize, f: impl Fn(Vec2) -> Complex64 + Sync) -> Result<ScalarField, WaveError> {
    if nx < 2 || ny < 2 {
        return Err(WaveError::BadResolution);
    }
    let (lo, hi) = epp.spec.bounding_box();
    let mut field = ScalarField { lo, hi, nx, ny, values: vec![None; nx * ny], state: state.clone() };
    let rows: Vec<Vec<Option<Complex64>>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            (0..nx)
                .map(|i| {
                    let x = field.point(i, j);
                    epp.spec.contains(x).then(|| f(x))
                })
                .collect()
        })
        .collect();
    field.values = rows.into_iter().flatten().collect();
    Ok(field)
}

/// Raw Ψ of `state` on an nx × ny grid.
pub fn grid_field(epp: &Epp, state: &QuantumState, nx: usize, ny: usize) -> Result<ScalarField, WaveError> {
    let p = state.p;
    sample_grid(epp, state, nx, ny, |x| evaluate_unchecked(epp, p, x))
}

/// Least-squares constant c with closed ≈ c·raw over the given points.
pub fn fit_constant(points: &[Vec2], raw: impl Fn(Vec2) -> Complex64, closed: impl Fn(Vec2) -> Complex64) -> Complex64 {
    let (mut num, mut den) = (Complex64::zero(), 0.0);
    for &x in points {
        let r = raw(x);
        num += r.conj() * closed(x);
        den += r.norm_sqr();
    }
    if den == 0.0 {
        Complex64::zero()
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epp::{build_full, reglue, VertexId};
    use crate::families::{rect_frame, rect_holes, sinai_frame, sinai_polygonal, RectHole};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const S3: f64 = 1.732_050_807_568_877_2;

    fn rect() -> (Epp, Quantization) {
        let s = rect_holes(1.0, 1.0, &[RectHole { w: 0.21, h: 0.33, aw: 0.47, bh: 0.61 }]).unwrap();
        let e = build_full(&s, VertexId { polygon: 0, index: 0 }).unwrap();
        let q = Quantization::new(&e, rect_frame(&e).unwrap(), 100, 1, 2).unwrap();
        (e, q)
    }

    fn sinai(m: i64, n: i64) -> (Epp, Quantization) {
        let s = sinai_polygonal(0.51, 0.47, 0.2).unwrap();
        let e = build_full(&s, VertexId { polygon: 0, index: 2 }).unwrap();
        let q = Quantization::new(&e, sinai_frame(&e).unwrap(), 10_000, m, n).unwrap();
        (e, q)
    }

    fn random_points(e: &Epp, count: usize, seed: u64) -> Vec<Vec2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = e.spec.bounding_box();
        let mut out = Vec::new();
        while out.len() < count {
            let x = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
            if e.spec.contains(x) {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn sin_pi_reduces_exactly() {
        for t in [0.0, 1.0, -3.0, 6390.0, 1e9] {
            assert_eq!(sin_pi(&[t]), 0.0);
            assert_eq!(sin_pi(&[t, 0.25, -0.25]), 0.0);
        }
        for t in [0.1, 0.5, 0.9, -1.3, 7.25, 1234.567] {
            assert!((sin_pi(&[t]) - (PI * t).sin()).abs() < 1e-12);
        }
        assert!((sin_pi(&[3.0, 0.5]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn eq5_unit_square_centre() {
        assert!((eq5(1.0, 1.0, 1.0, 1.0, 1, 1, Vec2::new(0.5, 0.5)) - 1.0).abs() < 1e-15);
        assert_eq!(eq5(1.0, 1.0, 3.0, 5.0, 2, 1, Vec2::new(0.0, 0.3)), 0.0);
    }

    #[test]
    fn image_and_direction_sums_agree() {
        for (e, q) in [rect(), sinai(1, 2)] {
            for x in random_points(&e, 200, 1) {
                let a = evaluate(&e, q.p(), x).unwrap();
                let b = evaluate_directions(&e, q.p(), x).unwrap();
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn outside_point_is_rejected() {
        let (e, q) = rect();
        assert!(matches!(evaluate(&e, q.p(), Vec2::new(0.3, 0.4)), Err(WaveError::PointOutside(..))));
        assert!(matches!(evaluate(&e, q.p(), Vec2::new(1.5, 0.4)), Err(WaveError::PointOutside(..))));
    }

    #[test]
    fn rectangle_sum_is_minus_four_eq5() {
        let (e, q) = rect();
        let params = FamilyParams { a: 1.0, b: 1.0, ..Default::default() };
        for x in random_points(&e, 500, 2) {
            let raw = evaluate(&e, q.p(), x).unwrap();
            let closed = closed_form(Family::RectParallelHoles, &params, &q.state, x);
            assert!((raw * CLOSED_FORM_SCALE - closed).norm() < 1e-10);
        }
    }

    #[test]
    fn sinai_sum_is_minus_four_eq15() {
        for (m, n) in [(1, 1), (1, -2), (2, 3)] {
            let (e, q) = sinai(m, n);
            assert_eq!(q.state.z1 % 6, 0);
            let params = FamilyParams::default();
            for x in random_points(&e, 300, 3) {
                let raw = evaluate(&e, q.p(), x).unwrap();
                let closed = closed_form(Family::SinaiTriangle, &params, &q.state, x);
                assert!((raw * CLOSED_FORM_SCALE - closed).norm() < 1e-9, "{m},{n}: {raw} vs {closed}");
            }
        }
    }

    #[test]
    fn eq15_rewrite_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut printed_differs = false;
        for _ in 0..10_000 {
            let x = Vec2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..S3));
            let (z, m, n) = (rng.gen_range(1..5) as f64, rng.gen_range(1..4), rng.gen_range(-3..4));
            assert!((eq15(z, m, n, x) - eq15a(z, m, n, x)).abs() < 1e-10);
            printed_differs |= (eq15(z, m, n, x) - eq15a_printed(z, m, n, x)).abs() > 1e-3;
        }
        assert!(printed_differs);
    }

    #[test]
    fn eq15_vanishes_on_triangle_sides() {
        for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
            for (m, n) in [(1, 1), (2, -1), (3, 5)] {
                assert!(eq15(7.0, m, n, Vec2::new(t, 0.0)).abs() < 1e-12);
                assert!(eq15(7.0, m, n, Vec2::new(1.0, S3 * t)).abs() < 1e-10);
                assert!(eq15(7.0, m, n, Vec2::new(t, S3 * t)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn base_vertex_and_anchor_sides_vanish() {
        for (e, q) in [rect(), sinai(1, 1)] {
            let v = e.base_point();
            assert!(evaluate(&e, q.p(), v).unwrap().norm() < 1e-12);
            let prev = (e.base.index + e.spec.polygons[0].len() - 1) % e.spec.polygons[0].len();
            for idx in [e.base.index, prev] {
                let r = side_residual(&e, &q, SideId { polygon: 0, index: idx }, 257).unwrap();
                assert!(r.measured < 1e-12, "{}", r.measured);
                assert_eq!(r.bound, 0.0);
            }
        }
    }

    #[test]
    fn reduction_matches_generic_sum() {
        for (e, q) in [rect(), sinai(1, 2), sinai(2, -1)] {
            let red = sine_product_reduction(&e, q.p(), None).unwrap();
            assert_eq!(red.momenta.len() as u64, e.q / 2);
            for x in random_points(&e, 200, 4) {
                assert!((red.eval(x) - evaluate(&e, q.p(), x).unwrap()).norm() < 1e-10);
            }
            let (a, b) = e.spec.side(0, e.base.index);
            assert!(red.eval(a).norm() < 1e-12 && red.eval((a + b) * 0.5).norm() < 1e-10);
        }
    }

    #[test]
    fn sinai_reduction_momenta_are_the_rewrite_terms() {
        let (m, n) = (2, 3);
        let (e, q) = sinai(m, n);
        let red = sine_product_reduction(&e, q.p(), Some(Vec2::new(1.0, 0.0))).unwrap();
        let z = q.state.z1 as f64 / 6.0;
        let (mf, nf) = (m as f64, n as f64);
        let mut expect = vec![
            (6.0 * PI * mf * z, 2.0 * S3 * PI * (2.0 * nf - mf) * z),
            (6.0 * PI * nf * z, 2.0 * S3 * PI * (nf - 2.0 * mf) * z),
            (6.0 * PI * (nf - mf) * z, 2.0 * S3 * PI * (nf + mf) * z),
        ];
        let mut got: Vec<(f64, f64)> = red.momenta.iter().map(|k| (k.x, k.y)).collect();
        let key = |v: &(f64, f64)| (v.0.abs() * 1e6).round() as i64;
        let norm = |v: &mut Vec<(f64, f64)>| {
            v.iter_mut().for_each(|p| *p = (p.0.abs(), p.1.abs()));
            v.sort_by_key(key);
        };
        norm(&mut expect);
        norm(&mut got);
        for (a, b) in expect.iter().zip(&got) {
            assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8, "{a:?} {b:?}");
        }
    }

    #[test]
    fn reduction_needs_even_single_sector() {
        use crate::families::{rect_rotated_holes, RotatedHole};
        let s = rect_rotated_holes(2.0, 1.5, &[RotatedHole { x0: 0.4, y0: 0.6, s: 0.3, t: 0.5 }]).unwrap();
        let e = build_full(&s, VertexId { polygon: 0, index: 0 }).unwrap();
        assert!(matches!(sine_product_reduction(&e, Vec2::new(1.0, 2.0), None), Err(WaveError::SymmetryAbsent { .. })));
        let (e, q) = rect();
        assert!(matches!(sine_product_reduction(&e, q.p(), Some(Vec2::new(1.0, 1.0))), Err(WaveError::SymmetryAbsent { .. })));
    }

    #[test]
    fn side_residuals_respect_bounds() {
        for (e, q) in [rect(), sinai(1, 1), sinai(1, -1)] {
            for side in e.sides() {
                let r = side_residual(&e, &q, side, 513).unwrap();
                assert!(r.measured <= r.exact_bound.unwrap() + r.rounding, "{}: {} > {:?}", r.id, r.measured, r.exact_bound);
                assert!(r.holds(), "{}: {} > {}", r.id, r.measured, r.bound);
            }
        }
    }

    #[test]
    fn rect_hole_side_bound_is_four_times_the_closed_form_bound() {
        let (e, q) = rect();
        let side = SideId { polygon: 1, index: 0 };
        let r = side_residual(&e, &q, side, 64).unwrap();
        let (a, b) = e.spec.side(1, 0);
        let vertical = (a.x - b.x).abs() < 1e-12;
        let quantum = if vertical { q.state.m } else { q.state.n };
        assert!((r.bound / 4.0 - rect_side_bound(quantum, 2, 100)).abs() < 1e-12);
        assert!((rect_side_bound(1, 2, 100) - PI / 10.0).abs() < 1e-15);
    }

    #[test]
    fn missing_side_is_reported() {
        let (e, q) = rect();
        assert!(matches!(side_residual(&e, &q, SideId { polygon: 1, index: 4 }, 8), Err(WaveError::SideNotFound(1, 4))));
        assert!(matches!(side_residual(&e, &q, SideId { polygon: 3, index: 0 }, 8), Err(WaveError::SideNotFound(3, 0))));
    }

    #[test]
    fn closed_form_residuals() {
        let (_, q) = rect();
        let params = FamilyParams { a: 1.0, b: 1.0, ..Default::default() };
        let f = |x: Vec2| closed_form(Family::RectParallelHoles, &params, &q.state, x);
        for n_quality in [100u64] {
            let b = rect_side_bound(q.state.m, 2, n_quality);
            let r = segment_residual("x=w", Vec2::new(0.21, 0.33), Vec2::new(0.21, 0.61), 1024, b, f).unwrap();
            assert!(r.holds());
        }
        let (_, qs) = sinai(1, 1);
        let g = |x: Vec2| closed_form(Family::SinaiTriangle, &FamilyParams::default(), &qs.state, x);
        let bound = sinai_w_bound(1, 1, 10_000);
        assert!((bound - 6.0 * PI * 2.0 / 10.0).abs() < 1e-12);
        let r = segment_residual("x=w", Vec2::new(0.51, 0.0), Vec2::new(0.51, 0.51 * S3), 1024, bound, g).unwrap();
        assert!(r.holds());
    }

    #[test]
    fn singular_diagonals_hold_their_bounds() {
        let (e, q) = rect();
        let lines = singular_diagonals(&e, &q, &q.frame.d1.clone(), &q.frame.d2.clone(), 400).unwrap();
        assert!(!lines.is_empty());
        for (l, r) in &lines {
            assert!(r.certified, "{l:?}");
            assert!(r.measured <= r.exact_bound.unwrap() + r.rounding);
            assert!(r.holds(), "{}: {} > {}", r.id, r.measured, r.bound);
        }
        // hole corners give the lines x = w, x = a₁, y = h, y = b₁
        let offsets: Vec<f64> = lines.iter().map(|(l, _)| l.offset.abs()).collect();
        for v in [0.21, 0.47, 0.33, 0.61] {
            assert!(offsets.iter().any(|o| (o - v).abs() < 1e-12));
        }
    }

    #[test]
    fn sinai_singular_diagonals() {
        let (m, n) = (1, 2);
        let (e, q) = sinai(m, n);
        let f = &e.exact.as_ref().unwrap().field;
        let d1 = q.frame.d1.clone();
        let d2p = q.frame.d2.scale(f, &Q::from_integer(2.into())).sub(f, &d1);
        let lines = singular_diagonals(&e, &q, &d1, &d2p, 300).unwrap();
        for (_, r) in &lines {
            assert!(r.holds(), "{}: {} > {}", r.id, r.measured, r.bound);
        }
        let w_line = lines
            .iter()
            .find(|(l, _)| l.direction == LineDirection::AlongD2 && (l.offset - (0.51 - 1.0)).abs() < 1e-12)
            .expect("line x = w");
        let r = &w_line.1;
        assert!(r.certified);
        // uncapped line bound 4π·ΣΣ|K′c|·N^(−1/4) is four times the closed-form bound
        let uncapped = 4.0 * PI * r.constants.i1 * (10_000f64).powf(-0.25);
        assert!((uncapped - 4.0 * sinai_w_bound(m, n, 10_000)).abs() < 1e-9, "{uncapped}");
        assert!(r.bound <= uncapped);
    }

    #[test]
    fn non_orthogonal_pair_is_rejected() {
        let (e, q) = sinai(1, 1);
        let r = singular_diagonals(&e, &q, &q.frame.d1, &q.frame.d2, 10);
        assert!(matches!(r, Err(WaveError::PeriodsNotOrthogonal)));
    }

    #[test]
    fn grid_corners_and_resolution() {
        let (e, q) = rect();
        let g = grid_field(&e, &q.state, 2, 2).unwrap();
        assert!(g.values.iter().all(|v| v.unwrap().norm() < 1e-12));
        assert!(matches!(grid_field(&e, &q.state, 1, 5), Err(WaveError::BadResolution)));
        let g = grid_field(&e, &q.state, 33, 17).unwrap();
        assert!(g.get(10, 8).is_none());
        let again = grid_field(&e, &q.state, 33, 17).unwrap();
        assert_eq!(format!("{:?}", g.values), format!("{:?}", again.values));
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x,y,re,im,abs\n"));
        assert_eq!(text.lines().count() - 1, g.values.iter().flatten().count());
        let mut pgm = Vec::new();
        g.write_pgm(&mut pgm).unwrap();
        assert!(pgm.starts_with(b"P5\n33 17\n255\n"));
        assert_eq!(pgm.len(), b"P5\n33 17\n255\n".len() + 33 * 17);
        assert!(pgm.contains(&255));
    }

    #[test]
    fn reglue_changes_field_within_bound() {
        let (e, q) = rect();
        let i = e.pairings.iter().position(|p| !p.glued && p.side.polygon == 1).unwrap();
        let pr = e.pairings[i].clone();
        let moved = reglue(&e, pr.twin, pr.side).unwrap();
        let bound = reglue_bound(&q, i);
        for x in random_points(&e, 300, 6) {
            let d = evaluate(&moved, q.p(), x).unwrap() - evaluate(&e, q.p(), x).unwrap();
            assert!(d.norm() <= bound + 1e-12, "{} > {bound}", d.norm());
        }
    }

    #[test]
    fn family_names() {
        assert_eq!("sinai-triangle".parse::<Family>().unwrap(), Family::SinaiTriangle);
        assert!(matches!("hexagon".parse::<Family>(), Err(WaveError::UnknownFamily(_))));
    }

    #[test]
    fn fitted_constant_is_minus_quarter() {
        let (e, q) = rect();
        let pts = random_points(&e, 50, 9);
        let params = FamilyParams { a: 1.0, b: 1.0, ..Default::default() };
        let c = fit_constant(&pts, |x| evaluate_unchecked(&e, q.p(), x), |x| closed_form(Family::RectParallelHoles, &params, &q.state, x));
        assert!((c - Complex64::new(CLOSED_FORM_SCALE, 0.0)).norm() < 1e-12);
    }
}
