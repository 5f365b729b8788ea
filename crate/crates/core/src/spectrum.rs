//! Quantized momenta and energies on aperiodic and periodic skeletons.

use std::f64::consts::PI;

use num_rational::Rational64;
use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::epp::Period;
use crate::geometry::{recognize_rational, Vec2};

/// Relative tolerance on |D₁ × D₂| below which periods count as parallel.
pub const PARALLEL_TOL: f64 = 1e-12;

/// Default ε in E₀ ≤ ε·p²/2.
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("reference periods are parallel")]
    DegeneratePeriods,
    #[error("quantum number must be nonzero")]
    ZeroQuantumNumber,
    #[error("period ratio is not rational; supply a rationalized value")]
    NoCoprimeSolution,
    #[error("length scale must be positive")]
    NonPositiveLength,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StateKind {
    Aperiodic,
    Periodic {
        sigma: i8,
        e0: f64,
        k: i64,
        l: i64,
        r: i64,
        s: i64,
        /// E₀ ≤ ε·p²/2 holds.
        condition_f: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantumState {
    pub m: i64,
    pub n: i64,
    pub z1: u64,
    pub z2: u64,
    pub p: Vec2,
    pub energy: f64,
    #[serde(flatten)]
    pub kind: StateKind,
}

fn cell_area(d1: Vec2, d2: Vec2) -> Result<f64, SpectrumError> {
    let c = d1.cross(d2);
    if !c.is_finite() || c.abs() <= PARALLEL_TOL * d1.norm() * d2.norm() {
        return Err(SpectrumError::DegeneratePeriods);
    }
    Ok(c)
}

/// Solves p·D₁ = 2π·a, p·D₂ = 2π·b.
fn momentum(d1: Vec2, d2: Vec2, a: f64, b: f64) -> Result<Vec2, SpectrumError> {
    let c = cell_area(d1, d2)?;
    // (a·D₂ − b·D₁) × ẑ·c / c²
    let v = d2 * a - d1 * b;
    Ok(Vec2::new(v.y, -v.x) * (2.0 * PI / c))
}

/// State with p·D₁ = 2πmZ₁ and p·D₂ = 2πnZ₂.
pub fn quantize_aperiodic(d1: Vec2, d2: Vec2, z1: u64, z2: u64, m: i64, n: i64) -> Result<QuantumState, SpectrumError> {
    if m == 0 || n == 0 {
        return Err(SpectrumError::ZeroQuantumNumber);
    }
    let p = momentum(d1, d2, (m * z1 as i64) as f64, (n * z2 as i64) as f64)?;
    Ok(QuantumState { m, n, z1, z2, p, energy: 0.5 * p.dot(p), kind: StateKind::Aperiodic })
}

/// E = 2π²(m²Z₁²D₂² − 2mnZ₁Z₂ D₁·D₂ + n²Z₂²D₁²)/|D₁ × D₂|².
pub fn aperiodic_energy(d1: Vec2, d2: Vec2, z1: u64, z2: u64, m: i64, n: i64) -> Result<f64, SpectrumError> {
    let c = cell_area(d1, d2)?;
    let (a, b) = ((m * z1 as i64) as f64, (n * z2 as i64) as f64);
    Ok(2.0 * PI * PI * (a * a * d2.dot(d2) - 2.0 * a * b * d1.dot(d2) + b * b * d1.dot(d1)) / (c * c))
}

/// E = 2π²(m²Z₁²/D₁² + n²Z₂²/D₂²) for orthogonal periods of lengths D₁, D₂.
pub fn orthogonal_energy(l1: f64, l2: f64, z1: u64, z2: u64, m: i64, n: i64) -> f64 {
    let (a, b) = ((m * z1 as i64) as f64, (n * z2 as i64) as f64);
    2.0 * PI * PI * (a * a / (l1 * l1) + b * b / (l2 * l2))
}

/// A skeleton along a period P = a·D₁ + b·D₂ with rational a, b.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SkeletonPeriod {
    pub a: Rational64,
    pub b: Rational64,
}

/// Coprime pairs satisfying kZ₁D₂y = lZ₂D₁y and rZ₁D₂x = sZ₂D₁x in the frame
/// whose y axis runs along the skeleton.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CoprimePairs {
    pub k: i64,
    pub l: i64,
    pub r: i64,
    pub s: i64,
}

fn coprime(num: Rational64) -> (i64, i64) {
    // num = k/l in lowest terms
    (*num.numer(), *num.denom())
}

/// Coprime pairs for a periodic skeleton. `ratio_y` is the rationalized
/// D₁y/D₂y; without it the ratio must be recognizably rational.
pub fn coprime_pairs(
    d1: Vec2,
    d2: Vec2,
    z1: u64,
    z2: u64,
    skeleton: SkeletonPeriod,
    ratio_y: Option<Rational64>,
) -> Result<CoprimePairs, SpectrumError> {
    if skeleton.a.is_zero() && skeleton.b.is_zero() {
        return Err(SpectrumError::ZeroQuantumNumber);
    }
    let zr = Rational64::new(z2 as i64, z1 as i64);
    let dir = {
        let v = d1 * rf(skeleton.a) + d2 * rf(skeleton.b);
        v * (1.0 / v.norm())
    };
    let (y1, y2) = (d1.dot(dir), d2.dot(dir));
    let scale = d1.norm().max(d2.norm());
    let (k, l) = if y1.abs() <= PARALLEL_TOL * scale {
        (0, 1)
    } else if y2.abs() <= PARALLEL_TOL * scale {
        (1, 0)
    } else {
        let rho = match ratio_y {
            Some(r) => r,
            None => recognize_rational(y1 / y2, 10_000, 1e-12).ok_or(SpectrumError::NoCoprimeSolution)?,
        };
        coprime(zr * rho)
    };
    // D₁x/D₂x = −b/a exactly
    let (r, s) = if skeleton.a.is_zero() {
        (1, 0)
    } else if skeleton.b.is_zero() {
        (0, 1)
    } else {
        coprime(zr * (-skeleton.b / skeleton.a))
    };
    Ok(CoprimePairs { k, l, r, s })
}

fn rf(x: Rational64) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// The two σ-branch states of a periodic skeleton; m = 0 or n = 0 allowed.
#[allow(clippy::too_many_arguments)]
pub fn quantize_periodic(
    d1: Vec2,
    d2: Vec2,
    z1: u64,
    z2: u64,
    m: i64,
    n: i64,
    pairs: CoprimePairs,
    epsilon: f64,
) -> Result<[QuantumState; 2], SpectrumError> {
    let CoprimePairs { k, l, r, s } = pairs;
    let (zf1, zf2) = (z1 as f64, z2 as f64);
    let pn = momentum(d1, d2, (n * k) as f64 * zf1, (n * l) as f64 * zf2)?;
    let cor = momentum(d1, d2, (m * r) as f64 * zf1, (m * s) as f64 * zf2)?;
    let e0 = 0.5 * cor.dot(cor);
    let state = |sigma: i8| {
        let p = pn + cor * sigma as f64;
        let energy = 0.5 * p.dot(p);
        QuantumState {
            m,
            n,
            z1,
            z2,
            p,
            energy,
            kind: StateKind::Periodic { sigma, e0, k, l, r, s, condition_f: e0 <= epsilon * energy },
        }
    };
    Ok([state(1), state(-1)])
}

/// λ = 2·half_length/(|q|·Z).
pub fn wavelength(half_length: f64, q: i64, z: u64) -> Result<f64, SpectrumError> {
    if q == 0 {
        return Err(SpectrumError::ZeroQuantumNumber);
    }
    if half_length <= 0.0 || z == 0 {
        return Err(SpectrumError::NonPositiveLength);
    }
    Ok(2.0 * half_length / (q.unsigned_abs() as f64 * z as f64))
}

/// Nearest whole number of wavelengths in `length` and the leftover.
pub fn measure_length(length: f64, lambda: f64) -> Result<(i64, f64), SpectrumError> {
    if lambda <= 0.0 {
        return Err(SpectrumError::NonPositiveLength);
    }
    let count = (length / lambda).round() as i64;
    Ok((count, (length - count as f64 * lambda).abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Skeleton {
    Aperiodic,
    Periodic { pairing: usize, vector: Vec2 },
}

/// Periodic when `direction` is parallel (within `tol` rad) to some period;
/// the shortest such period is returned.
pub fn classify_skeleton(direction: Vec2, periods: &[Period], tol: f64) -> Skeleton {
    let u = direction * (1.0 / direction.norm());
    periods
        .iter()
        .filter(|p| {
            let len = p.vector.norm();
            len > 0.0 && (u.cross(p.vector) / len).abs().asin() <= tol
        })
        .min_by(|a, b| a.vector.norm().total_cmp(&b.vector.norm()).then(a.pairing.cmp(&b.pairing)))
        .map_or(Skeleton::Aperiodic, |p| Skeleton::Periodic { pairing: p.pairing, vector: p.vector })
}

/// All aperiodic states with 0 < |m|, |n| ≤ range, sorted by (E, m, n).
pub fn aperiodic_spectrum(d1: Vec2, d2: Vec2, z1: u64, z2: u64, range: i64) -> Result<Vec<QuantumState>, SpectrumError> {
    cell_area(d1, d2)?;
    let pairs: Vec<(i64, i64)> =
        (-range..=range).flat_map(|m| (-range..=range).map(move |n| (m, n))).filter(|(m, n)| *m != 0 && *n != 0).collect();
    let mut out: Vec<QuantumState> =
        pairs.par_iter().map(|&(m, n)| quantize_aperiodic(d1, d2, z1, z2, m, n)).collect::<Result<_, _>>()?;
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.m.cmp(&b.m)).then(a.n.cmp(&b.n)));
    Ok(out)
}

/// Periodic states for 0 ≤ |m|, |n| ≤ range (not both zero), sorted by (E, m, n, σ).
pub fn periodic_spectrum(
    d1: Vec2,
    d2: Vec2,
    z1: u64,
    z2: u64,
    pairs: CoprimePairs,
    range: i64,
    epsilon: f64,
) -> Result<Vec<QuantumState>, SpectrumError> {
    let mut out = Vec::new();
    for m in 0..=range {
        for n in -range..=range {
            if m == 0 && n <= 0 {
                continue;
            }
            let states = quantize_periodic(d1, d2, z1, z2, m, n, pairs, epsilon)?;
            if m == 0 {
                out.push(states[0].clone());
            } else {
                out.extend(states);
            }
        }
    }
    let sigma = |s: &QuantumState| match s.kind {
        StateKind::Periodic { sigma, .. } => sigma,
        StateKind::Aperiodic => 0,
    };
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.m.cmp(&b.m)).then(a.n.cmp(&b.n)).then(sigma(b).cmp(&sigma(a))));
    Ok(out)
}
