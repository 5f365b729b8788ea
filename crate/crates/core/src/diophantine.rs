//! Simultaneous rational approximation with a common denominator and the
//! rationalization of angles and period coefficients built on it.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::epp::CoefficientTable;
use crate::geometry::RationalAngle;

/// Absolute slack when comparing float errors against N^(−1/p).
pub const ERROR_SLACK: f64 = 1e-14;

/// Largest quality parameter for which Z·α is exact enough in f64.
pub const MAX_N: u64 = 1 << 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiophantineError {
    #[error("no values to approximate")]
    EmptyInput,
    #[error("N must be between 1 and {MAX_N}")]
    Overflow,
    #[error("non-finite input value")]
    NonFinite,
    #[error("angle sum {sum} differs from closure constant {expected}")]
    ClosureViolation { sum: f64, expected: f64 },
    #[error("rationalized distinguished angle {0} is not positive")]
    DegenerateAngle(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirichletResult {
    #[serde(rename = "Z")]
    pub z: u64,
    pub numerators: Vec<i64>,
    #[serde(rename = "N")]
    pub n: u64,
    pub p: usize,
    /// N^(−1/p): bound on every |Z·α_k − Z_k|.
    pub bound: f64,
    /// |Z·α_k − Z_k| per entry.
    pub errors: Vec<f64>,
    /// N^(−1/p)/Z: bound on every |α_k − Z_k/Z|.
    pub certified_error: f64,
}

fn check(alphas: &[f64], n: u64) -> Result<f64, DiophantineError> {
    if alphas.is_empty() {
        return Err(DiophantineError::EmptyInput);
    }
    if n == 0 || n > MAX_N {
        return Err(DiophantineError::Overflow);
    }
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(DiophantineError::NonFinite);
    }
    Ok((n as f64).powf(-1.0 / alphas.len() as f64))
}

fn admissible(alphas: &[f64], z: u64, bound: f64) -> bool {
    alphas.iter().all(|a| {
        let x = z as f64 * a;
        (x - x.round()).abs() <= bound + ERROR_SLACK
    })
}

fn result(alphas: &[f64], z: u64, n: u64, bound: f64) -> DirichletResult {
    let numerators: Vec<i64> = alphas.iter().map(|a| (z as f64 * a).round() as i64).collect();
    let errors = alphas.iter().zip(&numerators).map(|(a, k)| (z as f64 * a - *k as f64).abs()).collect();
    DirichletResult { z, numerators, n, p: alphas.len(), bound, errors, certified_error: bound / z as f64 }
}

/// Smallest Z in 1..=N with |Z·α_k − Z_k| ≤ N^(−1/p) for every k.
pub fn dirichlet_approx(alphas: &[f64], n: u64) -> Result<DirichletResult, DiophantineError> {
    let bound = check(alphas, n)?;
    let z = (1..n as usize + 1)
        .into_par_iter()
        .with_min_len(4096)
        .find_first(|&z| admissible(alphas, z as u64, bound))
        .expect("an admissible Z always exists") as u64;
    Ok(result(alphas, z, n, bound))
}

/// Every admissible Z in 1..=N, ascending.
pub fn all_admissible_z(alphas: &[f64], n: u64) -> Result<Vec<u64>, DiophantineError> {
    let bound = check(alphas, n)?;
    Ok((1..n as usize + 1)
        .into_par_iter()
        .with_min_len(4096)
        .map(|z| z as u64)
        .filter(|&z| admissible(alphas, z, bound))
        .collect())
}

/// Exact variant for rational inputs; errors are exact rationals.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDirichlet {
    /// The lcm when it is at most N (all errors vanish), else `z_min`.
    pub z: u64,
    /// Smallest Z meeting the bound.
    pub z_min: u64,
    pub numerators: Vec<i64>,
    pub errors: Vec<Rational64>,
    /// Least common multiple of the denominators.
    pub lcm: u64,
}

fn round_half_away(x: Rational64) -> i64 {
    let two = Rational64::from_integer(2);
    let f = (x.abs() * two + Rational64::from_integer(1)) / two;
    let r = f.floor().to_integer();
    if x.is_negative() {
        -r
    } else {
        r
    }
}

/// Rational inputs, decided in exact arithmetic. With N at least the lcm of
/// the denominators Z is that lcm and every error is zero.
pub fn dirichlet_approx_exact(alphas: &[Rational64], n: u64) -> Result<ExactDirichlet, DiophantineError> {
    if alphas.is_empty() {
        return Err(DiophantineError::EmptyInput);
    }
    if n == 0 || n > MAX_N {
        return Err(DiophantineError::Overflow);
    }
    let p = alphas.len() as f64;
    let lcm = alphas.iter().fold(1u64, |acc, a| acc.lcm(&(*a.denom() as u64)));
    // |Zα − Z_k| ≤ N^(−1/p) ⇔ |Zα − Z_k|^p · N ≤ 1, checked in exact integers
    let ok = |z: u64| {
        alphas.iter().all(|a| {
            let x = *a * Rational64::from_integer(z as i64);
            let e = (x - Rational64::from_integer(round_half_away(x))).abs();
            let num = BigInt::from(*e.numer()).pow(p as u32) * BigInt::from(n);
            num <= BigInt::from(*e.denom()).pow(p as u32)
        })
    };
    let z_min = (1..n as usize + 1)
        .into_par_iter()
        .with_min_len(1024)
        .find_first(|&z| ok(z as u64))
        .expect("an admissible Z always exists") as u64;
    let z = if lcm <= n { lcm } else { z_min };
    let numerators: Vec<i64> = alphas.iter().map(|a| round_half_away(*a * Rational64::from_integer(z as i64))).collect();
    let errors = alphas
        .iter()
        .zip(&numerators)
        .map(|(a, k)| (*a * Rational64::from_integer(z as i64) - Rational64::from_integer(*k)).abs())
        .collect();
    Ok(ExactDirichlet { z, z_min, numerators, errors, lcm })
}

/// Closure constant Σn + 2k − 4 for interior domain angles in π units.
pub fn closure_constant(sides: &[usize]) -> i64 {
    sides.iter().sum::<usize>() as i64 + 2 * sides.len() as i64 - 4
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RationalizedAngles {
    pub angles: Vec<Vec<RationalAngle>>,
    #[serde(rename = "Z")]
    pub z: u64,
    /// Bound on |α − α_rat| for every angle except the first.
    pub per_angle_bound: f64,
    /// Bound on the first angle's error: (P − 1)/(Z·N^(1/(P−1))), P = Σn.
    pub distinguished_bound: f64,
    /// The weaker form (P − 1)/(Z·N^(1/(P+k−2))).
    pub distinguished_bound_loose: f64,
}

/// Rationalizes all angles but the first with a common denominator and sets
/// the first by closure, so the rational sum is exact.
pub fn rationalize_angles(angles: &[Vec<f64>], n: u64) -> Result<RationalizedAngles, DiophantineError> {
    let sides: Vec<usize> = angles.iter().map(|a| a.len()).collect();
    let total: usize = sides.iter().sum();
    if total < 2 {
        return Err(DiophantineError::EmptyInput);
    }
    let expected = closure_constant(&sides) as f64;
    let sum: f64 = angles.iter().flatten().sum();
    if (sum - expected).abs() > 1e-9 {
        return Err(DiophantineError::ClosureViolation { sum, expected });
    }
    let rest: Vec<f64> = angles.iter().flatten().skip(1).cloned().collect();
    let d = dirichlet_approx(&rest, n)?;
    let z = d.z as i64;
    let mut it = d.numerators.iter();
    let mut out: Vec<Vec<RationalAngle>> = Vec::with_capacity(angles.len());
    let mut acc = 0i64;
    for (j, poly) in angles.iter().enumerate() {
        let mut row = Vec::with_capacity(poly.len());
        for i in 0..poly.len() {
            if j == 0 && i == 0 {
                row.push(RationalAngle::new(0, 1));
            } else {
                let k = *it.next().expect("one numerator per angle");
                acc += k;
                row.push(RationalAngle::new(k, z));
            }
        }
        out.push(row);
    }
    let first = closure_constant(&sides) * z - acc;
    if first <= 0 {
        return Err(DiophantineError::DegenerateAngle(first as f64 / z as f64));
    }
    out[0][0] = RationalAngle::new(first, z);
    let p = rest.len() as f64;
    let nf = n as f64;
    let k = angles.len() as f64;
    Ok(RationalizedAngles {
        angles: out,
        z: d.z,
        per_angle_bound: d.certified_error,
        distinguished_bound: p / (z as f64 * nf.powf(1.0 / p)),
        distinguished_bound_loose: p / (z as f64 * nf.powf(1.0 / (p + k - 1.0))),
    })
}

/// Integers used to quantize along the two reference periods.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeriodRationalization {
    pub z_x: u64,
    pub z_y: u64,
    pub c_x: u64,
    pub c_y: u64,
    pub n: u64,
    /// N^(−1/p_x) and N^(−1/p_y): bounds on |Z·α − round(Z·α)|.
    pub bound_x: f64,
    pub bound_y: f64,
    pub x: Option<DirichletResult>,
    pub y: Option<DirichletResult>,
}

impl PeriodRationalization {
    /// Z₁ = Z_x·C_x, the integer multiplying D₁ in the quantization.
    pub fn z1(&self) -> u64 {
        self.z_x * self.c_x
    }

    pub fn z2(&self) -> u64 {
        self.z_y * self.c_y
    }
}

fn to_u64(b: &BigInt) -> Result<u64, DiophantineError> {
    b.to_u64().ok_or(DiophantineError::Overflow)
}

/// Approximates the irrational basis values of each direction with a
/// common denominator; rational-only directions get Z = 1 and zero error.
pub fn rationalize_period_coefficients(table: &CoefficientTable, n: u64) -> Result<PeriodRationalization, DiophantineError> {
    let side = |alphas: &[f64]| -> Result<(u64, f64, Option<DirichletResult>), DiophantineError> {
        if alphas.is_empty() {
            if n == 0 || n > MAX_N {
                return Err(DiophantineError::Overflow);
            }
            return Ok((1, 0.0, None));
        }
        let d = dirichlet_approx(alphas, n)?;
        Ok((d.z, d.bound, Some(d)))
    };
    let (z_x, bound_x, x) = side(&table.x_alphas)?;
    let (z_y, bound_y, y) = side(&table.y_alphas)?;
    let c_x = to_u64(&table.cx)?;
    let c_y = to_u64(&table.cy)?;
    Ok(PeriodRationalization { z_x, z_y, c_x, c_y, n, bound_x, bound_y, x, y })
}

/// Rational approximations Z_k/Z of real values, flagging exact inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalizedSet {
    pub inputs: Vec<f64>,
    pub rationals: Vec<Rational64>,
    pub bounds: Vec<f64>,
    pub exact: Vec<bool>,
}

/// Rationalizes a set of reals with a common denominator.
pub fn rationalize_set(values: &[f64], n: u64) -> Result<RationalizedSet, DiophantineError> {
    let d = dirichlet_approx(values, n)?;
    let z = d.z as i64;
    Ok(RationalizedSet {
        inputs: values.to_vec(),
        rationals: d.numerators.iter().map(|k| Rational64::new(*k, z)).collect(),
        bounds: vec![d.certified_error; values.len()],
        exact: d.errors.iter().map(|e| e.is_zero()).collect(),
    })
}
