//! Exact arithmetic: cyclotomic fields Q(ζ_M), polynomials in the billiard
//! parameters with cyclotomic coefficients, and rational linear algebra.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn q_from_r64(r: &Rational64) -> Q {
    Q::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

pub fn q_to_f64(x: &Q) -> f64 {
    x.numer().to_f64().unwrap_or(f64::NAN) / x.denom().to_f64().unwrap_or(f64::NAN)
}

pub fn lcm_u64(a: u64, b: u64) -> u64 {
    if a == 0 || b == 0 {
        a.max(b)
    } else {
        a.lcm(&b)
    }
}

/// Integer coefficients (ascending) of the n-th cyclotomic polynomial.
pub fn cyclotomic_poly(n: usize) -> Vec<i64> {
    assert!(n >= 1);
    // x^n - 1
    let mut num = vec![0i64; n + 1];
    num[0] = -1;
    num[n] = 1;
    for d in 1..n {
        if n % d == 0 {
            let div = cyclotomic_poly(d);
            num = div_monic(&num, &div);
        }
    }
    num
}

fn div_monic(num: &[i64], den: &[i64]) -> Vec<i64> {
    let mut rem = num.to_vec();
    let dd = den.len() - 1;
    let qd = rem.len() - 1 - dd;
    let mut quo = vec![0i64; qd + 1];
    for k in (0..=qd).rev() {
        let c = rem[k + dd];
        quo[k] = c;
        if c != 0 {
            for (j, &dj) in den.iter().enumerate() {
                rem[k + j] -= c * dj;
            }
        }
    }
    debug_assert!(rem.iter().all(|&x| x == 0));
    quo
}

/// Element of a cyclotomic field in the power basis 1, ζ, …, ζ^(φ(M)−1).
pub type Cyc = Vec<Q>;

/// The field Q(ζ_M) with ζ_M = exp(2πi/M).
#[derive(Clone, Debug)]
pub struct CycField {
    order: usize,
    degree: usize,
    powers: Vec<Cyc>,
    numeric: Vec<Complex64>,
}

impl CycField {
    pub fn new(order: usize) -> Self {
        let phi = cyclotomic_poly(order);
        let degree = phi.len() - 1;
        let mut powers = Vec::with_capacity(order);
        let mut cur: Vec<Q> = vec![Q::zero(); degree];
        cur[0] = Q::one();
        for _ in 0..order {
            powers.push(cur.clone());
            // multiply by x and reduce with the monic Φ
            let top = cur[degree - 1].clone();
            let mut next = vec![Q::zero(); degree];
            for j in (1..degree).rev() {
                next[j] = cur[j - 1].clone();
            }
            if !top.is_zero() {
                for j in 0..degree {
                    next[j] -= &top * Q::from_integer(BigInt::from(phi[j]));
                }
            }
            cur = next;
        }
        let numeric = (0..degree)
            .map(|j| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / order as f64))
            .collect();
        CycField { order, degree, powers, numeric }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn zero(&self) -> Cyc {
        vec![Q::zero(); self.degree]
    }

    pub fn from_q(&self, x: Q) -> Cyc {
        let mut v = self.zero();
        v[0] = x;
        v
    }

    pub fn one(&self) -> Cyc {
        self.from_q(Q::one())
    }

    /// ζ_M^k for any integer k.
    pub fn zeta(&self, k: i64) -> Cyc {
        self.powers[k.rem_euclid(self.order as i64) as usize].clone()
    }

    /// exp(2πi·k/n); `n` must divide the field order.
    pub fn root(&self, k: i64, n: usize) -> Cyc {
        assert!(self.order % n == 0, "root of unity order {n} not in Q(ζ_{})", self.order);
        self.zeta(k * (self.order / n) as i64)
    }

    pub fn i(&self) -> Cyc {
        self.root(1, 4)
    }

    /// √d for d ∈ {1, 2, 3, 6} when the field contains it.
    pub fn sqrt(&self, d: u32) -> Option<Cyc> {
        let half_sum = |n: usize| -> Option<Cyc> {
            if self.order % n != 0 {
                return None;
            }
            Some(self.add(&self.root(1, n), &self.root(-1, n)))
        };
        match d {
            1 => Some(self.one()),
            2 => half_sum(8),
            3 => half_sum(12),
            6 => Some(self.mul(&half_sum(8)?, &half_sum(12)?)),
            _ => None,
        }
    }

    pub fn add(&self, a: &Cyc, b: &Cyc) -> Cyc {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn sub(&self, a: &Cyc, b: &Cyc) -> Cyc {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    pub fn neg(&self, a: &Cyc) -> Cyc {
        a.iter().map(|x| -x).collect()
    }

    pub fn scale(&self, a: &Cyc, s: &Q) -> Cyc {
        a.iter().map(|x| x * s).collect()
    }

    pub fn is_zero(&self, a: &Cyc) -> bool {
        a.iter().all(Zero::is_zero)
    }

    fn accumulate(&self, out: &mut Cyc, coeff: &Q, e: usize) {
        for (o, p) in out.iter_mut().zip(&self.powers[e % self.order]) {
            if !p.is_zero() {
                *o += coeff * p;
            }
        }
    }

    pub fn mul(&self, a: &Cyc, b: &Cyc) -> Cyc {
        let mut out = self.zero();
        for (j, x) in a.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            for (l, y) in b.iter().enumerate() {
                if y.is_zero() {
                    continue;
                }
                self.accumulate(&mut out, &(x * y), j + l);
            }
        }
        out
    }

    /// Complex conjugation ζ ↦ ζ⁻¹.
    pub fn conj(&self, a: &Cyc) -> Cyc {
        let mut out = self.zero();
        for (j, x) in a.iter().enumerate() {
            if !x.is_zero() {
                self.accumulate(&mut out, x, self.order - j);
            }
        }
        out
    }

    pub fn to_complex(&self, a: &Cyc) -> Complex64 {
        a.iter()
            .zip(&self.numeric)
            .filter(|(x, _)| !x.is_zero())
            .map(|(x, z)| z * q_to_f64(x))
            .sum()
    }

    /// Returns the rational value if the element lies in Q.
    pub fn as_rational(&self, a: &Cyc) -> Option<Q> {
        if a[1..].iter().all(Zero::is_zero) {
            Some(a[0].clone())
        } else {
            None
        }
    }
}

/// Monomial in the parameter indices, sorted ascending; empty = constant.
pub type Monomial = Vec<usize>;

/// Polynomial in the real parameters with coefficients in Q(ζ_M).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly {
    pub terms: BTreeMap<Monomial, Cyc>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn constant(f: &CycField, c: Cyc) -> Self {
        let mut p = Poly::zero();
        if !f.is_zero(&c) {
            p.terms.insert(Vec::new(), c);
        }
        p
    }

    pub fn param(f: &CycField, idx: usize, coeff: Cyc) -> Self {
        let mut p = Poly::zero();
        if !f.is_zero(&coeff) {
            p.terms.insert(vec![idx], coeff);
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn insert_add(&mut self, f: &CycField, m: Monomial, c: Cyc) {
        let sum = match self.terms.get(&m) {
            Some(e) => f.add(e, &c),
            None => c,
        };
        if f.is_zero(&sum) {
            self.terms.remove(&m);
        } else {
            self.terms.insert(m, sum);
        }
    }

    pub fn add(&self, f: &CycField, o: &Poly) -> Poly {
        let mut r = self.clone();
        for (m, c) in &o.terms {
            r.insert_add(f, m.clone(), c.clone());
        }
        r
    }

    pub fn neg(&self, f: &CycField) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), f.neg(c))).collect() }
    }

    pub fn sub(&self, f: &CycField, o: &Poly) -> Poly {
        self.add(f, &o.neg(f))
    }

    pub fn mul_cyc(&self, f: &CycField, c: &Cyc) -> Poly {
        let mut r = Poly::zero();
        for (m, x) in &self.terms {
            r.insert_add(f, m.clone(), f.mul(x, c));
        }
        r
    }

    pub fn scale(&self, f: &CycField, s: &Q) -> Poly {
        self.mul_cyc(f, &f.from_q(s.clone()))
    }

    pub fn mul(&self, f: &CycField, o: &Poly) -> Poly {
        let mut r = Poly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &o.terms {
                let mut m: Monomial = m1.iter().chain(m2).copied().collect();
                m.sort_unstable();
                r.insert_add(f, m, f.mul(c1, c2));
            }
        }
        r
    }

    pub fn conj(&self, f: &CycField) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), f.conj(c))).collect() }
    }

    pub fn eval(&self, f: &CycField, params: &[f64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(m, c)| f.to_complex(c) * m.iter().map(|&i| params[i]).product::<f64>())
            .sum()
    }

    /// Flattened rational coordinates keyed by (monomial, power-basis index).
    pub fn coordinates(&self) -> BTreeMap<(Monomial, usize), Q> {
        let mut out = BTreeMap::new();
        for (m, c) in &self.terms {
            for (j, x) in c.iter().enumerate() {
                if !x.is_zero() {
                    out.insert((m.clone(), j), x.clone());
                }
            }
        }
        out
    }
}

/// Exact complex number x + iy represented inside Q(ζ_M)[params].
pub type ExactVec = Poly;

/// Im(conj(u)·v), the 2D cross product u × v.
pub fn cross(f: &CycField, u: &Poly, v: &Poly) -> Poly {
    let a = u.conj(f).mul(f, v);
    let b = u.mul(f, &v.conj(f));
    // (a - b) / (2i) = (a - b)·(-i)/2
    let minus_i_half = f.scale(&f.neg(&f.i()), &q(1, 2));
    a.sub(f, &b).mul_cyc(f, &minus_i_half)
}

/// Row echelon rank over Q. Rows may be sparse in practice; zero entries
/// are skipped.
pub fn rank(mut rows: Vec<Vec<Q>>) -> usize {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..ncols {
        let Some(piv) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else { continue };
        rows.swap(r, piv);
        let inv = rows[r][c].recip();
        let pivot_row: Vec<(usize, Q)> = rows[r]
            .iter()
            .enumerate()
            .skip(c)
            .filter(|(_, x)| !x.is_zero())
            .map(|(j, x)| (j, x * &inv))
            .collect();
        for i in (r + 1)..rows.len() {
            if rows[i][c].is_zero() {
                continue;
            }
            let factor = rows[i][c].clone();
            for (j, x) in &pivot_row {
                rows[i][*j] -= &factor * x;
            }
        }
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    r
}

/// Solves A·x = b over Q (A given by columns) if a solution exists.
pub fn solve_columns(columns: &[Vec<Q>], b: &[Q]) -> Option<Vec<Q>> {
    let nrows = b.len();
    let ncols = columns.len();
    let mut m: Vec<Vec<Q>> = (0..nrows)
        .map(|i| columns.iter().map(|col| col[i].clone()).chain(std::iter::once(b[i].clone())).collect())
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(piv) = (r..nrows).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(r, piv);
        let inv = m[r][c].recip();
        for x in m[r].iter_mut() {
            *x *= &inv;
        }
        for i in 0..nrows {
            if i != r && !m[i][c].is_zero() {
                let factor = m[i][c].clone();
                let row_r = m[r].clone();
                for (x, y) in m[i].iter_mut().zip(&row_r) {
                    if !y.is_zero() {
                        *x -= &factor * y;
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    if m[r..].iter().any(|row| !row[ncols].is_zero()) {
        return None;
    }
    let mut x = vec![Q::zero(); ncols];
    for (i, &c) in pivots.iter().enumerate() {
        x[c] = m[i][ncols].clone();
    }
    Some(x)
}

pub fn lcm_of_denominators<'a>(values: impl IntoIterator<Item = &'a Q>) -> BigInt {
    values.into_iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()))
}

pub fn abs_q(x: &Q) -> Q {
    x.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclotomic_polynomials() {
        assert_eq!(cyclotomic_poly(1), vec![-1, 1]);
        assert_eq!(cyclotomic_poly(4), vec![1, 0, 1]);
        assert_eq!(cyclotomic_poly(12), vec![1, 0, -1, 0, 1]);
        assert_eq!(cyclotomic_poly(8), vec![1, 0, 0, 0, 1]);
        assert_eq!(cyclotomic_poly(6), vec![1, -1, 1]);
    }

    #[test]
    fn zeta_power_is_one() {
        let f = CycField::new(12);
        assert_eq!(f.zeta(12), f.one());
        assert_eq!(f.mul(&f.zeta(5), &f.zeta(7)), f.one());
        assert_eq!(f.conj(&f.zeta(5)), f.zeta(7));
    }

    #[test]
    fn square_roots_square_correctly() {
        let f = CycField::new(24);
        for d in [2u32, 3, 6] {
            let s = f.sqrt(d).unwrap();
            assert_eq!(f.mul(&s, &s), f.from_q(q(d as i64, 1)));
            assert!((f.to_complex(&s).re - (d as f64).sqrt()).abs() < 1e-14);
        }
        assert!(CycField::new(12).sqrt(2).is_none());
    }

    #[test]
    fn numeric_values_match() {
        let f = CycField::new(20);
        for k in 0..40 {
            let z = f.to_complex(&f.zeta(k));
            let e = Complex64::from_polar(1.0, std::f64::consts::PI * k as f64 / 10.0);
            assert!((z - e).norm() < 1e-13);
        }
    }

    #[test]
    fn cross_of_axes() {
        let f = CycField::new(4);
        let ex = Poly::constant(&f, f.one());
        let ey = Poly::constant(&f, f.i());
        assert_eq!(cross(&f, &ex, &ey), Poly::constant(&f, f.one()));
        assert!(cross(&f, &ex, &ex).is_zero());
    }

    #[test]
    fn rank_and_solve() {
        let rows = vec![vec![q(1, 1), q(2, 1), q(3, 1)], vec![q(2, 1), q(4, 1), q(6, 1)], vec![q(0, 1), q(1, 1), q(1, 2)]];
        assert_eq!(rank(rows), 2);
        let cols = vec![vec![q(1, 1), q(0, 1)], vec![q(1, 1), q(1, 1)]];
        let x = solve_columns(&cols, &[q(3, 1), q(1, 1)]).unwrap();
        assert_eq!(x, vec![q(2, 1), q(1, 1)]);
        assert!(solve_columns(&[vec![q(1, 1), q(1, 1)]], &[q(1, 1), q(2, 1)]).is_none());
    }
}
