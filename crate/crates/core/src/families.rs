//! Built-in billiard families: rectangles with axis-parallel holes,
//! rectangles with holes rotated by π/4, and the Sinai-like triangle.

use num_rational::Rational64;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{CircleSpec, CurvedBilliard};
use crate::epp::{DirectionBasis, Epp};
use crate::exact::{q, CycField, Poly};
use crate::geometry::{make_billiard, BasisElement, BilliardSpec, GeometryError, RawBilliard, SymbolicCoord, SymbolicPoint};

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("unknown family '{0}'")]
    UnknownFamily(String),
    #[error("bad parameters: {0}")]
    BadParameters(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Axis-parallel hole given by its left, bottom, right and top coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectHole {
    pub w: f64,
    pub h: f64,
    pub aw: f64,
    pub bh: f64,
}

/// Hole rotated by π/4: vertices A=(x0,y0), A+(s,−s), A+(s+t,t−s), A+(t,t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedHole {
    pub x0: f64,
    pub y0: f64,
    pub s: f64,
    pub t: f64,
}

fn basis(name: String, value: f64) -> BasisElement {
    BasisElement { name, value }
}

fn p(i: usize) -> SymbolicCoord {
    SymbolicCoord::param(i)
}

fn sum(terms: &[(i64, usize)]) -> SymbolicCoord {
    let mut c = SymbolicCoord::int(0);
    for &(k, i) in terms {
        c = c.plus(Rational64::from_integer(k), Some(i), 1);
    }
    c
}

fn outer_rectangle() -> Vec<SymbolicPoint> {
    vec![
        SymbolicPoint(SymbolicCoord::int(0), SymbolicCoord::int(0)),
        SymbolicPoint(p(0), SymbolicCoord::int(0)),
        SymbolicPoint(p(0), p(1)),
        SymbolicPoint(SymbolicCoord::int(0), p(1)),
    ]
}

fn check_positive(vals: &[f64]) -> Result<(), FamilyError> {
    if vals.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(())
    } else {
        Err(FamilyError::BadParameters("lengths must be positive and finite".into()))
    }
}

/// Rectangle [0,a]×[0,b] with axis-parallel rectangular holes.
/// Basis: a, b, then w_l, h_l, a_l, b_l for each hole.
pub fn rect_holes(a: f64, b: f64, holes: &[RectHole]) -> Result<BilliardSpec, FamilyError> {
    check_positive(&[a, b])?;
    let mut raw = RawBilliard { basis: vec![basis("a".into(), a), basis("b".into(), b)], outer: outer_rectangle(), holes: vec![] };
    for (l, hole) in holes.iter().enumerate() {
        if !(hole.aw > hole.w && hole.bh > hole.h) {
            return Err(FamilyError::BadParameters(format!("hole {l} has non-positive extent")));
        }
        let base = raw.basis.len();
        let n = l + 1;
        raw.basis.push(basis(format!("w{n}"), hole.w));
        raw.basis.push(basis(format!("h{n}"), hole.h));
        raw.basis.push(basis(format!("a{n}"), hole.aw));
        raw.basis.push(basis(format!("b{n}"), hole.bh));
        let (x0, y0, x1, y1) = (p(base), p(base + 1), p(base + 2), p(base + 3));
        raw.holes.push(vec![
            SymbolicPoint(x0.clone(), y0.clone()),
            SymbolicPoint(x0, y1.clone()),
            SymbolicPoint(x1.clone(), y1),
            SymbolicPoint(x1, y0),
        ]);
    }
    Ok(make_billiard(raw)?)
}

/// Rectangle [0,a]×[0,b] with rectangular holes rotated by π/4.
/// Basis: a, b, then x0_l, y0_l, s_l, t_l for each hole.
pub fn rect_rotated_holes(a: f64, b: f64, holes: &[RotatedHole]) -> Result<BilliardSpec, FamilyError> {
    check_positive(&[a, b])?;
    let mut raw = RawBilliard { basis: vec![basis("a".into(), a), basis("b".into(), b)], outer: outer_rectangle(), holes: vec![] };
    for (l, hole) in holes.iter().enumerate() {
        check_positive(&[hole.s, hole.t])?;
        let base = raw.basis.len();
        let n = l + 1;
        raw.basis.push(basis(format!("x{n}"), hole.x0));
        raw.basis.push(basis(format!("y{n}"), hole.y0));
        raw.basis.push(basis(format!("s{n}"), hole.s));
        raw.basis.push(basis(format!("t{n}"), hole.t));
        let (x, y, s, t) = (base, base + 1, base + 2, base + 3);
        // clockwise so the domain lies on the left
        raw.holes.push(vec![
            SymbolicPoint(sum(&[(1, x)]), sum(&[(1, y)])),
            SymbolicPoint(sum(&[(1, x), (1, t)]), sum(&[(1, y), (1, t)])),
            SymbolicPoint(sum(&[(1, x), (1, s), (1, t)]), sum(&[(1, y), (-1, s), (1, t)])),
            SymbolicPoint(sum(&[(1, x), (1, s)]), sum(&[(1, y), (-1, s)])),
        ]);
    }
    Ok(make_billiard(raw)?)
}

/// Exact cos and sin of k·π/6 as (rational, coefficient of √3).
pub fn trig_pi_6(k: i64) -> ((Rational64, Rational64), (Rational64, Rational64)) {
    let h = Rational64::new(1, 2);
    let (z, o) = (Rational64::zero(), Rational64::one());
    let table = [
        ((o, z), (z, z)),
        ((z, h), (h, z)),
        ((h, z), (z, h)),
        ((z, z), (o, z)),
        ((-h, z), (z, h)),
        ((z, -h), (h, z)),
    ];
    let (c, s) = table[k.rem_euclid(6) as usize];
    if k.rem_euclid(12) >= 6 {
        ((-c.0, -c.1), (-s.0, -s.1))
    } else {
        (c, s)
    }
}

fn triangle() -> Vec<SymbolicPoint> {
    vec![
        SymbolicPoint::ints(0, 0),
        SymbolicPoint::ints(1, 0),
        SymbolicPoint(SymbolicCoord::int(1), SymbolicCoord::int(0).plus(Rational64::one(), None, 3)),
    ]
}

fn sinai_basis(w: f64, h: f64, r: f64) -> Vec<BasisElement> {
    vec![basis("w".into(), w), basis("h".into(), h), basis("r".into(), r)]
}

/// Right triangle (0,0), (1,0), (1,√3) with a circular hole of radius r
/// centred at (w + r, h), so the circle touches the line x = w.
pub fn sinai(w: f64, h: f64, r: f64) -> Result<CurvedBilliard, FamilyError> {
    check_positive(&[w, h, r])?;
    let raw = RawBilliard { basis: sinai_basis(w, h, r), outer: triangle(), holes: vec![] };
    let center = SymbolicPoint(sum(&[(1, 0), (1, 2)]), sum(&[(1, 1)]));
    let cb = CurvedBilliard::new(raw, vec![CircleSpec { center, radius: p(2) }])
        .map_err(|e| FamilyError::BadParameters(e.to_string()))?;
    Ok(cb)
}

/// The Sinai-like triangle with the circle replaced by the circumscribed
/// regular dodecagon whose sides touch it at multiples of π/6.
pub fn sinai_polygonal(w: f64, h: f64, r: f64) -> Result<BilliardSpec, FamilyError> {
    check_positive(&[w, h, r])?;
    let raw = RawBilliard { basis: sinai_basis(w, h, r), outer: triangle(), holes: vec![dodecagon_vertices()] };
    Ok(make_billiard(raw)?)
}

/// Vertices c + r·e^{ikπ/6}(1 + i·tan(π/12)) with tan(π/12) = 2 − √3,
/// listed clockwise; centre (w + r, h), basis {w, h, r}.
fn dodecagon_vertices() -> Vec<SymbolicPoint> {
    let two = Rational64::from_integer(2);
    (0..12)
        .rev()
        .map(|k| {
            let ((ca, cb), (sa, sb)) = trig_pi_6(k);
            // (c + i s)(1 + i(2 − √3)) = c − s(2 − √3) + i(s + c(2 − √3))
            let three = Rational64::from_integer(3);
            let x_rat = ca - two * sa + three * sb;
            let x_s3 = cb + sa - two * sb;
            let y_rat = sa + two * ca - three * cb;
            let y_s3 = sb - ca + two * cb;
            let x = SymbolicCoord::param(0)
                .plus(Rational64::one() + x_rat, Some(2), 1)
                .plus(x_s3, Some(2), 3);
            let y = SymbolicCoord::param(1).plus(y_rat, Some(2), 1).plus(y_s3, Some(2), 3);
            SymbolicPoint(prune(x), prune(y))
        })
        .collect()
}

fn prune(mut c: SymbolicCoord) -> SymbolicCoord {
    c.terms.retain(|t| !t.coeff.is_zero());
    c
}

/// Exact reference periods and irrational bases used to quantize a family.
#[derive(Clone, Debug)]
pub struct QuantizationFrame {
    pub d1: Poly,
    pub d2: Poly,
    pub x_basis: Option<DirectionBasis>,
    pub y_basis: Option<DirectionBasis>,
}

fn int(f: &CycField, n: i64) -> Poly {
    Poly::constant(f, f.from_q(q(n, 1)))
}

fn monomial(f: &CycField, coeff: i64, params: &[usize]) -> Poly {
    params.iter().fold(int(f, coeff), |acc, &i| acc.mul(f, &Poly::param(f, i, f.one())))
}

/// D₁ = (2a, 0), D₂ = (0, 2b); x basis {w_l/a, a_l/a}, y basis {h_l/b, b_l/b}.
pub fn rect_frame(epp: &Epp) -> Option<QuantizationFrame> {
    let f = &epp.exact.as_ref()?.field;
    let holes = epp.spec.holes();
    let d1 = monomial(f, 2, &[0]);
    let d2 = monomial(f, 2, &[1]).mul_cyc(f, &f.i());
    // α·Δ with Δ = 4ab
    let mut x = DirectionBasis { names: vec![], elements: vec![] };
    let mut y = DirectionBasis { names: vec![], elements: vec![] };
    for l in 0..holes {
        let base = 2 + 4 * l;
        let n = l + 1;
        x.names.extend([format!("w{n}/a"), format!("a{n}/a")]);
        x.elements.extend([monomial(f, 4, &[1, base]), monomial(f, 4, &[1, base + 2])]);
        y.names.extend([format!("h{n}/b"), format!("b{n}/b")]);
        y.elements.extend([monomial(f, 4, &[0, base + 1]), monomial(f, 4, &[0, base + 3])]);
    }
    Some(QuantizationFrame { d1, d2, x_basis: Some(x), y_basis: Some(y) })
}

/// D₁ = (2, 0), D₂ = (1, √3); basis {w, √3h, r, √3r} in both directions.
pub fn sinai_frame(epp: &Epp) -> Option<QuantizationFrame> {
    let f = &epp.exact.as_ref()?.field;
    let s3 = f.sqrt(3)?;
    let d1 = int(f, 2);
    let d2 = int(f, 1).add(f, &Poly::constant(f, f.mul(&s3, &f.i())));
    // α·Δ with Δ = 2√3
    let delta = |p: Poly| p.mul_cyc(f, &f.scale(&s3, &q(2, 1)));
    let w = Poly::param(f, 0, f.one());
    let h = Poly::param(f, 1, s3.clone());
    let r = Poly::param(f, 2, f.one());
    let r3 = Poly::param(f, 2, s3.clone());
    let basis = DirectionBasis {
        names: vec!["w".into(), "sqrt3*h".into(), "r".into(), "sqrt3*r".into()],
        elements: vec![delta(w), delta(h), delta(r), delta(r3)],
    };
    Some(QuantizationFrame { d1, d2, x_basis: Some(basis.clone()), y_basis: Some(basis) })
}

/// Frame with D₁, D₂ taken from two given pairings and bases derived from
/// the periods themselves.
pub fn derived_frame(epp: &Epp, first: usize, second: usize) -> Option<QuantizationFrame> {
    let ex = epp.exact.as_ref()?;
    Some(QuantizationFrame { d1: ex.periods[first].clone(), d2: ex.periods[second].clone(), x_basis: None, y_basis: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RationalAngle, Vec2};

    #[test]
    fn trig_table_matches_floats() {
        for k in -12..24 {
            let ((ca, cb), (sa, sb)) = trig_pi_6(k);
            let f = |a: Rational64, b: Rational64| *a.numer() as f64 / *a.denom() as f64 + 3f64.sqrt() * *b.numer() as f64 / *b.denom() as f64;
            let t = std::f64::consts::PI * k as f64 / 6.0;
            assert!((f(ca, cb) - t.cos()).abs() < 1e-14);
            assert!((f(sa, sb) - t.sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn dodecagon_is_regular_and_touches_x_equals_w() {
        let (w, h, r) = (0.51, 0.47, 0.2);
        let s = sinai_polygonal(w, h, r).unwrap();
        let c = Vec2::new(w + r, h);
        let hole = &s.polygons[1];
        let side = 2.0 * r * (std::f64::consts::PI / 12.0).tan();
        for i in 0..12 {
            let (a, b) = (hole[i], hole[(i + 1) % 12]);
            assert!((a.dist(b) - side).abs() < 1e-12);
            let d = crate::geometry::point_segment_distance(c, a, b);
            assert!((d - r).abs() < 1e-12);
        }
        assert!(hole.iter().map(|v| v.x).fold(f64::INFINITY, f64::min) - w < 1e-12);
        assert!(s.angles[1].iter().all(|a| *a == RationalAngle::new(7, 6)));
    }

    #[test]
    fn rect_families() {
        let s = rect_holes(1.0, 1.0, &[RectHole { w: 0.2, h: 0.3, aw: 0.45, bh: 0.6 }]).unwrap();
        assert_eq!((s.c, s.holes()), (2, 1));
        let s = rect_rotated_holes(2.0, 1.5, &[RotatedHole { x0: 0.4, y0: 0.6, s: 0.3, t: 0.5 }]).unwrap();
        assert_eq!(s.c, 4);
        assert!(s.angles[1].iter().all(|a| *a == RationalAngle::new(3, 2)));
        assert!(rect_holes(1.0, 1.0, &[RectHole { w: 0.5, h: 0.3, aw: 0.45, bh: 0.6 }]).is_err());
    }

    #[test]
    fn rect_coefficients_use_hole_ratios() {
        let s = rect_holes(1.3, 0.9, &[RectHole { w: 0.2, h: 0.3, aw: 0.45, bh: 0.6 }]).unwrap();
        let e = crate::epp::build_full(&s, crate::epp::VertexId { polygon: 0, index: 0 }).unwrap();
        let fr = rect_frame(&e).unwrap();
        let t = e.coefficient_table(&fr.d1, &fr.d2, fr.x_basis, fr.y_basis).unwrap();
        assert!((t.x_alphas[0] - 0.2 / 1.3).abs() < 1e-15);
        assert!((t.y_alphas[1] - 0.6 / 0.9).abs() < 1e-15);
        assert_eq!((t.cx.clone(), t.cy.clone()), (1.into(), 1.into()));
        // some period is the hole-left-edge offset w₁/a along D₁
        let has_w = t.rows.iter().any(|r| r.a.terms[0] != num_rational::BigRational::from_integer(0.into()));
        assert!(has_w);
    }

    #[test]
    fn sinai_coefficient_denominator_is_six() {
        let s = sinai_polygonal(0.51, 0.47, 0.2).unwrap();
        let e = crate::epp::build_full(&s, crate::epp::VertexId { polygon: 0, index: 2 }).unwrap();
        let fr = sinai_frame(&e).unwrap();
        let t = e.coefficient_table(&fr.d1, &fr.d2, fr.x_basis, fr.y_basis).unwrap();
        assert_eq!((t.cx.clone(), t.cy.clone()), (6.into(), 6.into()));
    }
}
