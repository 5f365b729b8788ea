//! Structural invariants over randomly drawn billiards and inputs.

use std::f64::consts::PI;

use num_integer::Integer;
use num_rational::Rational64;
use polyquant::diophantine::dirichlet_approx_exact;
use polyquant::dynamics::envelope_polygon;
use polyquant::epp::{build_full, closed_form_genus, compute_genus, expected_period_count, integer_rank, reglue, Epp, VertexId};
use polyquant::families::{rect_frame, rect_holes, rect_rotated_holes, RectHole, RotatedHole};
use polyquant::geometry::{angle_sum, point_segment_distance, reflect_point, rotate_point, BilliardSpec, Vec2};
use polyquant::wavefunction::{
    closed_form, evaluate, evaluate_directions, rect_side_bound, reglue_bound, Family, FamilyParams, Quantization,
    CLOSED_FORM_SCALE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point() -> impl Strategy<Value = Vec2> {
    (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| Vec2::new(x, y))
}

fn rect_hole() -> impl Strategy<Value = RectHole> {
    (0.05f64..0.4, 0.1f64..0.4, 0.05f64..0.4, 0.1f64..0.4).prop_map(|(w, dw, h, dh)| RectHole { w, h, aw: w + dw, bh: h + dh })
}

fn rotated_hole() -> impl Strategy<Value = RotatedHole> {
    (0.1f64..0.5, 0.35f64..0.65, 0.05f64..0.25, 0.05f64..0.25).prop_map(|(x0, y0, s, t)| RotatedHole { x0, y0, s, t })
}

fn interior_points(spec: &BilliardSpec, count: usize, seed: u64) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.bounding_box();
    let mut out = Vec::new();
    while out.len() < count {
        let x = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        if spec.contains(x) {
            out.push(x);
        }
    }
    out
}

fn check_spec(spec: &BilliardSpec) -> Result<(), TestCaseError> {
    let k = spec.polygons.len() as i64;
    let sides: i64 = spec.polygons.iter().map(|p| p.len() as i64).sum();
    prop_assert_eq!(angle_sum(spec), Rational64::from_integer(sides + 2 * k - 4));
    for (angles, &ci) in spec.angles.iter().zip(&spec.c_per_polygon) {
        prop_assert_eq!(spec.c % ci, 0);
        for a in angles {
            prop_assert_eq!(a.p.gcd(&a.q), 1);
            prop_assert!(a.p > 0 && a.p < 2 * a.q);
            prop_assert_eq!(spec.c as i64 % a.q, 0);
        }
    }
    let g = compute_genus(spec);
    prop_assert_eq!(Rational64::new(g.e - g.v - g.s + 2, 2), closed_form_genus(spec));
    Ok(())
}

fn check_pattern(spec: &BilliardSpec, base: VertexId) -> Result<Epp, TestCaseError> {
    let e = build_full(spec, base).unwrap();
    prop_assert_eq!(e.cells.len() as u64, 2 * spec.c);
    prop_assert!(e.check_completeness());
    prop_assert_eq!(e.periods().len() as i64, expected_period_count(spec, base));
    let chi = e.surface_complex().euler_characteristic();
    prop_assert_eq!(chi, 2 - 2 * compute_genus(spec).g);
    Ok(e)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reflection_is_an_involution(p in point(), a in point(), b in point()) {
        prop_assume!(a.dist(b) > 1e-3);
        let back = reflect_point(reflect_point(p, a, b).unwrap(), a, b).unwrap();
        prop_assert!(back.dist(p) < 1e-10 * (1.0 + p.norm() + a.norm() + b.norm()));
    }

    #[test]
    fn rotations_compose_additively(p in point(), c in point(), s in -7.0f64..7.0, t in -7.0f64..7.0) {
        let two = rotate_point(rotate_point(p, s, c), t, c);
        prop_assert!(two.dist(rotate_point(p, s + t, c)) < 1e-10 * (1.0 + p.norm() + c.norm()));
    }

    #[test]
    fn rectangle_families_satisfy_the_pattern_invariants(hole in rect_hole(), vertex in 0usize..4) {
        let spec = rect_holes(1.0, 1.0, &[hole]).unwrap();
        check_spec(&spec)?;
        prop_assert_eq!(compute_genus(&spec).g, 5);
        let e = check_pattern(&spec, VertexId { polygon: 0, index: vertex })?;
        let reference = build_full(&spec, VertexId { polygon: 0, index: 0 }).unwrap();
        prop_assert_eq!(integer_rank(&e), integer_rank(&reference));
    }

    #[test]
    fn two_hole_rectangles(a in rect_hole(), dx in 0.05f64..0.1) {
        let b = RectHole { w: a.aw + dx, h: a.h, aw: a.aw + dx + 0.1, bh: a.bh };
        prop_assume!(b.aw < 0.95);
        let spec = rect_holes(1.0, 1.0, &[a, b]).unwrap();
        check_spec(&spec)?;
        prop_assert_eq!(compute_genus(&spec).g, 9);
        check_pattern(&spec, VertexId { polygon: 0, index: 0 })?;
    }

    #[test]
    fn rotated_hole_families(hole in rotated_hole()) {
        let spec = rect_rotated_holes(2.0, 1.0, &[hole]).unwrap();
        check_spec(&spec)?;
        prop_assert_eq!(compute_genus(&spec).g, 9);
        check_pattern(&spec, VertexId { polygon: 0, index: 0 })?;
    }

    #[test]
    fn rational_inputs_are_approximated_exactly(
        fracs in prop::collection::vec((-20i64..20, 1i64..13), 1..=4),
        extra in 0u64..50,
    ) {
        let alphas: Vec<Rational64> = fracs.iter().map(|&(n, d)| Rational64::new(n, d)).collect();
        let lcm = alphas.iter().fold(1i64, |acc, a| acc.lcm(a.denom())) as u64;
        let r = dirichlet_approx_exact(&alphas, lcm + extra).unwrap();
        prop_assert_eq!(r.z, lcm);
        prop_assert!(r.errors.iter().all(|e| *e == Rational64::from_integer(0)));
        prop_assert!(r.z_min <= r.z);
    }

    #[test]
    fn side_bound_scales_as_a_power_of_n(m in 1i64..10, k in 2usize..5) {
        let b: Vec<f64> = [100u64, 10_000, 1_000_000].iter().map(|&n| rect_side_bound(m, k, n)).collect();
        let step = 100f64.powf(-1.0 / (2.0 * (k - 1) as f64));
        prop_assert!((b[1] / b[0] - step).abs() < 1e-12);
        prop_assert!((b[2] / b[1] - step).abs() < 1e-12);
        prop_assert!((b[0] - PI * m as f64 * 100f64.powf(-1.0 / (2.0 * (k - 1) as f64))).abs() < 1e-12);
    }

    #[test]
    fn envelope_circumscribes_the_circle(c in point(), r in 0.05f64..2.0, n in 3usize..16, jitter in prop::collection::vec(-0.2f64..0.2, 16)) {
        let step = 2.0 * PI / n as f64;
        let angles: Vec<f64> = (0..n).map(|i| i as f64 * step + jitter[i] * step).collect();
        let poly = envelope_polygon(c, r, &angles).unwrap();
        prop_assert_eq!(poly.len(), n);
        for i in 0..n {
            prop_assert!((point_segment_distance(c, poly[i], poly[(i + 1) % n]) - r).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rectangle_wavefunction_forms_agree(hole in rect_hole(), m in 1i64..4, n in -3i64..4, seed in 0u64..1000) {
        prop_assume!(n != 0);
        let spec = rect_holes(1.0, 1.0, &[hole]).unwrap();
        let e = build_full(&spec, VertexId { polygon: 0, index: 0 }).unwrap();
        let q = Quantization::new(&e, rect_frame(&e).unwrap(), 100, m, n).unwrap();
        let params = FamilyParams { a: 1.0, b: 1.0, ..Default::default() };
        for x in interior_points(&spec, 100, seed) {
            let raw = evaluate(&e, q.p(), x).unwrap();
            prop_assert!((raw - evaluate_directions(&e, q.p(), x).unwrap()).norm() < 1e-10);
            let closed = closed_form(Family::RectParallelHoles, &params, &q.state, x);
            prop_assert!((raw * CLOSED_FORM_SCALE - closed).norm() < 1e-10);
        }
    }

    #[test]
    fn single_reglue_stays_within_its_bound(hole in rect_hole(), pick in 0usize..64, seed in 0u64..1000) {
        let spec = rect_holes(1.0, 1.0, &[hole]).unwrap();
        let e = build_full(&spec, VertexId { polygon: 0, index: 0 }).unwrap();
        let q = Quantization::new(&e, rect_frame(&e).unwrap(), 100, 1, 2).unwrap();
        let open: Vec<usize> = (0..e.pairings.len()).filter(|&i| !e.pairings[i].glued).collect();
        let i = open[pick % open.len()];
        let pr = &e.pairings[i];
        let moved = reglue(&e, pr.twin, pr.side).unwrap();
        prop_assert!(moved.check_completeness());
        let bound = reglue_bound(&q, i);
        for x in interior_points(&spec, 100, seed) {
            let d = (evaluate(&moved, q.p(), x).unwrap() - evaluate(&e, q.p(), x).unwrap()).norm();
            prop_assert!(d <= bound + 1e-12, "{} > {}", d, bound);
        }
    }
}
