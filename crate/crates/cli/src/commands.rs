use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_rational::Rational64;
use polyquant::diophantine::{dirichlet_approx, dirichlet_approx_exact};
use polyquant::dynamics::{approximate_billiard, find_periodic_orbits, ApproxOptions, DynamicsError};
use polyquant::epp::{build_full, coefficient_rank, compute_genus, closed_form_genus, enumerate_periods, expected_period_count, integer_rank, Epp, EppError, SideId, VertexId};
use polyquant::families::{derived_frame, rect_frame, rect_holes, rect_rotated_holes, sinai, sinai_frame, sinai_polygonal, QuantizationFrame, RectHole, RotatedHole};
use polyquant::geometry::BilliardSpec;
use polyquant::spectrum::{aperiodic_spectrum, coprime_pairs, periodic_spectrum, SkeletonPeriod};
use polyquant::wavefunction::{grid_field, side_residual, Quantization, WaveError};
use serde_json::{json, Value};

use crate::input::{load_curved, load_polygon, to_json_string, SpecFile};
use crate::{Cli, Command, FamilyArgs, FamilyName, FrameKind, Output, QuantArgs, Failure};

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let seed = cli.seed;
    match &cli.command {
        Command::Family(a) => family(a, seed),
        Command::Epp(a) => {
            let spec = load_polygon(&a.spec)?;
            let epp = build(&spec, a.vertex)?;
            eprintln!("cells={} periods={}", epp.cells.len(), epp.periods().len());
            emit(&a.output, epp.to_json(), seed)
        }
        Command::Genus(a) => {
            let spec = load_polygon(&a.spec)?;
            let g = compute_genus(&spec);
            let closed = closed_form_genus(&spec);
            eprintln!("g={}", g.g);
            emit(&a.output, json!({ "g": g.g, "E": g.e, "V": g.v, "S": g.s, "C": spec.c, "closed_form": closed.to_string() }), seed)
        }
        Command::Periods(a) => {
            let spec = load_polygon(&a.spec)?;
            let epp = build(&spec, a.vertex)?;
            periods(&a.output, &epp, seed)
        }
        Command::Dirichlet(a) => dirichlet(&a.values, a.n, &a.output, seed),
        Command::Spectrum(a) => {
            let (epp, quant) = quantize(&a.quant, 1, 1)?;
            let table = &quant.table;
            let (z1, z2) = (quant.rat.z1(), quant.rat.z2());
            let states = match a.skeleton {
                None => aperiodic_spectrum(table.d1, table.d2, z1, z2, a.range).map_err(Failure::numerical)?,
                Some((sa, sb)) => {
                    let pairs = coprime_pairs(table.d1, table.d2, z1, z2, SkeletonPeriod { a: sa, b: sb }, None).map_err(Failure::numerical)?;
                    periodic_spectrum(table.d1, table.d2, z1, z2, pairs, a.range, a.epsilon).map_err(Failure::numerical)?
                }
            };
            eprintln!("states={} Z1={z1} Z2={z2}", states.len());
            let value = json!({
                "base_vertex": [epp.base.polygon, epp.base.index],
                "D1": table.d1, "D2": table.d2,
                "Z1": z1, "Z2": z2,
                "rationalization": quant.rat,
                "states": states,
            });
            emit(&a.output, value, seed)
        }
        Command::Field(a) => {
            let (epp, quant) = quantize(&a.quant, a.m, a.n)?;
            let field = grid_field(&epp, &quant.state, a.nx, a.ny).map_err(Failure::numerical)?;
            if let Some(p) = &a.csv {
                write_with(p, |w| field.write_csv(w))?;
            }
            if let Some(p) = &a.pgm {
                write_with(p, |w| field.write_pgm(w))?;
            }
            eprintln!("max|psi|={:.6e}", field.max_abs());
            let value = json!({
                "state": quant.state,
                "nx": a.nx, "ny": a.ny,
                "lo": field.lo, "hi": field.hi,
                "max_abs": field.max_abs(),
                "csv": a.csv.as_ref().map(|p| p.display().to_string()),
                "pgm": a.pgm.as_ref().map(|p| p.display().to_string()),
            });
            emit(&a.output, value, seed)
        }
        Command::Verify(a) => {
            let (epp, quant) = quantize(&a.quant, a.m, a.n)?;
            let mut reports = Vec::new();
            for (polygon, poly) in epp.spec.polygons.iter().enumerate() {
                for index in 0..poly.len() {
                    let r = side_residual(&epp, &quant, SideId { polygon, index }, a.samples).map_err(Failure::numerical)?;
                    eprintln!("{:<12} measured {:.3e}  bound {:.3e}  {}", r.id, r.measured, r.bound, if r.holds() { "ok" } else { "VIOLATED" });
                    reports.push(r);
                }
            }
            let all = reports.iter().all(|r| r.holds());
            let value = json!({ "state": quant.state, "N": a.quant.n_quality, "all_hold": all, "sides": reports });
            emit(&a.output, value, seed)?;
            if all {
                Ok(())
            } else {
                Err(Failure::numerical("some side residual exceeds its bound"))
            }
        }
        Command::Orbits(a) => {
            let b = load_curved(&a.spec)?;
            let orbits = find_periodic_orbits(&b, a.max_bounces, a.max_length.unwrap_or(f64::INFINITY)).map_err(dynamics_failure)?;
            eprintln!("orbits={}", orbits.len());
            emit(&a.output, json!({ "max_bounces": a.max_bounces, "orbits": orbits }), seed)
        }
        Command::Approximate(a) => {
            let b = load_curved(&a.spec)?;
            let opts = ApproxOptions { max_bounces: a.max_bounces, grid_orbits: !a.all_orbits, ..ApproxOptions::default() };
            let ap = approximate_billiard(&b, a.k, opts).map_err(dynamics_failure)?;
            eprintln!("hole sides={} C={} rationalized={}", ap.envelope.len(), ap.spec.c, ap.rationalized);
            if let Some(p) = &a.report {
                let mut v = serde_json::to_value(&ap).expect("report serializes");
                v["C"] = json!(ap.spec.c);
                v["hole_angles"] = json!(ap.spec.angles[1].iter().map(|x| [x.p, x.q]).collect::<Vec<_>>());
                stamp(&mut v, seed);
                write_with(p, |w| w.write_all(to_json_string(&v).as_bytes()))?;
            }
            write_spec(&a.output, &SpecFile { raw: ap.spec.raw.clone(), circles: vec![] }, seed)
        }
    }
}

fn family(a: &FamilyArgs, seed: u64) -> Result<(), Failure> {
    let file = match a.name {
        FamilyName::RectHoles => {
            let holes: Vec<RectHole> = a.holes.iter().map(|h| RectHole { w: h[0], h: h[1], aw: h[2], bh: h[3] }).collect();
            polygon_file(rect_holes(a.a, a.b, &holes).map_err(Failure::invalid)?)
        }
        FamilyName::RectRotatedHoles => {
            let holes: Vec<RotatedHole> = a.holes.iter().map(|h| RotatedHole { x0: h[0], y0: h[1], s: h[2], t: h[3] }).collect();
            polygon_file(rect_rotated_holes(a.a, a.b, &holes).map_err(Failure::invalid)?)
        }
        FamilyName::Sinai if a.polygonal => polygon_file(sinai_polygonal(a.w, a.h, a.r).map_err(Failure::invalid)?),
        FamilyName::Sinai => {
            let b = sinai(a.w, a.h, a.r).map_err(Failure::invalid)?;
            SpecFile { raw: b.raw, circles: b.circles }
        }
    };
    write_spec(&a.output, &file, seed)
}

fn polygon_file(spec: BilliardSpec) -> SpecFile {
    SpecFile { raw: spec.raw, circles: vec![] }
}

fn write_spec(out: &Output, file: &SpecFile, seed: u64) -> Result<(), Failure> {
    emit(out, serde_json::to_value(file).expect("spec serializes"), seed)
}

fn stamp(v: &mut Value, seed: u64) {
    if let Value::Object(map) = v {
        map.insert("schema".into(), json!("v1"));
        map.insert("seed".into(), json!(seed));
    }
}

fn emit(out: &Output, mut value: Value, seed: u64) -> Result<(), Failure> {
    stamp(&mut value, seed);
    let text = to_json_string(&value);
    match &out.out {
        Some(p) => write_with(p, |w| w.write_all(text.as_bytes())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn default_vertex(spec: &BilliardSpec) -> VertexId {
    let outer = &spec.angles[0];
    let index = (0..outer.len()).max_by_key(|&i| (outer[i].q, std::cmp::Reverse(i))).unwrap_or(0);
    VertexId { polygon: 0, index }
}

fn build(spec: &BilliardSpec, vertex: Option<(usize, usize)>) -> Result<Epp, Failure> {
    let base = match vertex {
        Some((polygon, index)) => {
            if spec.polygons.get(polygon).is_none_or(|p| index >= p.len()) {
                return Err(Failure::usage(format!("vertex {polygon}:{index} does not exist")));
            }
            VertexId { polygon, index }
        }
        None => default_vertex(spec),
    };
    build_full(spec, base).map_err(epp_failure)
}

fn epp_failure(e: EppError) -> Failure {
    match e {
        EppError::InvalidVertex(..) => Failure::usage(e),
        _ => Failure::numerical(e),
    }
}

fn dynamics_failure(e: DynamicsError) -> Failure {
    match e {
        DynamicsError::TooManyBounces(_) | DynamicsError::BadBudget(_) => Failure::usage(e),
        DynamicsError::CircleOutside(_) | DynamicsError::NoCircle | DynamicsError::Geometry(_) => Failure::invalid(e),
        _ => Failure::numerical(e),
    }
}

fn wave_failure(e: WaveError) -> Failure {
    Failure::numerical(e)
}

fn frame_for(epp: &Epp, q: &QuantArgs) -> Result<QuantizationFrame, Failure> {
    let names: Vec<&str> = epp.spec.raw.basis.iter().map(|b| b.name.as_str()).collect();
    let looks_rect = names.len() >= 2
        && names[0] == "a"
        && names[1] == "b"
        && names[2..].chunks(4).all(|c| c.len() == 4 && c[0].starts_with('w') && c[1].starts_with('h') && c[2].starts_with('a') && c[3].starts_with('b'));
    let looks_sinai = names == ["w", "h", "r"];
    let kind = match q.frame {
        FrameKind::Auto if looks_rect => FrameKind::Rect,
        FrameKind::Auto if looks_sinai => FrameKind::Sinai,
        FrameKind::Auto => FrameKind::Derived,
        k => k,
    };
    let frame = match kind {
        FrameKind::Rect => rect_frame(epp),
        FrameKind::Sinai => sinai_frame(epp),
        _ => {
            let (Some(d1), Some(d2)) = (q.d1, q.d2) else {
                return Err(Failure::usage("this spec needs --frame derived with --d1 and --d2 pairing indices"));
            };
            if d1 >= epp.pairings.len() || d2 >= epp.pairings.len() {
                return Err(Failure::usage(format!("pairing index out of range (pattern has {})", epp.pairings.len())));
            }
            derived_frame(epp, d1, d2)
        }
    };
    frame.ok_or_else(|| Failure::numerical("exact arithmetic unavailable for this spec"))
}

fn quantize(q: &QuantArgs, m: i64, n: i64) -> Result<(Epp, Quantization), Failure> {
    let spec = load_polygon(&q.spec)?;
    let epp = build(&spec, q.vertex)?;
    let frame = frame_for(&epp, q)?;
    let quant = Quantization::new(&epp, frame, q.n_quality, m, n).map_err(wave_failure)?;
    Ok((epp, quant))
}

fn periods(out: &Output, epp: &Epp, seed: u64) -> Result<(), Failure> {
    let list = enumerate_periods(epp);
    let rank = integer_rank(epp);
    let expected = expected_period_count(&epp.spec, epp.base);
    eprintln!("periods={} rank={rank}", list.len());
    let value = json!({
        "base_vertex": [epp.base.polygon, epp.base.index],
        "count": list.len(),
        "expected_count": expected,
        "integer_rank": rank,
        "coefficient_rank": coefficient_rank(epp),
        "genus": compute_genus(&epp.spec).g,
        "periods": list.iter().map(|p| json!({
            "pairing": p.pairing, "cell": p.cell, "twin": p.twin,
            "side": [p.side.polygon, p.side.index],
            "vector": [p.vector.x, p.vector.y],
        })).collect::<Vec<_>>(),
    });
    emit(out, value, seed)
}

pub fn parse_fraction(s: &str) -> Result<Rational64, String> {
    let s = s.trim();
    let parse = |x: &str| x.trim().parse::<i64>().map_err(|e| format!("bad number `{s}`: {e}"));
    match s.split_once('/') {
        Some((p, q)) => {
            let q = parse(q)?;
            if q == 0 {
                return Err(format!("zero denominator in `{s}`"));
            }
            Ok(Rational64::new(parse(p)?, q))
        }
        None => Ok(Rational64::from_integer(parse(s)?)),
    }
}

fn dirichlet(values: &[String], n: u64, out: &Output, seed: u64) -> Result<(), Failure> {
    if let Ok(exact) = values.iter().map(|v| parse_fraction(v)).collect::<Result<Vec<_>, _>>() {
        let r = dirichlet_approx_exact(&exact, n).map_err(Failure::numerical)?;
        eprintln!("Z={}", r.z);
        let value = json!({
            "exact": true, "N": n, "Z": r.z, "Z_min": r.z_min, "numerators": r.numerators,
            "errors": r.errors.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
            "lcm": r.lcm,
        });
        return emit(out, value, seed);
    }
    let floats: Vec<f64> = values
        .iter()
        .map(|v| v.trim().parse::<f64>().map_err(|e| Failure::usage(format!("bad value `{v}`: {e}"))))
        .collect::<Result<_, _>>()?;
    let r = dirichlet_approx(&floats, n).map_err(Failure::numerical)?;
    eprintln!("Z={}", r.z);
    let mut value = serde_json::to_value(&r).expect("result serializes");
    value["exact"] = json!(false);
    emit(out, value, seed)
}
