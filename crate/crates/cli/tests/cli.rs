use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polyquant"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_at(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn rect_spec(dir: &Path) -> PathBuf {
    let p = dir.join("rect.json");
    let o = run(&["family", "rect-holes", "--hole", "0.21,0.33,0.47,0.61", "--out", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p
}

#[test]
fn genus_of_rectangle_with_one_hole() {
    let dir = tempfile::tempdir().unwrap();
    let spec = rect_spec(dir.path());
    let o = run(&["genus", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("g=5"));
    let v = stdout_json(&o);
    assert_eq!(v["g"], 5);
    assert_eq!(v["schema"], "v1");
}

#[test]
fn bad_vertex_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = rect_spec(dir.path());
    assert_eq!(run(&["epp", spec.to_str().unwrap(), "--vertex", "bad"]).status.code(), Some(2));
    assert_eq!(run(&["epp", spec.to_str().unwrap(), "--vertex", "7"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn malformed_or_invalid_spec_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"outer\": [").unwrap();
    assert_eq!(run(&["genus", broken.to_str().unwrap()]).status.code(), Some(1));
    let degenerate = dir.path().join("line.json");
    fs::write(&degenerate, r#"{"outer": [[{"rat": [0, 1]}, {"rat": [0, 1]}], [{"rat": [1, 1]}, {"rat": [0, 1]}]]}"#).unwrap();
    assert_eq!(run(&["genus", degenerate.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["genus", dir.path().join("missing.json").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn parallel_reference_periods_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = rect_spec(dir.path());
    let o = run(&["spectrum", spec.to_str().unwrap(), "--frame", "derived", "--d1", "0", "--d2", "0"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_reports_every_side_within_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = rect_spec(dir.path());
    let out = dir.path().join("v.json");
    let o = run(&["verify", spec.to_str().unwrap(), "--m", "1", "--n", "1", "--N", "100", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_at(&out);
    assert_eq!(v["all_hold"], true);
    assert_eq!(v["sides"].as_array().unwrap().len(), 8);
    for s in v["sides"].as_array().unwrap() {
        assert!(s["measured"].as_f64().unwrap() <= s["bound"].as_f64().unwrap() + s["rounding"].as_f64().unwrap().max(1e-12));
    }
}

#[test]
fn periods_and_epp_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = rect_spec(dir.path());
    let v = stdout_json(&run(&["periods", spec.to_str().unwrap()]));
    assert_eq!(v["count"], 12);
    assert_eq!(v["expected_count"], 12);
    assert_eq!(v["genus"], 5);
    let e = stdout_json(&run(&["epp", spec.to_str().unwrap(), "--vertex", "0"]));
    assert_eq!(e["cells"].as_array().unwrap().len(), 4);
    assert_eq!(e["schema"], "v1");
}

#[test]
fn rational_dirichlet_uses_the_lcm() {
    let v = stdout_json(&run(&["dirichlet", "3/4", "5/6", "--N", "12"]));
    assert_eq!(v["Z"], 12);
    assert_eq!(v["errors"], serde_json::json!(["0", "0"]));
    let f = stdout_json(&run(&["dirichlet", "1.4142135623730951", "--N", "10"]));
    assert_eq!(f["Z"], 5);
    assert_eq!(f["numerators"], serde_json::json!([7]));
}

#[test]
fn spectrum_lists_states_with_quantized_momenta() {
    let dir = tempfile::tempdir().unwrap();
    let spec = rect_spec(dir.path());
    let v = stdout_json(&run(&["spectrum", spec.to_str().unwrap(), "--N", "100", "--range", "2"]));
    assert_eq!((v["Z1"].as_u64(), v["Z2"].as_u64()), (Some(19), Some(18)));
    let states = v["states"].as_array().unwrap();
    assert_eq!(states.len(), 16);
    let e: Vec<f64> = states.iter().map(|s| s["energy"].as_f64().unwrap()).collect();
    assert!(e.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn field_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = rect_spec(dir.path());
    let mut csv = Vec::new();
    let mut pgm = Vec::new();
    for i in 0..2 {
        let c = dir.path().join(format!("f{i}.csv"));
        let p = dir.path().join(format!("f{i}.pgm"));
        let o = run(&[
            "field", spec.to_str().unwrap(), "--N", "100", "--m", "1", "--n", "2", "--nx", "16", "--ny", "12",
            "--csv", c.to_str().unwrap(), "--pgm", p.to_str().unwrap(), "--seed", "3",
        ]);
        assert!(o.status.success());
        csv.push(fs::read(&c).unwrap());
        pgm.push(fs::read(&p).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
    assert_eq!(pgm[0], pgm[1]);
    let text = String::from_utf8(csv[0].clone()).unwrap();
    assert!(text.starts_with("x,y,re,im,abs\n"));
    // grid points inside the hole are left out
    let rows = text.lines().count() - 1;
    assert!(rows < 16 * 12 && rows > 16 * 12 / 2);
    assert!(pgm[0].starts_with(b"P5\n16 12\n255\n"));
    assert_eq!(pgm[0].len(), b"P5\n16 12\n255\n".len() + 16 * 12);
}

#[test]
fn orbit_output_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("c.json");
    assert!(run(&["family", "sinai", "--out", spec.to_str().unwrap()]).status.success());
    let a = run(&["orbits", spec.to_str().unwrap(), "--max-bounces", "3", "--seed", "9"]);
    let b = run(&["orbits", spec.to_str().unwrap(), "--max-bounces", "3", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["seed"], 9);
    let lengths: Vec<f64> = v["orbits"].as_array().unwrap().iter().map(|o| o["length"].as_f64().unwrap()).collect();
    assert!(!lengths.is_empty());
    assert!((lengths[0] - 0.18).abs() < 1e-9);
    assert_eq!(run(&["orbits", spec.to_str().unwrap(), "--max-bounces", "9"]).status.code(), Some(2));
}

#[test]
fn approximating_a_centred_circle_in_a_square() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sq.json");
    fs::write(
        &spec,
        r#"{"basis": [{"name": "a", "value": 2.0}, {"name": "r", "value": 0.4}],
            "outer": [[{"rat": [0, 1]}, {"rat": [0, 1]}],
                      [{"rat": [0, 1], "terms": [[[1, 1], 0]]}, {"rat": [0, 1]}],
                      [{"rat": [0, 1], "terms": [[[1, 1], 0]]}, {"rat": [0, 1], "terms": [[[1, 1], 0]]}],
                      [{"rat": [0, 1]}, {"rat": [0, 1], "terms": [[[1, 1], 0]]}]],
            "circles": [{"center": [{"rat": [0, 1], "terms": [[[1, 2], 0]]}, {"rat": [0, 1], "terms": [[[1, 2], 0]]}],
                         "radius": {"rat": [0, 1], "terms": [[[1, 1], 1]]}}]}"#,
    )
    .unwrap();
    let out = dir.path().join("poly.json");
    let report = dir.path().join("rep.json");
    let o = run(&[
        "approximate", spec.to_str().unwrap(), "--k", "4", "--max-bounces", "4",
        "--out", out.to_str().unwrap(), "--report", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json_at(&report);
    assert_eq!(r["C"], 2);
    assert_eq!(r["hole_angles"], serde_json::json!([[3, 2], [3, 2], [3, 2], [3, 2]]));
    let g = stdout_json(&run(&["genus", out.to_str().unwrap()]));
    assert_eq!(g["g"], 5);
}

#[test]
fn thread_variable_is_validated() {
    let o = bin().args(["dirichlet", "0.5", "--N", "4"]).env("BILLIARD_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["dirichlet", "0.5", "--N", "4"]).env("BILLIARD_THREADS", "2").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}
