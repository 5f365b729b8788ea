//! Reading and writing billiard descriptions.

use std::fs;
use std::path::Path;

use polyquant::dynamics::{CircleSpec, CurvedBilliard};
use polyquant::geometry::{make_billiard, BilliardSpec, RawBilliard};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Polygon billiard, optionally with circular holes. Without circles this
/// is exactly the polygon interchange format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    #[serde(flatten)]
    pub raw: RawBilliard,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub circles: Vec<CircleSpec>,
}

pub fn read_spec_file(path: &Path) -> Result<SpecFile, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

pub fn load_polygon(path: &Path) -> Result<BilliardSpec, Failure> {
    let file = read_spec_file(path)?;
    if !file.circles.is_empty() {
        return Err(Failure::invalid(format!("{} has circular holes; run `approximate` first", path.display())));
    }
    make_billiard(file.raw).map_err(Failure::invalid)
}

pub fn load_curved(path: &Path) -> Result<CurvedBilliard, Failure> {
    let file = read_spec_file(path)?;
    CurvedBilliard::new(file.raw, file.circles).map_err(Failure::invalid)
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use polyquant::families::{rect_rotated_holes, sinai, RotatedHole};

    fn round_trip(file: &SpecFile) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, to_json_string(file)).unwrap();
        let once = read_spec_file(&p).unwrap();
        assert_eq!(&once, file);
        std::fs::write(&p, to_json_string(&once)).unwrap();
        assert_eq!(read_spec_file(&p).unwrap(), once);
    }

    #[test]
    fn polygon_and_curved_specs_round_trip() {
        let rot = rect_rotated_holes(1.0, 1.0, &[RotatedHole { x0: 0.3, y0: 0.5, s: 0.1, t: 0.2 }]).unwrap();
        round_trip(&SpecFile { raw: rot.raw, circles: vec![] });
        let b = sinai(0.51, 0.47, 0.2).unwrap();
        round_trip(&SpecFile { raw: b.raw, circles: b.circles });
    }

    #[test]
    fn loading_checks_the_kind() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let b = sinai(0.51, 0.47, 0.2).unwrap();
        std::fs::write(&p, to_json_string(&SpecFile { raw: b.raw, circles: b.circles })).unwrap();
        assert_eq!(load_polygon(&p).unwrap_err().code, 1);
        assert_eq!(load_curved(&p).unwrap().radii, vec![0.2]);
    }
}
