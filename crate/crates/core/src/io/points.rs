use std::path::Path;

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::geometry::{SparsePointSet, Vec3};

/// Parses a point CSV (`x,y,z` or `x,y,z,label` header).
pub fn parse_points(text: &str, path: &Path) -> Result<SparsePointSet> {
    let fail = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let labelled = match names.as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "label"] => true,
        _ => {
            return Err(fail(format!(
                "expected header x,y,z or x,y,z,label, found {}",
                names.join(",")
            )))
        }
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| fail(format!("row {}: {e}", row + 1)))?;
        let coord = |k: usize| -> Result<f64> {
            let s = rec.get(k).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("row {}: invalid coordinate {s:?}", row + 1)))
        };
        points.push(Vec3::new(coord(0)?, coord(1)?, coord(2)?));
        if labelled {
            let s = rec.get(3).unwrap_or("");
            if s.is_empty() {
                return Err(fail(format!("row {}: missing label (rows must be all labelled or all unlabelled)", row + 1)));
            }
            labels.push(
                s.parse::<i64>()
                    .map_err(|_| fail(format!("row {}: invalid label {s:?}", row + 1)))?,
            );
        }
    }
    if points.is_empty() {
        return Err(fail("no points (P = 0)".into()));
    }
    SparsePointSet::new(points, labelled.then_some(labels))
}

pub fn load_points(path: &Path) -> Result<SparsePointSet> {
    parse_points(&read_text(path)?, path)
}

pub fn write_points(points: &SparsePointSet) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let labels = points.labels();
    let header: &[&str] = if labels.is_some() {
        &["x", "y", "z", "label"]
    } else {
        &["x", "y", "z"]
    };
    w.write_record(header).expect("in-memory write");
    for (j, p) in points.points().iter().enumerate() {
        let mut rec = vec![p.x.to_string(), p.y.to_string(), p.z.to_string()];
        if let Some(l) = labels {
            rec.push(l[j].to_string());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn save_points(points: &SparsePointSet, path: &Path) -> Result<()> {
    write_text(path, &write_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn round_trip() {
        let mut rng = crate::rng_from_seed(1);
        let pts: Vec<Vec3> = (0..20)
            .map(|_| Vec3::new(rng.random::<f64>() * 1e3, -rng.random::<f64>(), rng.random::<f64>() * 1e-7))
            .collect();
        let set = SparsePointSet::unlabeled(pts.clone()).unwrap();
        assert_eq!(parse_points(&write_points(&set), Path::new("p.csv")).unwrap(), set);
        let set = SparsePointSet::new(pts, Some((0..20).map(|i| i % 3).collect())).unwrap();
        assert_eq!(parse_points(&write_points(&set), Path::new("p.csv")).unwrap(), set);
    }

    #[test]
    fn format_errors() {
        let p = Path::new("p.csv");
        assert!(matches!(parse_points("x,y,z\n", p), Err(Error::Format { .. })));
        assert!(matches!(parse_points("", p), Err(Error::Format { .. })));
        assert!(matches!(parse_points("x,y,z,label\n1,2,3,4\n1,2,3,\n", p), Err(Error::Format { .. })));
        assert!(matches!(parse_points("x,y,z\n1,2,3\n1,2,3,4\n", p), Err(Error::Format { .. })));
        assert!(matches!(parse_points("a,b,c\n1,2,3\n", p), Err(Error::Format { .. })));
        assert!(matches!(parse_points("x,y,z\n1,nan,3\n", p), Err(Error::Format { .. })));
    }
}
