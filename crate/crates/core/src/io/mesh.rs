use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::geometry::{MeshTopology, Vec3};

/// Parses an ASCII OFF mesh consisting of triangles only.
pub fn parse_off(text: &str, path: &Path) -> Result<(Vec<Vec3>, MeshTopology)> {
    let fail = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    match tokens.next() {
        Some("OFF") => {}
        other => return Err(fail(format!("expected OFF header, found {other:?}"))),
    }
    let mut next_num = |what: &str| -> Result<&str> { tokens.next().ok_or_else(|| fail(format!("unexpected end of file reading {what}"))) };
    let count = |s: &str, what: &str| s.parse::<usize>().map_err(|_| fail(format!("invalid {what} {s:?}")));
    let nv = count(next_num("vertex count")?, "vertex count")?;
    let nf = count(next_num("face count")?, "face count")?;
    let _ne = count(next_num("edge count")?, "edge count")?;
    let mut positions = Vec::with_capacity(nv);
    for v in 0..nv {
        let mut c = [0.0; 3];
        for x in &mut c {
            let s = next_num("vertex coordinates")?;
            *x = s
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| fail(format!("invalid coordinate {s:?} of vertex {v}")))?;
        }
        positions.push(Vec3::new(c[0], c[1], c[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let k = count(next_num("face size")?, "face size")?;
        if k != 3 {
            return Err(fail(format!("face {f} has {k} vertices; only triangles are supported")));
        }
        let mut t = [0usize; 3];
        for x in &mut t {
            *x = count(next_num("face indices")?, "vertex index")?;
        }
        triangles.push(t);
    }
    let topology = MeshTopology::new(triangles, nv).map_err(|e| fail(e.to_string()))?;
    Ok((positions, topology))
}

pub fn load_off(path: &Path) -> Result<(Vec<Vec3>, MeshTopology)> {
    parse_off(&read_text(path)?, path)
}

pub fn write_off(positions: &[Vec3], topology: &MeshTopology) -> String {
    let mut s = format!("OFF\n{} {} 0\n", positions.len(), topology.num_triangles());
    for p in positions {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    for t in topology.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub fn save_off(positions: &[Vec3], topology: &MeshTopology, path: &Path) -> Result<()> {
    write_text(path, &write_off(positions, topology))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let (pos, topo) = crate::synth::uv_sphere(5, 7, 1.3);
        let (p2, t2) = parse_off(&write_off(&pos, &topo), Path::new("x.off")).unwrap();
        assert_eq!(p2, pos);
        assert_eq!(t2, topo);
    }

    #[test]
    fn comments_and_errors() {
        let ok = "OFF # header\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n# face\n3 0 1 2\n";
        assert!(parse_off(ok, Path::new("a.off")).is_ok());
        let quad = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        assert!(matches!(parse_off(quad, Path::new("a.off")), Err(Error::Format { .. })));
        let short = "OFF\n3 1 0\n0 0 0\n1 0 0\n";
        assert!(parse_off(short, Path::new("a.off")).is_err());
        let bad_index = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n";
        assert!(parse_off(bad_index, Path::new("a.off")).is_err());
    }
}
