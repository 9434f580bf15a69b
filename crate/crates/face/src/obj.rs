//! Wavefront OBJ subset: `v`, `f` (1-based or negative indices, `i/t/n`
//! forms), comments and blank lines. Everything else is skipped and counted.

use std::fmt::Write as _;
use std::io::{self, BufRead};

use face_core::mesh::RawMesh;

#[derive(Debug, thiserror::Error)]
pub enum ObjError {
    #[error("line {line}: malformed number {text:?}")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: vertex needs three coordinates")]
    ShortVertex { line: usize },
    #[error("line {line}: face index {index} is invalid with {count} vertices defined")]
    BadIndex { line: usize, index: i64, count: usize },
    #[error("line {line}: face has {count} vertices, needs at least 3")]
    ShortFace { line: usize, count: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// What the parser did besides reading geometry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ObjStats {
    /// Lines of other kinds (`vt`, `vn`, `usemtl`, `g`, ...).
    pub skipped_lines: usize,
    /// Polygons with more than three vertices, fan-triangulated.
    pub polygons: usize,
}

pub fn parse_obj(reader: impl BufRead) -> Result<(RawMesh, ObjStats), ObjError> {
    let mut mesh = RawMesh::default();
    let mut stats = ObjStats::default();
    let mut corners = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            None => {}
            Some(t) if t.starts_with('#') => {}
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    let text = parts.next().ok_or(ObjError::ShortVertex { line: line_no })?;
                    *c = text.parse().map_err(|_| ObjError::BadNumber { line: line_no, text: text.into() })?;
                }
                // A fourth (w) component or vertex colours are ignored.
                mesh.vertices.push(p);
            }
            Some("f") => {
                corners.clear();
                let count = mesh.vertices.len();
                for item in parts {
                    let text = item.split('/').next().unwrap_or(item);
                    let index: i64 =
                        text.parse().map_err(|_| ObjError::BadNumber { line: line_no, text: text.into() })?;
                    let resolved = match index {
                        i if i > 0 && (i as usize) <= count => i as usize - 1,
                        i if i < 0 && i.unsigned_abs() as usize <= count => count - i.unsigned_abs() as usize,
                        _ => return Err(ObjError::BadIndex { line: line_no, index, count }),
                    };
                    corners.push(resolved as u32);
                }
                if corners.len() < 3 {
                    return Err(ObjError::ShortFace { line: line_no, count: corners.len() });
                }
                if corners.len() > 3 {
                    stats.polygons += 1;
                }
                for k in 1..corners.len() - 1 {
                    mesh.faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            Some(_) => stats.skipped_lines += 1,
        }
    }
    Ok((mesh, stats))
}

pub fn parse_obj_str(text: &str) -> Result<(RawMesh, ObjStats), ObjError> {
    parse_obj(text.as_bytes())
}

/// Vertices with six decimals, then faces, both in stored order.
pub fn write_obj(mesh: &RawMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 32 + mesh.faces.len() * 16);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
vn 0 0 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
";

    #[test]
    fn quads_are_fan_triangulated() {
        let (m, stats) = parse_obj_str(CUBE).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert_eq!(m.faces[0], [0, 3, 2]);
        assert_eq!(m.faces[1], [0, 2, 1]);
        assert_eq!(stats, ObjStats { skipped_lines: 1, polygons: 6 });
    }

    #[test]
    fn one_based_and_negative_indices() {
        let (m, _) = parse_obj_str("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        let (m, _) = parse_obj_str("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn slash_forms_use_the_position_index() {
        let (m, _) = parse_obj_str("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1/1 2//1 3/1\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(parse_obj_str("v 0 x 0\n"), Err(ObjError::BadNumber { line: 1, .. })));
        assert!(matches!(parse_obj_str("v 0 0\n"), Err(ObjError::ShortVertex { line: 1 })));
        assert!(matches!(parse_obj_str("v 0 0 0\nf 0 1 1\n"), Err(ObjError::BadIndex { line: 2, index: 0, .. })));
        assert!(matches!(parse_obj_str("v 0 0 0\nf 1 2 1\n"), Err(ObjError::BadIndex { index: 2, .. })));
        assert!(matches!(parse_obj_str("v 0 0 0\nf 1 1\n"), Err(ObjError::ShortFace { count: 2, .. })));
    }

    #[test]
    fn single_triangle_writes_four_lines() {
        let m = RawMesh { vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], faces: vec![[0, 1, 2]] };
        let text = write_obj(&m);
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("v 0.000000 0.000000 0.000000\n"));
        assert!(text.ends_with("f 1 2 3\n"));
    }

    #[test]
    fn empty_mesh_writes_nothing() {
        assert_eq!(write_obj(&RawMesh::default()), "");
        let (m, _) = parse_obj_str("").unwrap();
        assert!(m.is_empty());
    }
}
