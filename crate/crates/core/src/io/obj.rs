use std::io::{BufRead, Write};

use super::{fan, IoError};
use crate::mesh::TriMesh;
use crate::Vec3;

/// Reads `v` and `f` records; other records are ignored. Faces with more than
/// three corners are fan-triangulated; negative indices count from the end.
pub fn read_obj<R: BufRead>(reader: R) -> Result<TriMesh, IoError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let xyz: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| IoError::parse(lineno, format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_, _>>()?;
                if xyz.len() != 3 {
                    return Err(IoError::parse(lineno, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let poly = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let k: i64 = head
                            .parse()
                            .map_err(|e| IoError::parse(lineno, format!("bad face index {t:?}: {e}")))?;
                        let n = vertices.len() as i64;
                        let idx = match k {
                            0 => return Err(IoError::parse(lineno, "face index 0 (indices are 1-based)")),
                            k if k > 0 => k - 1,
                            k => n + k,
                        };
                        if idx < 0 || idx >= n {
                            return Err(IoError::parse(lineno, format!("face index {k} out of range")));
                        }
                        Ok(idx as usize)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if poly.len() < 3 {
                    return Err(IoError::parse(lineno, "face needs at least three corners"));
                }
                triangles.extend(fan(&poly));
            }
            _ => {}
        }
    }
    Ok(TriMesh::new(vertices, triangles)?)
}

pub fn write_obj<W: Write>(mut w: W, mesh: &TriMesh) -> Result<(), IoError> {
    for p in mesh.vertices() {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for t in mesh.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_grid_mesh, MeshError};

    #[test]
    fn minimal_triangle() {
        let src = "# one face\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        let m = read_obj(src.as_bytes()).unwrap();
        assert_eq!((m.vertex_count(), m.triangle_count()), (3, 1));
        assert!(m.check_invariants().is_ok());
    }

    #[test]
    fn zero_index_is_an_error() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n";
        match read_obj(src.as_bytes()) {
            Err(IoError::Parse { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slashes_negative_indices_and_quads() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -2//1 -1//1\n";
        let m = read_obj(src.as_bytes()).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn rejects_bad_topology() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 -1 0\nv 0 0 1\nf 1 2 3\nf 2 1 4\nf 1 2 5\n";
        assert!(matches!(
            read_obj(src.as_bytes()),
            Err(IoError::Mesh(MeshError::NonManifoldEdge(..)))
        ));
        let src = "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n";
        assert!(matches!(read_obj(src.as_bytes()), Err(IoError::Mesh(MeshError::Degenerate(..)))));
        assert!(read_obj("v 0 0\n".as_bytes()).is_err());
        assert!(read_obj("v 0 0 0\nf 1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn round_trip() {
        let m = build_unit_grid_mesh(5).unwrap();
        let mut buf = Vec::new();
        write_obj(&mut buf, &m).unwrap();
        let back = read_obj(buf.as_slice()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
    }
}
