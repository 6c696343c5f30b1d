use std::io::{BufRead, Write};

use super::{fan, IoError};
use crate::mesh::TriMesh;
use crate::Vec3;

/// Per-point or per-cell attribute array.
#[derive(Debug, Clone, PartialEq)]
pub enum Attribute {
    Scalars(Vec<f64>),
    Vectors(Vec<Vec3>),
}

impl Attribute {
    fn len(&self) -> usize {
        match self {
            Self::Scalars(v) => v.len(),
            Self::Vectors(v) => v.len(),
        }
    }
}

/// A triangle surface with named point and cell arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyData {
    pub mesh: TriMesh,
    pub title: String,
    pub point_data: Vec<(String, Attribute)>,
    pub cell_data: Vec<(String, Attribute)>,
}

impl PolyData {
    pub fn new(mesh: TriMesh) -> Self {
        Self {
            mesh,
            title: "surface".into(),
            point_data: Vec::new(),
            cell_data: Vec::new(),
        }
    }

    pub fn with_point_scalars(mut self, name: &str, values: Vec<f64>) -> Self {
        self.point_data.push((name.into(), Attribute::Scalars(values)));
        self
    }

    pub fn with_point_vectors(mut self, name: &str, values: Vec<Vec3>) -> Self {
        self.point_data.push((name.into(), Attribute::Vectors(values)));
        self
    }

    pub fn with_cell_scalars(mut self, name: &str, values: Vec<f64>) -> Self {
        self.cell_data.push((name.into(), Attribute::Scalars(values)));
        self
    }

    pub fn with_cell_vectors(mut self, name: &str, values: Vec<Vec3>) -> Self {
        self.cell_data.push((name.into(), Attribute::Vectors(values)));
        self
    }

    pub fn point_scalars(&self, name: &str) -> Option<&[f64]> {
        self.point_data.iter().find_map(|(n, a)| match a {
            Attribute::Scalars(v) if n == name => Some(v.as_slice()),
            _ => None,
        })
    }

    pub fn point_vectors(&self, name: &str) -> Option<&[Vec3]> {
        self.point_data.iter().find_map(|(n, a)| match a {
            Attribute::Vectors(v) if n == name => Some(v.as_slice()),
            _ => None,
        })
    }
}

fn write_attributes<W: Write>(w: &mut W, attrs: &[(String, Attribute)]) -> std::io::Result<()> {
    for (name, a) in attrs {
        let name = name.replace(char::is_whitespace, "_");
        match a {
            Attribute::Scalars(v) => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for x in v {
                    writeln!(w, "{x}")?;
                }
            }
            Attribute::Vectors(v) => {
                writeln!(w, "VECTORS {name} double")?;
                for x in v {
                    writeln!(w, "{} {} {}", x.x, x.y, x.z)?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_vtk<W: Write>(mut w: W, data: &PolyData) -> Result<(), IoError> {
    let mesh = &data.mesh;
    for (name, a) in &data.point_data {
        if a.len() != mesh.vertex_count() {
            return Err(IoError::Format(format!("point array {name} has {} values", a.len())));
        }
    }
    for (name, a) in &data.cell_data {
        if a.len() != mesh.triangle_count() {
            return Err(IoError::Format(format!("cell array {name} has {} values", a.len())));
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", data.title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET POLYDATA")?;
    writeln!(w, "POINTS {} double", mesh.vertex_count())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    let nt = mesh.triangle_count();
    writeln!(w, "POLYGONS {} {}", nt, 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    if !data.point_data.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.vertex_count())?;
        write_attributes(&mut w, &data.point_data)?;
    }
    if !data.cell_data.is_empty() {
        writeln!(w, "CELL_DATA {nt}")?;
        write_attributes(&mut w, &data.cell_data)?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace token stream that remembers line numbers.
struct Tokens {
    items: Vec<(usize, String)>,
    pos: usize,
}

impl Tokens {
    fn next(&mut self) -> Result<(usize, &str), IoError> {
        let last = self.items.last().map_or(0, |t| t.0);
        let item = self
            .items
            .get(self.pos)
            .ok_or_else(|| IoError::parse(last, "unexpected end of file"))?;
        self.pos += 1;
        Ok((item.0, item.1.as_str()))
    }

    fn peek(&self) -> Option<&str> {
        self.items.get(self.pos).map(|t| t.1.as_str())
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<T, IoError>
    where
        T::Err: std::fmt::Display,
    {
        let (line, t) = self.next()?;
        t.parse().map_err(|e| IoError::parse(line, format!("bad number {t:?}: {e}")))
    }

    fn keyword(&mut self, expect: &str) -> Result<(), IoError> {
        let (line, t) = self.next()?;
        if t.eq_ignore_ascii_case(expect) {
            Ok(())
        } else {
            Err(IoError::parse(line, format!("expected {expect}, found {t:?}")))
        }
    }
}

fn read_attributes(tok: &mut Tokens, n: usize) -> Result<Vec<(String, Attribute)>, IoError> {
    let mut out = Vec::new();
    loop {
        let Some(kind) = tok.peek().map(str::to_ascii_uppercase) else {
            break;
        };
        match kind.as_str() {
            "SCALARS" => {
                tok.next()?;
                let name = tok.next()?.1.to_string();
                tok.next()?;
                // optional component count, then optional lookup table
                if tok.peek().is_some_and(|t| t.parse::<usize>().is_ok()) {
                    let (line, c) = tok.next()?;
                    if c != "1" {
                        return Err(IoError::parse(line, "only single-component scalars are supported"));
                    }
                }
                if tok.peek().is_some_and(|t| t.eq_ignore_ascii_case("LOOKUP_TABLE")) {
                    tok.next()?;
                    tok.next()?;
                }
                let v = (0..n).map(|_| tok.number()).collect::<Result<_, _>>()?;
                out.push((name, Attribute::Scalars(v)));
            }
            "VECTORS" | "NORMALS" => {
                tok.next()?;
                let name = tok.next()?.1.to_string();
                tok.next()?;
                let v = (0..n)
                    .map(|_| Ok(Vec3::new(tok.number()?, tok.number()?, tok.number()?)))
                    .collect::<Result<_, IoError>>()?;
                out.push((name, Attribute::Vectors(v)));
            }
            _ => break,
        }
    }
    Ok(out)
}

/// Reads legacy ASCII POLYDATA with POINTS, POLYGONS and optional
/// point/cell SCALARS and VECTORS sections.
pub fn read_vtk<R: BufRead>(reader: R) -> Result<PolyData, IoError> {
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    if lines.len() < 4 || !lines[0].trim_start().starts_with("# vtk DataFile") {
        return Err(IoError::parse(1, "missing legacy VTK header"));
    }
    let title = lines[1].clone();
    if !lines[2].trim().eq_ignore_ascii_case("ASCII") {
        return Err(IoError::parse(3, "only ASCII files are supported"));
    }
    let items = lines[3..]
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 4, t.to_string())))
        .collect();
    let mut tok = Tokens { items, pos: 0 };
    tok.keyword("DATASET")?;
    let (line, kind) = tok.next()?;
    if !kind.eq_ignore_ascii_case("POLYDATA") {
        return Err(IoError::parse(line, format!("dataset {kind} is not POLYDATA")));
    }
    tok.keyword("POINTS")?;
    let np: usize = tok.number()?;
    tok.next()?;
    let vertices: Vec<Vec3> = (0..np)
        .map(|_| Ok(Vec3::new(tok.number()?, tok.number()?, tok.number()?)))
        .collect::<Result<_, IoError>>()?;
    let mut triangles = Vec::new();
    let mut point_data = Vec::new();
    let mut cell_data = Vec::new();
    while let Ok((line, key)) = tok.next() {
        match key.to_ascii_uppercase().as_str() {
            "POLYGONS" | "TRIANGLE_STRIPS" if !triangles.is_empty() => {
                return Err(IoError::parse(line, "more than one cell section"));
            }
            "POLYGONS" => {
                let nc: usize = tok.number()?;
                tok.next()?;
                for _ in 0..nc {
                    let line = tok.items.get(tok.pos).map_or(0, |t| t.0);
                    let k: usize = tok.number()?;
                    let poly: Vec<usize> = (0..k).map(|_| tok.number()).collect::<Result<_, _>>()?;
                    if k < 3 {
                        return Err(IoError::parse(line, "polygon with fewer than three points"));
                    }
                    if let Some(&bad) = poly.iter().find(|&&i| i >= np) {
                        return Err(IoError::parse(line, format!("point index {bad} out of range")));
                    }
                    triangles.extend(fan(&poly));
                }
            }
            "POINT_DATA" => {
                let n: usize = tok.number()?;
                if n != np {
                    return Err(IoError::parse(line, "POINT_DATA count differs from POINTS"));
                }
                point_data.extend(read_attributes(&mut tok, n)?);
            }
            "CELL_DATA" => {
                let n: usize = tok.number()?;
                if n != triangles.len() {
                    return Err(IoError::parse(line, "CELL_DATA count differs from triangle count"));
                }
                cell_data.extend(read_attributes(&mut tok, n)?);
            }
            other => return Err(IoError::parse(line, format!("unsupported section {other}"))),
        }
    }
    Ok(PolyData {
        mesh: TriMesh::new(vertices, triangles)?,
        title,
        point_data,
        cell_data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_grid_mesh, open_cylinder};

    fn to_string(d: &PolyData) -> String {
        let mut buf = Vec::new();
        write_vtk(&mut buf, d).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mesh = open_cylinder(1.3, 2.0, 12, 5).unwrap();
        let nv = mesh.vertex_count();
        let nt = mesh.triangle_count();
        let data = PolyData::new(mesh.clone())
            .with_point_scalars("time", (0..nv).map(|i| i as f64 * 0.1 + 1e-17).collect())
            .with_point_vectors("fiber", mesh.vertex_normals())
            .with_cell_scalars("speed", (0..nt).map(|t| (t as f64).sqrt()).collect())
            .with_cell_vectors("grad", (0..nt).map(|t| mesh.normal(t)).collect());
        let text = to_string(&data);
        let back = read_vtk(text.as_bytes()).unwrap();
        assert_eq!(back, data);
        assert_eq!(to_string(&back), text);
    }

    #[test]
    fn non_finite_values_survive() {
        let mesh = build_unit_grid_mesh(2).unwrap();
        let data = PolyData::new(mesh).with_point_scalars("t", vec![0.0, f64::INFINITY, 1.5, f64::NAN]);
        let back = read_vtk(to_string(&data).as_bytes()).unwrap();
        let t = back.point_scalars("t").unwrap();
        assert!(t[1].is_infinite() && t[3].is_nan());
    }

    #[test]
    fn reads_foreign_layout() {
        let src = "# vtk DataFile Version 2.0\nquad\nASCII\nDATASET POLYDATA\nPOINTS 4 float\n0 0 0 1 0 0\n1 1 0 0 1 0\nPOLYGONS 1 5\n4 0 1 2 3\nPOINT_DATA 4\nSCALARS s float\nLOOKUP_TABLE default\n1 2 3 4\n";
        let d = read_vtk(src.as_bytes()).unwrap();
        assert_eq!(d.mesh.triangle_count(), 2);
        assert_eq!(d.point_scalars("s").unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_vtk("hello\n".as_bytes()).is_err());
        let src = "# vtk DataFile Version 3.0\nx\nBINARY\nDATASET POLYDATA\n";
        assert!(read_vtk(src.as_bytes()).is_err());
        let src = "# vtk DataFile Version 3.0\nx\nASCII\nDATASET POLYDATA\nPOINTS 3 double\n0 0 0 1 0 0 0 1 0\nPOLYGONS 1 4\n3 0 1 7\n";
        assert!(matches!(read_vtk(src.as_bytes()), Err(IoError::Parse { .. })));
        let src = "# vtk DataFile Version 3.0\nx\nASCII\nDATASET UNSTRUCTURED_GRID\n";
        assert!(read_vtk(src.as_bytes()).is_err());
    }

    #[test]
    fn size_mismatch_on_write() {
        let mesh = build_unit_grid_mesh(2).unwrap();
        let data = PolyData::new(mesh).with_point_scalars("t", vec![0.0]);
        assert!(write_vtk(Vec::new(), &data).is_err());
    }
}
