//! Readers and writers: Wavefront OBJ surfaces, TetGen-style `.node`/`.ele`
//! tetrahedral meshes, legacy ASCII VTK and CSV records.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{SimulationOutput, TetMesh, TriSurface};
use crate::error::{Error, Result};
use crate::geometry::Point3;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, line: usize, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "missing value"))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

fn parse_usize(path: &Path, line: usize, tok: Option<&str>) -> Result<usize> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "missing index"))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid index '{tok}'")))
}

/// Loads a triangle surface from an OBJ file (`v` and `f` records only).
pub fn load_surface(path: impl AsRef<Path>) -> Result<TriSurface> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    let mut face_no = 0usize;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let raw = raw.split('#').next().unwrap_or("");
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(path, line, toks.next())?;
                let y = parse_f64(path, line, toks.next())?;
                let z = parse_f64(path, line, toks.next())?;
                verts.push(Point3::new(x, y, z));
            }
            Some("f") => {
                face_no += 1;
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(parse_err(
                        path,
                        line,
                        format!("face {face_no} has {} vertices; only triangles are supported", idx.len()),
                    ));
                }
                let mut tri = [0usize; 3];
                for (k, tok) in idx.iter().enumerate() {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("invalid face index '{tok}'")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        verts.len() as i64 + i
                    } else {
                        -1
                    };
                    if resolved < 0 || resolved as usize >= verts.len() {
                        return Err(parse_err(path, line, format!("face {face_no} index {i} out of range")));
                    }
                    tri[k] = resolved as usize;
                }
                tris.push(tri);
            }
            _ => {}
        }
    }
    if tris.is_empty() {
        return Err(parse_err(path, text.lines().count(), "no faces found"));
    }
    Ok(TriSurface::from_parts(verts, tris))
}

pub fn write_surface_obj(surface: &TriSurface, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for v in &surface.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &surface.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    write(path.as_ref(), &s)
}

/// `mesh.node` / `mesh.ele` paths for a base path given with or without extension.
pub fn node_ele_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let p = path.as_ref();
    let base = match p.extension().and_then(|e| e.to_str()) {
        Some("node") | Some("ele") => p.with_extension(""),
        _ => p.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = base.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("node"), with("ele"))
}

/// Loads a tetrahedral mesh from a `.node`/`.ele` pair.
///
/// `.node`: header `<count> 3 0 0`, then rows `<index> <x> <y> <z>`.
/// `.ele`: header `<count> 4 0`, then rows `<index> <n0> <n1> <n2> <n3>`.
/// Indices are zero based; `#` starts a comment.
pub fn load_tet_mesh(path: impl AsRef<Path>) -> Result<TetMesh> {
    let (node_path, ele_path) = node_ele_paths(path);
    let nodes = read_rows(&node_path, 3, |p, ln, toks| {
        Ok(Point3::new(
            parse_f64(p, ln, toks.next())?,
            parse_f64(p, ln, toks.next())?,
            parse_f64(p, ln, toks.next())?,
        ))
    })?;
    let tets = read_rows(&ele_path, 4, |p, ln, toks| {
        let mut t = [0usize; 4];
        for v in t.iter_mut() {
            *v = parse_usize(p, ln, toks.next())?;
        }
        Ok(t)
    })?;
    for (e, t) in tets.iter().enumerate() {
        if let Some(&i) = t.iter().find(|&&i| i >= nodes.len()) {
            return Err(parse_err(&ele_path, e + 2, format!("node index {i} out of range")));
        }
    }
    if let Some(e) = (0..tets.len()).find(|&e| {
        let [a, b, c, d] = tets[e].map(|i| nodes[i]);
        crate::geometry::tet_signed_volume(&a, &b, &c, &d) <= 0.0
    }) {
        return Err(parse_err(&ele_path, e + 2, format!("tet {e} has non-positive volume")));
    }
    TetMesh::new(nodes, tets)
}

fn read_rows<T>(
    path: &Path,
    dim: usize,
    mut row: impl FnMut(&Path, usize, &mut std::str::SplitWhitespace<'_>) -> Result<T>,
) -> Result<Vec<T>> {
    let text = read(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let mut h = header.split_whitespace();
    let count = parse_usize(path, hl, h.next())?;
    let d = parse_usize(path, hl, h.next())?;
    if d != dim {
        return Err(parse_err(path, hl, format!("expected dimension {dim}, found {d}")));
    }
    let mut out = Vec::with_capacity(count);
    for (ln, l) in lines.by_ref().take(count) {
        let mut toks = l.split_whitespace();
        let idx = parse_usize(path, ln, toks.next())?;
        if idx != out.len() {
            return Err(parse_err(path, ln, format!("expected index {}, found {idx}", out.len())));
        }
        out.push(row(path, ln, &mut toks)?);
    }
    if out.len() != count {
        return Err(parse_err(path, hl, format!("header declares {count} rows, found {}", out.len())));
    }
    Ok(out)
}

pub fn write_tet_mesh(mesh: &TetMesh, path: impl AsRef<Path>) -> Result<()> {
    let (node_path, ele_path) = node_ele_paths(path);
    let mut s = format!("{} 3 0 0\n", mesh.nodes.len());
    for (i, p) in mesh.nodes.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {}", p.x, p.y, p.z);
    }
    write(&node_path, &s)?;
    let mut s = format!("{} 4 0\n", mesh.tets.len());
    for (e, t) in mesh.tets.iter().enumerate() {
        let _ = writeln!(s, "{e} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    write(&ele_path, &s)
}

/// Cell connectivity for a VTK unstructured grid.
#[derive(Debug, Clone, Copy)]
pub enum VtkCells<'a> {
    Tets(&'a [[usize; 4]]),
    Triangles(&'a [[usize; 3]]),
}

#[derive(Debug, Clone)]
pub enum Field {
    Scalar(String, Vec<f64>),
    Vector(String, Vec<Point3>),
}

impl Field {
    pub fn scalar(name: &str, v: Vec<f64>) -> Self {
        Field::Scalar(name.to_string(), v)
    }

    pub fn vector(name: &str, v: Vec<Point3>) -> Self {
        Field::Vector(name.to_string(), v)
    }

    fn len(&self) -> usize {
        match self {
            Field::Scalar(_, v) => v.len(),
            Field::Vector(_, v) => v.len(),
        }
    }

    fn emit(&self, s: &mut String) {
        match self {
            Field::Scalar(name, v) => {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v {
                    let _ = writeln!(s, "{x}");
                }
            }
            Field::Vector(name, v) => {
                let _ = writeln!(s, "VECTORS {name} double");
                for x in v {
                    let _ = writeln!(s, "{} {} {}", x.x, x.y, x.z);
                }
            }
        }
    }
}

/// Writes a legacy ASCII VTK unstructured grid.
pub fn write_vtk(
    path: impl AsRef<Path>,
    points: &[Point3],
    cells: VtkCells<'_>,
    point_fields: &[Field],
    cell_fields: &[Field],
) -> Result<()> {
    let (ncells, per, kind) = match cells {
        VtkCells::Tets(t) => (t.len(), 4, 10),
        VtkCells::Triangles(t) => (t.len(), 3, 5),
    };
    for f in point_fields {
        if f.len() != points.len() {
            return Err(Error::Argument("point field length does not match point count".into()));
        }
    }
    for f in cell_fields {
        if f.len() != ncells {
            return Err(Error::Argument("cell field length does not match cell count".into()));
        }
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\ncutfem output\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", points.len());
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    let _ = writeln!(s, "CELLS {ncells} {}", ncells * (per + 1));
    match cells {
        VtkCells::Tets(t) => t.iter().for_each(|c| {
            let _ = writeln!(s, "4 {} {} {} {}", c[0], c[1], c[2], c[3]);
        }),
        VtkCells::Triangles(t) => t.iter().for_each(|c| {
            let _ = writeln!(s, "3 {} {} {}", c[0], c[1], c[2]);
        }),
    }
    let _ = writeln!(s, "CELL_TYPES {ncells}");
    for _ in 0..ncells {
        let _ = writeln!(s, "{kind}");
    }
    if !point_fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", points.len());
        point_fields.iter().for_each(|f| f.emit(&mut s));
    }
    if !cell_fields.is_empty() {
        let _ = writeln!(s, "CELL_DATA {ncells}");
        cell_fields.iter().for_each(|f| f.emit(&mut s));
    }
    write(path.as_ref(), &s)
}

pub fn write_tet_mesh_vtk(mesh: &TetMesh, point_fields: &[Field], cell_fields: &[Field], path: impl AsRef<Path>) -> Result<()> {
    write_vtk(path, &mesh.nodes, VtkCells::Tets(&mesh.tets), point_fields, cell_fields)
}

pub fn write_surface_vtk(surface: &TriSurface, point_fields: &[Field], path: impl AsRef<Path>) -> Result<()> {
    write_vtk(
        path,
        &surface.vertices,
        VtkCells::Triangles(&surface.triangles),
        point_fields,
        &[],
    )
}

/// Writes records as RFC 4180 CSV with a header row.
pub fn write_csv(records: &SimulationOutput, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(&records.columns).map_err(to_err)?;
    for row in &records.rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_box_mesh, generate_sphere_surface};

    #[test]
    fn tet_mesh_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_box_mesh([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let p = dir.path().join("cube");
        write_tet_mesh(&m, &p).unwrap();
        let back = load_tet_mesh(p.with_extension("node")).unwrap();
        assert_eq!(back.tets, m.tets);
        for (a, b) in back.nodes.iter().zip(&m.nodes) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn obj_quad_face_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("quad.obj");
        fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        let err = load_surface(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":5:"), "{msg}");
        assert!(msg.contains("face 1 has 4 vertices"), "{msg}");
    }

    #[test]
    fn obj_round_trip_and_slash_indices() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_sphere_surface(Point3::zeros(), 1.0, 1).unwrap();
        let p = dir.path().join("s.obj");
        write_surface_obj(&s, &p).unwrap();
        let back = load_surface(&p).unwrap();
        assert_eq!(back.triangles, s.triangles);

        let p2 = dir.path().join("t.obj");
        fs::write(&p2, "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n").unwrap();
        assert_eq!(load_surface(&p2).unwrap().triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn malformed_node_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("bad");
        fs::write(base.with_extension("node"), "2 3 0 0\n0 0 0 0\n1 1 x 0\n").unwrap();
        fs::write(base.with_extension("ele"), "0 4 0\n").unwrap();
        let msg = load_tet_mesh(&base).unwrap_err().to_string();
        assert!(msg.contains(":3:"), "{msg}");
    }

    #[test]
    fn icosphere_vtk_header() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_sphere_surface(Point3::zeros(), 1.0, 0).unwrap();
        let p = dir.path().join("s.vtk");
        write_surface_vtk(&s, &[], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("POINTS 12 double"));
        assert!(text.contains("CELLS 20 80"));
        let types = text.split("CELL_TYPES 20\n").nth(1).unwrap();
        assert!(types.lines().take(20).all(|l| l == "5"));
    }

    #[test]
    fn csv_quotes_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = SimulationOutput::new(&["step", "time", "probe, z"]);
        out.push(vec![0.0, 0.0, 1.5]).unwrap();
        out.push(vec![1.0, 0.1, 2.5]).unwrap();
        assert!(out.push(vec![2.0, 0.05, 0.0]).is_err());
        let p = dir.path().join("o.csv");
        write_csv(&out, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "step,time,\"probe, z\"\n0,0,1.5\n1,0.1,2.5\n");
    }
}
