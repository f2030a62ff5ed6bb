//! PLY (ASCII or binary little-endian) and Wavefront OBJ triangle meshes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::TriMesh;
use crate::geom::{TetMesh, Vec3, FACE_VERTICES};
use crate::{Error, Result};

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { file: file.to_path_buf(), line, column: 1, message: message.into() }
}

/// Writes binary little-endian PLY with double-precision vertices.
pub fn write_ply(mut w: impl Write, mesh: &TriMesh) -> std::io::Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    let mut buf = Vec::with_capacity(mesh.vertices.len() * 24 + mesh.triangles.len() * 13);
    for p in &mesh.vertices {
        for c in p.iter() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        buf.push(3);
        for &v in t {
            buf.extend_from_slice(&(v as i32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn write_obj(mut w: impl Write, mesh: &TriMesh) -> std::io::Result<()> {
    for p in &mesh.vertices {
        writeln!(w, "v {:?} {:?} {:?}", p.x, p.y, p.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads a PLY mesh; polygons are fan-triangulated and properties other
/// than `x`, `y`, `z` and the face index list are ignored.
pub fn read_ply(r: impl Read, file: &Path) -> Result<TriMesh> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut line_no = 0;
    let mut next_line = |r: &mut BufReader<_>, line: &mut String| -> Result<usize> {
        line.clear();
        line_no += 1;
        if r.read_line(line).map_err(|e| Error::io(file, e))? == 0 {
            return Err(parse_err(file, line_no, "unexpected end of header"));
        }
        Ok(line_no)
    };
    next_line(&mut r, &mut line)?;
    if line.trim() != "ply" {
        return Err(parse_err(file, 1, "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let n = next_line(&mut r, &mut line)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(parse_err(file, n, format!("unsupported PLY format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| parse_err(file, n, "bad element count"))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", c, i, name] => {
                let (c, i) = (
                    Scalar::parse(c).ok_or_else(|| parse_err(file, n, "bad list count type"))?,
                    Scalar::parse(i).ok_or_else(|| parse_err(file, n, "bad list item type"))?,
                );
                let el = elements.last_mut().ok_or_else(|| parse_err(file, n, "property before element"))?;
                el.props.push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(file, n, format!("unknown type '{ty}'")))?;
                let el = elements.last_mut().ok_or_else(|| parse_err(file, n, "property before element"))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(parse_err(file, n, format!("unrecognized header line '{}'", line.trim()))),
        }
    }
    let binary = binary.ok_or_else(|| parse_err(file, line_no, "missing format line"))?;
    let header_lines = line_no;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(file, e))?;
    let mut reader = BodyReader { binary, body: &body, pos: 0, file, line: header_lines };

    let mut mesh = TriMesh::default();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = reader.scalar(*ty)?;
                        if let Some(k) = ["x", "y", "z"].iter().position(|c| c == name) {
                            xyz[k] = v;
                        }
                    }
                    Property::List(name, cty, ity) => {
                        let n = reader.scalar(*cty)? as usize;
                        let mut ids = Vec::with_capacity(n);
                        for _ in 0..n {
                            ids.push(reader.scalar(*ity)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            for k in 1..n.saturating_sub(1) {
                                mesh.triangles.push([ids[0] as u32, ids[k] as u32, ids[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                mesh.vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            reader.end_record();
        }
    }
    TriMesh::new(mesh.vertices, mesh.triangles).map_err(|e| parse_err(file, header_lines, e.to_string()))
}

struct BodyReader<'a> {
    binary: bool,
    body: &'a [u8],
    pos: usize,
    file: &'a Path,
    line: usize,
}

impl BodyReader<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        if self.binary {
            let n = ty.size();
            if self.pos + n > self.body.len() {
                return Err(parse_err(self.file, self.line, "truncated binary body"));
            }
            let v = ty.read_le(&self.body[self.pos..self.pos + n]);
            self.pos += n;
            return Ok(v);
        }
        while self.pos < self.body.len() && self.body[self.pos].is_ascii_whitespace() {
            if self.body[self.pos] == b'\n' {
                self.line += 1;
            }
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.body.len() && !self.body[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let tok = std::str::from_utf8(&self.body[start..self.pos]).unwrap_or("");
        tok.parse().map_err(|_| parse_err(self.file, self.line + 1, format!("bad number '{tok}'")))
    }

    fn end_record(&mut self) {}
}

/// Reads `v` and `f` records of an OBJ file; other records are ignored.
pub fn read_obj(r: impl Read, file: &Path) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| Error::io(file, e))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok.take(3).map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| {
                    parse_err(file, n + 1, "bad vertex coordinate")
                })?;
                if c.len() != 3 {
                    return Err(parse_err(file, n + 1, "vertex needs three coordinates"));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let nv = mesh.vertices.len() as i64;
                let ids: Vec<u32> = tok
                    .map(|t| {
                        let i: i64 = t.split('/').next().unwrap_or("").parse().map_err(|_| parse_err(file, n + 1, "bad face index"))?;
                        let i = if i < 0 { nv + i } else { i - 1 };
                        if i < 0 || i >= nv {
                            return Err(parse_err(file, n + 1, "face index out of range"));
                        }
                        Ok(i as u32)
                    })
                    .collect::<Result<_>>()?;
                for k in 1..ids.len().saturating_sub(1) {
                    mesh.triangles.push([ids[0], ids[k], ids[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Loads a `.ply` or `.obj` mesh.
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_str() {
        "ply" => read_ply(f, path),
        "obj" => read_obj(f, path),
        other => Err(Error::invalid(format!("unsupported mesh extension '.{other}' for {}", path.display()))),
    }
}

/// Saves a mesh as `.ply` (binary) or `.obj`.
pub fn save_mesh(path: &Path, mesh: &TriMesh) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    match extension(path).as_str() {
        "ply" => write_ply(&mut w, mesh),
        "obj" => write_obj(&mut w, mesh),
        other => return Err(Error::invalid(format!("unsupported mesh extension '.{other}' for {}", path.display()))),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

/// Debug view of a tetrahedral mesh: every tet shrunk toward its centroid
/// by `shrink` and written as four separate faces.
pub fn write_tet_ply(path: &Path, mesh: &TetMesh, positions: &[Vec3], shrink: f64) -> Result<()> {
    let mut out = TriMesh::default();
    for t in 0..mesh.len() {
        let p = mesh.tet_points(t, positions);
        let c = (p[0] + p[1] + p[2] + p[3]) / 4.0;
        let base = out.vertices.len() as u32;
        out.vertices.extend(p.iter().map(|v| c + (v - c) * shrink));
        out.triangles.extend(FACE_VERTICES.iter().map(|f| f.map(|k| base + k as u32)));
    }
    save_mesh(path, &out)
}
