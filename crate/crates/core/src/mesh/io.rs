use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
    /// ASCII PLY only.
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(Self::Off),
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(Self::Off),
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            other => Err(Error::InvalidInput(format!("unknown mesh format '{other}'"))),
        }
    }
}

/// Reads a mesh, inferring the format from the extension when `format` is
/// `None`. Vertex order is preserved exactly.
pub fn load_mesh<T: Real>(path: &Path, format: Option<MeshFormat>) -> Result<TriangleMesh<T>> {
    let format = match format.or_else(|| MeshFormat::from_path(path)) {
        Some(f) => f,
        None => return Err(Error::parse(Some(path), "cannot infer mesh format from extension")),
    };
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mesh")
        .to_string();
    parse_mesh(&text, format, name).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(Some(path), message),
        other => other,
    })
}

pub fn parse_mesh<T: Real>(text: &str, format: MeshFormat, name: impl Into<String>) -> Result<TriangleMesh<T>> {
    let (vertices, faces) = match format {
        MeshFormat::Off => parse_off(text)?,
        MeshFormat::Obj => parse_obj(text)?,
        MeshFormat::Ply => parse_ply(text)?,
    };
    TriangleMesh::new(vertices, faces, name)
}

/// Serializes as ASCII OFF with full round-trip precision.
pub fn write_off<T: Real>(mesh: &TriangleMesh<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF");
    let _ = writeln!(s, "{} {} 0", mesh.num_vertices(), mesh.num_faces());
    for v in mesh.vertices() {
        let _ = writeln!(
            s,
            "{:?} {:?} {:?}",
            v[0].to_f64_lossless(),
            v[1].to_f64_lossless(),
            v[2].to_f64_lossless()
        );
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

type Raw<T> = (Vec<[T; 3]>, Vec<[usize; 3]>);

fn perr(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::parse(None, format!("line {line}: {msg}"))
}

fn num<T: Real>(tok: Option<&str>, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| perr(line, "missing number"))?;
    let v: f64 = tok.parse().map_err(|_| perr(line, format!("invalid number '{tok}'")))?;
    Ok(T::lit(v))
}

fn int(tok: Option<&str>, line: usize) -> Result<i64> {
    let tok = tok.ok_or_else(|| perr(line, "missing integer"))?;
    tok.parse().map_err(|_| perr(line, format!("invalid integer '{tok}'")))
}

fn index(v: i64, line: usize) -> Result<usize> {
    usize::try_from(v).map_err(|_| perr(line, format!("negative vertex index {v}")))
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_off<T: Real>(text: &str) -> Result<Raw<T>> {
    let mut lines = content_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty file"))?;
    let mut toks = header.split_whitespace();
    let magic = toks.next().unwrap_or("");
    if !magic.ends_with("OFF") {
        return Err(perr(ln, "missing OFF header"));
    }
    // counts may share the header line
    let rest: Vec<&str> = toks.collect();
    let (ln, counts) = if rest.is_empty() {
        let (ln, l) = lines.next().ok_or_else(|| perr(ln, "missing counts"))?;
        (ln, l.split_whitespace().collect::<Vec<_>>())
    } else {
        (ln, rest)
    };
    let nv = index(int(counts.first().copied(), ln)?, ln)?;
    let nf = index(int(counts.get(1).copied(), ln)?, ln)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| perr(ln, "unexpected end of vertex list"))?;
        let mut t = l.split_whitespace();
        vertices.push([num(t.next(), ln)?, num(t.next(), ln)?, num(t.next(), ln)?]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| perr(ln, "unexpected end of face list"))?;
        let mut t = l.split_whitespace();
        let count = int(t.next(), ln)?;
        if count != 3 {
            return Err(perr(ln, format!("only triangles are supported, got {count}-gon")));
        }
        faces.push([
            index(int(t.next(), ln)?, ln)?,
            index(int(t.next(), ln)?, ln)?,
            index(int(t.next(), ln)?, ln)?,
        ]);
    }
    Ok((vertices, faces))
}

fn parse_obj<T: Real>(text: &str) -> Result<Raw<T>> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, l) in content_lines(text) {
        let mut t = l.split_whitespace();
        match t.next() {
            Some("v") => vertices.push([num(t.next(), ln)?, num(t.next(), ln)?, num(t.next(), ln)?]),
            Some("f") => {
                let refs: Vec<&str> = t.collect();
                if refs.len() != 3 {
                    return Err(perr(ln, format!("only triangles are supported, got {} vertices", refs.len())));
                }
                let mut face = [0usize; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let v = int(r.split('/').next(), ln)?;
                    // 1-based; negative values count back from the latest vertex
                    let resolved = if v > 0 {
                        v - 1
                    } else if v < 0 {
                        vertices.len() as i64 + v
                    } else {
                        return Err(perr(ln, "OBJ vertex index 0 is invalid"));
                    };
                    *slot = index(resolved, ln)?;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

fn parse_ply<T: Real>(text: &str) -> Result<Raw<T>> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(perr(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_end = false;
    for (ln, l) in lines.by_ref() {
        let mut t = l.split_whitespace();
        match t.next() {
            Some("format") => {
                if t.next() != Some("ascii") {
                    return Err(perr(ln, "only ASCII PLY is supported"));
                }
            }
            Some("element") => {
                let name = t.next().ok_or_else(|| perr(ln, "element without name"))?.to_string();
                let count = index(int(t.next(), ln)?, ln)?;
                elements.push(Element {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| perr(ln, "property before element"))?;
                let name = l.split_whitespace().last().unwrap_or("").to_string();
                el.props.push(name);
            }
            Some("end_header") => {
                saw_end = true;
                break;
            }
            _ => {}
        }
    }
    if !saw_end {
        return Err(perr(0, "missing end_header"));
    }
    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (ln, l) = body.next().ok_or_else(|| perr(0, format!("unexpected end of '{}' data", el.name)))?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let mut xyz = [T::zero(); 3];
                    for (slot, axis) in xyz.iter_mut().zip(["x", "y", "z"]) {
                        let pos = el
                            .props
                            .iter()
                            .position(|p| p == axis)
                            .ok_or_else(|| perr(ln, format!("vertex element lacks '{axis}'")))?;
                        *slot = num(toks.get(pos).copied(), ln)?;
                    }
                    vertices.push(xyz);
                }
                "face" => {
                    let count = int(toks.first().copied(), ln)?;
                    if count != 3 {
                        return Err(perr(ln, format!("only triangles are supported, got {count}-gon")));
                    }
                    faces.push([
                        index(int(toks.get(1).copied(), ln)?, ln)?,
                        index(int(toks.get(2).copied(), ln)?, ln)?,
                        index(int(toks.get(3).copied(), ln)?, ln)?,
                    ]);
                }
                _ => {}
            }
        }
    }
    Ok((vertices, faces))
}
