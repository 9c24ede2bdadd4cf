//! STL (binary and ASCII) and OBJ (`v`/`f` records) readers, STL writers.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::geometry::Vec3;

use super::{MeshError, TriangleMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Stl,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "stl" => Some(MeshFormat::Stl),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

impl FromStr for MeshFormat {
    type Err = MeshError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stl" => Ok(MeshFormat::Stl),
            "obj" => Ok(MeshFormat::Obj),
            other => Err(MeshError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriangleMesh, MeshError> {
    let bytes = std::fs::read(path)?;
    match format {
        MeshFormat::Stl => parse_stl(&bytes),
        MeshFormat::Obj => {
            let text = std::str::from_utf8(&bytes).map_err(|e| MeshError::Parse {
                offset: e.valid_up_to(),
                message: "invalid UTF-8".into(),
            })?;
            parse_obj(text)
        }
    }
}

fn perr(offset: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { offset, message: message.into() }
}

/// Parses binary or ASCII STL. File normals are ignored.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let binary_sized = bytes.len() >= 84 && {
        let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        bytes.len() == 84 + 50 * n
    };
    let looks_ascii = bytes.trim_ascii_start().starts_with(b"solid");
    if looks_ascii && !binary_sized {
        return parse_stl_ascii(bytes);
    }
    parse_stl_binary(bytes)
}

fn parse_stl_binary(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    if bytes.len() < 84 {
        return Err(perr(bytes.len(), "binary STL shorter than its 84-byte header"));
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let need = 84 + 50 * n;
    if bytes.len() < need {
        return Err(perr(bytes.len(), format!("binary STL declares {n} facets, needs {need} bytes")));
    }
    let mut verts = Vec::with_capacity(3 * n);
    let mut tris = Vec::with_capacity(n);
    for f in 0..n {
        let base = 84 + 50 * f;
        for k in 0..3 {
            let o = base + 12 + 12 * k;
            let rd = |i: usize| f32::from_le_bytes(bytes[o + 4 * i..o + 4 * i + 4].try_into().unwrap()) as f64;
            let v = Vec3::new(rd(0), rd(1), rd(2));
            if !v.iter().all(|c| c.is_finite()) {
                return Err(perr(o, "non-finite vertex coordinate"));
            }
            verts.push(v);
        }
        let b = (3 * f) as u32;
        tris.push([b, b + 1, b + 2]);
    }
    TriangleMesh::new(verts, tris)
}

fn parse_stl_ascii(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|e| perr(e.valid_up_to(), "invalid UTF-8 in ASCII STL"))?;
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    let mut pending = 0usize;
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("vertex") => {
                let mut c = [0.0; 3];
                for slot in c.iter_mut() {
                    let tok = it.next().ok_or_else(|| perr(start, "vertex needs 3 coordinates"))?;
                    *slot = tok.parse::<f64>().map_err(|_| perr(start, format!("bad coordinate `{tok}`")))?;
                }
                verts.push(Vec3::from(c));
                pending += 1;
            }
            Some("endloop") => {
                if pending != 3 {
                    return Err(perr(start, format!("facet loop has {pending} vertices, expected 3")));
                }
                let b = (verts.len() - 3) as u32;
                tris.push([b, b + 1, b + 2]);
                pending = 0;
            }
            Some("solid" | "facet" | "outer" | "endfacet" | "endsolid") | None => {}
            Some(other) => return Err(perr(start, format!("unexpected token `{other}`"))),
        }
    }
    if pending != 0 {
        return Err(perr(bytes.len(), "unterminated facet"));
    }
    TriangleMesh::new(verts, tris)
}

/// Parses OBJ `v` and `f` records; faces are fan-triangulated, indices are
/// 1-based and may be negative (relative). Other records are ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut verts: Vec<Vec3> = Vec::new();
    let mut tris = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.split('#').next().unwrap_or("");
        let mut it = body.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in c.iter_mut() {
                    let tok = it.next().ok_or_else(|| perr(start, "v needs 3 coordinates"))?;
                    *slot = tok.parse::<f64>().map_err(|_| perr(start, format!("bad coordinate `{tok}`")))?;
                }
                verts.push(Vec3::from(c));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| perr(start, format!("bad face index `{tok}`")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        verts.len() as i64 + i
                    } else {
                        return Err(perr(start, "face index 0 is invalid"));
                    };
                    if resolved < 0 || resolved >= verts.len() as i64 {
                        return Err(perr(start, format!("face index {i} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(perr(start, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    tris.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(verts, tris)
}

pub fn write_stl_binary(mesh: &TriangleMesh, mut out: impl Write) -> std::io::Result<()> {
    let mut header = [0u8; 80];
    header[..12].copy_from_slice(b"binpick mesh");
    out.write_all(&header)?;
    out.write_all(&(mesh.len() as u32).to_le_bytes())?;
    for i in 0..mesh.len() {
        let n = mesh.normals()[i];
        for c in n.iter() {
            out.write_all(&(*c as f32).to_le_bytes())?;
        }
        for v in mesh.triangle(i) {
            for c in v.iter() {
                out.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
        out.write_all(&[0u8; 2])?;
    }
    Ok(())
}

pub fn write_stl_ascii(mesh: &TriangleMesh, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "solid binpick")?;
    for i in 0..mesh.len() {
        let n = mesh.normals()[i];
        writeln!(out, "  facet normal {} {} {}", n.x, n.y, n.z)?;
        writeln!(out, "    outer loop")?;
        for v in mesh.triangle(i) {
            writeln!(out, "      vertex {} {} {}", v.x, v.y, v.z)?;
        }
        writeln!(out, "    endloop")?;
        writeln!(out, "  endfacet")?;
    }
    writeln!(out, "endsolid binpick")
}
