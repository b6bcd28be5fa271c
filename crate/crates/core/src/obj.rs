//! ASCII OBJ input and output (`v` and `f` records only).
//!
//! Face albedo travels in a sidecar next to the OBJ (`mesh.obj` →
//! `mesh.albedo`), one `face_index r g b` line per triangle. Triangles without
//! a sidecar entry get a palette color chosen by face index.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, DEGENERATE_AREA};

/// Which file axis points up. Meshes are always stored Z-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpAxis {
    #[default]
    Z,
    Y,
}

const FALLBACK_PALETTE: [[f32; 3]; 8] = [
    [0.85, 0.33, 0.31],
    [0.36, 0.62, 0.85],
    [0.45, 0.75, 0.40],
    [0.93, 0.76, 0.30],
    [0.62, 0.45, 0.80],
    [0.30, 0.75, 0.75],
    [0.85, 0.55, 0.25],
    [0.70, 0.70, 0.70],
];

pub fn sidecar_path(obj: &Path) -> PathBuf {
    obj.with_extension("albedo")
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    load_obj_with(path, UpAxis::Z)
}

pub fn load_obj_with(path: &Path, up: UpAxis) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    let mut mesh = parse_obj(&text, path, up)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        apply_albedo_sidecar(&mut mesh, &fs::read_to_string(&sidecar)?, &sidecar)?;
    }
    mesh.recenter();
    Ok(mesh)
}

pub fn parse_obj(text: &str, path: &Path, up: UpAxis) -> Result<Mesh> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let coords: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| parse_err(lineno, format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(parse_err(lineno, "vertex needs three finite coordinates".into()));
                }
                let v = match up {
                    UpAxis::Z => Vector3::new(coords[0], coords[1], coords[2]),
                    UpAxis::Y => Vector3::new(coords[0], -coords[2], coords[1]),
                };
                vertices.push(v);
            }
            Some("f") => {
                let idx: Vec<i64> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        first
                            .parse::<i64>()
                            .map_err(|e| parse_err(lineno, format!("bad face index {t:?}: {e}")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(lineno, "face needs at least three vertices".into()));
                }
                // Relative (negative) indices refer to vertices defined so far.
                let resolved = idx
                    .into_iter()
                    .map(|i| if i < 0 { vertices.len() as i64 + i + 1 } else { i })
                    .collect();
                faces.push((lineno, resolved));
            }
            // Other record types (vt, vn, o, g, usemtl, s, ...) carry nothing we use.
            _ => {}
        }
    }
    let mut triangles = Vec::new();
    for (lineno, poly) in faces {
        for &i in &poly {
            if i < 1 || i as usize > vertices.len() {
                return Err(Error::IndexOutOfRange {
                    path: path.to_path_buf(),
                    line: lineno,
                    index: i,
                    count: vertices.len(),
                });
            }
        }
        for j in 1..poly.len() - 1 {
            let tri = [poly[0], poly[j], poly[j + 1]].map(|i| (i - 1) as u32);
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if area > DEGENERATE_AREA {
                triangles.push(tri);
            }
        }
    }
    let face_albedo = (0..triangles.len())
        .map(|i| FALLBACK_PALETTE[i % FALLBACK_PALETTE.len()])
        .collect();
    Mesh::new(vertices, triangles, face_albedo)
}

fn apply_albedo_sidecar(mesh: &mut Mesh, text: &str, path: &Path) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected `face_index r g b`, got {line:?}")));
        }
        let face: usize = fields[0].parse().map_err(|e| err(format!("bad face index: {e}")))?;
        let mut rgb = [0f32; 3];
        for (c, f) in rgb.iter_mut().zip(&fields[1..]) {
            *c = f.parse().map_err(|e| err(format!("bad color component: {e}")))?;
            if !(0.0..=1.0).contains(c) {
                return Err(err(format!("color component {c} outside [0, 1]")));
            }
        }
        let slot = mesh
            .face_albedo
            .get_mut(face)
            .ok_or_else(|| err(format!("face {face} out of range")))?;
        *slot = rgb;
    }
    Ok(())
}

pub fn obj_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn albedo_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    for (i, c) in mesh.face_albedo.iter().enumerate() {
        let _ = writeln!(s, "{i} {:?} {:?} {:?}", c[0], c[1], c[2]);
    }
    s
}

/// Writes the OBJ and its albedo sidecar.
pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    fs::write(path, obj_string(mesh))?;
    fs::write(sidecar_path(path), albedo_string(mesh))?;
    Ok(())
}
