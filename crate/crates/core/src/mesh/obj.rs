//! ASCII Wavefront OBJ, `v` and `f` records only.

use std::fmt::Write as _;

use glam::DVec3;

use super::{vertex_normals, MeshError, TriangleMesh};

/// Parses an OBJ document. Polygons are fan-triangulated; `vt`, `vn` and all
/// other records are ignored. Negative (relative) indices are accepted.
pub fn load_obj(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MeshError::Parse {
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for slot in &mut xyz {
                    let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                        line,
                        message: "vertex record needs three coordinates".into(),
                    })?;
                    *slot = tok.parse::<f64>().map_err(|e| MeshError::Parse {
                        line,
                        message: format!("bad coordinate {tok:?}: {e}"),
                    })?;
                }
                let v = DVec3::from_array(xyz);
                if !v.is_finite() {
                    return Err(MeshError::Parse {
                        line,
                        message: "non-finite coordinate".into(),
                    });
                }
                vertices.push(v);
            }
            Some("f") => {
                let mut poly = Vec::with_capacity(4);
                for tok in tokens {
                    poly.push(parse_index(tok, vertices.len(), line)?);
                }
                if poly.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("face needs at least 3 vertices, got {}", poly.len()),
                    });
                }
                for k in 1..poly.len() - 1 {
                    let face = [poly[0], poly[k], poly[k + 1]];
                    if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                        return Err(MeshError::Parse {
                            line,
                            message: "face repeats a vertex".into(),
                        });
                    }
                    faces.push(face);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

fn parse_index(tok: &str, vertex_count: usize, line: usize) -> Result<usize, MeshError> {
    let head = tok.split('/').next().unwrap_or("");
    let raw: i64 = head.parse().map_err(|e| MeshError::Parse {
        line,
        message: format!("bad face index {tok:?}: {e}"),
    })?;
    let resolved = match raw {
        0 => None,
        r if r > 0 => Some(r as usize - 1),
        r => (vertex_count as i64 + r).try_into().ok(),
    };
    match resolved {
        Some(i) if i < vertex_count => Ok(i),
        _ => Err(MeshError::Parse {
            line,
            message: format!("face index {raw} out of range (have {vertex_count} vertices)"),
        }),
    }
}

/// Serializes with 9 significant digits per coordinate and emits `vn`
/// records (one per vertex) alongside.
pub fn save_obj(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = String::with_capacity(mesh.vertices.len() * 64 + mesh.faces.len() * 32);
    let normals = vertex_normals(mesh);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", sig9(v.x), sig9(v.y), sig9(v.z));
    }
    for n in &normals {
        let _ = writeln!(out, "vn {} {} {}", sig9(n.x), sig9(n.y), sig9(n.z));
    }
    for &[a, b, c] in &mesh.faces {
        let _ = writeln!(out, "f {0}//{0} {1}//{1} {2}//{2}", a + 1, b + 1, c + 1);
    }
    out.into_bytes()
}

/// Shortest decimal form of `x` rounded to 9 significant digits.
fn sig9(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}
