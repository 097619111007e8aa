//! Readers for TetGen `.node`/`.ele` pairs and ASCII Gmsh v2 files, plus
//! writers used for fixtures and surface export.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mesh::{TetMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    /// `.node` + `.ele`; the path may name either file or their common stem.
    TetGen,
    /// Gmsh ASCII v2 (`$MeshFormat 2.x 0 8`), tetrahedra only.
    GmshV2,
}

impl MeshFormat {
    pub fn from_id(id: &str) -> Result<Self> {
        match id.to_ascii_lowercase().as_str() {
            "tetgen" | "node" | "ele" => Ok(MeshFormat::TetGen),
            "gmsh" | "msh" | "gmsh2" => Ok(MeshFormat::GmshV2),
            other => Err(Error::invalid(format!("unknown mesh format '{other}'"))),
        }
    }

    pub fn guess(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "msh" => Some(MeshFormat::GmshV2),
            "node" | "ele" => Some(MeshFormat::TetGen),
            _ => None,
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TetMesh> {
    match format {
        MeshFormat::TetGen => {
            let stem = path.with_extension("");
            let node = read(&stem.with_extension("node"))?;
            let ele = read(&stem.with_extension("ele"))?;
            parse_tetgen(&node, &ele)
        }
        MeshFormat::GmshV2 => parse_gmsh(&read(path)?),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = l.split_whitespace().collect();
        (!tokens.is_empty()).then_some((i + 1, tokens))
    })
}

fn num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("expected a number, found '{tok}'"),
    })
}

fn field<'a>(tokens: &[&'a str], k: usize, line: usize) -> Result<&'a str> {
    tokens.get(k).copied().ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field {k}"),
    })
}

pub fn parse_tetgen(node: &str, ele: &str) -> Result<TetMesh> {
    let mut lines = content_lines(node);
    let (line, head) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty .node file".into(),
    })?;
    let count: usize = num(field(&head, 0, line)?, line)?;
    let dim: usize = num(field(&head, 1, line)?, line)?;
    if dim != 3 {
        return Err(Error::Parse {
            line,
            message: format!("expected dimension 3, got {dim}"),
        });
    }
    let mut ids = HashMap::with_capacity(count);
    let mut vertices = Vec::with_capacity(count);
    for (line, tok) in lines.take(count) {
        let id: i64 = num(field(&tok, 0, line)?, line)?;
        let p = Vec3::new(
            num(field(&tok, 1, line)?, line)?,
            num(field(&tok, 2, line)?, line)?,
            num(field(&tok, 3, line)?, line)?,
        );
        ids.insert(id, vertices.len());
        vertices.push(p);
    }
    if vertices.len() != count {
        return Err(Error::Parse {
            line: 0,
            message: format!("expected {count} nodes, found {}", vertices.len()),
        });
    }

    let mut lines = content_lines(ele);
    let (line, head) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty .ele file".into(),
    })?;
    let tet_count: usize = num(field(&head, 0, line)?, line)?;
    let per: usize = num(field(&head, 1, line)?, line)?;
    if per != 4 {
        return Err(Error::Parse {
            line,
            message: format!("only linear tets are supported, got {per} nodes per element"),
        });
    }
    let mut tets = Vec::with_capacity(tet_count);
    for (line, tok) in lines.take(tet_count) {
        let mut t = [0usize; 4];
        for k in 0..4 {
            let id: i64 = num(field(&tok, k + 1, line)?, line)?;
            // unknown ids are reported as out of range by mesh validation
            t[k] = ids.get(&id).copied().unwrap_or(id.max(0) as usize);
        }
        tets.push(t);
    }
    if tets.len() != tet_count {
        return Err(Error::Parse {
            line: 0,
            message: format!("expected {tet_count} elements, found {}", tets.len()),
        });
    }
    TetMesh::new(vertices, tets)
}

pub fn parse_gmsh(text: &str) -> Result<TetMesh> {
    let lines: Vec<(usize, Vec<&str>)> = content_lines(text).collect();
    let find = |tag: &str| lines.iter().position(|(_, t)| t[0] == tag);
    let fmt = find("$MeshFormat").ok_or(Error::Parse {
        line: 1,
        message: "missing $MeshFormat".into(),
    })?;
    let (line, version) = &lines.get(fmt + 1).ok_or(Error::Parse {
        line: 1,
        message: "truncated header".into(),
    })?;
    let v: f64 = num(version[0], *line)?;
    if !(2.0..3.0).contains(&v) || version.get(1) != Some(&"0") {
        return Err(Error::Parse {
            line: *line,
            message: format!("unsupported Gmsh format {}", version.join(" ")),
        });
    }

    let nodes_at = find("$Nodes").ok_or(Error::Parse {
        line: 0,
        message: "missing $Nodes".into(),
    })?;
    let (line, head) = &lines[nodes_at + 1];
    let count: usize = num(head[0], *line)?;
    let mut ids = HashMap::with_capacity(count);
    let mut vertices = Vec::with_capacity(count);
    for (line, tok) in lines.iter().skip(nodes_at + 2).take(count) {
        let id: i64 = num(field(tok, 0, *line)?, *line)?;
        ids.insert(id, vertices.len());
        vertices.push(Vec3::new(
            num(field(tok, 1, *line)?, *line)?,
            num(field(tok, 2, *line)?, *line)?,
            num(field(tok, 3, *line)?, *line)?,
        ));
    }

    let elems_at = find("$Elements").ok_or(Error::Parse {
        line: 0,
        message: "missing $Elements".into(),
    })?;
    let (line, head) = &lines[elems_at + 1];
    let count: usize = num(head[0], *line)?;
    let mut tets = Vec::new();
    for (line, tok) in lines.iter().skip(elems_at + 2).take(count) {
        let kind: u32 = num(field(tok, 1, *line)?, *line)?;
        let ntags: usize = num(field(tok, 2, *line)?, *line)?;
        match kind {
            4 => {
                let mut t = [0usize; 4];
                for k in 0..4 {
                    let id: i64 = num(field(tok, 3 + ntags + k, *line)?, *line)?;
                    t[k] = ids.get(&id).copied().unwrap_or(id.max(0) as usize);
                }
                tets.push(t);
            }
            // points, lines and triangles carry boundary tags only
            1 | 2 | 15 => {}
            other => {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unsupported element type {other}; only tets are accepted"),
                })
            }
        }
    }
    TetMesh::new(vertices, tets)
}

pub fn write_tetgen(mesh: &TetMesh, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut node = format!("{} 3 0 0\n", mesh.num_vertices());
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(node, "{i} {:e} {:e} {:e}", v.x, v.y, v.z);
    }
    let mut ele = format!("{} 4 0\n", mesh.num_tets());
    for (i, t) in mesh.tets().iter().enumerate() {
        let _ = writeln!(ele, "{i} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let node_path = stem.with_extension("node");
    let ele_path = stem.with_extension("ele");
    fs::write(&node_path, node).map_err(|e| Error::io(&node_path, e))?;
    fs::write(&ele_path, ele).map_err(|e| Error::io(&ele_path, e))?;
    Ok((node_path, ele_path))
}

pub fn write_gmsh(mesh: &TetMesh, path: &Path) -> Result<()> {
    let mut s = String::from("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(s, "{}", mesh.num_vertices());
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(s, "{} {:e} {:e} {:e}", i + 1, v.x, v.y, v.z);
    }
    let _ = writeln!(s, "$EndNodes\n$Elements\n{}", mesh.num_tets());
    for (i, t) in mesh.tets().iter().enumerate() {
        let _ = writeln!(
            s,
            "{} 4 2 0 1 {} {} {} {}",
            i + 1,
            t[0] + 1,
            t[1] + 1,
            t[2] + 1,
            t[3] + 1
        );
    }
    s.push_str("$EndElements\n");
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Wavefront OBJ of the boundary with vertices displaced by `displacement`
/// (flattened, size `3n`), or at rest when `None`.
pub fn surface_obj(mesh: &TetMesh, displacement: Option<&[f64]>) -> String {
    let surf = mesh.surface_vertices();
    let mut local = vec![usize::MAX; mesh.num_vertices()];
    let mut s = String::new();
    for (k, &v) in surf.iter().enumerate() {
        local[v] = k + 1;
        let mut p = mesh.vertices()[v];
        if let Some(u) = displacement {
            p += Vec3::new(u[3 * v], u[3 * v + 1], u[3 * v + 2]);
        }
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for f in mesh.surface() {
        let _ = writeln!(s, "f {} {} {}", local[f[0]], local[f[1]], local[f[2]]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn tetgen_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = shapes::box_grid([2, 2, 2], [1.0, 1.0, 1.0]);
        write_tetgen(&m, &dir.path().join("cube")).unwrap();
        let back = load_mesh(&dir.path().join("cube.ele"), MeshFormat::TetGen).unwrap();
        assert_eq!(back.num_tets(), 40);
        assert_eq!(back.tets(), m.tets());
        assert_eq!(back.surface(), m.surface());
    }

    #[test]
    fn gmsh_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = shapes::regular_tet();
        let p = dir.path().join("tet.msh");
        write_gmsh(&m, &p).unwrap();
        let back = load_mesh(&p, MeshFormat::GmshV2).unwrap();
        assert_eq!(back.surface().len(), 4);
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tetgen_out_of_range() {
        let mut node = String::from("10 3 0 0\n");
        for i in 0..10 {
            node.push_str(&format!("{i} {i}.0 0 0\n"));
        }
        let ele = "1 4 0\n0 0 1 2 99\n";
        assert!(matches!(
            parse_tetgen(&node, ele),
            Err(Error::IndexOutOfRange { vertex: 99, .. })
        ));
    }

    #[test]
    fn gmsh_rejects_hexes() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n1\n1 0 0 0\n$EndNodes\n$Elements\n1\n1 5 0 1 1 1 1 1 1 1 1\n$EndElements\n";
        assert!(matches!(parse_gmsh(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(
            parse_tetgen("four 3 0 0\n", "1 4 0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
