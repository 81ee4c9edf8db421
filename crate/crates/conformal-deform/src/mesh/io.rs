//! Mesh file I/O: GMSH 2.2 ASCII and a native JSON schema.
//!
//! The native schema is
//! `{"nodes": [[x, y], ...], "triangles": [[i, j, k], ...],
//!   "boundary_edges": [[i, j, "GAMMA"], ...]}`.
//! Loading a saved mesh reproduces nodes, triangles and tags exactly;
//! clockwise triangles in input files are rejected with their index.

use super::{BoundaryTag, MeshError, TriMesh};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Gmsh22Ascii,
    NativeJson,
}

#[derive(Serialize, Deserialize)]
struct NativeMesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<(usize, usize, BoundaryTag)>,
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        MeshFormat::NativeJson => parse_native_json(&text),
        MeshFormat::Gmsh22Ascii => parse_gmsh22(&text),
    }
}

pub fn save_mesh(mesh: &TriMesh, path: &Path, format: MeshFormat) -> Result<(), MeshError> {
    let text = match format {
        MeshFormat::NativeJson => to_native_json(mesh),
        MeshFormat::Gmsh22Ascii => to_gmsh22(mesh),
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn parse_native_json(text: &str) -> Result<TriMesh, MeshError> {
    let raw: NativeMesh = serde_json::from_str(text).map_err(|e| MeshError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    TriMesh::from_parts(raw.nodes, raw.triangles, raw.boundary_edges)
}

pub fn to_native_json(mesh: &TriMesh) -> String {
    let raw = NativeMesh {
        nodes: mesh.nodes.clone(),
        triangles: mesh.triangles.clone(),
        boundary_edges: mesh.boundary_edges.clone(),
    };
    serde_json::to_string(&raw).expect("mesh serialization cannot fail")
}

fn tag_from_name(name: &str) -> BoundaryTag {
    match name {
        "GAMMA" => BoundaryTag::Gamma,
        "GAMMA_INF" => BoundaryTag::GammaInf,
        _ => BoundaryTag::None,
    }
}

fn tag_from_id(id: i64) -> BoundaryTag {
    match id {
        1 => BoundaryTag::Gamma,
        2 => BoundaryTag::GammaInf,
        _ => BoundaryTag::None,
    }
}

fn tag_to_id(tag: BoundaryTag) -> i64 {
    match tag {
        BoundaryTag::Gamma => 1,
        BoundaryTag::GammaInf => 2,
        BoundaryTag::None => 3,
    }
}

/// GMSH legacy 2.2 ASCII reader. Element type 2 (3-node triangle) becomes a
/// triangle, type 1 (2-node line) a tagged boundary edge; points (type 15)
/// are skipped. Physical names `GAMMA` / `GAMMA_INF` map to tags; without a
/// `$PhysicalNames` section, physical ids 1 and 2 are used instead.
pub fn parse_gmsh22(text: &str) -> Result<TriMesh, MeshError> {
    let err = |line: usize, message: &str| MeshError::Parse { line, message: message.to_string() };
    let lines: Vec<&str> = text.lines().collect();
    let mut physical_names: Vec<(i64, BoundaryTag)> = Vec::new();
    let mut node_ids: Vec<i64> = Vec::new();
    let mut nodes: Vec<[f64; 2]> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut boundary_edges: Vec<(usize, usize, BoundaryTag)> = Vec::new();

    let mut i = 0usize;
    while i < lines.len() {
        let line = lines[i].trim();
        match line {
            "$MeshFormat" => {
                let fmt = lines.get(i + 1).ok_or_else(|| err(i + 2, "missing format line"))?;
                let version = fmt.split_whitespace().next().unwrap_or("");
                if !version.starts_with("2.2") {
                    return Err(err(i + 2, &format!("unsupported GMSH version {version}, need 2.2")));
                }
                i += 2;
            }
            "$PhysicalNames" => {
                let n: usize = lines
                    .get(i + 1)
                    .and_then(|l| l.trim().parse().ok())
                    .ok_or_else(|| err(i + 2, "bad physical-name count"))?;
                for k in 0..n {
                    let l = lines.get(i + 2 + k).ok_or_else(|| err(i + 3 + k, "truncated physical names"))?;
                    let mut parts = l.trim().splitn(3, ' ');
                    let _dim = parts.next();
                    let id: i64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(i + 3 + k, "bad physical id"))?;
                    let name = parts.next().unwrap_or("").trim_matches('"');
                    physical_names.push((id, tag_from_name(name)));
                }
                i += 2 + n;
            }
            "$Nodes" => {
                let n: usize = lines
                    .get(i + 1)
                    .and_then(|l| l.trim().parse().ok())
                    .ok_or_else(|| err(i + 2, "bad node count"))?;
                for k in 0..n {
                    let lineno = i + 3 + k;
                    let l = lines.get(i + 2 + k).ok_or_else(|| err(lineno, "truncated nodes"))?;
                    let mut parts = l.split_whitespace();
                    let id: i64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(lineno, "bad node id"))?;
                    let x: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(lineno, "bad node x"))?;
                    let y: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(lineno, "bad node y"))?;
                    node_ids.push(id);
                    nodes.push([x, y]);
                }
                i += 2 + n;
            }
            "$Elements" => {
                let id_to_index = |id: i64, lineno: usize| -> Result<usize, MeshError> {
                    node_ids
                        .iter()
                        .position(|&n| n == id)
                        .ok_or_else(|| err(lineno, &format!("element references unknown node {id}")))
                };
                let n: usize = lines
                    .get(i + 1)
                    .and_then(|l| l.trim().parse().ok())
                    .ok_or_else(|| err(i + 2, "bad element count"))?;
                for k in 0..n {
                    let lineno = i + 3 + k;
                    let l = lines.get(i + 2 + k).ok_or_else(|| err(lineno, "truncated elements"))?;
                    let fields: Vec<i64> = l
                        .split_whitespace()
                        .map(|s| s.parse::<i64>().map_err(|_| err(lineno, "bad element field")))
                        .collect::<Result<_, _>>()?;
                    if fields.len() < 3 {
                        return Err(err(lineno, "element line too short"));
                    }
                    let etype = fields[1];
                    let ntags = fields[2] as usize;
                    let physical = if ntags > 0 { fields.get(3).copied().unwrap_or(0) } else { 0 };
                    let node_fields = &fields[3 + ntags..];
                    match etype {
                        1 => {
                            if node_fields.len() != 2 {
                                return Err(err(lineno, "line element needs 2 nodes"));
                            }
                            let a = id_to_index(node_fields[0], lineno)?;
                            let b = id_to_index(node_fields[1], lineno)?;
                            let tag = physical_names
                                .iter()
                                .find(|(id, _)| *id == physical)
                                .map(|(_, t)| *t)
                                .unwrap_or_else(|| tag_from_id(physical));
                            boundary_edges.push((a, b, tag));
                        }
                        2 => {
                            if node_fields.len() != 3 {
                                return Err(err(lineno, "triangle element needs 3 nodes"));
                            }
                            let a = id_to_index(node_fields[0], lineno)?;
                            let b = id_to_index(node_fields[1], lineno)?;
                            let c = id_to_index(node_fields[2], lineno)?;
                            triangles.push([a, b, c]);
                        }
                        15 => {}
                        other => return Err(err(lineno, &format!("unsupported element type {other}"))),
                    }
                }
                i += 2 + n;
            }
            _ => i += 1,
        }
    }
    if nodes.is_empty() {
        return Err(err(1, "no $Nodes section found"));
    }
    TriMesh::from_parts(nodes, triangles, boundary_edges)
}

pub fn to_gmsh22(mesh: &TriMesh) -> String {
    let mut s = String::new();
    s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n");
    s.push_str("$PhysicalNames\n3\n1 1 \"GAMMA\"\n1 2 \"GAMMA_INF\"\n1 3 \"NONE\"\n$EndPhysicalNames\n");
    s.push_str(&format!("$Nodes\n{}\n", mesh.n_nodes()));
    for (i, p) in mesh.nodes.iter().enumerate() {
        s.push_str(&format!("{} {} {} 0\n", i + 1, p[0], p[1]));
    }
    s.push_str("$EndNodes\n");
    let total = mesh.boundary_edges.len() + mesh.n_triangles();
    s.push_str(&format!("$Elements\n{total}\n"));
    let mut eid = 1usize;
    for &(a, b, tag) in &mesh.boundary_edges {
        let id = tag_to_id(tag);
        s.push_str(&format!("{eid} 1 2 {id} {id} {} {}\n", a + 1, b + 1));
        eid += 1;
    }
    for t in &mesh.triangles {
        s.push_str(&format!("{eid} 2 2 0 0 {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        eid += 1;
    }
    s.push_str("$EndElements\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{export_vtk, gen_disc};

    #[test]
    fn json_round_trip_is_exact() {
        let mesh = gen_disc(3.0, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disc.json");
        save_mesh(&mesh, &path, MeshFormat::NativeJson).unwrap();
        let loaded = load_mesh(&path, MeshFormat::NativeJson).unwrap();
        assert_eq!(mesh, loaded);
    }

    #[test]
    fn gmsh_round_trip_is_exact() {
        let mesh = gen_disc(1.7, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disc.msh");
        save_mesh(&mesh, &path, MeshFormat::Gmsh22Ascii).unwrap();
        let loaded = load_mesh(&path, MeshFormat::Gmsh22Ascii).unwrap();
        assert_eq!(mesh, loaded);
    }

    #[test]
    fn malformed_triangle_index_names_line() {
        let text = r#"{"nodes": [[0,0],[1,0],[0,1]], "triangles": [[0,1,9]], "boundary_edges": []}"#;
        match parse_native_json(text) {
            Err(MeshError::NodeIndexOutOfRange { index, node, .. }) => {
                assert_eq!(index, 0);
                assert_eq!(node, 9);
            }
            other => panic!("expected index error, got {other:?}"),
        }
    }

    #[test]
    fn gmsh_parse_error_carries_line_number() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n2\n1 0 0 0\n2 bad 0 0\n$EndNodes\n";
        match parse_gmsh22(text) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn clockwise_triangle_rejected_with_index() {
        let text = r#"{"nodes": [[0,0],[1,0],[0,1]], "triangles": [[0,2,1]],
                       "boundary_edges": [[0,1,"GAMMA"],[1,2,"GAMMA"],[2,0,"GAMMA"]]}"#;
        match parse_native_json(text) {
            Err(MeshError::NonPositiveArea { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected orientation error, got {other:?}"),
        }
    }

    #[test]
    fn vtk_counts_match_mesh() {
        let mesh = gen_disc(1.0, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disc.vtk");
        export_vtk(&mesh, &path, &[], &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(&format!("POINTS {} double", mesh.n_nodes())));
        assert!(text.contains(&format!("CELLS {} {}", mesh.n_triangles(), 4 * mesh.n_triangles())));
        let point_lines = text
            .lines()
            .skip_while(|l| !l.starts_with("POINTS"))
            .skip(1)
            .take_while(|l| !l.starts_with("CELLS"))
            .count();
        assert_eq!(point_lines, mesh.n_nodes());
    }
}
