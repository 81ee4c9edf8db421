//! Triangle meshes: representation, generation, quality, deformation and
//! geometric queries.
//!
//! A [`TriMesh`] is the discrete shape. Nodes are 2D points, triangles are
//! counterclockwise index triples, and boundary edges carry tags that
//! partition the boundary. Deformations are [`VectorField`]s of per-node
//! displacements; applying one never mutates the original mesh.

mod io;

pub use io::{load_mesh, save_mesh, MeshFormat};

use crate::exec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Boundary classification. `Gamma` is the boundary that moves during
/// optimization, `GammaInf` the far/clamped one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    #[serde(rename = "GAMMA")]
    Gamma,
    #[serde(rename = "GAMMA_INF")]
    GammaInf,
    #[serde(rename = "NONE")]
    None,
}

impl std::fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryTag::Gamma => write!(f, "GAMMA"),
            BoundaryTag::GammaInf => write!(f, "GAMMA_INF"),
            BoundaryTag::None => write!(f, "NONE"),
        }
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("triangle {index} has non-positive signed area {area:e}")]
    NonPositiveArea { index: usize, area: f64 },
    #[error("triangle {index} references node {node} but mesh has {n_nodes} nodes")]
    NodeIndexOutOfRange { index: usize, node: usize, n_nodes: usize },
    #[error("edge ({a}, {b}) is shared by {count} triangles")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("boundary edge ({a}, {b}) is tagged but belongs to {count} triangles")]
    TaggedInteriorEdge { a: usize, b: usize, count: usize },
    #[error("boundary edge ({a}, {b}) of triangle {tri} is missing a tag entry")]
    UntaggedBoundaryEdge { a: usize, b: usize, tri: usize },
    #[error("triangle {index} is degenerate (area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("invalid generator parameters: {0}")]
    BadParameters(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("displacement field has {field} values but mesh has {nodes} nodes")]
    FieldSizeMismatch { field: usize, nodes: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable triangle mesh. Constructed through [`TriMesh::from_parts`]
/// (which checks orientation and boundary consistency) or the generators.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<(usize, usize, BoundaryTag)>,
}

/// Nodal 2-vector coefficients of a piecewise-linear field on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub values: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn zeros(n_nodes: usize) -> Self {
        VectorField { values: vec![[0.0, 0.0]; n_nodes] }
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len() % 2, 0);
        VectorField {
            values: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        }
    }

    /// Node-interleaved layout `[u1_0, u2_0, u1_1, u2_1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.values.len());
        for v in &self.values {
            out.push(v[0]);
            out.push(v[1]);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-triangle quality ratio eta = h / (2 rho) where h is the diameter of
/// the smallest ball containing the triangle and rho the diameter of the
/// largest ball inside it. Equals 1 exactly for equilateral triangles.
#[derive(Debug, Clone)]
pub struct ElementQuality {
    pub eta: Vec<f64>,
}

impl ElementQuality {
    pub fn min(&self) -> f64 {
        self.eta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.eta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Fraction of elements with eta strictly above `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.eta.is_empty() {
            return 0.0;
        }
        self.eta.iter().filter(|&&e| e > threshold).count() as f64 / self.eta.len() as f64
    }
}

/// Result of [`validate`]: either every triangle is safely oriented or a
/// report of the offenders.
#[derive(Debug, Clone, PartialEq)]
pub enum Validity {
    Ok,
    Inverted { indices: Vec<usize> },
}

impl Validity {
    pub fn is_ok(&self) -> bool {
        matches!(self, Validity::Ok)
    }
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

impl TriMesh {
    /// Build a mesh from raw parts, checking orientation, index ranges and
    /// that the tagged boundary edges are exactly the topological boundary.
    /// Clockwise triangles are rejected, not flipped.
    pub fn from_parts(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<(usize, usize, BoundaryTag)>,
    ) -> Result<Self, MeshError> {
        let n_nodes = nodes.len();
        for (i, t) in triangles.iter().enumerate() {
            for &v in t {
                if v >= n_nodes {
                    return Err(MeshError::NodeIndexOutOfRange { index: i, node: v, n_nodes });
                }
            }
            let area = signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            if area <= 0.0 {
                return Err(MeshError::NonPositiveArea { index: i, area });
            }
        }

        // Edge incidence: interior edges twice, boundary edges once.
        let mut incidence: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        for (i, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = incidence.entry(key).or_insert((0, i));
                e.0 += 1;
                e.1 = i;
            }
        }
        for (&(a, b), &(count, _)) in &incidence {
            if count > 2 {
                return Err(MeshError::NonManifoldEdge { a, b, count });
            }
        }
        let mut tagged: BTreeMap<(usize, usize), BoundaryTag> = BTreeMap::new();
        for &(a, b, tag) in &boundary_edges {
            let key = (a.min(b), a.max(b));
            match incidence.get(&key) {
                Some(&(1, _)) => {
                    tagged.insert(key, tag);
                }
                Some(&(count, _)) => {
                    return Err(MeshError::TaggedInteriorEdge { a, b, count });
                }
                None => return Err(MeshError::TaggedInteriorEdge { a, b, count: 0 }),
            }
        }
        for (&(a, b), &(count, tri)) in &incidence {
            if count == 1 && !tagged.contains_key(&(a, b)) {
                return Err(MeshError::UntaggedBoundaryEdge { a, b, tri });
            }
        }

        Ok(TriMesh { nodes, triangles, boundary_edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.triangles[k];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|k| self.triangle_area(k)).sum()
    }

    pub fn centroid(&self, k: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[k];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (self.nodes[t[k]], self.nodes[t[(k + 1) % 3]]);
                sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                count += 1;
            }
        }
        sum / count as f64
    }

    /// Per-node boundary tag. `Gamma`/`GammaInf` win over `None` when a node
    /// sits on edges with mixed tags; nodes shared between `Gamma` and
    /// `GammaInf` keep `GammaInf` so clamping is conservative.
    pub fn node_tags(&self) -> Vec<BoundaryTag> {
        let mut tags = vec![BoundaryTag::None; self.n_nodes()];
        let mut on_boundary = vec![false; self.n_nodes()];
        for &(a, b, tag) in &self.boundary_edges {
            for n in [a, b] {
                on_boundary[n] = true;
                tags[n] = match (tags[n], tag) {
                    (BoundaryTag::GammaInf, _) | (_, BoundaryTag::GammaInf) => BoundaryTag::GammaInf,
                    (BoundaryTag::Gamma, _) | (_, BoundaryTag::Gamma) => BoundaryTag::Gamma,
                    _ => BoundaryTag::None,
                };
            }
        }
        for (i, t) in tags.iter_mut().enumerate() {
            if !on_boundary[i] {
                *t = BoundaryTag::None;
            }
        }
        tags
    }

    /// Indices of nodes lying on edges with the given tag.
    pub fn nodes_with_tag(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut marked = vec![false; self.n_nodes()];
        for &(a, b, t) in &self.boundary_edges {
            if t == tag {
                marked[a] = true;
                marked[b] = true;
            }
        }
        marked.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    /// Node adjacency via triangle edges, sorted, deduplicated.
    pub fn node_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Concentric-ring triangulation of a disc of the given radius. Ring `k`
/// carries `6k` nodes; the outer boundary is tagged `GAMMA`.
pub fn gen_disc(radius: f64, n_rings: usize) -> Result<TriMesh, MeshError> {
    if !(radius > 0.0) {
        return Err(MeshError::BadParameters(format!("radius must be positive, got {radius}")));
    }
    if n_rings < 1 {
        return Err(MeshError::BadParameters("n_rings must be at least 1".into()));
    }
    let mut nodes = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize; n_rings + 1]; // ring_start[k] = index of first node of ring k
    for k in 1..=n_rings {
        ring_start[k] = nodes.len();
        let m = 6 * k;
        let r = radius * k as f64 / n_rings as f64;
        for j in 0..m {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            nodes.push([r * theta.cos(), r * theta.sin()]);
        }
    }
    let mut triangles = Vec::new();
    // Innermost fan.
    for j in 0..6 {
        triangles.push([ring_start[1] + j, ring_start[1] + (j + 1) % 6, 0]);
    }
    // Bands between ring k-1 and ring k, sector by sector.
    for k in 2..=n_rings {
        let (inner, outer) = (ring_start[k - 1], ring_start[k]);
        let (m_in, m_out) = (6 * (k - 1), 6 * k);
        for s in 0..6 {
            let oi = |j: usize| outer + (s * k + j) % m_out;
            let ii = |j: usize| inner + (s * (k - 1) + j) % m_in;
            for j in 0..k - 1 {
                triangles.push([oi(j), oi(j + 1), ii(j)]);
                triangles.push([oi(j + 1), ii(j + 1), ii(j)]);
            }
            triangles.push([oi(k - 1), oi(k), ii(k - 1)]);
        }
    }
    let outer_start = ring_start[n_rings];
    let m = 6 * n_rings;
    let boundary = (0..m)
        .map(|j| (outer_start + j, outer_start + (j + 1) % m, BoundaryTag::Gamma))
        .collect();
    TriMesh::from_parts(nodes, triangles, boundary)
}

/// Structured triangulation of the annulus `r_inner < |x| < r_outer`.
/// Inner boundary tagged `GAMMA`, outer `GAMMA_INF`.
pub fn gen_annulus(r_inner: f64, r_outer: f64, n_rings: usize) -> Result<TriMesh, MeshError> {
    if !(r_inner > 0.0 && r_inner < r_outer) {
        return Err(MeshError::BadParameters(format!(
            "need 0 < r_inner < r_outer, got r_inner={r_inner}, r_outer={r_outer}"
        )));
    }
    if n_rings < 1 {
        return Err(MeshError::BadParameters("n_rings must be at least 1".into()));
    }
    let dr = (r_outer - r_inner) / n_rings as f64;
    let m = ((std::f64::consts::PI * (r_inner + r_outer) / dr).round() as usize).max(8);
    let mut nodes = Vec::with_capacity((n_rings + 1) * m);
    for k in 0..=n_rings {
        let r = r_inner + dr * k as f64;
        for j in 0..m {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            nodes.push([r * theta.cos(), r * theta.sin()]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n_rings * m);
    for k in 0..n_rings {
        let (inner, outer) = (k * m, (k + 1) * m);
        for j in 0..m {
            let jn = (j + 1) % m;
            triangles.push([inner + j, outer + j, outer + jn]);
            triangles.push([inner + j, outer + jn, inner + jn]);
        }
    }
    let mut boundary = Vec::with_capacity(2 * m);
    for j in 0..m {
        boundary.push((j, (j + 1) % m, BoundaryTag::Gamma));
    }
    let top = n_rings * m;
    for j in 0..m {
        boundary.push((top + j, top + (j + 1) % m, BoundaryTag::GammaInf));
    }
    TriMesh::from_parts(nodes, triangles, boundary)
}

/// Rectangular channel with a circular hole, O-grid around the hole blended
/// to the box walls. The hole boundary is tagged `GAMMA`, the channel walls
/// `GAMMA_INF`. The mesh is exactly symmetric under reflection in both axes.
pub fn gen_channel(
    half_width: f64,
    half_height: f64,
    hole_radius: f64,
    n_rings: usize,
    n_around: usize,
) -> Result<TriMesh, MeshError> {
    if !(hole_radius > 0.0 && hole_radius < half_height && hole_radius < half_width) {
        return Err(MeshError::BadParameters("hole must fit inside the channel".into()));
    }
    if n_rings < 2 || n_around < 8 || n_around % 4 != 0 {
        return Err(MeshError::BadParameters(
            "need n_rings >= 2 and n_around >= 8 divisible by 4".into(),
        ));
    }
    let m = n_around;
    // Radial blend from the circle to the box: node (k, j) interpolates
    // between the circle point and the box-boundary point at angle theta_j.
    // Grading packs rings near the hole where the deformation is largest.
    let box_point = |theta: f64| -> [f64; 2] {
        let (c, s) = (theta.cos(), theta.sin());
        let tx = if c.abs() < 1e-15 { f64::INFINITY } else { half_width / c.abs() };
        let ty = if s.abs() < 1e-15 { f64::INFINITY } else { half_height / s.abs() };
        let t = tx.min(ty);
        [t * c, t * s]
    };
    // Mirror-symmetric angles: generate the first quadrant then reflect.
    let quarter = m / 4;
    let mut angles = vec![0.0f64; m];
    for j in 0..=quarter {
        let a = std::f64::consts::FRAC_PI_2 * j as f64 / quarter as f64;
        angles[j] = a;
        angles[(m / 2 - j) % m] = std::f64::consts::PI - a;
        angles[m / 2 + j] = std::f64::consts::PI + a;
        angles[(m - j) % m] = 2.0 * std::f64::consts::PI - a;
    }
    angles[0] = 0.0;
    let mut nodes = Vec::with_capacity((n_rings + 1) * m);
    for k in 0..=n_rings {
        let t = k as f64 / n_rings as f64;
        let blend = t * t * (3.0 - 2.0 * t) * 0.35 + t * 0.65;
        for &theta in angles.iter().take(m) {
            let bp = box_point(theta);
            let (c, s) = (theta.cos(), theta.sin());
            let x = hole_radius * c + blend * (bp[0] - hole_radius * c);
            let y = hole_radius * s + blend * (bp[1] - hole_radius * s);
            nodes.push([x, y]);
        }
    }
    // Snap the outermost ring onto the box exactly.
    for j in 0..m {
        let bp = box_point(angles[j]);
        nodes[n_rings * m + j] = bp;
    }
    let mut triangles = Vec::with_capacity(2 * n_rings * m);
    for k in 0..n_rings {
        let (inner, outer) = (k * m, (k + 1) * m);
        for j in 0..m {
            let jn = (j + 1) % m;
            // Alternate diagonals so the mesh stays mirror symmetric.
            if (j < m / 2) == (j % 2 == 0) {
                triangles.push([inner + j, outer + j, outer + jn]);
                triangles.push([inner + j, outer + jn, inner + jn]);
            } else {
                triangles.push([inner + j, outer + j, inner + jn]);
                triangles.push([outer + j, outer + jn, inner + jn]);
            }
        }
    }
    let mut boundary = Vec::with_capacity(2 * m);
    for j in 0..m {
        boundary.push((j, (j + 1) % m, BoundaryTag::Gamma));
    }
    let top = n_rings * m;
    for j in 0..m {
        boundary.push((top + j, top + (j + 1) % m, BoundaryTag::GammaInf));
    }
    TriMesh::from_parts(nodes, triangles, boundary)
}

fn triangle_eta(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Result<f64, f64> {
    let area = signed_area(a, b, c);
    if area.abs() < f64::MIN_POSITIVE {
        return Err(area);
    }
    let e = [
        ((b[0] - c[0]).powi(2) + (b[1] - c[1]).powi(2)).sqrt(),
        ((a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2)).sqrt(),
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
    ];
    let longest = e[0].max(e[1]).max(e[2]);
    let sum_sq: f64 = e.iter().map(|x| x * x).sum();
    // Smallest enclosing ball: circumcircle for acute triangles, the longest
    // edge as diameter otherwise.
    let h = if 2.0 * longest * longest >= sum_sq {
        longest
    } else {
        e[0] * e[1] * e[2] / (2.0 * area.abs())
    };
    let inradius = area.abs() / (0.5 * (e[0] + e[1] + e[2]));
    Ok(h / (4.0 * inradius))
}

/// Quality ratio per element. Errors on degenerate (zero-area) triangles.
pub fn element_quality(mesh: &TriMesh) -> Result<ElementQuality, MeshError> {
    let etas = exec::map_indexed(mesh.n_triangles(), |k| {
        let [a, b, c] = mesh.triangles[k];
        triangle_eta(mesh.nodes[a], mesh.nodes[b], mesh.nodes[c])
    });
    let mut eta = Vec::with_capacity(etas.len());
    for (k, r) in etas.into_iter().enumerate() {
        match r {
            Ok(v) => eta.push(v),
            Err(area) => return Err(MeshError::DegenerateTriangle { index: k, area }),
        }
    }
    Ok(ElementQuality { eta })
}

/// Histogram counts over `[edges[i], edges[i+1])`. Edges must be strictly
/// increasing; use `f64::INFINITY` as the last edge for a catch-all bin.
pub fn quality_histogram(quality: &ElementQuality, bin_edges: &[f64]) -> Vec<usize> {
    assert!(bin_edges.windows(2).all(|w| w[0] < w[1]), "bin edges must be increasing");
    let n_bins = bin_edges.len().saturating_sub(1);
    let mut counts = vec![0usize; n_bins];
    for &e in &quality.eta {
        for i in 0..n_bins {
            if e >= bin_edges[i] && e < bin_edges[i + 1] {
                counts[i] += 1;
                break;
            }
        }
    }
    counts
}

/// Serialize a histogram as `bin_lo,bin_hi,count` CSV.
pub fn histogram_csv(bin_edges: &[f64], counts: &[usize]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, &c) in counts.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", bin_edges[i], bin_edges[i + 1], c));
    }
    out
}

/// Shift node positions by the field values; connectivity and tags are shared.
pub fn apply_displacement(mesh: &TriMesh, field: &VectorField) -> Result<TriMesh, MeshError> {
    if field.len() != mesh.n_nodes() {
        return Err(MeshError::FieldSizeMismatch { field: field.len(), nodes: mesh.n_nodes() });
    }
    let nodes = mesh
        .nodes
        .iter()
        .zip(&field.values)
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1]])
        .collect();
    Ok(TriMesh {
        nodes,
        triangles: mesh.triangles.clone(),
        boundary_edges: mesh.boundary_edges.clone(),
    })
}

/// Check that every triangle keeps a positive signed area above
/// `1e-14 * bounding-box-area`.
pub fn validate(mesh: &TriMesh) -> Validity {
    let (lo, hi) = mesh.bounding_box();
    let tol = 1e-14 * ((hi[0] - lo[0]) * (hi[1] - lo[1])).abs();
    let indices: Vec<usize> = (0..mesh.n_triangles())
        .filter(|&k| mesh.triangle_area(k) <= tol)
        .collect();
    if indices.is_empty() {
        Validity::Ok
    } else {
        Validity::Inverted { indices }
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len_sq = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len_sq > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Exact minimum distance from each query point to the mesh boundary.
pub fn boundary_distance(mesh: &TriMesh, query: &[[f64; 2]]) -> Vec<f64> {
    exec::map_indexed(query.len(), |i| {
        let p = query[i];
        mesh.boundary_edges
            .iter()
            .map(|&(a, b, _)| point_segment_distance(p, mesh.nodes[a], mesh.nodes[b]))
            .fold(f64::INFINITY, f64::min)
    })
}

/// Legacy ASCII VTK unstructured-grid writer, optionally with point vectors
/// and cell scalars.
pub fn export_vtk(
    mesh: &TriMesh,
    path: &std::path::Path,
    point_vectors: &[(&str, &VectorField)],
    cell_scalars: &[(&str, &[f64])],
) -> Result<(), MeshError> {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("conformal-deform mesh\n");
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    s.push_str(&format!("POINTS {} double\n", mesh.n_nodes()));
    for p in &mesh.nodes {
        s.push_str(&format!("{} {} 0\n", p[0], p[1]));
    }
    s.push_str(&format!("CELLS {} {}\n", mesh.n_triangles(), 4 * mesh.n_triangles()));
    for t in &mesh.triangles {
        s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    s.push_str(&format!("CELL_TYPES {}\n", mesh.n_triangles()));
    for _ in 0..mesh.n_triangles() {
        s.push_str("5\n");
    }
    if !point_vectors.is_empty() {
        s.push_str(&format!("POINT_DATA {}\n", mesh.n_nodes()));
        for (name, field) in point_vectors {
            s.push_str(&format!("VECTORS {name} double\n"));
            for v in &field.values {
                s.push_str(&format!("{} {} 0\n", v[0], v[1]));
            }
        }
    }
    if !cell_scalars.is_empty() {
        s.push_str(&format!("CELL_DATA {}\n", mesh.n_triangles()));
        for (name, data) in cell_scalars {
            s.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
            for v in *data {
                s.push_str(&format!("{v}\n"));
            }
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}
