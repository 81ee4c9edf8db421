//! P1 finite-element assembly of the deformation inner products and the
//! Riesz solve that turns shape derivatives into shape gradients.
//!
//! Displacement coefficients are node-interleaved: dof `2i` is the x
//! component at node `i`, dof `2i+1` the y component. All matrices are
//! assembled per element with a deterministic index-ordered reduction.

use crate::exec;
use crate::mesh::{boundary_distance, BoundaryTag, TriMesh};
use crate::sparse::{reverse_cuthill_mckee, Csr, SolverError, SymmetricSolver};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("degenerate element {0} (zero area)")]
    DegenerateElement(usize),
    #[error("invalid metric spec: {0}")]
    BadSpec(String),
    #[error("no free degrees of freedom after clamping")]
    FullyClamped,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Which Riesz metric to use for shape gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    H1Ring,
    HsymRing,
    CrPlusH1,
    CrPlusHsym,
    H1Clamped,
    CrPlusHsymClamped,
}

impl MetricKind {
    pub fn has_cr(self) -> bool {
        matches!(self, MetricKind::CrPlusH1 | MetricKind::CrPlusHsym | MetricKind::CrPlusHsymClamped)
    }

    pub fn clamped(self) -> bool {
        matches!(self, MetricKind::H1Clamped | MetricKind::CrPlusHsymClamped)
    }

    /// The metric obtained by dropping the Cauchy-Riemann block.
    pub fn base(self) -> MetricKind {
        match self {
            MetricKind::CrPlusH1 => MetricKind::H1Ring,
            MetricKind::CrPlusHsym => MetricKind::HsymRing,
            MetricKind::CrPlusHsymClamped => MetricKind::H1Clamped,
            other => other,
        }
    }
}

/// Parameters of a deformation inner product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerProductSpec {
    pub kind: MetricKind,
    /// Weight of the Cauchy-Riemann block: the metric adds `(1/alpha) (Bu, Bv)`,
    /// so smaller alpha enforces conformality more strongly.
    pub alpha: f64,
    pub weighted: bool,
    /// Distance-weight parameter; only used when `weighted` is set.
    pub epsilon: f64,
    pub clamped_tags: Vec<BoundaryTag>,
}

impl InnerProductSpec {
    pub fn validate(&self) -> Result<(), FemError> {
        if self.kind.has_cr() && !(self.alpha > 0.0) {
            return Err(FemError::BadSpec(format!("metric.alpha must be positive, got {}", self.alpha)));
        }
        if self.weighted && !(self.epsilon > 0.0) {
            return Err(FemError::BadSpec(format!(
                "metric.epsilon must be positive when weighted, got {}",
                self.epsilon
            )));
        }
        if self.kind.clamped() && self.clamped_tags.is_empty() {
            return Err(FemError::BadSpec("clamped metric needs clamped_tags".into()));
        }
        Ok(())
    }
}

/// Per-element P1 data: barycentric gradients and signed area.
pub(crate) fn p1_gradients(mesh: &TriMesh, k: usize) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = mesh.triangles[k];
    let p = [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]];
    let area = crate::mesh::signed_area(p[0], p[1], p[2]);
    let mut g = [[0.0f64; 2]; 3];
    for i in 0..3 {
        let e = [
            p[(i + 2) % 3][0] - p[(i + 1) % 3][0],
            p[(i + 2) % 3][1] - p[(i + 1) % 3][1],
        ];
        g[i] = [-e[1] / (2.0 * area), e[0] / (2.0 * area)];
    }
    (g, area)
}

type LocalMatrix = [[f64; 6]; 6];

fn rank_one_update(e: &mut LocalMatrix, row: &[f64; 6], w: f64) {
    for i in 0..6 {
        if row[i] == 0.0 {
            continue;
        }
        for j in 0..6 {
            e[i][j] += w * row[i] * row[j];
        }
    }
}

fn scatter(triplets: &mut Vec<(usize, usize, f64)>, nodes: [usize; 3], e: &LocalMatrix) {
    for li in 0..6 {
        let gi = 2 * nodes[li / 2] + li % 2;
        for lj in 0..6 {
            let v = e[li][lj];
            if v != 0.0 {
                triplets.push((gi, 2 * nodes[lj / 2] + lj % 2, v));
            }
        }
    }
}

fn assemble<F>(mesh: &TriMesh, element: F) -> Csr
where
    F: Fn(usize) -> LocalMatrix + Sync + Send,
{
    let locals = exec::map_indexed(mesh.n_triangles(), element);
    let mut triplets = Vec::with_capacity(36 * mesh.n_triangles());
    for (k, e) in locals.iter().enumerate() {
        scatter(&mut triplets, mesh.triangles[k], e);
    }
    Csr::from_triplets(2 * mesh.n_nodes(), 2 * mesh.n_nodes(), triplets)
}

/// Stiffness of the full-gradient inner product `(du, dv)`.
pub fn assemble_h1(mesh: &TriMesh) -> Csr {
    assemble(mesh, |k| {
        let (g, area) = p1_gradients(mesh, k);
        let mut e = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                let v = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                e[2 * i][2 * j] += v;
                e[2 * i + 1][2 * j + 1] += v;
            }
        }
        e
    })
}

/// Stiffness of the symmetric-gradient inner product `(sym du, sym dv)`.
pub fn assemble_hsym(mesh: &TriMesh) -> Csr {
    assemble(mesh, |k| {
        let (g, area) = p1_gradients(mesh, k);
        let mut e = [[0.0; 6]; 6];
        let mut s11 = [0.0; 6];
        let mut s22 = [0.0; 6];
        let mut s12 = [0.0; 6];
        for j in 0..3 {
            s11[2 * j] = g[j][0];
            s22[2 * j + 1] = g[j][1];
            s12[2 * j] = 0.5 * g[j][1];
            s12[2 * j + 1] = 0.5 * g[j][0];
        }
        rank_one_update(&mut e, &s11, area);
        rank_one_update(&mut e, &s22, area);
        rank_one_update(&mut e, &s12, 2.0 * area);
        e
    })
}

/// Stiffness of the antisymmetric-gradient part `(asym du, asym dv)`;
/// together with [`assemble_hsym`] it reconstructs [`assemble_h1`].
pub fn assemble_asym(mesh: &TriMesh) -> Csr {
    assemble(mesh, |k| {
        let (g, area) = p1_gradients(mesh, k);
        let mut e = [[0.0; 6]; 6];
        let mut a = [0.0; 6];
        for j in 0..3 {
            a[2 * j] = g[j][1];
            a[2 * j + 1] = -g[j][0];
        }
        rank_one_update(&mut e, &a, 0.5 * area);
        e
    })
}

/// Distance weight `mu = sqrt(eps / (d + eps))` evaluated at triangle
/// centroids.
pub fn weight_mu(mesh: &TriMesh, epsilon: f64) -> Vec<f64> {
    assert!(epsilon > 0.0);
    let centroids: Vec<[f64; 2]> = (0..mesh.n_triangles()).map(|k| mesh.centroid(k)).collect();
    boundary_distance(mesh, &centroids)
        .into_iter()
        .map(|d| (epsilon / (d + epsilon)).sqrt())
        .collect()
}

/// Gram matrix of the Cauchy-Riemann operator, `(mu Bu, mu Bv)`, with
/// `mu = 1` when `weighted` is off.
pub fn assemble_cr(mesh: &TriMesh, weighted: bool, epsilon: f64) -> Csr {
    let mu: Vec<f64> = if weighted {
        weight_mu(mesh, epsilon)
    } else {
        vec![1.0; mesh.n_triangles()]
    };
    assemble(mesh, |k| {
        let (g, area) = p1_gradients(mesh, k);
        let w = mu[k] * mu[k] * area;
        let mut e = [[0.0; 6]; 6];
        let mut b0 = [0.0; 6];
        let mut b1 = [0.0; 6];
        for j in 0..3 {
            b0[2 * j] = -g[j][0];
            b0[2 * j + 1] = g[j][1];
            b1[2 * j] = g[j][1];
            b1[2 * j + 1] = g[j][0];
        }
        rank_one_update(&mut e, &b0, w);
        rank_one_update(&mut e, &b1, w);
        e
    })
}

/// Cauchy-Riemann values per element: `Bu = (-dx u1 + dy u2, dy u1 + dx u2)`.
pub fn cr_values(mesh: &TriMesh, field: &[f64]) -> Vec<[f64; 2]> {
    assert_eq!(field.len(), 2 * mesh.n_nodes());
    exec::map_indexed(mesh.n_triangles(), |k| {
        let (g, _) = p1_gradients(mesh, k);
        let nodes = mesh.triangles[k];
        let mut dx1 = 0.0;
        let mut dy1 = 0.0;
        let mut dx2 = 0.0;
        let mut dy2 = 0.0;
        for (j, &n) in nodes.iter().enumerate() {
            dx1 += field[2 * n] * g[j][0];
            dy1 += field[2 * n] * g[j][1];
            dx2 += field[2 * n + 1] * g[j][0];
            dy2 += field[2 * n + 1] * g[j][1];
        }
        [-dx1 + dy2, dy1 + dx2]
    })
}

/// `||Bu||` in L2 over the mesh (unweighted); zero exactly for discretely
/// holomorphic fields.
pub fn cr_residual(mesh: &TriMesh, field: &[f64]) -> f64 {
    let values = cr_values(mesh, field);
    let mut acc = 0.0;
    for (k, b) in values.iter().enumerate() {
        acc += mesh.triangle_area(k) * (b[0] * b[0] + b[1] * b[1]);
    }
    acc.sqrt()
}

fn mean_rows(mesh: &TriMesh) -> [Vec<f64>; 2] {
    let n = 2 * mesh.n_nodes();
    let mut row_x = vec![0.0; n];
    let mut row_y = vec![0.0; n];
    for k in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(k);
        for &node in &mesh.triangles[k] {
            row_x[2 * node] += area / 3.0;
            row_y[2 * node + 1] += area / 3.0;
        }
    }
    [row_x, row_y]
}

fn rotation_row(mesh: &TriMesh) -> Vec<f64> {
    // Removes the rigid rotation (-y, x) from the symmetric-gradient null
    // space: integral of (dy u1 - dx u2) over the mesh.
    let n = 2 * mesh.n_nodes();
    let mut row = vec![0.0; n];
    for k in 0..mesh.n_triangles() {
        let (g, area) = p1_gradients(mesh, k);
        for (j, &node) in mesh.triangles[k].iter().enumerate() {
            row[2 * node] += area * g[j][1];
            row[2 * node + 1] -= area * g[j][0];
        }
    }
    row
}

/// Assembled metric with its factorized saddle-point (or clamped) system.
pub struct MetricOperator {
    n_nodes: usize,
    spec: InnerProductSpec,
    matrix: Csr,
    constraints: Vec<Vec<f64>>,
    clamped_nodes: Vec<bool>,
    solver: SymmetricSolver,
    /// Maps reduced (free) dof index to full dof index; identity for ring kinds.
    free_dofs: Vec<usize>,
}

/// Assemble the metric matrix, the constraint rows demanded by its null
/// space, and factorize the resulting system.
pub fn build_metric(mesh: &TriMesh, spec: &InnerProductSpec) -> Result<MetricOperator, FemError> {
    spec.validate()?;
    let base = match spec.kind {
        MetricKind::H1Ring | MetricKind::CrPlusH1 | MetricKind::H1Clamped => assemble_h1(mesh),
        MetricKind::HsymRing | MetricKind::CrPlusHsym | MetricKind::CrPlusHsymClamped => {
            assemble_hsym(mesh)
        }
    };
    let matrix = if spec.kind.has_cr() {
        let cr = assemble_cr(mesh, spec.weighted, spec.epsilon);
        base.add_scaled(&cr, 1.0 / spec.alpha)
    } else {
        base
    };

    let n_dofs = 2 * mesh.n_nodes();
    let mut clamped_nodes = vec![false; mesh.n_nodes()];
    if spec.kind.clamped() {
        for tag in &spec.clamped_tags {
            for node in mesh.nodes_with_tag(*tag) {
                clamped_nodes[node] = true;
            }
        }
    }

    let constraints: Vec<Vec<f64>> = if spec.kind.clamped() {
        Vec::new()
    } else {
        let [mx, my] = mean_rows(mesh);
        match spec.kind.base() {
            MetricKind::H1Ring => vec![mx, my],
            MetricKind::HsymRing => vec![mx, my, rotation_row(mesh)],
            _ => unreachable!(),
        }
    };

    // Node ordering by reverse Cuthill-McKee keeps the factor profile narrow.
    let node_order = reverse_cuthill_mckee(&mesh.node_adjacency());

    let (kkt, perm, signs, free_dofs) = if spec.kind.clamped() {
        let free_dofs: Vec<usize> = node_order
            .iter()
            .flat_map(|&n| [2 * n, 2 * n + 1])
            .filter(|&d| !clamped_nodes[d / 2])
            .collect();
        if free_dofs.is_empty() {
            return Err(FemError::FullyClamped);
        }
        let mut pos = vec![usize::MAX; n_dofs];
        for (i, &d) in free_dofs.iter().enumerate() {
            pos[d] = i;
        }
        let mut t = Vec::new();
        for r in 0..n_dofs {
            if pos[r] == usize::MAX {
                continue;
            }
            for k in matrix.indptr[r]..matrix.indptr[r + 1] {
                let c = matrix.indices[k];
                if pos[c] != usize::MAX {
                    t.push((pos[r], pos[c], matrix.data[k]));
                }
            }
        }
        let m = free_dofs.len();
        let kkt = Csr::from_triplets(m, m, t);
        let perm: Vec<usize> = (0..m).collect();
        (kkt, perm, vec![1.0; m], free_dofs)
    } else {
        let c = constraints.len();
        let size = n_dofs + c;
        let mut t = Vec::with_capacity(matrix.data.len() + 2 * c * n_dofs);
        for r in 0..n_dofs {
            for k in matrix.indptr[r]..matrix.indptr[r + 1] {
                t.push((r, matrix.indices[k], matrix.data[k]));
            }
        }
        for (ci, row) in constraints.iter().enumerate() {
            for (d, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((n_dofs + ci, d, v));
                    t.push((d, n_dofs + ci, v));
                }
            }
        }
        let kkt = Csr::from_triplets(size, size, t);
        let mut perm: Vec<usize> = node_order.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
        perm.extend(n_dofs..size);
        let mut signs = vec![1.0; size];
        for s in signs.iter_mut().skip(n_dofs) {
            *s = -1.0;
        }
        let free_dofs: Vec<usize> = (0..n_dofs).collect();
        (kkt, perm, signs, free_dofs)
    };

    let solver = SymmetricSolver::new(kkt, perm, &signs)?;
    Ok(MetricOperator {
        n_nodes: mesh.n_nodes(),
        spec: spec.clone(),
        matrix,
        constraints,
        clamped_nodes,
        solver,
        free_dofs,
    })
}

impl MetricOperator {
    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes
    }

    pub fn spec(&self) -> &InnerProductSpec {
        &self.spec
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn constraints(&self) -> &[Vec<f64>] {
        &self.constraints
    }

    pub fn is_clamped_node(&self, node: usize) -> bool {
        self.clamped_nodes[node]
    }

    /// Metric inner product of two coefficient vectors.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.matrix.quadratic_form(u, v)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// A * u (the Riesz operator applied to a primal vector).
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.matvec(u)
    }

    /// Solve for the shape gradient: `(g, v)_H = dual . v` for all
    /// constrained (or free) `v`. The returned vector satisfies the
    /// constraint rows, and vanishes on clamped nodes.
    pub fn riesz_gradient(&self, dual: &[f64]) -> Result<Vec<f64>, FemError> {
        assert_eq!(dual.len(), self.n_dofs());
        if self.spec.kind.clamped() {
            let rhs: Vec<f64> = self.free_dofs.iter().map(|&d| dual[d]).collect();
            let x = self.solver.solve(&rhs)?;
            let mut g = vec![0.0; self.n_dofs()];
            for (i, &d) in self.free_dofs.iter().enumerate() {
                g[d] = x[i];
            }
            Ok(g)
        } else {
            let mut rhs = vec![0.0; self.n_dofs() + self.constraints.len()];
            rhs[..self.n_dofs()].copy_from_slice(dual);
            let x = self.solver.solve(&rhs)?;
            Ok(x[..self.n_dofs()].to_vec())
        }
    }

    /// Project a vector onto the constraint null space (or zero clamped
    /// dofs), so it becomes an admissible test direction.
    pub fn project_admissible(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        if self.spec.kind.clamped() {
            for (node, &c) in self.clamped_nodes.iter().enumerate() {
                if c {
                    out[2 * node] = 0.0;
                    out[2 * node + 1] = 0.0;
                }
            }
            return out;
        }
        if self.constraints.is_empty() {
            return out;
        }
        let c = self.constraints.len();
        let mut gram = nalgebra::DMatrix::<f64>::zeros(c, c);
        let mut rhs = nalgebra::DVector::<f64>::zeros(c);
        for i in 0..c {
            for j in 0..c {
                gram[(i, j)] = self.constraints[i]
                    .iter()
                    .zip(&self.constraints[j])
                    .map(|(a, b)| a * b)
                    .sum();
            }
            rhs[i] = self.constraints[i].iter().zip(v).map(|(a, b)| a * b).sum();
        }
        let coef = gram.lu().solve(&rhs).expect("constraint rows are independent");
        for i in 0..c {
            for (o, r) in out.iter_mut().zip(&self.constraints[i]) {
                *o -= coef[i] * r;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{gen_annulus, gen_disc, TriMesh};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> TriMesh {
        TriMesh::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![
                (0, 1, BoundaryTag::Gamma),
                (1, 2, BoundaryTag::Gamma),
                (2, 3, BoundaryTag::Gamma),
                (3, 0, BoundaryTag::Gamma),
            ],
        )
        .unwrap()
    }

    fn nodal(mesh: &TriMesh, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * mesh.n_nodes());
        for p in &mesh.nodes {
            let val = f(p[0], p[1]);
            v.push(val[0]);
            v.push(val[1]);
        }
        v
    }

    fn random_field(mesh: &TriMesh, rng: &mut impl Rng) -> Vec<f64> {
        (0..2 * mesh.n_nodes()).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn h1_kernel_and_linear_field() {
        let mesh = unit_square();
        let a = assemble_h1(&mesh);
        let c = nodal(&mesh, |_, _| [0.3, -0.7]);
        assert!(a.quadratic_form(&c, &c).abs() < 1e-28);
        let u = nodal(&mesh, |x, _| [x, 0.0]);
        assert_relative_eq!(a.quadratic_form(&u, &u), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn h1_matches_elementwise_oracle() {
        let mesh = gen_disc(2.0, 4).unwrap();
        let a = assemble_h1(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&mesh, &mut rng);
        // Brute force: sum |du|^2 * area per element.
        let mut oracle = 0.0;
        for k in 0..mesh.n_triangles() {
            let (g, area) = p1_gradients(&mesh, k);
            let mut jac = [[0.0f64; 2]; 2];
            for (j, &n) in mesh.triangles[k].iter().enumerate() {
                for r in 0..2 {
                    for c in 0..2 {
                        jac[r][c] += u[2 * n + r] * g[j][c];
                    }
                }
            }
            oracle += area * jac.iter().flatten().map(|v| v * v).sum::<f64>();
        }
        assert_relative_eq!(a.quadratic_form(&u, &u), oracle, epsilon = 1e-12, max_relative = 1e-12);
    }

    #[test]
    fn hsym_kernel_and_dilation() {
        let mesh = gen_disc(1.0, 3).unwrap();
        let a = assemble_hsym(&mesh);
        let rot = nodal(&mesh, |x, y| [-y, x]);
        let rel = a.quadratic_form(&rot, &rot) / a.quadratic_form(&nodal(&mesh, |x, y| [x, y]), &nodal(&mesh, |x, y| [x, y]));
        assert!(rel.abs() < 1e-24, "rotation quadratic form {rel:e}");
        let dil = nodal(&mesh, |x, y| [x, y]);
        assert_relative_eq!(a.quadratic_form(&dil, &dil), 2.0 * mesh.total_area(), max_relative = 1e-12);
    }

    #[test]
    fn gradient_splits_into_sym_and_asym() {
        let mesh = gen_disc(1.5, 4).unwrap();
        let h1 = assemble_h1(&mesh);
        let sym = assemble_hsym(&mesh);
        let asym = assemble_asym(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let u = random_field(&mesh, &mut rng);
            let lhs = sym.quadratic_form(&u, &u) + asym.quadratic_form(&u, &u);
            let rhs = h1.quadratic_form(&u, &u);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn cr_kernel_holomorphic_fields_and_antiholomorphic_value() {
        let mesh = unit_square();
        let a = assemble_cr(&mesh, false, 1.0);
        for field in [
            nodal(&mesh, |x, y| [x, y]),
            nodal(&mesh, |x, y| [-y, x]),
            nodal(&mesh, |_, _| [1.0, 2.0]),
        ] {
            assert!(a.quadratic_form(&field, &field).abs() < 1e-26);
        }
        // u = (x, -y): Bu = (-2, 0), so the form is 4 on a unit-area domain.
        let anti = nodal(&mesh, |x, y| [x, -y]);
        assert_relative_eq!(a.quadratic_form(&anti, &anti), 4.0, epsilon = 1e-12);
        assert_relative_eq!(cr_residual(&mesh, &anti), 2.0, epsilon = 1e-12);
        assert_relative_eq!(
            cr_residual(&mesh, &anti),
            a.quadratic_form(&anti, &anti).sqrt(),
            epsilon = 1e-12
        );
        assert!(cr_residual(&mesh, &nodal(&mesh, |x, y| [x, y])) < 1e-14);
    }

    #[test]
    fn mu_weight_values() {
        let mesh = gen_disc(3.0, 6).unwrap();
        let eps = 0.25;
        let boundary_node = mesh.nodes[mesh.boundary_edges[0].0];
        let d = boundary_distance(&mesh, &[boundary_node, [0.0, 0.0]]);
        let mu_at = |dist: f64| (eps / (dist + eps)).sqrt();
        assert_relative_eq!(mu_at(d[0]), 1.0, epsilon = 1e-12);
        assert_relative_eq!(mu_at(eps), 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        // Monotone decay in distance, values in (0, 1].
        let mu = weight_mu(&mesh, eps);
        for &m in &mu {
            assert!(m > 0.0 && m <= 1.0);
        }
        let far = mu_at(1e9);
        assert!(far < 1e-4);
    }

    #[test]
    fn weighted_assembly_with_huge_epsilon_matches_unweighted() {
        let mesh = gen_disc(2.0, 4).unwrap();
        let unweighted = assemble_cr(&mesh, false, 1.0);
        let weighted = assemble_cr(&mesh, true, 1e12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..4 {
            let u = random_field(&mesh, &mut rng);
            let a = unweighted.quadratic_form(&u, &u);
            let b = weighted.quadratic_form(&u, &u);
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn cr_plus_hsym_combination_is_entrywise_sum() {
        let mesh = gen_disc(1.0, 3).unwrap();
        let spec = InnerProductSpec {
            kind: MetricKind::CrPlusHsym,
            alpha: 1e-2,
            weighted: false,
            epsilon: 1.0,
            clamped_tags: vec![],
        };
        let metric = build_metric(&mesh, &spec).unwrap();
        let expected = assemble_hsym(&mesh).add_scaled(&assemble_cr(&mesh, false, 1.0), 1e2);
        let got = metric.matrix();
        assert_eq!(got.indptr, expected.indptr);
        assert_eq!(got.indices, expected.indices);
        for (a, b) in got.data.iter().zip(&expected.data) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn clamped_metric_is_positive_definite() {
        let mesh = gen_annulus(0.5, 1.0, 2).unwrap();
        let spec = InnerProductSpec {
            kind: MetricKind::H1Clamped,
            alpha: 1.0,
            weighted: false,
            epsilon: 1.0,
            clamped_tags: vec![BoundaryTag::GammaInf],
        };
        let metric = build_metric(&mesh, &spec).unwrap();
        // Dense eigenvalue oracle on the reduced matrix.
        let free: Vec<usize> = (0..2 * mesh.n_nodes())
            .filter(|d| !metric.is_clamped_node(d / 2))
            .collect();
        let m = free.len();
        let mut dense = nalgebra::DMatrix::zeros(m, m);
        for (i, &di) in free.iter().enumerate() {
            for (j, &dj) in free.iter().enumerate() {
                dense[(i, j)] = metric.matrix().get(di, dj);
            }
        }
        let eig = dense.symmetric_eigen();
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(min > 1e-8, "smallest eigenvalue {min:e}");
    }

    #[test]
    fn riesz_gradient_identities() {
        let mesh = gen_disc(2.0, 4).unwrap();
        for kind in [MetricKind::H1Ring, MetricKind::HsymRing, MetricKind::CrPlusHsym] {
            let spec = InnerProductSpec {
                kind,
                alpha: 0.1,
                weighted: false,
                epsilon: 1.0,
                clamped_tags: vec![],
            };
            let metric = build_metric(&mesh, &spec).unwrap();
            // dJ = 0 -> g = 0
            let zero = metric.riesz_gradient(&vec![0.0; metric.n_dofs()]).unwrap();
            assert!(zero.iter().all(|&v| v == 0.0));

            // Inverse consistency: dJ = A w for a constrained w.
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let w = metric.project_admissible(&random_field(&mesh, &mut rng));
            let dual = metric.apply(&w);
            let g = metric.riesz_gradient(&dual).unwrap();
            let diff: f64 = g.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff <= 1e-9 * scale, "kind {kind:?}: diff {diff:e} scale {scale:e}");

            // Defining identity on random constrained test vectors.
            let dual = random_field(&mesh, &mut rng);
            let g = metric.riesz_gradient(&dual).unwrap();
            for _ in 0..20 {
                let v = metric.project_admissible(&random_field(&mesh, &mut rng));
                let lhs = metric.inner(&v, &g);
                let rhs: f64 = dual.iter().zip(&v).map(|(a, b)| a * b).sum();
                let denom = v.iter().map(|x| x * x).sum::<f64>().sqrt()
                    * dual.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((lhs - rhs).abs() <= 1e-10 * denom.max(1e-30));
            }
            // Constraint rows are satisfied by the gradient.
            for row in metric.constraints() {
                let val: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
                let scale: f64 = row.iter().map(|v| v.abs()).sum();
                assert!(val.abs() < 1e-9 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn descent_property() {
        let mesh = gen_disc(1.0, 3).unwrap();
        let spec = InnerProductSpec {
            kind: MetricKind::CrPlusH1,
            alpha: 1e-2,
            weighted: false,
            epsilon: 1.0,
            clamped_tags: vec![],
        };
        let metric = build_metric(&mesh, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let dual = random_field(&mesh, &mut rng);
            let g = metric.riesz_gradient(&dual).unwrap();
            let slope: f64 = dual.iter().zip(&g).map(|(a, b)| a * -b).sum();
            assert!(slope < 0.0);
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let spec = InnerProductSpec {
            kind: MetricKind::CrPlusHsym,
            alpha: -1.0,
            weighted: false,
            epsilon: 1.0,
            clamped_tags: vec![],
        };
        assert!(spec.validate().is_err());
        let spec = InnerProductSpec {
            kind: MetricKind::H1Clamped,
            alpha: 1.0,
            weighted: false,
            epsilon: 1.0,
            clamped_tags: vec![],
        };
        assert!(spec.validate().is_err());
    }
}
