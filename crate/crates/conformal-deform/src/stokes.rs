//! Stokes flow in a channel with an obstacle: mini-element (P1 + bubble
//! velocity, P1 pressure) solver, dissipated-energy functional, its shape
//! derivative, and the volume/barycentre constraint machinery.
//!
//! The element bubble is condensed before the global solve, leaving a
//! symmetric quasi-definite system over nodal velocities, nodal pressures
//! and one multiplier enforcing the zero pressure mean.

use crate::exec;
use crate::fem::p1_gradients;
use crate::functionals::{levelset_shape_dual, levelset_value, Levelset, ShapeDual};
use crate::mesh::{BoundaryTag, TriMesh};
use crate::optim::Objective;
use crate::sparse::{reverse_cuthill_mckee, Csr, SolverError, SymmetricSolver};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StokesError {
    #[error("mesh has no {0} boundary nodes; check boundary tags")]
    MissingBoundary(&'static str),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("obstacle area is not positive (mesh covers the whole box?)")]
    EmptyObstacle,
}

/// Discrete Stokes state: nodal velocity (with boundary data in place),
/// per-element bubble coefficients, and zero-mean nodal pressure.
#[derive(Debug, Clone)]
pub struct StokesSolution {
    pub velocity: Vec<[f64; 2]>,
    pub bubbles: Vec<[f64; 2]>,
    pub pressure: Vec<f64>,
}

struct ElementData {
    grads: [[f64; 2]; 3],
    area: f64,
    /// Bubble stiffness: integral of |grad b|^2 (same for both components).
    k_bubble: f64,
    /// Bubble-pressure coupling: c_i = integral of lambda_i grad(b).
    coupling: [[f64; 2]; 3],
}

fn element_data(mesh: &TriMesh, k: usize) -> ElementData {
    let (grads, area) = p1_gradients(mesh, k);
    let sum_g2: f64 = grads.iter().map(|g| g[0] * g[0] + g[1] * g[1]).sum();
    let k_bubble = 4.05 * area * sum_g2;
    let mut coupling = [[0.0; 2]; 3];
    for i in 0..3 {
        coupling[i] = [-0.45 * area * grads[i][0], -0.45 * area * grads[i][1]];
    }
    ElementData { grads, area, k_bubble, coupling }
}

/// Gradient of the element bubble 27 l1 l2 l3 at barycentric coordinates.
fn bubble_gradient(data: &ElementData, lam: [f64; 3]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for a in 0..3 {
        let m = lam[(a + 1) % 3] * lam[(a + 2) % 3];
        g[0] += 27.0 * m * data.grads[a][0];
        g[1] += 27.0 * m * data.grads[a][1];
    }
    g
}

fn boundary_values(mesh: &TriMesh, u_inf: [f64; 2]) -> Result<Vec<Option<[f64; 2]>>, StokesError> {
    let tags = mesh.node_tags();
    let mut any_inf = false;
    let mut any_gamma = false;
    let values = tags
        .iter()
        .map(|t| match t {
            BoundaryTag::GammaInf => {
                any_inf = true;
                Some(u_inf)
            }
            BoundaryTag::Gamma => {
                any_gamma = true;
                Some([0.0, 0.0])
            }
            BoundaryTag::None => None,
        })
        .collect();
    if !any_inf {
        return Err(StokesError::MissingBoundary("GAMMA_INF"));
    }
    if !any_gamma {
        return Err(StokesError::MissingBoundary("GAMMA"));
    }
    Ok(values)
}

/// Solve the mixed weak form with velocity data `u_inf` on `GAMMA_INF` and
/// no-slip on `GAMMA`. Bubbles are condensed elementwise; the pressure mean
/// is pinned by a single multiplier row.
pub fn solve_stokes(mesh: &TriMesh, u_inf: [f64; 2]) -> Result<StokesSolution, StokesError> {
    let n = mesh.n_nodes();
    let dirichlet = boundary_values(mesh, u_inf)?;
    let elements: Vec<ElementData> = exec::map_indexed(mesh.n_triangles(), |k| element_data(mesh, k));

    // Unknown layout: free velocity dofs, then all pressures, then the mean
    // multiplier. Node order from RCM keeps the profile narrow.
    let node_order = reverse_cuthill_mckee(&mesh.node_adjacency());
    let mut u_index = vec![usize::MAX; 2 * n];
    let mut next = 0usize;
    for &node in &node_order {
        if dirichlet[node].is_none() {
            u_index[2 * node] = next;
            u_index[2 * node + 1] = next + 1;
            next += 2;
        }
    }
    let n_u = next;
    let mut p_index = vec![usize::MAX; n];
    for (offset, &node) in node_order.iter().enumerate() {
        p_index[node] = n_u + offset;
    }
    let size = n_u + n + 1;
    let mean_row = size - 1;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs = vec![0.0f64; size];

    for (k, data) in elements.iter().enumerate() {
        let nodes = mesh.triangles[k];
        // Velocity stiffness block (component-diagonal).
        for i in 0..3 {
            for j in 0..3 {
                let v = data.area
                    * (data.grads[i][0] * data.grads[j][0] + data.grads[i][1] * data.grads[j][1]);
                for r in 0..2 {
                    let gi = u_index[2 * nodes[i] + r];
                    if gi == usize::MAX {
                        continue;
                    }
                    match dirichlet[nodes[j]] {
                        None => triplets.push((gi, u_index[2 * nodes[j] + r], v)),
                        Some(val) => rhs[gi] -= v * val[r],
                    }
                }
            }
        }
        // Divergence coupling: momentum rows get -D^T p, continuity rows get
        // -D u (the continuity equations are negated for symmetry).
        for i in 0..3 {
            let pi = p_index[nodes[i]];
            for j in 0..3 {
                for r in 0..2 {
                    let v = data.area / 3.0 * data.grads[j][r];
                    let uj = u_index[2 * nodes[j] + r];
                    match dirichlet[nodes[j]] {
                        None => {
                            triplets.push((uj, pi, -v));
                            triplets.push((pi, uj, -v));
                        }
                        Some(val) => rhs[pi] += v * val[r],
                    }
                }
            }
        }
        // Condensed bubble: continuity rows gain -(1/k_b) c_i . c_l.
        for i in 0..3 {
            let pi = p_index[nodes[i]];
            for l in 0..3 {
                let v = (data.coupling[i][0] * data.coupling[l][0]
                    + data.coupling[i][1] * data.coupling[l][1])
                    / data.k_bubble;
                triplets.push((pi, p_index[nodes[l]], -v));
            }
        }
        // Zero-mean multiplier column on pressure rows (negated block).
        for i in 0..3 {
            let pi = p_index[nodes[i]];
            let w = data.area / 3.0;
            triplets.push((pi, mean_row, -w));
            triplets.push((mean_row, pi, -w));
        }
    }

    let kkt = Csr::from_triplets(size, size, triplets);
    let mut signs = vec![1.0; size];
    for s in signs.iter_mut().take(size).skip(n_u) {
        *s = -1.0;
    }
    // Interleave velocity and pressure unknowns along the RCM node order so
    // the skyline stays narrow; the multiplier goes last.
    let mut perm = Vec::with_capacity(size);
    for &node in &node_order {
        if u_index[2 * node] != usize::MAX {
            perm.push(u_index[2 * node]);
            perm.push(u_index[2 * node + 1]);
        }
        perm.push(p_index[node]);
    }
    perm.push(mean_row);
    let solver = SymmetricSolver::new(kkt, perm, &signs)?;
    let x = solver.solve(&rhs)?;

    let mut velocity = vec![[0.0f64; 2]; n];
    for node in 0..n {
        match dirichlet[node] {
            Some(val) => velocity[node] = val,
            None => {
                velocity[node] = [x[u_index[2 * node]], x[u_index[2 * node + 1]]];
            }
        }
    }
    let pressure: Vec<f64> = (0..n).map(|i| x[p_index[i]]).collect();
    let bubbles: Vec<[f64; 2]> = elements
        .iter()
        .enumerate()
        .map(|(k, data)| {
            let nodes = mesh.triangles[k];
            let mut b = [0.0; 2];
            for i in 0..3 {
                for r in 0..2 {
                    b[r] += pressure[nodes[i]] * data.coupling[i][r];
                }
            }
            [b[0] / data.k_bubble, b[1] / data.k_bubble]
        })
        .collect();
    Ok(StokesSolution { velocity, bubbles, pressure })
}

/// P1 velocity Jacobian on an element (constant part, without the bubble).
fn p1_jacobian(sol: &StokesSolution, nodes: [usize; 3], data: &ElementData) -> [[f64; 2]; 2] {
    let mut jac = [[0.0f64; 2]; 2];
    for (j, &node) in nodes.iter().enumerate() {
        for r in 0..2 {
            for c in 0..2 {
                jac[r][c] += sol.velocity[node][r] * data.grads[j][c];
            }
        }
    }
    jac
}

/// Dissipated energy `1/2 integral of du : du`, bubble contributions included.
pub fn dissipated_energy(mesh: &TriMesh, sol: &StokesSolution) -> f64 {
    let per_element = exec::map_indexed(mesh.n_triangles(), |k| {
        let data = element_data(mesh, k);
        let jac = p1_jacobian(sol, mesh.triangles[k], &data);
        let p1: f64 = jac.iter().flatten().map(|v| v * v).sum();
        let b = sol.bubbles[k];
        data.area * p1 + data.k_bubble * (b[0] * b[0] + b[1] * b[1])
    });
    0.5 * per_element.iter().sum::<f64>()
}

/// Discrete incompressibility residual: max over P1 test functions q of
/// `integral q div(u)` (normalized by the element scale).
pub fn incompressibility_residual(mesh: &TriMesh, sol: &StokesSolution) -> f64 {
    let n = mesh.n_nodes();
    let mut residual = vec![0.0f64; n];
    for k in 0..mesh.n_triangles() {
        let data = element_data(mesh, k);
        let nodes = mesh.triangles[k];
        let jac = p1_jacobian(sol, nodes, &data);
        let div_p1 = jac[0][0] + jac[1][1];
        for i in 0..3 {
            residual[nodes[i]] += data.area / 3.0 * div_p1;
            residual[nodes[i]] += sol.bubbles[k][0] * data.coupling[i][0]
                + sol.bubbles[k][1] * data.coupling[i][1];
        }
    }
    residual.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

const QUAD7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    (
        [0.797426985353087, 0.101286507323456, 0.101286507323456],
        0.125939180544827,
    ),
    (
        [0.101286507323456, 0.797426985353087, 0.101286507323456],
        0.125939180544827,
    ),
    (
        [0.101286507323456, 0.101286507323456, 0.797426985353087],
        0.125939180544827,
    ),
    (
        [0.059715871789770, 0.470142064105115, 0.470142064105115],
        0.132394152788506,
    ),
    (
        [0.470142064105115, 0.059715871789770, 0.470142064105115],
        0.132394152788506,
    ),
    (
        [0.470142064105115, 0.470142064105115, 0.059715871789770],
        0.132394152788506,
    ),
];

/// Shape derivative of the dissipated energy in volume form:
/// `S1 = (1/2 du:du - p div u) I + p du^T - du^T du`, integrated with a
/// degree-5 rule so the bubble terms are exact. Entries on nodes carrying
/// one of `clamped_tags` are zeroed (test fields vanish there).
pub fn stokes_shape_dual(
    mesh: &TriMesh,
    sol: &StokesSolution,
    clamped_tags: &[BoundaryTag],
) -> ShapeDual {
    let locals = exec::map_indexed(mesh.n_triangles(), |k| {
        let data = element_data(mesh, k);
        let nodes = mesh.triangles[k];
        let g_p1 = p1_jacobian(sol, nodes, &data);
        let b = sol.bubbles[k];
        // M = integral of S1 over the element.
        let mut m = [[0.0f64; 2]; 2];
        for (lam, w) in QUAD7 {
            let gb = bubble_gradient(&data, lam);
            let mut du = g_p1;
            for r in 0..2 {
                for c in 0..2 {
                    du[r][c] += b[r] * gb[c];
                }
            }
            let p: f64 = (0..3).map(|i| sol.pressure[nodes[i]] * lam[i]).sum();
            let du_frob: f64 = du.iter().flatten().map(|v| v * v).sum();
            let div_u = du[0][0] + du[1][1];
            let diag = 0.5 * du_frob - p * div_u;
            for r in 0..2 {
                for c in 0..2 {
                    let mut s = if r == c { diag } else { 0.0 };
                    s += p * du[c][r];
                    s -= du[0][r] * du[0][c] + du[1][r] * du[1][c];
                    m[r][c] += w * data.area * s;
                }
            }
        }
        let mut local = [[0.0f64; 2]; 3];
        for j in 0..3 {
            for r in 0..2 {
                local[j][r] = m[r][0] * data.grads[j][0] + m[r][1] * data.grads[j][1];
            }
        }
        local
    });
    let mut values = vec![0.0; 2 * mesh.n_nodes()];
    for (k, local) in locals.iter().enumerate() {
        for (j, &node) in mesh.triangles[k].iter().enumerate() {
            values[2 * node] += local[j][0];
            values[2 * node + 1] += local[j][1];
        }
    }
    let tags = mesh.node_tags();
    for (node, tag) in tags.iter().enumerate() {
        if clamped_tags.contains(tag) {
            values[2 * node] = 0.0;
            values[2 * node + 1] = 0.0;
        }
    }
    ShapeDual { values, provenance: "stokes-energy".into() }
}

/// Volume and barycentre of the obstacle (the complement of the mesh inside
/// the channel box), with their shape duals in volume form.
pub struct ObstacleGeometry {
    pub volume: f64,
    pub barycentre: [f64; 2],
    pub volume_dual: Vec<f64>,
    pub barycentre_dual: [Vec<f64>; 2],
}

pub fn obstacle_geometry(
    mesh: &TriMesh,
    half_width: f64,
    half_height: f64,
) -> Result<ObstacleGeometry, StokesError> {
    let box_area = 4.0 * half_width * half_height;
    let area = levelset_value(mesh, &Levelset::Constant { value: 1.0 });
    let volume = box_area - area;
    if volume <= 0.0 {
        return Err(StokesError::EmptyObstacle);
    }
    // First moments over the box vanish (box centered at the origin).
    let mx = -levelset_value(mesh, &Levelset::LinearX);
    let my = -levelset_value(mesh, &Levelset::LinearY);
    let barycentre = [mx / volume, my / volume];

    let area_dual = levelset_shape_dual(mesh, &Levelset::Constant { value: 1.0 });
    let mx_dual = levelset_shape_dual(mesh, &Levelset::LinearX);
    let my_dual = levelset_shape_dual(mesh, &Levelset::LinearY);
    let volume_dual: Vec<f64> = area_dual.values.iter().map(|v| -v).collect();
    // Quotient rule for barycentre = m / volume.
    let bc_dual = |m_dual: &[f64], bc: f64| -> Vec<f64> {
        m_dual
            .iter()
            .zip(&volume_dual)
            .map(|(dm, dv)| (-dm - bc * dv) / volume)
            .collect()
    };
    let barycentre_dual = [
        bc_dual(&mx_dual.values, barycentre[0]),
        bc_dual(&my_dual.values, barycentre[1]),
    ];
    Ok(ObstacleGeometry { volume, barycentre, volume_dual, barycentre_dual })
}

/// Multipliers and penalty of the augmented Lagrangian for the volume and
/// barycentre equality constraints.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConstraintState {
    pub target_volume: f64,
    pub target_barycentre: [f64; 2],
    pub lambda: [f64; 3],
    pub rho: f64,
}

impl ConstraintState {
    pub fn new(target_volume: f64, target_barycentre: [f64; 2], rho: f64) -> ConstraintState {
        ConstraintState { target_volume, target_barycentre, lambda: [0.0; 3], rho }
    }

    pub fn constraint_values(&self, geom: &ObstacleGeometry) -> [f64; 3] {
        [
            geom.volume - self.target_volume,
            geom.barycentre[0] - self.target_barycentre[0],
            geom.barycentre[1] - self.target_barycentre[1],
        ]
    }

    /// Merged value `J + lambda . c + (rho/2) |c|^2`.
    pub fn merged_value(&self, j: f64, c: [f64; 3]) -> f64 {
        let penalty: f64 = c.iter().map(|v| v * v).sum();
        j + self.lambda.iter().zip(&c).map(|(l, v)| l * v).sum::<f64>() + 0.5 * self.rho * penalty
    }

    /// Merged dual `J' + sum (lambda_i + rho c_i) c_i'`.
    pub fn merged_dual(&self, j_dual: &[f64], c: [f64; 3], c_duals: [&[f64]; 3]) -> Vec<f64> {
        let mut out = j_dual.to_vec();
        for i in 0..3 {
            let w = self.lambda[i] + self.rho * c[i];
            for (o, d) in out.iter_mut().zip(c_duals[i]) {
                *o += w * d;
            }
        }
        out
    }

    /// First-order multiplier update after an inner solve.
    pub fn update_multipliers(&mut self, c: [f64; 3]) {
        for (l, v) in self.lambda.iter_mut().zip(&c) {
            *l += self.rho * v;
        }
    }
}

/// Augmented-Lagrangian Stokes energy objective over a channel mesh.
pub struct AugmentedStokes {
    pub u_inf: [f64; 2],
    pub half_width: f64,
    pub half_height: f64,
    pub state: ConstraintState,
    pub clamped_tags: Vec<BoundaryTag>,
}

impl AugmentedStokes {
    pub fn geometry(&self, mesh: &TriMesh) -> Result<ObstacleGeometry, StokesError> {
        obstacle_geometry(mesh, self.half_width, self.half_height)
    }
}

impl Objective for AugmentedStokes {
    fn eval(
        &self,
        _reference: &TriMesh,
        _displacement: &[f64],
        deformed: &TriMesh,
    ) -> Result<(f64, Vec<f64>), String> {
        let sol = solve_stokes(deformed, self.u_inf).map_err(|e| e.to_string())?;
        let j = dissipated_energy(deformed, &sol);
        let j_dual = stokes_shape_dual(deformed, &sol, &self.clamped_tags);
        let geom = self.geometry(deformed).map_err(|e| e.to_string())?;
        let c = self.state.constraint_values(&geom);
        let value = self.state.merged_value(j, c);
        let mut dual = self.state.merged_dual(
            &j_dual.values,
            c,
            [
                &geom.volume_dual,
                &geom.barycentre_dual[0],
                &geom.barycentre_dual[1],
            ],
        );
        // Constraint duals also act only on the free boundary.
        let tags = deformed.node_tags();
        for (node, tag) in tags.iter().enumerate() {
            if self.clamped_tags.contains(tag) {
                dual[2 * node] = 0.0;
                dual[2 * node + 1] = 0.0;
            }
        }
        Ok((value, dual))
    }
}
