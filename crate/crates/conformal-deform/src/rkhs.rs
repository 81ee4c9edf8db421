//! Reproducing-kernel deformation backend built on the compactly supported
//! Wendland kernel `phi(r) = (1 - r)^4_+ (4r + 1)`.
//!
//! Deformations live in the span of kernel translates at a set of centers.
//! Conformality is enforced pointwise: the Cauchy-Riemann operator of the
//! expansion field is evaluated at a finite set of points and penalized in
//! the metric. Coefficient vectors are component-major: the first N entries
//! expand the x component, the last N the y component.

use crate::exec;
use crate::mesh::{TriMesh, VectorField};
use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RkhsError {
    #[error("kernel matrix is not positive definite (duplicate centers?)")]
    NotPositiveDefinite,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Lowest-order Wendland kernel that is positive definite and C^2 in 2D.
pub fn wendland_phi(r: f64) -> f64 {
    debug_assert!(r >= 0.0);
    let t = 1.0 - r;
    if t <= 0.0 {
        0.0
    } else {
        t.powi(4) * (4.0 * r + 1.0)
    }
}

/// d phi / d r = -20 r (1 - r)^3 on the support.
pub fn wendland_phi_deriv(r: f64) -> f64 {
    debug_assert!(r >= 0.0);
    let t = 1.0 - r;
    if t <= 0.0 {
        0.0
    } else {
        -20.0 * r * t.powi(3)
    }
}

fn kernel(x: [f64; 2], y: [f64; 2], sigma: f64) -> f64 {
    let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt() / sigma;
    wendland_phi(r)
}

/// Gradient of `y -> k(x, y)`; zero at `y = x` because the kernel is radial
/// and smooth at the origin.
fn kernel_grad_second(x: [f64; 2], y: [f64; 2], sigma: f64) -> [f64; 2] {
    let dx = [y[0] - x[0], y[1] - x[1]];
    let dist = (dx[0] * dx[0] + dx[1] * dx[1]).sqrt();
    if dist == 0.0 || dist >= sigma {
        return [0.0, 0.0];
    }
    let r = dist / sigma;
    let dphi = wendland_phi_deriv(r) / sigma;
    [dphi * dx[0] / dist, dphi * dx[1] / dist]
}

/// Kernel Gram matrix `K(i, j) = k(x_i, x_j)` for one component.
pub fn kernel_matrix(centers: &[[f64; 2]], sigma: f64) -> DMatrix<f64> {
    let n = centers.len();
    let rows = exec::map_indexed(n, |i| {
        let mut row = vec![0.0; n];
        for j in 0..n {
            row[j] = kernel(centers[i], centers[j], sigma);
        }
        row
    });
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Point-evaluation matrices of the kernel derivatives:
/// `B1(l, j) = d/dy1 k(x_j, y) at p_l`, likewise `B2` for `y2`, plus the
/// assembled `B` with block layout `[[-B1, B2], [B2, B1]]` mapping
/// component-major coefficients to Cauchy-Riemann values at the points.
pub fn cr_point_matrices(
    centers: &[[f64; 2]],
    sigma: f64,
    cr_points: &[[f64; 2]],
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (n_c, n_p) = (centers.len(), cr_points.len());
    let rows = exec::map_indexed(n_p, |l| {
        let mut row = vec![[0.0f64; 2]; n_c];
        for j in 0..n_c {
            row[j] = kernel_grad_second(centers[j], cr_points[l], sigma);
        }
        row
    });
    let b1 = DMatrix::from_fn(n_p, n_c, |l, j| rows[l][j][0]);
    let b2 = DMatrix::from_fn(n_p, n_c, |l, j| rows[l][j][1]);
    let mut b = DMatrix::zeros(2 * n_p, 2 * n_c);
    b.view_mut((0, 0), (n_p, n_c)).copy_from(&(-&b1));
    b.view_mut((0, n_c), (n_p, n_c)).copy_from(&b2);
    b.view_mut((n_p, 0), (n_p, n_c)).copy_from(&b2);
    b.view_mut((n_p, n_c), (n_p, n_c)).copy_from(&b1);
    (b1, b2, b)
}

/// Assembled matrices of the pointwise-penalized kernel problem.
pub struct KernelSystem {
    pub k_tilde: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Per-point weights, applied to both CR components.
    pub mu: Vec<f64>,
    pub n_centers: usize,
    pub n_points: usize,
}

impl KernelSystem {
    pub fn new(
        centers: &[[f64; 2]],
        sigma: f64,
        cr_points: &[[f64; 2]],
        mu: Option<Vec<f64>>,
    ) -> Result<KernelSystem, RkhsError> {
        if !(sigma > 0.0) {
            return Err(RkhsError::BadParameter(format!("sigma must be positive, got {sigma}")));
        }
        let mu = mu.unwrap_or_else(|| vec![1.0; cr_points.len()]);
        if mu.len() != cr_points.len() {
            return Err(RkhsError::BadParameter("mu length must match cr_points".into()));
        }
        let k_tilde = kernel_matrix(centers, sigma);
        let (_, _, b) = cr_point_matrices(centers, sigma, cr_points);
        Ok(KernelSystem { k_tilde, b, mu, n_centers: centers.len(), n_points: cr_points.len() })
    }

    /// `(1/n) B^T W B + alpha K` over component-major coefficients.
    pub fn system_matrix(&self, alpha: f64) -> DMatrix<f64> {
        let n2 = 2 * self.n_centers;
        let mut m = DMatrix::zeros(n2, n2);
        if self.n_points > 0 {
            let mut wb = self.b.clone();
            for l in 0..self.n_points {
                let w = self.mu[l];
                for c in 0..n2 {
                    wb[(l, c)] *= w;
                    wb[(self.n_points + l, c)] *= w;
                }
            }
            m = wb.transpose() * &wb / self.n_points as f64;
        }
        for i in 0..self.n_centers {
            for j in 0..self.n_centers {
                let v = alpha * self.k_tilde[(i, j)];
                m[(i, j)] += v;
                m[(self.n_centers + i, self.n_centers + j)] += v;
            }
        }
        m
    }

    /// CR values of the expansion field at the points, as (n, 2) pairs.
    pub fn cr_at_points(&self, coeffs: &[f64]) -> Vec<[f64; 2]> {
        let c = DVector::from_column_slice(coeffs);
        let bv = &self.b * c;
        (0..self.n_points).map(|l| [bv[l], bv[self.n_points + l]]).collect()
    }

    pub fn max_cr_at_points(&self, coeffs: &[f64]) -> f64 {
        self.cr_at_points(coeffs)
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
            .fold(0.0, f64::max)
    }

    /// `u^T K v` (the squared kernel-space norm for u = v).
    pub fn k_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.n_centers;
        let mut acc = 0.0;
        for comp in 0..2 {
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    row += self.k_tilde[(i, j)] * v[comp * n + j];
                }
                acc += u[comp * n + i] * row;
            }
        }
        acc
    }
}

/// Solve `((1/n) B^T W B + alpha K) c = F`.
pub fn solve_kernel_gradient(
    system: &KernelSystem,
    alpha: f64,
    rhs: &[f64],
) -> Result<Vec<f64>, RkhsError> {
    if !(alpha > 0.0) {
        return Err(RkhsError::BadParameter(format!("alpha must be positive, got {alpha}")));
    }
    let m = system.system_matrix(alpha);
    let chol = Cholesky::new(m.clone()).ok_or(RkhsError::NotPositiveDefinite)?;
    let b = DVector::from_column_slice(rhs);
    let mut x = chol.solve(&b);
    // One refinement pass keeps the relative residual near machine precision.
    let r = &b - &m * &x;
    x += chol.solve(&r);
    Ok(x.as_slice().to_vec())
}

/// Interpolation matrix from kernel coefficients to nodal values of one
/// component: `I(i, j) = k(x_j, node_i)`.
pub fn interpolation_matrix(
    centers: &[[f64; 2]],
    sigma: f64,
    fem_nodes: &[[f64; 2]],
) -> DMatrix<f64> {
    let rows = exec::map_indexed(fem_nodes.len(), |i| {
        let mut row = vec![0.0; centers.len()];
        for j in 0..centers.len() {
            row[j] = kernel(centers[j], fem_nodes[i], sigma);
        }
        row
    });
    DMatrix::from_fn(fem_nodes.len(), centers.len(), |i, j| rows[i][j])
}

/// Kernel centers, penalty points and expansion coefficients of a
/// deformation field.
pub struct KernelModel {
    pub centers: Vec<[f64; 2]>,
    pub sigma: f64,
    pub cr_points: Vec<[f64; 2]>,
    pub mu: Vec<f64>,
    pub coefficients: Vec<f64>,
}

/// Evaluate the expansion field at the mesh nodes.
pub fn kernel_field_to_vectorfield(model: &KernelModel, mesh: &TriMesh) -> VectorField {
    let interp = interpolation_matrix(&model.centers, model.sigma, &mesh.nodes);
    let n = model.centers.len();
    let c1 = DVector::from_column_slice(&model.coefficients[..n]);
    let c2 = DVector::from_column_slice(&model.coefficients[n..]);
    let v1 = &interp * c1;
    let v2 = &interp * c2;
    VectorField {
        values: (0..mesh.n_nodes()).map(|i| [v1[i], v2[i]]).collect(),
    }
}
