//! Levelset shape functionals: values by quadrature over the mesh and
//! shape derivatives in volume (tensor) form.
//!
//! For `J(M) = integral of f over M`, the derivative in direction `X` is
//! `integral of f div(X) + grad(f) . X`, assembled per element with the
//! same 3-point edge-midpoint rule used for the value, so the assembled
//! dual is the exact derivative of the discrete value.

use crate::exec;
use crate::fem::p1_gradients;
use crate::mesh::{apply_displacement, validate, MeshError, TriMesh, VectorField};
use serde::{Deserialize, Serialize};

/// The levelset families used by the experiments, plus two trivial test
/// functions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Levelset {
    Clover { a: f64, b: f64, eps: f64 },
    AnnulusRadii { r_prime: f64 },
    Constant { value: f64 },
    LinearX,
    LinearY,
}

impl Levelset {
    pub fn clover_default() -> Levelset {
        Levelset::Clover { a: 0.8, b: 2.0, eps: 0.001 }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            Levelset::Clover { a, b, eps } => {
                clover_factors(x, y, a, b).iter().product::<f64>() - eps
            }
            Levelset::AnnulusRadii { r_prime } => {
                let r = (x * x + y * y).sqrt();
                (r - 1.0) * (r - r_prime)
            }
            Levelset::Constant { value } => value,
            Levelset::LinearX => x,
            Levelset::LinearY => y,
        }
    }

    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            Levelset::Clover { a, b, .. } => {
                let f = clover_factors(x, y, a, b);
                let g = clover_factor_gradients(x, y, a, b);
                let mut grad = [0.0, 0.0];
                for i in 0..4 {
                    let mut rest = 1.0;
                    for (j, fj) in f.iter().enumerate() {
                        if j != i {
                            rest *= fj;
                        }
                    }
                    grad[0] += g[i][0] * rest;
                    grad[1] += g[i][1] * rest;
                }
                grad
            }
            Levelset::AnnulusRadii { r_prime } => {
                let r = (x * x + y * y).sqrt();
                if r == 0.0 {
                    return [0.0, 0.0];
                }
                let df = 2.0 * r - 1.0 - r_prime;
                [df * x / r, df * y / r]
            }
            Levelset::Constant { .. } => [0.0, 0.0],
            Levelset::LinearX => [1.0, 0.0],
            Levelset::LinearY => [0.0, 1.0],
        }
    }
}

fn clover_factors(x: f64, y: f64, a: f64, b: f64) -> [f64; 4] {
    [
        ((x - a).powi(2) + b * y * y).sqrt() - 1.0,
        ((x + a).powi(2) + b * y * y).sqrt() - 1.0,
        (b * x * x + (y - a).powi(2)).sqrt() - 1.0,
        (b * x * x + (y + a).powi(2)).sqrt() - 1.0,
    ]
}

fn clover_factor_gradients(x: f64, y: f64, a: f64, b: f64) -> [[f64; 2]; 4] {
    let safe = |r: f64| if r == 0.0 { f64::INFINITY } else { r };
    let r1 = safe(((x - a).powi(2) + b * y * y).sqrt());
    let r2 = safe(((x + a).powi(2) + b * y * y).sqrt());
    let r3 = safe((b * x * x + (y - a).powi(2)).sqrt());
    let r4 = safe((b * x * x + (y + a).powi(2)).sqrt());
    [
        [(x - a) / r1, b * y / r1],
        [(x + a) / r2, b * y / r2],
        [b * x / r3, (y - a) / r3],
        [b * x / r4, (y + a) / r4],
    ]
}

/// Dual vector over the 2N node-interleaved displacement coefficients.
#[derive(Debug, Clone)]
pub struct ShapeDual {
    pub values: Vec<f64>,
    pub provenance: String,
}

impl ShapeDual {
    pub fn pair(&self, direction: &[f64]) -> f64 {
        self.values.iter().zip(direction).map(|(a, b)| a * b).sum()
    }
}

const MIDPOINTS: [[f64; 3]; 3] = [
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
];

/// Order-2 quadrature of the levelset over the mesh.
pub fn levelset_value(mesh: &TriMesh, lf: &Levelset) -> f64 {
    let per_element = exec::map_indexed(mesh.n_triangles(), |k| {
        let [a, b, c] = mesh.triangles[k];
        let p = [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]];
        let area = mesh.triangle_area(k);
        let mut acc = 0.0;
        for lam in MIDPOINTS {
            let x = lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0];
            let y = lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1];
            acc += lf.value(x, y);
        }
        acc * area / 3.0
    });
    per_element.iter().sum()
}

/// Shape derivative of [`levelset_value`] in volume form, assembled with the
/// same quadrature rule.
pub fn levelset_shape_dual(mesh: &TriMesh, lf: &Levelset) -> ShapeDual {
    let locals = exec::map_indexed(mesh.n_triangles(), |k| {
        let [a, b, c] = mesh.triangles[k];
        let p = [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]];
        let (g, area) = p1_gradients(mesh, k);
        let mut local = [[0.0f64; 2]; 3];
        for lam in MIDPOINTS {
            let x = lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0];
            let y = lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1];
            let f = lf.value(x, y);
            let grad = lf.gradient(x, y);
            for j in 0..3 {
                for r in 0..2 {
                    // S1 : dX with S1 = f I is f * div X; S0 . X is grad f . X.
                    local[j][r] += (f * g[j][r] + grad[r] * lam[j]) * area / 3.0;
                }
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
    ShapeDual { values, provenance: format!("levelset:{lf:?}") }
}

/// Central finite-difference check of a dual against a value function.
/// Returns the maximum relative error over the directions.
pub fn fd_check<F>(
    value_fn: F,
    dual: &ShapeDual,
    mesh: &TriMesh,
    directions: &[Vec<f64>],
    step: f64,
) -> Result<f64, MeshError>
where
    F: Fn(&TriMesh) -> f64,
{
    let mut worst: f64 = 0.0;
    for dir in directions {
        let field = VectorField::from_flat(dir);
        let scaled = |t: f64| VectorField {
            values: field.values.iter().map(|v| [t * v[0], t * v[1]]).collect(),
        };
        let plus = apply_displacement(mesh, &scaled(step))?;
        let minus = apply_displacement(mesh, &scaled(-step))?;
        if !validate(&plus).is_ok() || !validate(&minus).is_ok() {
            return Err(MeshError::BadParameters(format!(
                "fd step {step} inverts elements"
            )));
        }
        let fd = (value_fn(&plus) - value_fn(&minus)) / (2.0 * step);
        let dj = dual.pair(dir);
        let err = (fd - dj).abs() / dj.abs().max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
