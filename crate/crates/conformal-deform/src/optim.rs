//! L-BFGS driver over a fixed linear deformation space.
//!
//! Steps and gradients always live on the reference mesh; deformed shapes
//! are `(id + f)(mesh)` for the accumulated displacement `f`. The two-loop
//! recursion uses the deformation metric's inner product throughout, so the
//! driver is steepest descent / quasi-Newton in the chosen Hilbert space,
//! not in coordinates. A backtracking Armijo search rejects any trial step
//! that inverts a mesh element.

use crate::fem::{cr_residual, FemError, MetricOperator};
use crate::mesh::{apply_displacement, element_quality, validate, TriMesh, VectorField};
use crate::rkhs::{
    interpolation_matrix, solve_kernel_gradient, KernelSystem, RkhsError,
};
use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("objective evaluation failed: {0}")]
    Objective(String),
    #[error("initial mesh (or initial displacement) is invalid")]
    InvalidInitialMesh,
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Rkhs(#[from] RkhsError),
    #[error("direction is not a descent direction (slope {0:e})")]
    NotDescent(f64),
    #[error("line search exhausted {0} backtracks")]
    LineSearchFailure(usize),
}

/// Shape functional evaluated on a deformed mesh. The dual is indexed by
/// the reference-mesh nodes (same numbering as the deformed mesh).
pub trait Objective {
    fn eval(
        &self,
        reference: &TriMesh,
        displacement: &[f64],
        deformed: &TriMesh,
    ) -> Result<(f64, Vec<f64>), String>;
}

/// Deformation-space backend: turns FEM duals into gradient coefficients
/// and provides the Hilbert inner product for the L-BFGS bookkeeping.
pub trait DeformationMetric {
    /// Dimension of the coefficient space.
    fn dim(&self) -> usize;
    /// Riesz solve: coefficients of the gradient for a FEM dual vector.
    fn gradient(&self, dual: &[f64]) -> Result<Vec<f64>, OptimError>;
    /// Metric inner product of coefficient vectors.
    fn inner(&self, a: &[f64], b: &[f64]) -> f64;
    /// Realize coefficients as a node-interleaved FEM displacement field.
    fn to_field(&self, coeffs: &[f64]) -> Vec<f64>;
    /// Directional derivative of the objective along coefficients.
    fn pair(&self, dual: &[f64], coeffs: &[f64]) -> f64 {
        let field = self.to_field(coeffs);
        dual.iter().zip(&field).map(|(a, b)| a * b).sum()
    }
}

impl DeformationMetric for MetricOperator {
    fn dim(&self) -> usize {
        self.n_dofs()
    }

    fn gradient(&self, dual: &[f64]) -> Result<Vec<f64>, OptimError> {
        Ok(self.riesz_gradient(dual)?)
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        MetricOperator::inner(self, a, b)
    }

    fn to_field(&self, coeffs: &[f64]) -> Vec<f64> {
        coeffs.to_vec()
    }

    fn pair(&self, dual: &[f64], coeffs: &[f64]) -> f64 {
        dual.iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }
}

/// Kernel-expansion deformation space with optional pointwise CR penalty.
/// The metric is `(1/(alpha n)) B^T W B + K` when a penalty is active and
/// plain `K` otherwise.
pub struct KernelMetric {
    system: KernelSystem,
    /// None: pure kernel metric. Some(alpha): CR(alpha) + kernel metric.
    alpha: Option<f64>,
    metric: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    interp: DMatrix<f64>,
    n_centers: usize,
    n_fem_nodes: usize,
}

impl KernelMetric {
    pub fn new(
        mesh: &TriMesh,
        sigma: f64,
        alpha: Option<f64>,
        mu: Option<Vec<f64>>,
    ) -> Result<KernelMetric, OptimError> {
        let centers: Vec<[f64; 2]> = mesh.nodes.clone();
        let cr_points: Vec<[f64; 2]> = if alpha.is_some() { mesh.nodes.clone() } else { Vec::new() };
        let system = KernelSystem::new(&centers, sigma, &cr_points, mu)?;
        let metric = match alpha {
            Some(a) => {
                if !(a > 0.0) {
                    return Err(OptimError::Rkhs(RkhsError::BadParameter(format!(
                        "metric.alpha must be positive, got {a}"
                    ))));
                }
                // (1/(alpha n)) B^T W B + K is the analysis matrix scaled by 1/alpha.
                system.system_matrix(a) / a
            }
            None => kernel_block(&system),
        };
        let chol = Cholesky::new(metric.clone()).ok_or(RkhsError::NotPositiveDefinite)?;
        let interp = interpolation_matrix(&centers, sigma, &mesh.nodes);
        Ok(KernelMetric {
            system,
            alpha,
            metric,
            chol,
            interp,
            n_centers: centers.len(),
            n_fem_nodes: mesh.n_nodes(),
        })
    }

    /// Largest pointwise CR magnitude of the expansion for given coefficients.
    pub fn max_cr_at_points(&self, coeffs: &[f64]) -> f64 {
        self.system.max_cr_at_points(coeffs)
    }

    pub fn system(&self) -> &KernelSystem {
        &self.system
    }

    /// Pull a FEM dual back to kernel coefficients (transposed interpolation).
    fn pullback(&self, dual: &[f64]) -> Vec<f64> {
        let n = self.n_fem_nodes;
        let d1 = DVector::from_fn(n, |i, _| dual[2 * i]);
        let d2 = DVector::from_fn(n, |i, _| dual[2 * i + 1]);
        let f1 = self.interp.transpose() * d1;
        let f2 = self.interp.transpose() * d2;
        let mut f = Vec::with_capacity(2 * self.n_centers);
        f.extend_from_slice(f1.as_slice());
        f.extend_from_slice(f2.as_slice());
        f
    }
}

fn kernel_block(system: &KernelSystem) -> DMatrix<f64> {
    let n = system.n_centers;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = system.k_tilde[(i, j)];
            m[(i, j)] = v;
            m[(n + i, n + j)] = v;
        }
    }
    m
}

impl DeformationMetric for KernelMetric {
    fn dim(&self) -> usize {
        2 * self.n_centers
    }

    fn gradient(&self, dual: &[f64]) -> Result<Vec<f64>, OptimError> {
        let f = self.pullback(dual);
        match self.alpha {
            Some(a) => {
                // Solve the analysis form and rescale: with M_g = M_a / alpha,
                // M_g c = F  <=>  M_a (c / alpha) = F.
                let c = solve_kernel_gradient(&self.system, a, &f)?;
                Ok(c.iter().map(|v| a * v).collect())
            }
            None => {
                let rhs = DVector::from_column_slice(&f);
                let mut x = self.chol.solve(&rhs);
                let r = &rhs - &self.metric * &x;
                x += self.chol.solve(&r);
                Ok(x.as_slice().to_vec())
            }
        }
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let av = DVector::from_column_slice(a);
        let bv = DVector::from_column_slice(b);
        (av.transpose() * &self.metric * bv)[(0, 0)]
    }

    fn to_field(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n_centers;
        let c1 = DVector::from_column_slice(&coeffs[..n]);
        let c2 = DVector::from_column_slice(&coeffs[n..]);
        let v1 = &self.interp * c1;
        let v2 = &self.interp * c2;
        let mut field = Vec::with_capacity(2 * self.n_fem_nodes);
        for i in 0..self.n_fem_nodes {
            field.push(v1[i]);
            field.push(v2[i]);
        }
        field
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
    MeshDegenerate,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub cr_residual: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_frac_gt2: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimRun {
    pub displacement: Vec<f64>,
    pub history: Vec<IterRecord>,
    pub status: RunStatus,
    pub final_mesh: TriMesh,
    pub final_value: f64,
    pub accepted_steps: Vec<Vec<f64>>,
}

impl OptimRun {
    pub fn final_grad_norm(&self) -> f64 {
        self.history.last().map(|r| r.grad_norm).unwrap_or(f64::NAN)
    }

    /// Convergence log with one row per accepted iterate.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,J,grad_norm,cr_residual,eta_min,eta_max,eta_frac_gt2,step\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.iter, r.j, r.grad_norm, r.cr_residual, r.eta_min, r.eta_max, r.eta_frac_gt2, r.step
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iters: usize,
    pub g_tol: f64,
    pub memory: usize,
    pub armijo_c1: f64,
    pub max_backtracks: usize,
    pub snapshot_every: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iters: 100,
            g_tol: 1e-6,
            memory: 5,
            armijo_c1: 1e-4,
            max_backtracks: 50,
            snapshot_every: 0,
        }
    }
}

/// Two-loop L-BFGS recursion with a caller-supplied inner product. Returns
/// the quasi-Newton direction `-H g`.
pub fn two_loop_direction(
    pairs: &[(Vec<f64>, Vec<f64>)],
    gradient: &[f64],
    inner: &dyn Fn(&[f64], &[f64]) -> f64,
) -> Vec<f64> {
    let mut q = gradient.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    let rhos: Vec<f64> = pairs.iter().map(|(s, y)| 1.0 / inner(s, y)).collect();
    for (i, (s, y)) in pairs.iter().enumerate().rev() {
        let a = rhos[i] * inner(s, &q);
        for (qk, yk) in q.iter_mut().zip(y) {
            *qk -= a * yk;
        }
        alphas.push((i, a));
    }
    let gamma = match pairs.last() {
        Some((s, y)) => inner(s, y) / inner(y, y),
        None => 1.0,
    };
    let mut r: Vec<f64> = q.iter().map(|v| gamma * v).collect();
    for &(i, a) in alphas.iter().rev() {
        let (s, y) = &pairs[i];
        let b = rhos[i] * inner(y, &r);
        for (rk, sk) in r.iter_mut().zip(s) {
            *rk += (a - b) * sk;
        }
    }
    r.iter_mut().for_each(|v| *v = -*v);
    r
}

struct Evaluation {
    value: f64,
    dual: Vec<f64>,
    mesh: TriMesh,
}

fn try_evaluate(
    objective: &dyn Objective,
    metric: &dyn DeformationMetric,
    reference: &TriMesh,
    coeffs: &[f64],
) -> Result<Evaluation, String> {
    let field = metric.to_field(coeffs);
    let deformed = apply_displacement(reference, &VectorField::from_flat(&field))
        .map_err(|e| e.to_string())?;
    if !validate(&deformed).is_ok() {
        return Err("deformed mesh is invalid".into());
    }
    let (value, dual) = objective.eval(reference, &field, &deformed)?;
    Ok(Evaluation { value, dual, mesh: deformed })
}

/// Backtracking Armijo line search; any trial that produces an invalid mesh
/// counts as a failed trial. Returns the accepted step and its evaluation.
fn line_search(
    objective: &dyn Objective,
    metric: &dyn DeformationMetric,
    reference: &TriMesh,
    coeffs: &[f64],
    value: f64,
    direction: &[f64],
    slope: f64,
    opts: &OptimOptions,
) -> Result<(f64, Evaluation), OptimError> {
    if slope >= 0.0 {
        return Err(OptimError::NotDescent(slope));
    }
    let mut t = 1.0;
    for _ in 0..opts.max_backtracks {
        let trial: Vec<f64> = coeffs
            .iter()
            .zip(direction)
            .map(|(f, d)| f + t * d)
            .collect();
        if let Ok(eval) = try_evaluate(objective, metric, reference, &trial) {
            if eval.value <= value + opts.armijo_c1 * t * slope {
                return Ok((t, eval));
            }
        }
        t *= 0.5;
    }
    Err(OptimError::LineSearchFailure(opts.max_backtracks))
}

fn record(
    iter: usize,
    value: f64,
    grad_norm: f64,
    reference: &TriMesh,
    field: &[f64],
    mesh: &TriMesh,
    step: f64,
) -> IterRecord {
    let q = element_quality(mesh).unwrap_or(crate::mesh::ElementQuality { eta: vec![f64::NAN] });
    IterRecord {
        iter,
        j: value,
        grad_norm,
        cr_residual: cr_residual(reference, field),
        eta_min: q.min(),
        eta_max: q.max(),
        eta_frac_gt2: q.fraction_above(2.0),
        step,
    }
}

/// Run L-BFGS from an optional warm-start displacement (memory always starts
/// empty). Every accepted iterate keeps the deformed mesh valid.
pub fn lbfgs_run(
    objective: &dyn Objective,
    metric: &dyn DeformationMetric,
    reference: &TriMesh,
    opts: &OptimOptions,
    initial: Option<Vec<f64>>,
) -> Result<OptimRun, OptimError> {
    let mut coeffs = initial.unwrap_or_else(|| vec![0.0; metric.dim()]);
    assert_eq!(coeffs.len(), metric.dim());

    let mut eval = try_evaluate(objective, metric, reference, &coeffs)
        .map_err(OptimError::Objective)?;
    let mut grad = metric.gradient(&eval.dual)?;
    let mut grad_norm = metric.inner(&grad, &grad).max(0.0).sqrt();

    let mut history = vec![record(
        0,
        eval.value,
        grad_norm,
        reference,
        &metric.to_field(&coeffs),
        &eval.mesh,
        0.0,
    )];
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut accepted_steps = Vec::new();
    let mut status = RunStatus::MaxIters;

    if grad_norm <= opts.g_tol {
        status = RunStatus::Converged;
    } else {
        for iter in 1..=opts.max_iters {
            let mut direction =
                two_loop_direction(&pairs, &grad, &|a, b| metric.inner(a, b));
            let mut slope = metric.pair(&eval.dual, &direction);
            if slope >= 0.0 {
                // Quasi-Newton model went bad; fall back to steepest descent.
                pairs.clear();
                direction = grad.iter().map(|v| -v).collect();
                slope = metric.pair(&eval.dual, &direction);
            }
            let (t, new_eval) = match line_search(
                objective, metric, reference, &coeffs, eval.value, &direction, slope, opts,
            ) {
                Ok(ok) => ok,
                Err(OptimError::LineSearchFailure(_)) => {
                    status = RunStatus::LineSearchFailure;
                    break;
                }
                Err(e) => return Err(e),
            };

            let step: Vec<f64> = direction.iter().map(|d| t * d).collect();
            for (f, s) in coeffs.iter_mut().zip(&step) {
                *f += s;
            }
            accepted_steps.push(step.clone());
            eval = new_eval;

            let new_grad = metric.gradient(&eval.dual)?;
            let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = metric.inner(&step, &y);
            let ss = metric.inner(&step, &step).max(0.0).sqrt();
            let yy = metric.inner(&y, &y).max(0.0).sqrt();
            if sy > 1e-12 * ss * yy {
                pairs.push((step, y));
                if pairs.len() > opts.memory {
                    pairs.remove(0);
                }
            }
            grad = new_grad;
            grad_norm = metric.inner(&grad, &grad).max(0.0).sqrt();
            history.push(record(
                iter,
                eval.value,
                grad_norm,
                reference,
                &metric.to_field(&coeffs),
                &eval.mesh,
                t,
            ));

            if grad_norm <= opts.g_tol {
                status = RunStatus::Converged;
                break;
            }
        }
    }

    if !validate(&eval.mesh).is_ok() {
        status = RunStatus::MeshDegenerate;
    }
    Ok(OptimRun {
        displacement: coeffs,
        history,
        status,
        final_mesh: eval.mesh,
        final_value: eval.value,
        accepted_steps,
    })
}

/// One row of an alpha sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub final_max_eta: f64,
    pub eta_frac_gt2: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub status: RunStatus,
}

/// Run the same problem once per alpha with a shared budget.
pub fn alpha_sweep<M, F>(
    objective: &dyn Objective,
    reference: &TriMesh,
    make_metric: F,
    alphas: &[f64],
    opts: &OptimOptions,
) -> Result<Vec<SweepRow>, OptimError>
where
    M: DeformationMetric,
    F: Fn(f64) -> Result<M, OptimError>,
{
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let metric = make_metric(alpha)?;
        let run = lbfgs_run(objective, &metric, reference, opts, None)?;
        let last = run.history.last().expect("history is never empty");
        rows.push(SweepRow {
            alpha,
            final_max_eta: last.eta_max,
            eta_frac_gt2: last.eta_frac_gt2,
            iterations: run.history.len() - 1,
            final_grad_norm: last.grad_norm,
            status: run.status,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,final_max_eta,eta_frac_gt2,iterations,final_grad_norm,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:?}\n",
            r.alpha, r.final_max_eta, r.eta_frac_gt2, r.iterations, r.final_grad_norm, r.status
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_metric, InnerProductSpec, MetricKind};
    use crate::functionals::{levelset_shape_dual, levelset_value, Levelset};
    use crate::mesh::gen_disc;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    struct QuadraticObjective<'a> {
        metric: &'a MetricOperator,
        target_dual: Vec<f64>,
    }

    impl Objective for QuadraticObjective<'_> {
        fn eval(
            &self,
            _reference: &TriMesh,
            displacement: &[f64],
            _deformed: &TriMesh,
        ) -> Result<(f64, Vec<f64>), String> {
            let af = self.metric.apply(displacement);
            let value = 0.5 * displacement.iter().zip(&af).map(|(a, b)| a * b).sum::<f64>()
                - self.target_dual.iter().zip(displacement).map(|(a, b)| a * b).sum::<f64>();
            let dual: Vec<f64> = af.iter().zip(&self.target_dual).map(|(a, b)| a - b).collect();
            Ok((value, dual))
        }
    }

    struct LevelsetObjective {
        lf: Levelset,
    }

    impl Objective for LevelsetObjective {
        fn eval(
            &self,
            _reference: &TriMesh,
            _displacement: &[f64],
            deformed: &TriMesh,
        ) -> Result<(f64, Vec<f64>), String> {
            let value = levelset_value(deformed, &self.lf);
            let dual = levelset_shape_dual(deformed, &self.lf);
            Ok((value, dual.values))
        }
    }

    fn disc_metric(kind: MetricKind, alpha: f64) -> (TriMesh, MetricOperator) {
        let mesh = gen_disc(3.0, 6).unwrap();
        let spec = InnerProductSpec {
            kind,
            alpha,
            weighted: false,
            epsilon: 1.0,
            clamped_tags: vec![],
        };
        let metric = build_metric(&mesh, &spec).unwrap();
        (mesh, metric)
    }

    #[test]
    fn quadratic_model_converges_to_riesz_gradient() {
        let (mesh, metric) = disc_metric(MetricKind::HsymRing, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Small dual so the deformed meshes stay valid along the way.
        let dual: Vec<f64> = (0..metric.n_dofs()).map(|_| 0.01 * (rng.random::<f64>() - 0.5)).collect();
        let objective = QuadraticObjective { metric: &metric, target_dual: dual.clone() };
        let opts = OptimOptions { max_iters: 3, g_tol: 1e-10, ..Default::default() };
        let run = lbfgs_run(&objective, &metric, &mesh, &opts, None).unwrap();
        assert_eq!(run.status, RunStatus::Converged);
        assert!(run.history.len() - 1 <= 3);
        let g_star = metric.riesz_gradient(&dual).unwrap();
        let diff: f64 = run
            .displacement
            .iter()
            .zip(&g_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = g_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff < 1e-8 * scale.max(1e-12), "diff {diff:e}");
    }

    #[test]
    fn infinite_tolerance_returns_immediately() {
        let (mesh, metric) = disc_metric(MetricKind::H1Ring, 1.0);
        let objective = LevelsetObjective { lf: Levelset::clover_default() };
        let opts = OptimOptions { g_tol: f64::INFINITY, ..Default::default() };
        let run = lbfgs_run(&objective, &metric, &mesh, &opts, None).unwrap();
        assert_eq!(run.history.len(), 1);
        assert_eq!(run.status, RunStatus::Converged);
    }

    #[test]
    fn descent_identity_at_iterates() {
        let (mesh, metric) = disc_metric(MetricKind::CrPlusHsym, 1e-1);
        let objective = LevelsetObjective { lf: Levelset::clover_default() };
        let dual = levelset_shape_dual(&mesh, &Levelset::clover_default());
        let g = metric.riesz_gradient(&dual.values).unwrap();
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let slope = DeformationMetric::pair(&metric, &dual.values, &neg);
        let norm_sq = MetricOperator::inner(&metric, &g, &g);
        approx::assert_relative_eq!(slope, -norm_sq, max_relative = 1e-10);
        let _ = objective;
    }

    #[test]
    fn clover_descent_decreases_objective_monotonically() {
        let (mesh, metric) = disc_metric(MetricKind::CrPlusHsym, 1e-2);
        let objective = LevelsetObjective { lf: Levelset::clover_default() };
        let opts = OptimOptions { max_iters: 15, g_tol: 1e-12, ..Default::default() };
        let run = lbfgs_run(&objective, &metric, &mesh, &opts, None).unwrap();
        for w in run.history.windows(2) {
            assert!(w[1].j < w[0].j + 1e-14, "J increased: {} -> {}", w[0].j, w[1].j);
        }
        assert!(validate(&run.final_mesh).is_ok());
    }

    #[test]
    fn step_inverting_element_is_halved() {
        let (mesh, metric) = disc_metric(MetricKind::H1Ring, 1.0);
        // An objective whose dual demands a huge inward collapse: the first
        // full step inverts elements, so the search must backtrack.
        struct Collapse;
        impl Objective for Collapse {
            fn eval(
                &self,
                reference: &TriMesh,
                displacement: &[f64],
                _deformed: &TriMesh,
            ) -> Result<(f64, Vec<f64>), String> {
                // J = sum of node distances to a far target: linear, huge slope.
                let mut value = 0.0;
                let mut dual = vec![0.0; 2 * reference.n_nodes()];
                for (i, p) in reference.nodes.iter().enumerate() {
                    let x = p[0] + displacement[2 * i];
                    let y = p[1] + displacement[2 * i + 1];
                    value += 40.0 * (x + y);
                    dual[2 * i] = 40.0;
                    dual[2 * i + 1] = 40.0;
                }
                Ok((value, dual))
            }
        }
        let opts = OptimOptions { max_iters: 1, g_tol: 1e-16, ..Default::default() };
        let run = lbfgs_run(&Collapse, &metric, &mesh, &opts, None).unwrap();
        assert!(run.history[1].step < 1.0, "step {} should backtrack", run.history[1].step);
        assert!(validate(&run.final_mesh).is_ok());
    }

    #[test]
    fn metric_two_loop_equals_transformed_euclidean_two_loop() {
        // On a small dense SPD metric M, the recursion with M-inner products
        // must match plain Euclidean L-BFGS in M^(1/2) coordinates.
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let m = &a * a.transpose() + DMatrix::identity(n, n);
        let sqrt_m = {
            let eig = m.clone().symmetric_eigen();
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.sqrt()));
            &eig.eigenvectors * d * eig.eigenvectors.transpose()
        };

        let minner = |x: &[f64], y: &[f64]| {
            let xv = DVector::from_column_slice(x);
            let yv = DVector::from_column_slice(y);
            (xv.transpose() * &m * yv)[(0, 0)]
        };
        let einner =
            |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();

        let rand_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
        };
        let mut pairs_m: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut pairs_e: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for _ in 0..4 {
            let s = rand_vec(&mut rng);
            let y = rand_vec(&mut rng);
            if minner(&s, &y) <= 0.0 {
                continue;
            }
            let sv = DVector::from_column_slice(&s);
            let yv = DVector::from_column_slice(&y);
            pairs_e.push((
                (&sqrt_m * sv).as_slice().to_vec(),
                (&sqrt_m * yv).as_slice().to_vec(),
            ));
            pairs_m.push((s, y));
        }
        let g = rand_vec(&mut rng);
        let g_e = (&sqrt_m * DVector::from_column_slice(&g)).as_slice().to_vec();

        let d_m = two_loop_direction(&pairs_m, &g, &minner);
        let d_e = two_loop_direction(&pairs_e, &g_e, &einner);
        let d_m_transformed = &sqrt_m * DVector::from_column_slice(&d_m);
        for (a, b) in d_m_transformed.iter().zip(&d_e) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn split_run_replays_accepted_steps() {
        let (mesh, metric) = disc_metric(MetricKind::CrPlusHsym, 1e-1);
        let objective = LevelsetObjective { lf: Levelset::clover_default() };
        let full_opts = OptimOptions { max_iters: 8, g_tol: 1e-14, ..Default::default() };
        let full = lbfgs_run(&objective, &metric, &mesh, &full_opts, None).unwrap();

        // Same budget split into 3 + 5 with the displacement carried over.
        let first = lbfgs_run(
            &objective,
            &metric,
            &mesh,
            &OptimOptions { max_iters: 3, g_tol: 1e-14, ..Default::default() },
            None,
        )
        .unwrap();
        let second = lbfgs_run(
            &objective,
            &metric,
            &mesh,
            &OptimOptions { max_iters: 5, g_tol: 1e-14, ..Default::default() },
            Some(first.displacement.clone()),
        )
        .unwrap();

        // Replaying all accepted steps lands on the same displacement.
        let mut replay = vec![0.0; metric.dim()];
        for step in first.accepted_steps.iter().chain(&second.accepted_steps) {
            for (r, s) in replay.iter_mut().zip(step) {
                *r += s;
            }
        }
        for (a, b) in replay.iter().zip(&second.displacement) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(validate(&second.final_mesh).is_ok());
        let _ = full;
    }

    #[test]
    fn cr_residual_of_total_bounded_by_step_sum() {
        let (mesh, metric) = disc_metric(MetricKind::CrPlusHsym, 1e-2);
        let objective = LevelsetObjective { lf: Levelset::clover_default() };
        let opts = OptimOptions { max_iters: 10, g_tol: 1e-14, ..Default::default() };
        let run = lbfgs_run(&objective, &metric, &mesh, &opts, None).unwrap();
        let total = cr_residual(&mesh, &run.displacement);
        let sum: f64 = run
            .accepted_steps
            .iter()
            .map(|s| cr_residual(&mesh, s))
            .sum();
        assert!(total <= sum + 1e-12, "total {total:e} > sum {sum:e}");
    }

    #[test]
    fn empty_alpha_list_gives_empty_table() {
        let (mesh, _) = disc_metric(MetricKind::H1Ring, 1.0);
        let objective = LevelsetObjective { lf: Levelset::clover_default() };
        let rows = alpha_sweep(
            &objective,
            &mesh,
            |alpha| {
                let spec = InnerProductSpec {
                    kind: MetricKind::CrPlusHsym,
                    alpha,
                    weighted: false,
                    epsilon: 1.0,
                    clamped_tags: vec![],
                };
                Ok(build_metric(&mesh, &spec)?)
            },
            &[],
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(rows.is_empty());
        assert_eq!(sweep_csv(&rows), "alpha,final_max_eta,eta_frac_gt2,iterations,final_grad_norm,status\n");
    }
}
