//! Configuration-driven experiment driver: builds meshes, metrics and
//! objectives from a [`RunConfig`], runs the optimizer, and writes all run
//! artifacts (meshes, quality histograms, convergence log, summary).

use crate::config::{
    ConfigError, MeshFileFormat, MeshGenerator, MetricFamily, ProblemKind, RunConfig,
};
use crate::fem::{build_metric, cr_residual, FemError, InnerProductSpec, MetricOperator};
use crate::functionals::{levelset_shape_dual, levelset_value, Levelset};
use crate::mesh::{
    apply_displacement, boundary_distance, element_quality, export_vtk, gen_annulus, gen_disc,
    histogram_csv, load_mesh, quality_histogram, save_mesh, BoundaryTag, ElementQuality,
    MeshError, MeshFormat, TriMesh, VectorField,
};
use crate::optim::{
    lbfgs_run, DeformationMetric, IterRecord, KernelMetric, Objective, OptimError, OptimOptions,
    OptimRun, RunStatus,
};
use crate::rkhs::RkhsError;
use crate::stokes::{obstacle_geometry, AugmentedStokes, ConstraintState, StokesError};
use serde::Serialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("line search failed: {0}")]
    LineSearch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// CLI exit code class: 2 config, 3 mesh, 4 solver, 5 line search.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Mesh(_) => 3,
            RunError::Solver(_) => 4,
            RunError::LineSearch(_) => 5,
            RunError::Io(_) => 1,
        }
    }
}

impl From<FemError> for RunError {
    fn from(e: FemError) -> Self {
        RunError::Solver(e.to_string())
    }
}

impl From<RkhsError> for RunError {
    fn from(e: RkhsError) -> Self {
        RunError::Solver(e.to_string())
    }
}

impl From<StokesError> for RunError {
    fn from(e: StokesError) -> Self {
        RunError::Solver(e.to_string())
    }
}

impl From<OptimError> for RunError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::LineSearchFailure(n) => RunError::LineSearch(format!("{n} backtracks exhausted")),
            other => RunError::Solver(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaStats {
    pub min: f64,
    pub max: f64,
    pub frac_gt2: f64,
}

impl EtaStats {
    fn from_quality(q: &ElementQuality) -> EtaStats {
        EtaStats { min: q.min(), max: q.max(), frac_gt2: q.fraction_above(2.0) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSummary {
    pub outer_iterations: usize,
    pub volume_residual_rel: f64,
    pub barycentre_residual: f64,
    pub obstacle_x_extent_initial: f64,
    pub obstacle_x_extent_final: f64,
    pub final_rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub problem: String,
    pub metric: String,
    pub alpha: Option<f64>,
    pub status: RunStatus,
    pub iterations: usize,
    pub initial_j: f64,
    pub final_j: f64,
    pub final_grad_norm: f64,
    pub final_cr_residual: f64,
    pub eta_initial: EtaStats,
    pub eta_final: EtaStats,
    pub constraints: Option<ConstraintSummary>,
}

/// Outcome of a driver run, with everything needed to write artifacts or
/// build comparison rows.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub reference: TriMesh,
    pub final_mesh: TriMesh,
    pub history: Vec<IterRecord>,
    pub displacement_field: Vec<f64>,
    pub snapshots: Vec<(usize, TriMesh)>,
}

pub fn build_mesh(cfg: &RunConfig) -> Result<TriMesh, RunError> {
    if let Some(file) = &cfg.mesh.file {
        let format = match cfg.mesh.format.expect("validated") {
            MeshFileFormat::NativeJson => MeshFormat::NativeJson,
            MeshFileFormat::Gmsh22 => MeshFormat::Gmsh22Ascii,
        };
        return Ok(load_mesh(file, format)?);
    }
    match cfg.mesh.generator.expect("validated") {
        MeshGenerator::Disc => Ok(gen_disc(
            cfg.mesh.radius.expect("validated"),
            cfg.mesh.n_rings.expect("validated"),
        )?),
        MeshGenerator::Annulus => Ok(gen_annulus(
            cfg.mesh.r_inner.expect("validated"),
            cfg.mesh.r_outer.expect("validated"),
            cfg.mesh.n_rings.expect("validated"),
        )?),
    }
}

/// FEM or kernel deformation backend behind one interface.
pub enum AnyMetric {
    Fem(MetricOperator),
    Kernel(KernelMetric),
}

impl DeformationMetric for AnyMetric {
    fn dim(&self) -> usize {
        match self {
            AnyMetric::Fem(m) => m.dim(),
            AnyMetric::Kernel(m) => m.dim(),
        }
    }

    fn gradient(&self, dual: &[f64]) -> Result<Vec<f64>, OptimError> {
        match self {
            AnyMetric::Fem(m) => m.gradient(dual),
            AnyMetric::Kernel(m) => m.gradient(dual),
        }
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            AnyMetric::Fem(m) => DeformationMetric::inner(m, a, b),
            AnyMetric::Kernel(m) => m.inner(a, b),
        }
    }

    fn to_field(&self, coeffs: &[f64]) -> Vec<f64> {
        match self {
            AnyMetric::Fem(m) => DeformationMetric::to_field(m, coeffs),
            AnyMetric::Kernel(m) => m.to_field(coeffs),
        }
    }

    fn pair(&self, dual: &[f64], coeffs: &[f64]) -> f64 {
        match self {
            AnyMetric::Fem(m) => DeformationMetric::pair(m, dual, coeffs),
            AnyMetric::Kernel(m) => m.pair(dual, coeffs),
        }
    }
}

pub fn fem_spec(cfg: &RunConfig) -> Option<InnerProductSpec> {
    cfg.metric.kind.fem_kind().map(|kind| InnerProductSpec {
        kind,
        alpha: cfg.metric.alpha,
        weighted: cfg.metric.weighted,
        epsilon: cfg.metric.epsilon,
        clamped_tags: cfg.metric.clamped_tags.clone(),
    })
}

pub fn build_any_metric(cfg: &RunConfig, mesh: &TriMesh) -> Result<AnyMetric, RunError> {
    match cfg.metric.kind {
        MetricFamily::Kernel | MetricFamily::CrPlusKernel => {
            let sigma = cfg.metric.sigma_factor * mesh.mean_edge_length();
            let alpha = match cfg.metric.kind {
                MetricFamily::CrPlusKernel => Some(cfg.metric.alpha),
                _ => None,
            };
            let mu = if cfg.metric.weighted {
                Some(
                    boundary_distance(mesh, &mesh.nodes)
                        .into_iter()
                        .map(|d| (cfg.metric.epsilon / (d + cfg.metric.epsilon)).sqrt())
                        .collect(),
                )
            } else {
                None
            };
            Ok(AnyMetric::Kernel(KernelMetric::new(mesh, sigma, alpha, mu)?))
        }
        _ => {
            let spec = fem_spec(cfg).expect("fem family");
            Ok(AnyMetric::Fem(build_metric(mesh, &spec)?))
        }
    }
}

pub fn levelset_for(cfg: &RunConfig) -> Levelset {
    match cfg.problem.kind {
        ProblemKind::Clover => Levelset::clover_default(),
        ProblemKind::Annulus => Levelset::AnnulusRadii { r_prime: cfg.problem.r_prime.expect("validated") },
        ProblemKind::Stokes => unreachable!("stokes is not a levelset problem"),
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

fn optim_options(cfg: &RunConfig) -> OptimOptions {
    OptimOptions {
        max_iters: cfg.optimizer.max_iters,
        g_tol: cfg.optimizer.g_tol,
        memory: cfg.optimizer.memory,
        ..Default::default()
    }
}

fn renumber_and_extend(total: &mut Vec<IterRecord>, mut chunk: Vec<IterRecord>) {
    if total.is_empty() {
        total.append(&mut chunk);
        return;
    }
    let offset = total.last().map(|r| r.iter).unwrap_or(0);
    // The chunk's iterate 0 duplicates the previous final mesh state.
    for mut r in chunk.into_iter().skip(1) {
        r.iter += offset;
        total.push(r);
    }
}

fn snapshots_from_run(
    reference: &TriMesh,
    metric: &dyn DeformationMetric,
    run: &OptimRun,
    every: usize,
    start_index: usize,
    initial: &[f64],
) -> Vec<(usize, TriMesh)> {
    let mut out = Vec::new();
    if every == 0 {
        return out;
    }
    let mut coeffs = initial.to_vec();
    for (i, step) in run.accepted_steps.iter().enumerate() {
        for (c, s) in coeffs.iter_mut().zip(step) {
            *c += s;
        }
        let iter = start_index + i + 1;
        if iter % every == 0 {
            let field = metric.to_field(&coeffs);
            if let Ok(mesh) = apply_displacement(reference, &VectorField::from_flat(&field)) {
                out.push((iter, mesh));
            }
        }
    }
    out
}

fn metric_label(cfg: &RunConfig) -> String {
    let mut label = format!("{:?}", cfg.metric.kind).to_lowercase();
    if cfg.metric.kind.has_cr() {
        label.push_str(&format!("(alpha={}", cfg.metric.alpha));
        if cfg.metric.weighted {
            label.push_str(&format!(",mu,eps={}", cfg.metric.epsilon));
        }
        label.push(')');
    }
    label
}

fn run_levelset(cfg: &RunConfig, reference: TriMesh) -> Result<RunOutcome, RunError> {
    let lf = levelset_for(cfg);
    let objective = LevelsetObjective { lf };
    let opts = optim_options(cfg);
    let every = cfg.outputs.snapshot_every;

    let mut history: Vec<IterRecord> = Vec::new();
    let mut snapshots = Vec::new();
    let (status, final_mesh, displacement_field, final_value) = if cfg.metric.reassemble
        && cfg.metric.kind.fem_kind().is_some()
    {
        // Experimental mode: rebuild the inner product on the deformed mesh
        // after each accepted step. Memory is cleared at every rebuild.
        let spec = fem_spec(cfg).expect("fem family");
        let mut displacement = vec![0.0; 2 * reference.n_nodes()];
        let mut current = reference.clone();
        let mut status = RunStatus::MaxIters;
        let mut value = 0.0;
        for i in 0..opts.max_iters {
            let metric = AnyMetric::Fem(build_metric(&current, &spec)?);
            let single = OptimOptions { max_iters: 1, ..opts.clone() };
            let run = lbfgs_run(&objective, &metric, &reference, &single, Some(displacement.clone()))?;
            snapshots.extend(snapshots_from_run(&reference, &metric, &run, every, i, &displacement));
            displacement = run.displacement.clone();
            current = run.final_mesh.clone();
            value = run.final_value;
            renumber_and_extend(&mut history, run.history.clone());
            match run.status {
                RunStatus::MaxIters => {}
                other => {
                    status = other;
                    break;
                }
            }
        }
        (status, current, displacement, value)
    } else {
        let metric = build_any_metric(cfg, &reference)?;
        let run = lbfgs_run(&objective, &metric, &reference, &opts, None)?;
        snapshots.extend(snapshots_from_run(&reference, &metric, &run, every, 0, &vec![0.0; metric.dim()]));
        history = run.history.clone();
        let field = metric.to_field(&run.displacement);
        (run.status, run.final_mesh, field, run.final_value)
    };

    let q_init = element_quality(&reference)?;
    let q_final = element_quality(&final_mesh)?;
    let summary = RunSummary {
        problem: format!("{:?}", cfg.problem.kind).to_lowercase(),
        metric: metric_label(cfg),
        alpha: cfg.metric.kind.has_cr().then_some(cfg.metric.alpha),
        status,
        iterations: history.last().map(|r| r.iter).unwrap_or(0),
        initial_j: history.first().map(|r| r.j).unwrap_or(f64::NAN),
        final_j: final_value,
        final_grad_norm: history.last().map(|r| r.grad_norm).unwrap_or(f64::NAN),
        final_cr_residual: cr_residual(&reference, &displacement_field),
        eta_initial: EtaStats::from_quality(&q_init),
        eta_final: EtaStats::from_quality(&q_final),
        constraints: None,
    };
    Ok(RunOutcome {
        summary,
        reference,
        final_mesh,
        history,
        displacement_field,
        snapshots,
    })
}

fn gamma_x_extent(mesh: &TriMesh) -> f64 {
    let nodes = mesh.nodes_with_tag(BoundaryTag::Gamma);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in nodes {
        lo = lo.min(mesh.nodes[n][0]);
        hi = hi.max(mesh.nodes[n][0]);
    }
    hi - lo
}

fn run_stokes(cfg: &RunConfig, reference: TriMesh) -> Result<RunOutcome, RunError> {
    let u_inf = cfg.problem.u_inf.unwrap_or([1.0, 0.0]);
    let (lo, hi) = reference.bounding_box();
    let (half_width, half_height) = (hi[0].max(-lo[0]), hi[1].max(-lo[1]));
    let clamped_tags = if cfg.metric.clamped_tags.is_empty() {
        vec![BoundaryTag::GammaInf]
    } else {
        cfg.metric.clamped_tags.clone()
    };

    let metric = build_any_metric(cfg, &reference)?;
    let geom0 = obstacle_geometry(&reference, half_width, half_height)?;
    let mut state = ConstraintState::new(geom0.volume, geom0.barycentre, cfg.optimizer.rho0);

    let inner_opts = OptimOptions {
        max_iters: cfg.optimizer.inner_iters,
        g_tol: cfg.optimizer.g_tol,
        memory: cfg.optimizer.memory,
        ..Default::default()
    };
    let every = cfg.outputs.snapshot_every;

    let mut displacement = vec![0.0; metric.dim()];
    let mut history: Vec<IterRecord> = Vec::new();
    let mut snapshots = Vec::new();
    let mut final_mesh = reference.clone();
    let mut status = RunStatus::MaxIters;
    let mut outer_done = 0;
    let mut prev_c_norm = f64::INFINITY;
    let mut vol_rel = f64::NAN;
    let mut bc_abs = f64::NAN;

    for outer in 0..cfg.optimizer.max_outer {
        let objective = AugmentedStokes {
            u_inf,
            half_width,
            half_height,
            state: state.clone(),
            clamped_tags: clamped_tags.clone(),
        };
        let run = lbfgs_run(&objective, &metric, &reference, &inner_opts, Some(displacement.clone()))?;
        snapshots.extend(snapshots_from_run(
            &reference,
            &metric,
            &run,
            every,
            history.last().map(|r| r.iter).unwrap_or(0),
            &displacement,
        ));
        displacement = run.displacement.clone();
        final_mesh = run.final_mesh.clone();
        status = run.status;
        renumber_and_extend(&mut history, run.history.clone());
        outer_done = outer + 1;

        let geom = obstacle_geometry(&final_mesh, half_width, half_height)?;
        let c = state.constraint_values(&geom);
        vol_rel = (c[0] / state.target_volume).abs();
        bc_abs = (c[1] * c[1] + c[2] * c[2]).sqrt();
        let c_norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        if status == RunStatus::LineSearchFailure && c_norm >= prev_c_norm {
            break;
        }
        if vol_rel < 1e-4 && bc_abs < 1e-4 * 2.0 * half_height && status == RunStatus::Converged {
            break;
        }
        state.update_multipliers(c);
        if c_norm > 0.5 * prev_c_norm {
            state.rho *= 2.0;
        }
        prev_c_norm = c_norm;
    }

    // Report the bare energy (not the merged objective) in the summary.
    let final_sol = crate::stokes::solve_stokes(&final_mesh, u_inf)?;
    let final_j = crate::stokes::dissipated_energy(&final_mesh, &final_sol);
    let init_sol = crate::stokes::solve_stokes(&reference, u_inf)?;
    let initial_j = crate::stokes::dissipated_energy(&reference, &init_sol);

    let q_init = element_quality(&reference)?;
    let q_final = element_quality(&final_mesh)?;
    let displacement_field = metric.to_field(&displacement);
    let summary = RunSummary {
        problem: "stokes".into(),
        metric: metric_label(cfg),
        alpha: cfg.metric.kind.has_cr().then_some(cfg.metric.alpha),
        status,
        iterations: history.last().map(|r| r.iter).unwrap_or(0),
        initial_j,
        final_j,
        final_grad_norm: history.last().map(|r| r.grad_norm).unwrap_or(f64::NAN),
        final_cr_residual: cr_residual(&reference, &displacement_field),
        eta_initial: EtaStats::from_quality(&q_init),
        eta_final: EtaStats::from_quality(&q_final),
        constraints: Some(ConstraintSummary {
            outer_iterations: outer_done,
            volume_residual_rel: vol_rel,
            barycentre_residual: bc_abs,
            obstacle_x_extent_initial: gamma_x_extent(&reference),
            obstacle_x_extent_final: gamma_x_extent(&final_mesh),
            final_rho: state.rho,
        }),
    };
    Ok(RunOutcome {
        summary,
        reference,
        final_mesh,
        history,
        displacement_field,
        snapshots,
    })
}

/// Execute a single run (no sweep) and return the outcome without touching
/// the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let reference = build_mesh(cfg)?;
    match cfg.problem.kind {
        ProblemKind::Clover | ProblemKind::Annulus => run_levelset(cfg, reference),
        ProblemKind::Stokes => run_stokes(cfg, reference),
    }
}

fn histogram_edges() -> Vec<f64> {
    let mut edges: Vec<f64> = (0..=20).map(|i| 1.0 + 0.1 * i as f64).collect();
    edges.push(f64::INFINITY);
    edges
}

pub fn history_csv(history: &[IterRecord]) -> String {
    let mut out = String::from("iter,J,grad_norm,cr_residual,eta_min,eta_max,eta_frac_gt2,step\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iter, r.j, r.grad_norm, r.cr_residual, r.eta_min, r.eta_max, r.eta_frac_gt2, r.step
        ));
    }
    out
}

/// Write the artifact set for a finished run into `dir`.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let q_init = element_quality(&outcome.reference)?;
    let q_final = element_quality(&outcome.final_mesh)?;

    save_mesh(&outcome.reference, &dir.join("initial_mesh.json"), MeshFormat::NativeJson)?;
    save_mesh(&outcome.final_mesh, &dir.join("final_mesh.json"), MeshFormat::NativeJson)?;
    export_vtk(&outcome.reference, &dir.join("initial_mesh.vtk"), &[], &[("quality", &q_init.eta)])?;
    let displacement = VectorField::from_flat(&outcome.displacement_field);
    export_vtk(
        &outcome.final_mesh,
        &dir.join("final_mesh.vtk"),
        &[("displacement", &displacement)],
        &[("quality", &q_final.eta)],
    )?;

    let edges = histogram_edges();
    std::fs::write(
        dir.join("quality_initial.csv"),
        histogram_csv(&edges, &quality_histogram(&q_init, &edges)),
    )?;
    std::fs::write(
        dir.join("quality_final.csv"),
        histogram_csv(&edges, &quality_histogram(&q_final, &edges)),
    )?;
    std::fs::write(dir.join("convergence.csv"), history_csv(&outcome.history))?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"),
    )?;

    if !outcome.snapshots.is_empty() {
        let snap_dir = dir.join("snapshots");
        std::fs::create_dir_all(&snap_dir)?;
        for (iter, mesh) in &outcome.snapshots {
            let q = element_quality(mesh)?;
            export_vtk(
                mesh,
                &snap_dir.join(format!("iter_{iter:05}.vtk")),
                &[],
                &[("quality", &q.eta)],
            )?;
        }
    }
    Ok(())
}

/// Run a config end to end, including sweep handling and artifact output.
/// Returns the summary of the executed run (for sweeps: the last run).
pub fn run_config(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    if let Some(sweep) = &cfg.sweep {
        let mut rows = Vec::new();
        let mut last = None;
        for (i, &alpha) in sweep.alphas.iter().enumerate() {
            let mut sub = cfg.clone();
            sub.metric.alpha = alpha;
            sub.sweep = None;
            let outcome = execute(&sub)?;
            write_artifacts(&outcome, &out_dir.join(format!("alpha_{i}")))?;
            let lastrec = outcome.history.last().expect("history never empty");
            rows.push(crate::optim::SweepRow {
                alpha,
                final_max_eta: lastrec.eta_max,
                eta_frac_gt2: lastrec.eta_frac_gt2,
                iterations: outcome.summary.iterations,
                final_grad_norm: lastrec.grad_norm,
                status: outcome.summary.status,
            });
            last = Some(outcome.summary);
        }
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("sweep.csv"), crate::optim::sweep_csv(&rows))?;
        return Ok(last.expect("sweep validated non-empty"));
    }
    let outcome = execute(cfg)?;
    write_artifacts(&outcome, out_dir)?;
    Ok(outcome.summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub metric: String,
    pub final_max_eta: f64,
    pub eta_frac_gt2: f64,
    pub iterations: usize,
    pub final_j: f64,
    pub status: RunStatus,
}

pub fn comparison_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("label,metric,final_max_eta,eta_frac_gt2,iterations,final_J,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:?}\n",
            r.label, r.metric, r.final_max_eta, r.eta_frac_gt2, r.iterations, r.final_j, r.status
        ));
    }
    out
}

pub fn row_from_summary(label: &str, s: &RunSummary) -> CompareRow {
    CompareRow {
        label: label.to_string(),
        metric: s.metric.clone(),
        final_max_eta: s.eta_final.max,
        eta_frac_gt2: s.eta_final.frac_gt2,
        iterations: s.iterations,
        final_j: s.final_j,
        status: s.status,
    }
}

/// Rebuild a comparison row from a stored artifact directory.
pub fn row_from_artifacts(label: &str, dir: &Path) -> Result<CompareRow, RunError> {
    let text = std::fs::read_to_string(dir.join("summary.json"))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| RunError::Config(ConfigError::Parse(e.to_string())))?;
    let status = match v["status"].as_str() {
        Some("converged") => RunStatus::Converged,
        Some("max_iters") => RunStatus::MaxIters,
        Some("line_search_failure") => RunStatus::LineSearchFailure,
        Some("mesh_degenerate") => RunStatus::MeshDegenerate,
        other => {
            return Err(RunError::Config(ConfigError::Parse(format!(
                "unknown status {other:?} in summary"
            ))))
        }
    };
    Ok(CompareRow {
        label: label.to_string(),
        metric: v["metric"].as_str().unwrap_or("?").to_string(),
        final_max_eta: v["eta_final"]["max"].as_f64().unwrap_or(f64::NAN),
        eta_frac_gt2: v["eta_final"]["frac_gt2"].as_f64().unwrap_or(f64::NAN),
        iterations: v["iterations"].as_u64().unwrap_or(0) as usize,
        final_j: v["final_j"].as_f64().unwrap_or(f64::NAN),
        status,
    })
}

/// Run several configs that share problem and mesh, writing one artifact
/// directory per config plus a comparison CSV.
pub fn compare(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<CompareRow>, RunError> {
    if paths.is_empty() {
        return Err(RunError::Config(ConfigError::Parse("compare needs at least one config".into())));
    }
    let configs: Vec<RunConfig> = paths
        .iter()
        .map(|p| RunConfig::from_path(p))
        .collect::<Result<_, _>>()?;
    let signature = configs[0].problem_mesh_signature();
    for (path, cfg) in paths.iter().zip(&configs).skip(1) {
        if cfg.problem_mesh_signature() != signature {
            return Err(RunError::Config(ConfigError::Invalid {
                key: format!("{}", path.display()),
                message: "compare requires identical problem and mesh sections".into(),
            }));
        }
    }
    let mut rows = Vec::new();
    for (path, cfg) in paths.iter().zip(&configs) {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let summary = run_config(cfg, &out_dir.join(&label))?;
        rows.push(row_from_summary(&label, &summary));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("comparison.csv"), comparison_csv(&rows))?;
    Ok(rows)
}
