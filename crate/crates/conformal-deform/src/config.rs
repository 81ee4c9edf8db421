//! TOML run configuration: schema, parsing and validation.
//!
//! Unknown keys are rejected, numbers are 64-bit floats, and validation
//! errors name the offending key path so the CLI can report them directly.

use crate::fem::MetricKind;
use crate::mesh::BoundaryTag;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config value at {key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Target inner radius for the annulus levelset.
    pub r_prime: Option<f64>,
    /// Far-field velocity for the Stokes problem.
    pub u_inf: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Clover,
    Annulus,
    Stokes,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct MeshConfig {
    pub generator: Option<MeshGenerator>,
    pub radius: Option<f64>,
    pub n_rings: Option<usize>,
    pub r_inner: Option<f64>,
    pub r_outer: Option<f64>,
    pub file: Option<PathBuf>,
    pub format: Option<MeshFileFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshGenerator {
    Disc,
    Annulus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFileFormat {
    NativeJson,
    Gmsh22,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    H1Ring,
    HsymRing,
    CrPlusH1,
    CrPlusHsym,
    H1Clamped,
    CrPlusHsymClamped,
    Kernel,
    CrPlusKernel,
}

impl MetricFamily {
    pub fn fem_kind(self) -> Option<MetricKind> {
        match self {
            MetricFamily::H1Ring => Some(MetricKind::H1Ring),
            MetricFamily::HsymRing => Some(MetricKind::HsymRing),
            MetricFamily::CrPlusH1 => Some(MetricKind::CrPlusH1),
            MetricFamily::CrPlusHsym => Some(MetricKind::CrPlusHsym),
            MetricFamily::H1Clamped => Some(MetricKind::H1Clamped),
            MetricFamily::CrPlusHsymClamped => Some(MetricKind::CrPlusHsymClamped),
            MetricFamily::Kernel | MetricFamily::CrPlusKernel => None,
        }
    }

    pub fn has_cr(self) -> bool {
        matches!(
            self,
            MetricFamily::CrPlusH1
                | MetricFamily::CrPlusHsym
                | MetricFamily::CrPlusHsymClamped
                | MetricFamily::CrPlusKernel
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct MetricConfig {
    pub kind: MetricFamily,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub weighted: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Kernel support radius as a multiple of the mean edge length.
    #[serde(default = "default_sigma_factor")]
    pub sigma_factor: f64,
    #[serde(default)]
    pub clamped_tags: Vec<BoundaryTag>,
    /// Rebuild the inner product on the deformed mesh after every accepted
    /// step instead of freezing it on the reference domain.
    #[serde(default)]
    pub reassemble: bool,
}

fn default_alpha() -> f64 {
    1e-2
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_sigma_factor() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct OptimizerConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_g_tol")]
    pub g_tol: f64,
    #[serde(default = "default_memory")]
    pub memory: usize,
    /// Augmented-Lagrangian outer iterations (Stokes only).
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    /// Inner L-BFGS budget per outer iteration (Stokes only).
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
}

fn default_max_iters() -> usize {
    100
}

fn default_g_tol() -> f64 {
    1e-4
}

fn default_memory() -> usize {
    5
}

fn default_max_outer() -> usize {
    10
}

fn default_rho0() -> f64 {
    10.0
}

fn default_inner_iters() -> usize {
    30
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: default_max_iters(),
            g_tol: default_g_tol(),
            memory: default_memory(),
            max_outer: default_max_outer(),
            rho0: default_rho0(),
            inner_iters: default_inner_iters(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub mesh: MeshConfig,
    pub metric: MetricConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    pub sweep: Option<SweepConfig>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        // Mesh file paths are resolved relative to the config file.
        if let Some(file) = &cfg.mesh.file {
            if file.is_relative() {
                if let Some(parent) = path.parent() {
                    cfg.mesh.file = Some(parent.join(file));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.problem.kind {
            ProblemKind::Annulus => {
                let r = self
                    .problem
                    .r_prime
                    .ok_or_else(|| invalid("problem.r_prime", "required for the annulus problem"))?;
                if !(r > 0.0 && r < 1.0) {
                    return Err(invalid("problem.r_prime", format!("must lie in (0, 1), got {r}")));
                }
            }
            ProblemKind::Stokes => {
                if self.mesh.file.is_none() {
                    return Err(invalid("mesh.file", "the stokes problem needs a channel mesh file"));
                }
            }
            ProblemKind::Clover => {}
        }

        match (&self.mesh.generator, &self.mesh.file) {
            (Some(_), Some(_)) => {
                return Err(invalid("mesh", "give either a generator or a file, not both"));
            }
            (None, None) => {
                return Err(invalid("mesh", "needs a generator or a file"));
            }
            (Some(MeshGenerator::Disc), None) => {
                let r = self.mesh.radius.ok_or_else(|| invalid("mesh.radius", "required for disc"))?;
                if !(r > 0.0) {
                    return Err(invalid("mesh.radius", format!("must be positive, got {r}")));
                }
                if self.mesh.n_rings.unwrap_or(0) < 1 {
                    return Err(invalid("mesh.n_rings", "must be at least 1"));
                }
            }
            (Some(MeshGenerator::Annulus), None) => {
                let ri = self.mesh.r_inner.ok_or_else(|| invalid("mesh.r_inner", "required"))?;
                let ro = self.mesh.r_outer.ok_or_else(|| invalid("mesh.r_outer", "required"))?;
                if !(ri > 0.0 && ri < ro) {
                    return Err(invalid("mesh.r_inner", format!("need 0 < r_inner < r_outer, got {ri} and {ro}")));
                }
                if self.mesh.n_rings.unwrap_or(0) < 1 {
                    return Err(invalid("mesh.n_rings", "must be at least 1"));
                }
            }
            (None, Some(_)) => {
                if self.mesh.format.is_none() {
                    return Err(invalid("mesh.format", "required when loading a mesh file"));
                }
            }
        }

        if self.metric.kind.has_cr() && !(self.metric.alpha > 0.0) {
            return Err(invalid("metric.alpha", format!("must be positive, got {}", self.metric.alpha)));
        }
        if self.metric.weighted && !(self.metric.epsilon > 0.0) {
            return Err(invalid("metric.epsilon", format!("must be positive, got {}", self.metric.epsilon)));
        }
        if !(self.metric.sigma_factor > 0.0) {
            return Err(invalid("metric.sigma_factor", format!("must be positive, got {}", self.metric.sigma_factor)));
        }
        if matches!(
            self.metric.kind,
            MetricFamily::H1Clamped | MetricFamily::CrPlusHsymClamped
        ) && self.metric.clamped_tags.is_empty()
        {
            return Err(invalid("metric.clamped_tags", "clamped metrics need at least one tag"));
        }
        if let Some(sweep) = &self.sweep {
            for (i, &a) in sweep.alphas.iter().enumerate() {
                if !(a > 0.0) {
                    return Err(invalid(&format!("sweep.alphas[{i}]"), format!("must be positive, got {a}")));
                }
            }
        }
        if self.optimizer.memory == 0 {
            return Err(invalid("optimizer.memory", "must be at least 1"));
        }
        if !(self.optimizer.rho0 > 0.0) {
            return Err(invalid("optimizer.rho0", format!("must be positive, got {}", self.optimizer.rho0)));
        }
        Ok(())
    }

    /// Key used by `compare` to check that runs share problem and mesh.
    pub fn problem_mesh_signature(&self) -> String {
        format!("{:?}|{:?}", self.problem, self.mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
        [problem]
        kind = "clover"

        [mesh]
        generator = "disc"
        radius = 3.0
        n_rings = 16

        [metric]
        kind = "cr_plus_hsym"
        alpha = 1e-2
    "#;

    #[test]
    fn parses_minimal_config() {
        let cfg: RunConfig = toml::from_str(GOOD).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.optimizer.memory, 5);
        assert_eq!(cfg.metric.alpha, 1e-2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = GOOD.replace("[metric]", "[metric]\nbogus_knob = 1.0");
        let err = toml::from_str::<RunConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus_knob"), "{err}");
    }

    #[test]
    fn negative_alpha_names_key_path() {
        let bad = GOOD.replace("alpha = 1e-2", "alpha = -3.0");
        let cfg: RunConfig = toml::from_str(&bad).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("metric.alpha"), "{err}");
    }

    #[test]
    fn annulus_needs_r_prime() {
        let bad = GOOD.replace("kind = \"clover\"", "kind = \"annulus\"");
        let cfg: RunConfig = toml::from_str(&bad).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("problem.r_prime"), "{err}");
    }

    #[test]
    fn mesh_source_is_exclusive() {
        let bad = GOOD.replace(
            "generator = \"disc\"",
            "generator = \"disc\"\nfile = \"m.json\"",
        );
        let cfg: RunConfig = toml::from_str(&bad).unwrap();
        assert!(cfg.validate().is_err());
    }
}
