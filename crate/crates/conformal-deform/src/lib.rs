//! Nearly conformal mesh deformations for 2D shape optimization.
//!
//! The toolkit computes shape gradients as Riesz representatives of shape
//! derivatives in Hilbert metrics that penalize deviation from the
//! Cauchy-Riemann equations, so that the resulting mesh deformations are
//! close to angle-preserving. It ships finite-element and reproducing-kernel
//! deformation backends, levelset and Stokes-flow shape functionals, an
//! L-BFGS driver over a fixed reference domain, and a configuration-driven
//! CLI that reproduces the bundled experiments.

pub mod config;
pub mod driver;
pub mod exec;
pub mod fem;
pub mod functionals;
pub mod mesh;
pub mod optim;
pub mod rkhs;
pub mod sparse;
pub mod stokes;

pub use mesh::{BoundaryTag, TriMesh, VectorField};
