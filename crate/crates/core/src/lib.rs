//! Matrix-free, domain-decomposed solver library for the 2D Helmholtz
//! equation: complex-shifted-Laplacian preconditioning through one geometric
//! multigrid V-cycle, two-level deflation with interchangeable matrix-free
//! coarse-grid operators, and outer GMRES/GCR/FGMRES Krylov methods.
//!
//! Fields live on a blockwise Cartesian partition with one-layer (or wider)
//! halos; every operator is applied from the finite-difference stencils
//! without assembling a matrix. The `oracle` module assembles small sparse
//! matrices purely for testing.

pub mod coarse;
pub mod deflation;
pub mod field;
pub mod grid;
pub mod krylov;
pub mod media;
pub mod mgcslp;
pub mod operators;
pub mod oracle;
pub mod solver;
pub mod transfer;

pub use num_complex::Complex64;

pub use coarse::{CoarseOpVariant, CoarseOperator};
pub use deflation::{CoarseSolveMode, DeflationConfig, DeflationVariant, TwoLevelDeflation};
pub use field::{DistField, RealField};
pub use grid::{CartesianPartition, DistLayout, Grid2D, SubdomainView};
pub use krylov::ConvergenceReport;
pub use media::{LayeredVelocityModel, WavenumberField};
pub use mgcslp::MultigridHierarchy;
pub use operators::{BcKind, FivePointOp};
pub use solver::{OuterSolver, SolveSpec};
