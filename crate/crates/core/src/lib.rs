//! Soft-body finite element solvers built around position-based nonlinear
//! Gauss-Seidel (PBNG) minimization of hyperelastic potentials.
//!
//! The library simulates tetrahedral (3D) and triangular (2D) meshes under
//! quasistatic or backward-Euler time stepping. The headline solver updates
//! one node at a time with a single Newton step on the total potential,
//! using a symmetric positive definite approximation of the energy density
//! Hessian that needs no SVD and stays definite through element inversion.
//! Reference solvers (PBD, XPBD, pseudo-time XPBD, and a modified Newton
//! with conjugate gradients) share the same meshes, materials, and weak
//! constraints so the methods can be compared under identical budgets.
//!
//! Modules follow the pipeline:
//! - [`mesh`] / [`state`]: geometry, reference-shape gradients, nodal data
//! - [`materials`]: constitutive models and their density Hessians
//! - [`constraints`]: weak (penalty) constraints and collision detection
//! - [`coloring`]: conflict-free groupings for parallel Gauss-Seidel sweeps
//! - [`system`]: shared force/energy/residual assembly
//! - [`pbng`], [`newton`], [`xpbd`]: the solvers
//! - [`scene`], [`driver`], [`io`]: built-in scenes, stepping, file formats

pub mod coloring;
pub mod constraints;
pub mod driver;
pub mod io;
pub mod materials;
pub mod math;
pub mod mesh;
pub mod newton;
pub mod pbng;
pub mod scene;
pub mod state;
pub mod system;
pub mod xpbd;

pub use coloring::ColorPartition;
pub use constraints::{Stiffness, WeakConstraint};
pub use materials::{DensityHessian, Material, MaterialModel};
pub use math::{MatD, MatOps, VecD};
pub use mesh::SimMesh;
pub use pbng::{Acceleration, SolverConfig, TimeIntegration};
pub use scene::Scene;
pub use state::SimState;

/// Unified error type for mesh construction, scene files, and solver runs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("element {element} is degenerate or inverted (signed measure {measure:.3e})")]
    DegenerateElement { element: usize, measure: f64 },
    #[error("element {element} references vertex {vertex} out of range ({num_vertices} vertices)")]
    VertexOutOfRange {
        element: usize,
        vertex: usize,
        num_vertices: usize,
    },
    #[error("element {element} repeats vertex {vertex}")]
    RepeatedVertex { element: usize, vertex: usize },
    #[error("mesh has no elements")]
    NoElements,
    #[error("node {node} has a singular nodal system (no incident element or constraint)")]
    SingularSystem { node: usize },
    #[error("free node {node} has non-positive mass {mass:.3e} in dynamic mode")]
    ZeroMass { node: usize, mass: f64 },
    #[error("Poisson ratio {nu} is at or beyond the incompressible limit 0.5")]
    IncompressiblePoisson { nu: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("constraint normal has zero length")]
    ZeroNormal,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unknown scene '{name}'; available: {available}")]
    UnknownScene { name: String, available: String },
    #[error("scene is invalid: {msg}")]
    InvalidScene { msg: String },
    #[error("solver diverged at frame {frame}, iteration {iteration}: {msg}")]
    Diverged {
        frame: usize,
        iteration: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
