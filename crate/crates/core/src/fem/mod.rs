//! P1 finite elements for `div(a ∇u) = 0` on the unit disk and the weak
//! Dirichlet-to-Neumann form `Λ_a f (g) = ∫ a ∇u · ∇v`.

mod conductivity;
mod dtn;
mod mesh;
mod solver;

pub use conductivity::ConductivityField;
pub use dtn::{mode_labels, DtNMatrix, DtnBasis};
pub use mesh::{boundary_resolution, generate_mesh, Mesh, MAX_VERTICES};
pub use solver::{
    dtn_apply, dtn_matrix, dtn_pairing, solve_dirichlet, stiffness_matrix, DirichletSolver, LinearSolver, RESIDUAL_TOL,
};
