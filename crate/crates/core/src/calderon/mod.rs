//! Learning pipelines for the fixed-conductivity DtN map, the direct map `a ↦ Λ_a` and its
//! restricted inverse, with the `W_μ` norm and the error diagnostics.

mod dataset;
mod diagnostics;
mod pipelines;
mod wmu;

pub use dataset::{generate_dataset, CalderonDataset, ConductivityFamily, Provenance, TARGET_SYMMETRY_TOL};
pub use diagnostics::{
    chebyshev_coverage, coverage_sweep, empirical_boundedness_constant, empirical_lipschitz, error_decomposition,
    gamma, matrix_boundedness_constant, Coverage, DecompositionRow, ErrorDecomposition,
};
pub use pipelines::{
    conductivity_inputs, least_squares_fit, linear_dtn_fit, matrix_coordinates, train_calderon_direct,
    train_dtn_fixed_a, train_inverse, Arch, DirectReport, DtnFixedReport, FixedASamples, InverseModel, InverseReport,
    LinearFit, Reconstruction, Seeds, WorstCase, OOD_RATIO,
};
pub use wmu::{nested_entry_order, wmu_norm, DtnEntryBasis, WmuEstimate, WmuQuadrature};

use nalgebra::DVector;

use crate::error::Result;
use crate::fem::Mesh;
use crate::hilbert::DomainBasis;
use crate::measures::polynomial_candidates;

/// Orthonormal `L²(Ω)` family for piecewise-constant radial profiles: the constant, the
/// indicator of `r < radius`, then the polynomial candidates.
pub fn radial_output_basis(mesh: &Mesh, radius: f64, size: usize) -> Result<DomainBasis> {
    let indicator = DVector::from_iterator(
        mesh.vertex_count(),
        mesh.vertices.iter().map(|p| if (p[0] * p[0] + p[1] * p[1]).sqrt() < radius - 1e-12 { 1.0 } else { 0.0 }),
    );
    let poly = polynomial_candidates(mesh, size);
    let mut candidates = vec![poly[0].clone(), indicator];
    candidates.extend(poly.into_iter().skip(1));
    DomainBasis::gram_schmidt(mesh.mass_matrix(), &candidates[..size.min(candidates.len())])
}
