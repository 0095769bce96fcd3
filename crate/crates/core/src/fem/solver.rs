use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConductivityField, DtNMatrix, DtnBasis, Mesh};
use crate::error::{dim_check, Error, Result};
use crate::hilbert::{mode_count, trig_basis, BoundaryFunction, BoundaryFunctional};
use crate::sparse::{conjugate_gradient, CsrMatrix, EnvelopeCholesky};

/// Relative residual accepted for interior equations.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    #[default]
    Cholesky,
    ConjugateGradient,
}

/// P1 stiffness matrix `K_ij = ∫ a ∇φ_i · ∇φ_j` with `a` constant per triangle.
pub fn stiffness_matrix(mesh: &Mesh, a: &ConductivityField) -> Result<CsrMatrix> {
    dim_check(a.nodal_values.len() == mesh.vertex_count(), || {
        format!("conductivity has {} nodal values, mesh has {} vertices", a.nodal_values.len(), mesh.vertex_count())
    })?;
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.triangle_area(t);
        let at = a.element_value(mesh, t);
        if !(at > 0.0) {
            return Err(Error::Assembly(format!("non-positive conductivity {at} on triangle {t}")));
        }
        let p = tri.map(|v| mesh.vertices[v]);
        // ∇λ_i = rot90(p_{i+2} − p_{i+1}) / (2A)
        let grads: [[f64; 2]; 3] = std::array::from_fn(|i| {
            let (q, r) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            [(q[1] - r[1]) / (2.0 * area), (r[0] - q[0]) / (2.0 * area)]
        });
        for i in 0..3 {
            for j in 0..3 {
                let g = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                triplets.push((tri[i], tri[j], at * area * g));
            }
        }
    }
    let n = mesh.vertex_count();
    Ok(CsrMatrix::from_triplets(n, n, &triplets))
}

enum Factor {
    Cholesky(EnvelopeCholesky),
    Iterative,
}

/// Dirichlet problem `div(a ∇u) = 0`, `u = f` on the boundary, prepared for repeated
/// solves: the interior block is factored once.
pub struct DirichletSolver<'m> {
    mesh: &'m Mesh,
    stiffness: CsrMatrix,
    interior: Vec<usize>,
    k_ii: CsrMatrix,
    k_ib: CsrMatrix,
    factor: Factor,
}

impl<'m> DirichletSolver<'m> {
    pub fn new(mesh: &'m Mesh, a: &ConductivityField, solver: LinearSolver) -> Result<Self> {
        a.validate()?;
        let stiffness = stiffness_matrix(mesh, a)?;
        let interior = mesh.interior();
        let k_ii = stiffness.select(&interior, &interior);
        let k_ib = stiffness.select(&interior, &mesh.boundary);
        let factor = match solver {
            LinearSolver::Cholesky => match EnvelopeCholesky::factor(&k_ii) {
                Ok(f) => Factor::Cholesky(f),
                Err(Error::Resource(_)) => Factor::Iterative,
                Err(e) => return Err(e),
            },
            LinearSolver::ConjugateGradient => Factor::Iterative,
        };
        Ok(Self { mesh, stiffness, interior, k_ii, k_ib, factor })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    fn check_truncation(&self, k: usize) -> Result<()> {
        if k > self.mesh.max_truncation() {
            return Err(Error::Argument(format!(
                "truncation K = {k} exceeds boundary resolution limit {} (boundary vertices / 4)",
                self.mesh.max_truncation()
            )));
        }
        Ok(())
    }

    /// Nodal values of `f` at the boundary vertices.
    pub fn boundary_values(&self, f: &BoundaryFunction) -> Vec<f64> {
        self.mesh.boundary_angles.iter().map(|&t| f.eval(t)).collect()
    }

    /// Full nodal solution for prescribed boundary nodal values.
    pub fn solve_nodal(&self, boundary_values: &[f64]) -> Result<Vec<f64>> {
        dim_check(boundary_values.len() == self.mesh.boundary.len(), || {
            "boundary data length does not match the boundary vertex count".into()
        })?;
        let rhs: Vec<f64> = self.k_ib.mul_vec(boundary_values).iter().map(|v| -v).collect();
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u_i = match &self.factor {
            Factor::Cholesky(f) => f.solve(&rhs),
            Factor::Iterative => {
                let (x, _) = conjugate_gradient(&self.k_ii, &rhs, 1e-12, 20 * rhs.len() + 100)?;
                x
            }
        };
        let res: f64 = self.k_ii.mul_vec(&u_i).iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let rel = if rhs_norm > 0.0 { res / rhs_norm } else { res };
        if rel > RESIDUAL_TOL {
            return Err(Error::NonConvergence { iterations: 0, residual: rel });
        }
        let mut u = vec![0.0; self.mesh.vertex_count()];
        for (&i, v) in self.interior.iter().zip(u_i) {
            u[i] = v;
        }
        for (&b, v) in self.mesh.boundary.iter().zip(boundary_values) {
            u[b] = *v;
        }
        Ok(u)
    }

    pub fn solve(&self, f: &BoundaryFunction) -> Result<Vec<f64>> {
        self.check_truncation(f.truncation())?;
        self.solve_nodal(&self.boundary_values(f))
    }

    /// `(K u)` restricted to the boundary: the discrete flux functional of `u`.
    pub fn boundary_flux(&self, u: &[f64]) -> Vec<f64> {
        let ku = self.stiffness.mul_vec(u);
        self.mesh.boundary.iter().map(|&b| ku[b]).collect()
    }

    /// `∫ a ∇u_h · ∇v_h` with `u_h` the discrete solution for `f` and `v_h` the boundary
    /// interpolant of `g` extended by zero.
    pub fn pairing(&self, f: &BoundaryFunction, g: &BoundaryFunction) -> Result<f64> {
        let u = self.solve(f)?;
        let gb = self.boundary_values(g);
        Ok(self.boundary_flux(&u).iter().zip(&gb).map(|(a, b)| a * b).sum())
    }

    fn trig_columns(&self, k: usize) -> DMatrix<f64> {
        let angles = &self.mesh.boundary_angles;
        DMatrix::from_fn(angles.len(), mode_count(k), |r, i| trig_basis(i, angles[r]))
    }

    pub fn apply(&self, f: &BoundaryFunction) -> Result<BoundaryFunctional> {
        let k = f.truncation();
        let u = self.solve(f)?;
        let flux = nalgebra::DVector::from_vec(self.boundary_flux(&u));
        let coeffs = self.trig_columns(k).tr_mul(&flux);
        BoundaryFunctional::from_coeffs(coeffs.as_slice().to_vec())
    }

    /// Raw-trig matrix `D_ij = ⟨Λ_a b_j, b_i⟩`, one solve per column against the shared
    /// factorization.
    pub fn dtn_matrix(&self, k: usize) -> Result<DtNMatrix> {
        self.check_truncation(k)?;
        let basis = self.trig_columns(k);
        let n = mode_count(k);
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let u = self.solve_nodal(basis.column(j).as_slice())?;
                let flux = nalgebra::DVector::from_vec(self.boundary_flux(&u));
                Ok(basis.tr_mul(&flux).as_slice().to_vec())
            })
            .collect::<Result<_>>()?;
        let entries = DMatrix::from_fn(n, n, |i, j| columns[j][i]);
        Ok(DtNMatrix { entries, basis_kind: DtnBasis::Raw, k })
    }
}

pub fn solve_dirichlet(mesh: &Mesh, a: &ConductivityField, f: &BoundaryFunction) -> Result<Vec<f64>> {
    DirichletSolver::new(mesh, a, LinearSolver::default())?.solve(f)
}

pub fn dtn_pairing(mesh: &Mesh, a: &ConductivityField, f: &BoundaryFunction, g: &BoundaryFunction) -> Result<f64> {
    DirichletSolver::new(mesh, a, LinearSolver::default())?.pairing(f, g)
}

pub fn dtn_apply(mesh: &Mesh, a: &ConductivityField, f: &BoundaryFunction) -> Result<BoundaryFunctional> {
    DirichletSolver::new(mesh, a, LinearSolver::default())?.apply(f)
}

pub fn dtn_matrix(mesh: &Mesh, a: &ConductivityField, k: usize) -> Result<DtNMatrix> {
    DirichletSolver::new(mesh, a, LinearSolver::default())?.dtn_matrix(k)
}
