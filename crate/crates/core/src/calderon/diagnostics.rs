use std::ops::SubAssign;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Result};
use crate::fem::{dtn_matrix, ConductivityField, DirichletSolver, DtNMatrix, DtnBasis, LinearSolver, Mesh};
use crate::hilbert::{h_half_norm, h_minus_half_norm, mode_count, BoundaryFunction};
use crate::measures::{GaussianMeasureSpec, MonteCarloEstimate};

/// Monte-Carlo estimates of the three error sources of a linear latent model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub d: usize,
    /// `E ‖θ x_d − P_d Λ E_d x_d‖²`, the latent model error.
    pub i1: MonteCarloEstimate,
    /// `E ‖P_d Λ (I − E_d P_d) x‖²`, the input projection tail.
    pub i2: MonteCarloEstimate,
    /// `E ‖(I − E_d P_d) Λ x‖²`, the output projection tail.
    pub i3: MonteCarloEstimate,
    /// `E ‖Λ x − E_d θ P_d x‖²`.
    pub total_mse: MonteCarloEstimate,
    /// `Σ_{k ≥ d} α_k`.
    pub tail: f64,
}

impl ErrorDecomposition {
    /// `3 × √(SE_total² + 9 (SE₁² + SE₂² + SE₃²))`.
    pub fn combined_margin(&self) -> f64 {
        let s = self.i1.std_error.powi(2) + self.i2.std_error.powi(2) + self.i3.std_error.powi(2);
        3.0 * (self.total_mse.std_error.powi(2) + 9.0 * s).sqrt()
    }

    /// `total ≤ 3 (I₁ + I₂ + I₃)` up to the combined Monte-Carlo margin.
    pub fn bound_holds(&self) -> bool {
        self.total_mse.mean <= 3.0 * (self.i1.mean + self.i2.mean + self.i3.mean) + self.combined_margin()
    }

    pub fn row(&self) -> DecompositionRow {
        DecompositionRow { d: self.d, i1: self.i1.mean, i2: self.i2.mean, i3: self.i3.mean, tail: self.tail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub d: usize,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub tail: f64,
}

/// Splits the error of `E_d ∘ θ ∘ P_d` against `Λ_a^φ` with shared draws `x ~ μ` in the
/// covariance eigenbasis (the orthonormal boundary basis).
pub fn error_decomposition(
    dtn: &DtNMatrix,
    theta: &DMatrix<f64>,
    mu: &GaussianMeasureSpec,
    samples: usize,
    base_seed: u64,
) -> Result<ErrorDecomposition> {
    let n = mode_count(dtn.k);
    let d = theta.ncols();
    dim_check(theta.nrows() == d && d <= n, || format!("θ must be d×d with d ≤ {n}"))?;
    dim_check(mu.len() == n, || format!("measure has {} modes, DtN matrix {n}", mu.len()))?;
    let a = dtn.to_orthonormal().entries;
    let head = a.view((0, 0), (d, d));
    let cross = a.view((0, d), (d, n - d));
    let lower = a.view((d, 0), (n - d, n));
    let mut rows: Vec<[f64; 4]> = Vec::with_capacity(samples);
    for s in 0..samples as u64 {
        let x = mu.sample_coordinates(base_seed.wrapping_add(s));
        let xd = x.rows(0, d);
        let xt = x.rows(d, n - d);
        let model = theta * xd;
        let i1 = (&model - head * xd).norm_squared();
        let i2 = (cross * xt).norm_squared();
        let i3 = (lower * &x).norm_squared();
        let mut full = &a * &x;
        full.rows_mut(0, d).sub_assign(&model);
        rows.push([i1, i2, i3, full.norm_squared()]);
    }
    let column = |j: usize| MonteCarloEstimate::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
    Ok(ErrorDecomposition {
        d,
        i1: column(0)?,
        i2: column(1)?,
        i3: column(2)?,
        total_mse: column(3)?,
        tail: mu.tail(d),
    })
}

/// `sup ‖Λ_a f‖_{−1/2} / (a_hi ‖f‖_{1/2})` over the given pairs, each solved on `mesh`.
pub fn empirical_boundedness_constant(mesh: &Mesh, pairs: &[(ConductivityField, BoundaryFunction)]) -> Result<f64> {
    let ratios: Vec<f64> = pairs
        .par_iter()
        .map(|(a, f)| {
            let lam = DirichletSolver::new(mesh, a, LinearSolver::Cholesky)?.apply(f)?;
            Ok(h_minus_half_norm(&lam) / (a.a_hi() * h_half_norm(f)))
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Same ratio for one assembled matrix over a batch of boundary functions.
pub fn matrix_boundedness_constant(dtn: &DtNMatrix, a_hi: f64, fs: &[BoundaryFunction]) -> Result<f64> {
    let mut worst = 0.0f64;
    for f in fs {
        let lam = dtn.apply(f)?;
        let nf = h_half_norm(f);
        if nf > 0.0 {
            worst = worst.max(h_minus_half_norm(&lam) / (a_hi * nf));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub lambda: f64,
    /// Empirical `#{e > λ} / N`.
    pub fraction: f64,
    /// `mean(e²) / λ²`.
    pub bound: f64,
    /// Binomial standard error of `fraction`.
    pub std_error: f64,
}

impl Coverage {
    pub fn consistent(&self) -> bool {
        self.fraction <= self.bound + 3.0 * self.std_error
    }
}

/// Empirical exceedance of `λ` against the Chebyshev bound.
pub fn chebyshev_coverage(errors: &[f64], lambda: f64) -> Coverage {
    if errors.is_empty() {
        return Coverage { lambda, fraction: 0.0, bound: 0.0, std_error: 0.0 };
    }
    let n = errors.len() as f64;
    let fraction = errors.iter().filter(|e| **e > lambda).count() as f64 / n;
    let mean_sq = errors.iter().map(|e| e * e).sum::<f64>() / n;
    Coverage {
        lambda,
        fraction,
        bound: mean_sq / (lambda * lambda),
        std_error: (fraction * (1.0 - fraction) / n).sqrt(),
    }
}

/// Coverage at `λ ∈ {1, 2, 3} × RMS(errors)`.
pub fn coverage_sweep(errors: &[f64]) -> Vec<Coverage> {
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len().max(1) as f64).sqrt();
    if rms == 0.0 {
        return vec![chebyshev_coverage(errors, 0.0)];
    }
    [1.0, 2.0, 3.0].iter().map(|m| chebyshev_coverage(errors, m * rms)).collect()
}

/// `a ↦ Λ_a` on admissible conductivities, extended by the zero form elsewhere.
pub fn gamma(mesh: &Mesh, a: &ConductivityField, k: usize) -> Result<DtNMatrix> {
    let admissible = a.nodal_values.len() == mesh.vertex_count()
        && a.nodal_values.iter().all(|v| v.is_finite() && *v > 0.0)
        && a.validate().is_ok();
    if admissible {
        dtn_matrix(mesh, a, k)
    } else {
        Ok(DtNMatrix::zeros(k, DtnBasis::Raw))
    }
}

/// `sup ‖Λ_a − Λ_b‖ / ‖a − b‖_{L²}` over all pairs of a sampled family, with the `W_μ`
/// norm supplied by `norm` and the `L²` inner product by `l2`.
pub fn empirical_lipschitz(
    fields: &[DVector<f64>],
    forms: &[DtNMatrix],
    norm: impl Fn(&DtNMatrix) -> Result<f64>,
    l2: impl Fn(&DVector<f64>) -> f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..fields.len() {
        for j in 0..i {
            let dist = l2(&(&fields[i] - &fields[j]));
            if dist > 0.0 {
                worst = worst.max(norm(&forms[i].sub(&forms[j])?)? / dist);
            }
        }
    }
    Ok(worst)
}
