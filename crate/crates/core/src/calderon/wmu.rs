use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::fem::{DtNMatrix, DtnBasis};
use crate::hilbert::{mode_count, BasisKind, BoundaryFunction, CircleBasis, OrthoBasis};

/// Index pairs ordered so that the first `s²` entries are exactly the leading `s × s`
/// block: `(s,0) … (s,s), (0,s) … (s−1,s)` for `s = 0, 1, …`.
pub fn nested_entry_order(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n);
    for s in 0..n {
        out.extend((0..=s).map(|j| (s, j)));
        out.extend((0..s).map(|i| (i, s)));
    }
    out
}

/// Orthonormal coordinates of truncated bilinear forms: the entries `⟨Λ ê_j, ê_i⟩`, ordered
/// by [`nested_entry_order`]. The inner product is the Hilbert–Schmidt one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DtnEntryBasis {
    k: usize,
    order: Vec<(usize, usize)>,
}

impl DtnEntryBasis {
    pub fn new(k: usize) -> Self {
        Self { k, order: nested_entry_order(mode_count(k)) }
    }

    pub fn order(&self) -> &[(usize, usize)] {
        &self.order
    }

    pub fn truncation(&self) -> usize {
        self.k
    }
}

impl OrthoBasis for DtnEntryBasis {
    type Element = DtNMatrix;

    fn kind(&self) -> BasisKind {
        BasisKind::DtnEntries
    }

    fn size(&self) -> usize {
        self.order.len()
    }

    fn normalization(&self) -> Vec<f64> {
        vec![1.0; self.order.len()]
    }

    fn project(&self, x: &DtNMatrix, d: usize) -> Result<DVector<f64>> {
        dim_check(x.k == self.k, || format!("matrix has K = {}, basis K = {}", x.k, self.k))?;
        dim_check(d <= self.size(), || format!("requested {d} entries of {}", self.size()))?;
        let on = x.to_orthonormal();
        Ok(DVector::from_iterator(d, self.order[..d].iter().map(|&(i, j)| on.entries[(i, j)])))
    }

    fn extend(&self, a: &[f64]) -> Result<DtNMatrix> {
        dim_check(a.len() <= self.size(), || format!("{} coordinates exceed {}", a.len(), self.size()))?;
        let mut m = DtNMatrix::zeros(self.k, DtnBasis::Orthonormal);
        for (&(i, j), v) in self.order.iter().zip(a) {
            m.entries[(i, j)] = *v;
        }
        Ok(m)
    }

    fn norm(&self, x: &DtNMatrix) -> f64 {
        x.to_orthonormal().entries.norm()
    }

    fn sub(&self, x: &DtNMatrix, y: &DtNMatrix) -> Result<DtNMatrix> {
        x.sub(y)
    }
}

/// Monte-Carlo value of `‖T‖²_{W_μ} = ∬ |T(f, g)|² μ(df) μ(dg)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmuEstimate {
    pub squared: f64,
    /// Standard error of `squared`.
    pub std_error: f64,
    pub norm: f64,
}

/// The empirical measure `μ_N ⊗ μ_N` off the diagonal, built from a fixed batch of
/// boundary samples.
#[derive(Debug, Clone)]
pub struct WmuQuadrature {
    k: usize,
    /// Orthonormal coordinates of the samples, one per column.
    coords: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl WmuQuadrature {
    pub fn new(samples: &[BoundaryFunction]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Argument("empty boundary sample batch".into()))?;
        if samples.len() < 2 {
            return Err(Error::Argument("the W_mu U-statistic needs at least two samples".into()));
        }
        let k = first.truncation();
        let basis = CircleBasis::new(k);
        let n = basis.size();
        let cols = samples.iter().map(|f| basis.project(f, n)).collect::<Result<Vec<_>>>()?;
        let coords = DMatrix::from_columns(&cols);
        let gram = &coords * coords.transpose();
        Ok(Self { k, coords, gram })
    }

    pub fn len(&self) -> usize {
        self.coords.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.ncols() == 0
    }

    pub fn truncation(&self) -> usize {
        self.k
    }

    /// U-statistic over ordered pairs `s ≠ t` of `T(f_s, f_t)²`, with the Hoeffding
    /// standard error `2 sd(h₁)/√N`.
    pub fn estimate(&self, t: &DtNMatrix) -> Result<WmuEstimate> {
        dim_check(t.k == self.k, || format!("matrix has K = {}, samples K = {}", t.k, self.k))?;
        let d = t.to_orthonormal().entries;
        let n = self.len() as f64;
        let z = &d * &self.coords;
        let w = d.tr_mul(&self.coords);
        let gz = &self.gram * &z;
        let gw = &self.gram * &w;
        let total = (d.transpose() * &self.gram * &d).component_mul(&self.gram).sum();
        let mut diag_sq = 0.0;
        let mut h1 = Vec::with_capacity(self.len());
        for s in 0..self.len() {
            let x = self.coords.column(s);
            let p = x.dot(&z.column(s));
            diag_sq += p * p;
            let a = w.column(s).dot(&gw.column(s));
            let b = z.column(s).dot(&gz.column(s));
            h1.push((0.5 * (a + b) - p * p) / (n - 1.0));
        }
        let squared = ((total - diag_sq) / (n * (n - 1.0))).max(0.0);
        let mean = h1.iter().sum::<f64>() / n;
        let var = h1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(WmuEstimate { squared, std_error: 2.0 * (var / n).sqrt(), norm: squared.sqrt() })
    }

    /// `H` with `‖E‖²_{W_μ} = eᵀ H e` for the orthonormal entries `e` of `E` listed in `order`.
    pub fn quadratic_form(&self, order: &[(usize, usize)]) -> DMatrix<f64> {
        let n = self.len() as f64;
        let m = order.len();
        let g = &self.gram;
        let v = DMatrix::from_fn(self.len(), m, |s, p| {
            let (i, j) = order[p];
            self.coords[(i, s)] * self.coords[(j, s)]
        });
        let fourth = v.tr_mul(&v);
        let mut h = DMatrix::from_fn(m, m, |p, q| {
            let ((i, j), (k, l)) = (order[p], order[q]);
            g[(i, k)] * g[(j, l)] - fourth[(p, q)]
        });
        h /= n * (n - 1.0);
        h
    }
}

/// `‖T‖_{W_μ}` estimated on the batch `mu_samples`.
pub fn wmu_norm(t: &DtNMatrix, mu_samples: &[BoundaryFunction]) -> Result<WmuEstimate> {
    WmuQuadrature::new(mu_samples)?.estimate(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{rng_for, sample_boundary_batch, GaussianMeasureSpec};
    use rand::Rng;

    fn random_matrix(k: usize, seed: u64) -> DtNMatrix {
        let mut rng = rng_for(seed);
        let n = mode_count(k);
        DtNMatrix {
            entries: DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)),
            basis_kind: DtnBasis::Orthonormal,
            k,
        }
    }

    #[test]
    fn entry_order_nests_sections() {
        let order = nested_entry_order(3);
        assert_eq!(order.len(), 9);
        assert_eq!(&order[..4], &[(0, 0), (1, 0), (1, 1), (0, 1)]);
        let basis = DtnEntryBasis::new(1);
        let m = random_matrix(1, 3);
        let x = basis.project(&m, 9).unwrap();
        let back = basis.extend(x.as_slice()).unwrap();
        assert!((back.entries - &m.entries).amax() < 1e-15);
        assert!((basis.norm(&m) - x.norm()).abs() < 1e-12);
    }

    #[test]
    fn zero_form_has_zero_norm() {
        let spec = GaussianMeasureSpec::boundary_decay(2, 2.0, 5).unwrap();
        let mu = sample_boundary_batch(&spec, 2, 0, 50).unwrap();
        let est = wmu_norm(&DtNMatrix::zeros(2, DtnBasis::Raw), &mu).unwrap();
        assert_eq!(est.squared, 0.0);
        assert!(wmu_norm(&DtNMatrix::zeros(2, DtnBasis::Raw), &[]).is_err());
    }

    #[test]
    fn closed_form_matches_pair_sum() {
        let spec = GaussianMeasureSpec::boundary_decay(2, 2.0, 5).unwrap();
        let mu = sample_boundary_batch(&spec, 2, 9, 40).unwrap();
        let t = random_matrix(2, 1);
        let raw = t.to_raw();
        let mut brute = 0.0;
        for (s, f) in mu.iter().enumerate() {
            for (u, g) in mu.iter().enumerate() {
                if s != u {
                    brute += raw.bilinear(g, f).unwrap().powi(2);
                }
            }
        }
        brute /= 40.0 * 39.0;
        let q = WmuQuadrature::new(&mu).unwrap();
        let est = q.estimate(&t).unwrap();
        assert!((est.squared - brute).abs() <= 1e-10 * brute);
        let order = nested_entry_order(5);
        let e = DtnEntryBasis::new(2).project(&t, 25).unwrap();
        let h = q.quadratic_form(&order);
        assert!((e.dot(&(&h * &e)) - brute).abs() <= 1e-10 * brute);
    }

    #[test]
    fn homogeneity_and_triangle_inequality() {
        let spec = GaussianMeasureSpec::boundary_decay(3, 2.0, 7).unwrap();
        let mu = sample_boundary_batch(&spec, 3, 4, 256).unwrap();
        let q = WmuQuadrature::new(&mu).unwrap();
        for seed in 0..20 {
            let (a, b) = (random_matrix(3, seed), random_matrix(3, seed + 100));
            let na = q.estimate(&a).unwrap().norm;
            let scaled = q.estimate(&a.scaled(-2.5)).unwrap().norm;
            assert!((scaled - 2.5 * na).abs() <= 1e-10 * na);
            let sum = a.sub(&b.scaled(-1.0)).unwrap();
            let nb = q.estimate(&b).unwrap().norm;
            assert!(q.estimate(&sum).unwrap().norm <= na + nb + 1e-10);
        }
    }
}
