//! Gaussian measures with trace-class covariance on the boundary space, clamped
//! log-normal conductivity measures, and Monte-Carlo second-moment estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ConductivityField, Mesh};
use crate::hilbert::{frequency, mode_count, BoundaryFunction, CircleBasis, DomainBasis, OrthoBasis};

/// Seeded generator used by every sampler in the crate.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean of i.i.d. draws with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MonteCarloEstimate {
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Argument("Monte-Carlo estimate of an empty sample".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, std_error, n })
    }

    /// `|mean − value| ≤ k · SE` (with a floor for zero-variance samples).
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error + 1e-12 * value.abs().max(1e-300)
    }
}

/// Centred Gaussian measure `Σ_k √α_k ξ_k e_k` on a space with orthonormal basis `(e_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeasureSpec {
    alphas: Vec<f64>,
    trace: f64,
}

impl GaussianMeasureSpec {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Argument("covariance eigenvalues must be finite and non-negative".into()));
        }
        if alphas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Argument("covariance eigenvalues must be non-increasing".into()));
        }
        let trace = alphas.iter().sum();
        Ok(Self { alphas, trace })
    }

    /// `α_i = (1 + k_i²)^{-s}` on the first `modes` boundary slots of a `K`-truncated
    /// space, zero beyond.
    pub fn boundary_decay(k: usize, decay_s: f64, modes: usize) -> Result<Self> {
        if modes > mode_count(k) {
            return Err(Error::Dimension(format!(
                "{modes} measure modes exceed the {} boundary slots for K = {k}",
                mode_count(k)
            )));
        }
        let alphas = (0..mode_count(k))
            .map(|i| if i < modes { (1.0 + (frequency(i) as f64).powi(2)).powf(-decay_s) } else { 0.0 })
            .collect();
        Self::new(alphas)
    }

    /// `α_j = (1 + j)^{-decay}`, `j = 0 … modes−1`.
    pub fn kl_decay(modes: usize, decay: f64) -> Result<Self> {
        Self::new((0..modes).map(|j| (1.0 + j as f64).powf(-decay)).collect())
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// `Tr(Q) = Σ α_k = E‖x‖²`.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// `Σ_{k ≥ d} α_k` (0-based), the mass not captured by the first `d` modes.
    pub fn tail(&self, d: usize) -> f64 {
        self.alphas.iter().skip(d).sum()
    }

    /// Coordinates `√α_k ξ_k` of one draw.
    pub fn sample_coordinates(&self, seed: u64) -> DVector<f64> {
        let mut rng = rng_for(seed);
        DVector::from_iterator(
            self.alphas.len(),
            self.alphas.iter().map(|a| {
                let xi: f64 = StandardNormal.sample(&mut rng);
                a.sqrt() * xi
            }),
        )
    }

    pub fn sample<B: OrthoBasis>(&self, basis: &B, seed: u64) -> Result<B::Element> {
        if self.alphas.len() > basis.size() {
            return Err(Error::Dimension(format!(
                "measure has {} modes but basis only {}",
                self.alphas.len(),
                basis.size()
            )));
        }
        basis.extend(self.sample_coordinates(seed).as_slice())
    }
}

/// Draw from `μ` on `H^{1/2}(∂D)` with the circle basis of truncation `k`.
pub fn sample_boundary(spec: &GaussianMeasureSpec, k: usize, seed: u64) -> Result<BoundaryFunction> {
    spec.sample(&CircleBasis::new(k), seed)
}

/// `n` draws with seeds `base, base+1, …`.
pub fn sample_boundary_batch(
    spec: &GaussianMeasureSpec,
    k: usize,
    base_seed: u64,
    n: usize,
) -> Result<Vec<BoundaryFunction>> {
    (0..n as u64).map(|i| sample_boundary(spec, k, base_seed.wrapping_add(i))).collect()
}

/// Measure on `Y_M`: `a = exp(clamp(g, −ln M, ln M))` with `g` a truncated
/// Karhunen–Loève Gaussian field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductivityMeasureSpec {
    pub log_field: GaussianMeasureSpec,
    pub m_bound: f64,
    /// Sobolev order the samples are guaranteed to have (polynomial KL modes are smooth).
    pub m_smooth: usize,
}

impl ConductivityMeasureSpec {
    pub fn new(log_field: GaussianMeasureSpec, m_bound: f64) -> Result<Self> {
        if !(m_bound > 1.0) || !m_bound.is_finite() {
            return Err(Error::Argument(format!("M = {m_bound} must exceed 1")));
        }
        Ok(Self { log_field, m_bound, m_smooth: 2 })
    }

    pub fn from_config(cfg: &EtaConfig) -> Result<Self> {
        Self::new(GaussianMeasureSpec::kl_decay(cfg.kl_modes, cfg.decay)?, cfg.m_bound)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (1.0 / self.m_bound, self.m_bound)
    }
}

/// `r^n cos mθ`, `r^n sin mθ` for `n = 0, 1, 2, …`, `m ≡ n (mod 2)`, `m ≤ n`: the monomials
/// of degree `n` in polar form.
pub fn polynomial_candidates(mesh: &Mesh, count: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut degree = 0usize;
    while out.len() < count {
        for m in (degree % 2..=degree).step_by(2) {
            for trig in 0..if m == 0 { 1 } else { 2 } {
                if out.len() == count {
                    break;
                }
                out.push(DVector::from_iterator(
                    mesh.vertex_count(),
                    mesh.vertices.iter().map(|p| {
                        let (r, t) = ((p[0] * p[0] + p[1] * p[1]).sqrt(), p[1].atan2(p[0]));
                        let ang = if trig == 0 { (m as f64 * t).cos() } else { (m as f64 * t).sin() };
                        r.powi(degree as i32) * ang
                    }),
                ));
            }
        }
        degree += 1;
    }
    out
}

/// Orthonormal `L²(Ω)` family for conductivity expansions: Gram–Schmidt of
/// [`polynomial_candidates`] in the mesh mass inner product.
pub fn kl_basis(mesh: &Mesh, modes: usize) -> Result<DomainBasis> {
    let basis = DomainBasis::gram_schmidt(mesh.mass_matrix(), &polynomial_candidates(mesh, modes))?;
    if basis.size() < modes {
        return Err(Error::Dimension(format!("mesh too coarse for {modes} KL modes")));
    }
    Ok(basis)
}

pub fn sample_conductivity(
    spec: &ConductivityMeasureSpec,
    basis: &DomainBasis,
    seed: u64,
) -> Result<ConductivityField> {
    let coords = spec.log_field.sample_coordinates(seed);
    let g = basis.extend(coords.as_slice())?;
    let cap = spec.m_bound.ln();
    let values = g.iter().map(|v| v.clamp(-cap, cap).exp()).collect();
    ConductivityField::new(values, coords.as_slice().to_vec(), spec.bounds())
}

/// Sample second-moment matrix in orthonormal coordinates and its eigen-system.
#[derive(Debug, Clone)]
pub struct EmpiricalCovariance {
    pub matrix: DMatrix<f64>,
    /// Non-increasing.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// `max_k ‖C v_k − λ_k v_k‖`.
    pub residual: f64,
}

pub fn empirical_covariance(samples: &[BoundaryFunction]) -> Result<EmpiricalCovariance> {
    let first = samples.first().ok_or_else(|| Error::Argument("no samples".into()))?;
    let basis = CircleBasis::new(first.truncation());
    let n = basis.size();
    let mut matrix = DMatrix::zeros(n, n);
    for f in samples {
        let x = basis.project(f, n)?;
        matrix.ger(1.0, &x, &x, 1.0);
    }
    matrix /= samples.len() as f64;
    covariance_eigensystem(matrix)
}

pub(crate) fn covariance_eigensystem(matrix: DMatrix<f64>) -> Result<EmpiricalCovariance> {
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors =
        DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    let residual = (0..order.len())
        .map(|k| {
            let v = eigenvectors.column(k);
            (&matrix * v - v * eigenvalues[k]).norm()
        })
        .fold(0.0, f64::max);
    Ok(EmpiricalCovariance { matrix, eigenvalues, eigenvectors, residual })
}

/// Monte-Carlo `E‖map(x)‖²` over the given samples.
pub fn pushforward_second_moment<T, V>(
    samples: &[T],
    map: impl Fn(&T) -> Result<V> + Sync,
    norm: impl Fn(&V) -> f64 + Sync,
) -> Result<MonteCarloEstimate>
where
    T: Sync,
{
    use rayon::prelude::*;
    let values: Vec<f64> = samples.par_iter().map(|s| map(s).map(|v| norm(&v).powi(2))).collect::<Result<_>>()?;
    MonteCarloEstimate::from_samples(&values)
}

/// Boundary measure block of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuConfig {
    pub decay_s: f64,
    /// Number of boundary slots carrying mass; all `2K+1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
}

impl Default for MuConfig {
    fn default() -> Self {
        Self { decay_s: 2.0, modes: None }
    }
}

impl MuConfig {
    pub fn spec(&self, k: usize) -> Result<GaussianMeasureSpec> {
        GaussianMeasureSpec::boundary_decay(k, self.decay_s, self.modes.unwrap_or(mode_count(k)))
    }
}

/// Conductivity measure block of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaConfig {
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub kl_modes: usize,
    pub decay: f64,
}

impl Default for EtaConfig {
    fn default() -> Self {
        Self { m_bound: 10.0, kl_modes: 16, decay: 3.0 }
    }
}

/// One JSON array of coefficients per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("coefficient arrays serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Argument(format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::generate_mesh;
    use crate::hilbert::h_half_norm;

    #[test]
    fn spec_validation() {
        assert!(GaussianMeasureSpec::new(vec![1.0, 2.0]).is_err());
        assert!(GaussianMeasureSpec::new(vec![1.0, -0.1]).is_err());
        let s = GaussianMeasureSpec::boundary_decay(3, 2.0, 5).unwrap();
        assert_eq!(s.alphas(), &[1.0, 0.25, 0.25, 1.0 / 25.0, 1.0 / 25.0, 0.0, 0.0]);
        assert!((s.trace() - 1.58).abs() < 1e-15);
        assert!((s.tail(3) - 0.08).abs() < 1e-15);
        assert!(GaussianMeasureSpec::boundary_decay(3, 2.0, 8).is_err());
    }

    #[test]
    fn degenerate_measure_gives_zero() {
        let spec = GaussianMeasureSpec::new(vec![0.0; 9]).unwrap();
        assert_eq!(sample_boundary(&spec, 4, 3).unwrap(), BoundaryFunction::zeros(4));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = GaussianMeasureSpec::boundary_decay(6, 2.0, 13).unwrap();
        let a = sample_boundary(&spec, 6, 42).unwrap();
        let b = sample_boundary(&spec, 6, 42).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
        assert_ne!(a, sample_boundary(&spec, 6, 43).unwrap());
    }

    #[test]
    fn second_moment_and_mode_independence() {
        let k = 6;
        let spec = GaussianMeasureSpec::boundary_decay(k, 2.0, mode_count(k)).unwrap();
        let basis = CircleBasis::new(k);
        let n = 20_000;
        let samples = sample_boundary_batch(&spec, k, 1000, n).unwrap();
        let sq: Vec<f64> = samples.iter().map(|f| h_half_norm(f).powi(2)).collect();
        let est = MonteCarloEstimate::from_samples(&sq).unwrap();
        assert!(est.agrees_with(spec.trace(), 3.0), "{est:?} vs {}", spec.trace());
        let cross: Vec<f64> = samples
            .iter()
            .map(|f| {
                let x = basis.project(f, 3).unwrap();
                x[1] * x[2]
            })
            .collect();
        assert!(MonteCarloEstimate::from_samples(&cross).unwrap().agrees_with(0.0, 3.0));
    }

    #[test]
    fn covariance_recovers_spectrum() {
        let k = 3;
        let alphas: Vec<f64> = (0..7).map(|i| 0.25f64.powi(i)).collect();
        let spec = GaussianMeasureSpec::new(alphas.clone()).unwrap();
        let samples = sample_boundary_batch(&spec, k, 0, 100_000).unwrap();
        let cov = empirical_covariance(&samples).unwrap();
        assert!(cov.residual <= 1e-10);
        for (got, want) in cov.eigenvalues.iter().zip(&alphas) {
            assert!((got / want - 1.0).abs() <= 0.05, "{got} vs {want}");
        }
        let mean_sq = samples.iter().map(|f| h_half_norm(f).powi(2)).sum::<f64>() / samples.len() as f64;
        assert!((cov.matrix.trace() - mean_sq).abs() <= 1e-12 * mean_sq.max(1.0));
    }

    #[test]
    fn covariance_of_repeated_sample_is_rank_one() {
        let f = BoundaryFunction::from_coeffs(vec![0.3, -1.0, 0.5, 0.2, 0.0]).unwrap();
        let cov = empirical_covariance(&vec![f.clone(); 4]).unwrap();
        let norm = h_half_norm(&f);
        assert!((cov.eigenvalues[0] - norm * norm).abs() < 1e-12);
        assert!(cov.eigenvalues.iter().skip(1).all(|v| v.abs() < 1e-12));
        let x = CircleBasis::new(2).project(&f, 5).unwrap() / norm;
        let v = cov.eigenvectors.column(0);
        assert!((v.dot(&x).abs() - 1.0).abs() < 1e-12);
        assert!(empirical_covariance(&[]).is_err());
    }

    #[test]
    fn kl_basis_is_orthonormal() {
        let mesh = generate_mesh(0.1).unwrap();
        let basis = kl_basis(&mesh, 16).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let ip = basis.inner(&basis.member(i), &basis.member(j));
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        // first member is the normalized constant
        let c = basis.member(0);
        let expect = 1.0 / mesh.area().sqrt();
        assert!(c.iter().all(|v| (v - expect).abs() < 1e-10));
    }

    #[test]
    fn conductivity_samples_stay_in_band() {
        let mesh = generate_mesh(0.15).unwrap();
        let basis = kl_basis(&mesh, 16).unwrap();
        let spec = ConductivityMeasureSpec::from_config(&EtaConfig::default()).unwrap();
        for seed in 0..300 {
            let a = sample_conductivity(&spec, &basis, seed).unwrap();
            assert!(a.min_value() >= 0.1 - 1e-15 && a.max_value() <= 10.0 + 1e-12);
            assert_eq!(a.kl_coeffs.len(), 16);
        }
        let flat = ConductivityMeasureSpec::new(GaussianMeasureSpec::new(vec![0.0; 16]).unwrap(), 10.0).unwrap();
        let one = sample_conductivity(&flat, &basis, 7).unwrap();
        assert!(one.nodal_values.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn clamp_is_active_for_wide_fields() {
        let mesh = generate_mesh(0.15).unwrap();
        let basis = kl_basis(&mesh, 4).unwrap();
        let spec = ConductivityMeasureSpec::new(GaussianMeasureSpec::new(vec![400.0; 4]).unwrap(), 2.0).unwrap();
        let a = sample_conductivity(&spec, &basis, 1).unwrap();
        assert!(a.nodal_values.iter().any(|v| *v == 2.0 || *v == 0.5));
        a.validate().unwrap();
    }

    #[test]
    fn pushforward_trivial_maps() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let zero = pushforward_second_moment(&xs, |_| Ok(0.0), |v: &f64| v.abs()).unwrap();
        assert_eq!(zero.mean, 0.0);
        let id = pushforward_second_moment(&xs, |x| Ok(*x), |v: &f64| v.abs()).unwrap();
        assert!((id.mean - xs.iter().map(|x| x * x).sum::<f64>() / 50.0).abs() < 1e-9);
    }

    #[test]
    fn jsonl_round_trip() {
        let spec = GaussianMeasureSpec::boundary_decay(2, 2.0, 5).unwrap();
        let batch = sample_boundary_batch(&spec, 2, 0, 3).unwrap();
        let text = to_jsonl(&batch);
        assert_eq!(text.lines().count(), 3);
        let back: Vec<BoundaryFunction> = from_jsonl(&text).unwrap();
        assert_eq!(back, batch);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok: EtaConfig = serde_json::from_str(r#"{"M": 10, "kl_modes": 16, "decay": 3.0}"#).unwrap();
        assert_eq!(ok, EtaConfig::default());
        assert!(serde_json::from_str::<MuConfig>(r#"{"decay_s": 2.0, "modes": 33, "x": 1}"#).is_err());
        let mu: MuConfig = serde_json::from_str(r#"{"decay_s": 2.0}"#).unwrap();
        assert_eq!(mu.spec(3).unwrap().len(), 7);
        let short: MuConfig = serde_json::from_str(r#"{"decay_s": 2.0, "modes": 3}"#).unwrap();
        assert_eq!(short.spec(3).unwrap().alphas()[3], 0.0);
        assert!(short.spec(1).is_ok() && MuConfig { modes: Some(9), ..short }.spec(3).is_err());
    }
}
