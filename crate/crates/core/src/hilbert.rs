//! Coefficient-space models of the boundary spaces `H^{1/2}` and `H^{-1/2}` on the unit
//! circle, plus orthonormal families on the disk.
//!
//! Boundary data are stored as raw trigonometric coefficients in the order
//! `[const, cos θ, sin θ, cos 2θ, sin 2θ, …]`, so `f(θ) = c_0 + Σ c_kc cos kθ + c_ks sin kθ`.
//! The `H^{1/2}` norm is the Fourier multiplier norm
//!
//! ```text
//! ‖f‖²_{1/2} = Σ_i w_i c_i²,   w_0 = 2π,   w_i = π (1 + k_i²)^{1/2}
//! ```
//!
//! where `k_i` is the frequency of slot `i`. A functional `F ∈ H^{-1/2}` is stored by its
//! values on the raw trigonometric functions, `F_i = F(b_i)`, so that the duality pairing
//! is the Euclidean dot product of coefficient vectors and `‖F‖²_{-1/2} = Σ F_i² / w_i`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::sparse::CsrMatrix;

/// Number of coefficient slots for truncation order `k`.
pub fn mode_count(k: usize) -> usize {
    2 * k + 1
}

/// Frequency carried by coefficient slot `index`.
pub fn frequency(index: usize) -> usize {
    index.div_ceil(2)
}

/// Multiplier weight `w_i` of slot `index`.
pub fn multiplier(index: usize) -> f64 {
    if index == 0 {
        2.0 * PI
    } else {
        let k = frequency(index) as f64;
        PI * (1.0 + k * k).sqrt()
    }
}

/// Value of the raw trigonometric basis function of slot `index` at angle `theta`.
pub fn trig_basis(index: usize, theta: f64) -> f64 {
    if index == 0 {
        1.0
    } else {
        let k = frequency(index) as f64;
        if index % 2 == 1 {
            (k * theta).cos()
        } else {
            (k * theta).sin()
        }
    }
}

fn truncation_of(len: usize) -> Result<usize> {
    if len % 2 == 1 {
        Ok(len / 2)
    } else {
        Err(Error::Dimension(format!("coefficient vector of length {len} is not of the form 2K+1")))
    }
}

/// An element of `H^{1/2}(∂D)` truncated at frequency `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BoundaryFunction {
    coeffs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for BoundaryFunction {
    type Error = Error;
    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        Self::from_coeffs(coeffs)
    }
}

impl From<BoundaryFunction> for Vec<f64> {
    fn from(f: BoundaryFunction) -> Self {
        f.coeffs
    }
}

impl BoundaryFunction {
    pub fn zeros(k: usize) -> Self {
        Self { coeffs: vec![0.0; mode_count(k)] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        truncation_of(coeffs.len())?;
        Ok(Self { coeffs })
    }

    /// The raw basis function of slot `index`, truncated at `k`.
    pub fn basis(k: usize, index: usize) -> Self {
        let mut f = Self::zeros(k);
        f.coeffs[index] = 1.0;
        f
    }

    pub fn constant(k: usize, c: f64) -> Self {
        let mut f = Self::zeros(k);
        f.coeffs[0] = c;
        f
    }

    pub fn cos(k: usize, freq: usize) -> Self {
        assert!(freq >= 1 && freq <= k);
        Self::basis(k, 2 * freq - 1)
    }

    pub fn sin(k: usize, freq: usize) -> Self {
        assert!(freq >= 1 && freq <= k);
        Self::basis(k, 2 * freq)
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len() / 2
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.coeffs.iter().enumerate().map(|(i, c)| c * trig_basis(i, theta)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|x| c * x).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        dim_check(self.coeffs.len() == other.coeffs.len(), || "boundary functions of different truncation".into())?;
        Ok(Self { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    /// `⟨self, other⟩_{1/2}`.
    pub fn inner_half(&self, other: &Self) -> Result<f64> {
        dim_check(self.coeffs.len() == other.coeffs.len(), || "boundary functions of different truncation".into())?;
        Ok(self.coeffs.iter().zip(&other.coeffs).enumerate().map(|(i, (a, b))| multiplier(i) * a * b).sum())
    }

    pub fn h_half_norm(&self) -> f64 {
        h_half_norm(self)
    }

    /// Functional `g ↦ ⟨self, g⟩_{1/2}`; inverse of [`riesz_map`].
    pub fn riesz_inverse(&self) -> BoundaryFunctional {
        BoundaryFunctional { coeffs: self.coeffs.iter().enumerate().map(|(i, c)| c * multiplier(i)).collect() }
    }
}

/// An element of `H^{-1/2}(∂D)`, stored by its action on the raw trigonometric basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BoundaryFunctional {
    coeffs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for BoundaryFunctional {
    type Error = Error;
    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        Self::from_coeffs(coeffs)
    }
}

impl From<BoundaryFunctional> for Vec<f64> {
    fn from(f: BoundaryFunctional) -> Self {
        f.coeffs
    }
}

impl BoundaryFunctional {
    pub fn zeros(k: usize) -> Self {
        Self { coeffs: vec![0.0; mode_count(k)] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        truncation_of(coeffs.len())?;
        Ok(Self { coeffs })
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len() / 2
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|x| c * x).collect() }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        dim_check(self.coeffs.len() == other.coeffs.len(), || "functionals of different truncation".into())?;
        Ok(Self { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect() })
    }

    /// Duality pairing `F(f)`.
    pub fn pairing(&self, f: &BoundaryFunction) -> Result<f64> {
        dim_check(self.coeffs.len() == f.coeffs.len(), || "functional and function of different truncation".into())?;
        Ok(self.coeffs.iter().zip(&f.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn h_minus_half_norm(&self) -> f64 {
        h_minus_half_norm(self)
    }
}

pub fn h_half_norm(f: &BoundaryFunction) -> f64 {
    f.coeffs.iter().enumerate().map(|(i, c)| multiplier(i) * c * c).sum::<f64>().sqrt()
}

pub fn h_minus_half_norm(f: &BoundaryFunctional) -> f64 {
    f.coeffs.iter().enumerate().map(|(i, c)| c * c / multiplier(i)).sum::<f64>().sqrt()
}

/// Riesz isomorphism `H^{-1/2} → H^{1/2}`: the unique `g` with `F(h) = ⟨g, h⟩_{1/2}`.
pub fn riesz_map(f: &BoundaryFunctional) -> BoundaryFunction {
    BoundaryFunction { coeffs: f.coeffs.iter().enumerate().map(|(i, c)| c / multiplier(i)).collect() }
}

/// Which Hilbert space an orthonormal family lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    HHalfCircle,
    HMinusHalfCircle,
    L2DomainKl,
    /// Entries of a truncated bilinear form in the orthonormal boundary basis.
    DtnEntries,
}

/// An orthonormal family `(e_i)` in a Hilbert space whose elements are stored as
/// `Self::Element`, with the projection `P_d` and extension `E_m` operators.
pub trait OrthoBasis {
    type Element;

    fn kind(&self) -> BasisKind;

    fn size(&self) -> usize;

    /// Scale of each basis member relative to its raw generator.
    fn normalization(&self) -> Vec<f64>;

    /// `x ↦ (⟨x, e_i⟩)_{i<d}`.
    fn project(&self, x: &Self::Element, d: usize) -> Result<DVector<f64>>;

    /// `a ↦ Σ_{i<m} a_i e_i`.
    fn extend(&self, a: &[f64]) -> Result<Self::Element>;

    fn norm(&self, x: &Self::Element) -> f64;

    fn sub(&self, x: &Self::Element, y: &Self::Element) -> Result<Self::Element>;
}

/// `‖x − E_d P_d x‖`.
pub fn projection_tail_error<B: OrthoBasis>(basis: &B, x: &B::Element, d: usize) -> Result<f64> {
    let a = basis.project(x, d)?;
    let approx = basis.extend(a.as_slice())?;
    Ok(basis.norm(&basis.sub(x, &approx)?))
}

/// `ê_i = b_i / √w_i`: the trigonometric functions rescaled to unit `H^{1/2}` norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircleBasis {
    k: usize,
}

impl CircleBasis {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn truncation(&self) -> usize {
        self.k
    }

    pub fn member(&self, i: usize) -> BoundaryFunction {
        let mut f = BoundaryFunction::zeros(self.k);
        f.coeffs[i] = 1.0 / multiplier(i).sqrt();
        f
    }
}

fn check_element_len(len: usize, k: usize) -> Result<()> {
    dim_check(len == mode_count(k), || format!("element has {len} coefficients, basis expects {}", mode_count(k)))
}

fn check_d(d: usize, size: usize) -> Result<()> {
    dim_check(d <= size, || format!("requested {d} basis members but only {size} exist"))
}

impl OrthoBasis for CircleBasis {
    type Element = BoundaryFunction;

    fn kind(&self) -> BasisKind {
        BasisKind::HHalfCircle
    }

    fn size(&self) -> usize {
        mode_count(self.k)
    }

    fn normalization(&self) -> Vec<f64> {
        (0..self.size()).map(|i| 1.0 / multiplier(i).sqrt()).collect()
    }

    fn project(&self, x: &BoundaryFunction, d: usize) -> Result<DVector<f64>> {
        check_d(d, self.size())?;
        check_element_len(x.coeffs.len(), self.k)?;
        Ok(DVector::from_fn(d, |i, _| multiplier(i).sqrt() * x.coeffs[i]))
    }

    fn extend(&self, a: &[f64]) -> Result<BoundaryFunction> {
        check_d(a.len(), self.size())?;
        let mut f = BoundaryFunction::zeros(self.k);
        for (i, ai) in a.iter().enumerate() {
            f.coeffs[i] = ai / multiplier(i).sqrt();
        }
        Ok(f)
    }

    fn norm(&self, x: &BoundaryFunction) -> f64 {
        h_half_norm(x)
    }

    fn sub(&self, x: &BoundaryFunction, y: &BoundaryFunction) -> Result<BoundaryFunction> {
        x.sub(y)
    }
}

/// Orthonormal basis of `H^{-1/2}`: the Riesz images of [`CircleBasis`], `ê*_i = √w_i δ_i`.
///
/// Coordinates in this basis coincide with the `CircleBasis` coordinates of the Riesz
/// representative, so a DeepONet targeting `Λ_a f` and one targeting `φ ∘ Λ_a f` are the
/// same network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualCircleBasis {
    k: usize,
}

impl DualCircleBasis {
    pub fn new(k: usize) -> Self {
        Self { k }
    }
}

impl OrthoBasis for DualCircleBasis {
    type Element = BoundaryFunctional;

    fn kind(&self) -> BasisKind {
        BasisKind::HMinusHalfCircle
    }

    fn size(&self) -> usize {
        mode_count(self.k)
    }

    fn normalization(&self) -> Vec<f64> {
        (0..self.size()).map(|i| multiplier(i).sqrt()).collect()
    }

    fn project(&self, x: &BoundaryFunctional, d: usize) -> Result<DVector<f64>> {
        check_d(d, self.size())?;
        check_element_len(x.coeffs.len(), self.k)?;
        Ok(DVector::from_fn(d, |i, _| x.coeffs[i] / multiplier(i).sqrt()))
    }

    fn extend(&self, a: &[f64]) -> Result<BoundaryFunctional> {
        check_d(a.len(), self.size())?;
        let mut f = BoundaryFunctional::zeros(self.k);
        for (i, ai) in a.iter().enumerate() {
            f.coeffs[i] = ai * multiplier(i).sqrt();
        }
        Ok(f)
    }

    fn norm(&self, x: &BoundaryFunctional) -> f64 {
        h_minus_half_norm(x)
    }

    fn sub(&self, x: &BoundaryFunctional, y: &BoundaryFunctional) -> Result<BoundaryFunctional> {
        x.sub(y)
    }
}

/// Orthonormal family in `L²(Ω)` represented by nodal values on a fixed mesh, with the
/// inner product `⟨u, v⟩ = uᵀ M v` for a symmetric positive definite mass matrix `M`.
#[derive(Debug, Clone)]
pub struct DomainBasis {
    mass: CsrMatrix,
    /// Orthonormal members as columns.
    members: DMatrix<f64>,
    /// `M · members`, cached so projection is a dense product.
    mass_members: DMatrix<f64>,
    norms: Vec<f64>,
}

impl DomainBasis {
    /// Gram–Schmidt (two passes) over `candidates` in the `M` inner product. Candidates
    /// that are numerically dependent on earlier ones are dropped.
    pub fn gram_schmidt(mass: CsrMatrix, candidates: &[DVector<f64>]) -> Result<Self> {
        let n = mass.nrows();
        dim_check(mass.ncols() == n, || "mass matrix must be square".into())?;
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let mut mcols: Vec<DVector<f64>> = Vec::new();
        let mut norms = Vec::new();
        for c in candidates {
            dim_check(c.len() == n, || format!("candidate has {} nodal values, mesh has {n}", c.len()))?;
            let original = (c.dot(&(&mass * c))).max(0.0).sqrt();
            if original == 0.0 {
                continue;
            }
            let mut v = c.clone();
            for _ in 0..2 {
                for (q, mq) in cols.iter().zip(&mcols) {
                    let r = v.dot(mq);
                    v.axpy(-r, q, 1.0);
                }
            }
            let mv = &mass * &v;
            let nv = v.dot(&mv).max(0.0).sqrt();
            if nv <= 1e-10 * original {
                continue;
            }
            cols.push(v / nv);
            mcols.push(mv / nv);
            norms.push(nv);
        }
        if cols.is_empty() {
            return Err(Error::Argument("no independent candidates for the domain basis".into()));
        }
        Ok(Self { mass, members: DMatrix::from_columns(&cols), mass_members: DMatrix::from_columns(&mcols), norms })
    }

    pub fn member(&self, i: usize) -> DVector<f64> {
        self.members.column(i).into_owned()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.mass * v))
    }
}

impl OrthoBasis for DomainBasis {
    type Element = DVector<f64>;

    fn kind(&self) -> BasisKind {
        BasisKind::L2DomainKl
    }

    fn size(&self) -> usize {
        self.members.ncols()
    }

    fn normalization(&self) -> Vec<f64> {
        self.norms.iter().map(|n| 1.0 / n).collect()
    }

    fn project(&self, x: &DVector<f64>, d: usize) -> Result<DVector<f64>> {
        check_d(d, self.size())?;
        dim_check(x.len() == self.members.nrows(), || {
            format!("field has {} nodal values, basis expects {}", x.len(), self.members.nrows())
        })?;
        Ok(self.mass_members.columns(0, d).tr_mul(x))
    }

    fn extend(&self, a: &[f64]) -> Result<DVector<f64>> {
        check_d(a.len(), self.size())?;
        Ok(self.members.columns(0, a.len()) * DVector::from_column_slice(a))
    }

    fn norm(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    fn sub(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        dim_check(x.len() == y.len(), || "fields of different length".into())?;
        Ok(x - y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_function(rng: &mut ChaCha8Rng, k: usize) -> BoundaryFunction {
        BoundaryFunction::from_coeffs((0..mode_count(k)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_functional(rng: &mut ChaCha8Rng, k: usize) -> BoundaryFunctional {
        BoundaryFunctional::from_coeffs((0..mode_count(k)).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn slot_layout() {
        assert_eq!(frequency(0), 0);
        assert_eq!(frequency(1), 1);
        assert_eq!(frequency(2), 1);
        assert_eq!(frequency(5), 3);
        assert_relative_eq!(trig_basis(3, 0.3), (0.6f64).cos());
        assert_relative_eq!(trig_basis(4, 0.3), (0.6f64).sin());
    }

    #[test]
    fn half_norm_values() {
        assert_eq!(h_half_norm(&BoundaryFunction::zeros(4)), 0.0);
        let c = BoundaryFunction::cos(4, 1);
        assert_relative_eq!(h_half_norm(&c), (PI * 2f64.sqrt()).sqrt(), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_function(&mut rng, 5);
        assert_relative_eq!(h_half_norm(&g.scaled(-2.5)), 2.5 * h_half_norm(&g), epsilon = 1e-13);
    }

    #[test]
    fn constant_mode_norm_matches_l2_convention() {
        // ‖1‖²_{1/2} = ‖1‖²_{L²(∂D)} = 2π for the zero frequency.
        let one = BoundaryFunction::constant(2, 1.0);
        assert_relative_eq!(h_half_norm(&one).powi(2), 2.0 * PI, epsilon = 1e-14);
    }

    #[test]
    fn minus_half_norm_values() {
        assert_eq!(h_minus_half_norm(&BoundaryFunctional::zeros(3)), 0.0);
        for k in 1..=3 {
            let mut f = BoundaryFunctional::zeros(3);
            f.coeffs[2 * k - 1] = 1.0;
            assert_relative_eq!(h_minus_half_norm(&f), multiplier(2 * k - 1).powf(-0.5), epsilon = 1e-15);
        }
    }

    #[test]
    fn riesz_pairs() {
        let mut f = BoundaryFunctional::zeros(2);
        f.coeffs[1] = multiplier(1);
        assert_eq!(riesz_map(&f), BoundaryFunction::cos(2, 1));
        assert_eq!(riesz_map(&BoundaryFunctional::zeros(2)), BoundaryFunction::zeros(2));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let f = random_functional(&mut rng, 6);
            let g = riesz_map(&f);
            assert!((h_half_norm(&g) - h_minus_half_norm(&f)).abs() <= 1e-12);
            let back = g.riesz_inverse();
            for (a, b) in back.coeffs().iter().zip(f.coeffs()) {
                assert_relative_eq!(a, b, max_relative = 1e-15);
            }
            let h = random_function(&mut rng, 6);
            assert_relative_eq!(f.pairing(&h).unwrap(), g.inner_half(&h).unwrap(), epsilon = 1e-12);
            assert_relative_eq!(f.pairing(&g).unwrap(), h_minus_half_norm(&f).powi(2), max_relative = 1e-10);
            assert!(f.pairing(&h).unwrap().abs() <= h_minus_half_norm(&f) * h_half_norm(&h) + 1e-12);
        }
    }

    #[test]
    fn circle_project_extend() {
        let basis = CircleBasis::new(3);
        let x = basis.extend(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(basis.project(&x, 2).unwrap().as_slice(), &[1.0, 2.0]);

        let e3 = basis.member(2);
        let p = basis.project(&e3, 5).unwrap();
        for (i, v) in p.iter().enumerate() {
            assert_relative_eq!(*v, if i == 2 { 1.0 } else { 0.0 }, epsilon = 1e-15);
        }
        assert_eq!(basis.extend(&[0.0; 4]).unwrap(), BoundaryFunction::zeros(3));
        assert!(matches!(basis.project(&x, 8), Err(Error::Dimension(_))));
        assert!(basis.extend(&[0.0; 9]).is_err());
        let wrong = BoundaryFunction::zeros(2);
        assert!(basis.project(&wrong, 2).is_err());
    }

    #[test]
    fn circle_basis_is_orthonormal() {
        let basis = CircleBasis::new(8);
        for i in 0..basis.size() {
            for j in 0..basis.size() {
                let ip = basis.member(i).inner_half(&basis.member(j)).unwrap();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn circle_basis_orthonormal_by_quadrature() {
        // L² inner products of trig members by trapezoid quadrature, reweighted by (1+k²)^{1/2}.
        let k = 4;
        let basis = CircleBasis::new(k);
        let n = 256;
        for i in 0..basis.size() {
            for j in 0..basis.size() {
                let (fi, fj) = (basis.member(i), basis.member(j));
                let l2: f64 = (0..n)
                    .map(|q| {
                        let t = 2.0 * PI * q as f64 / n as f64;
                        fi.eval(t) * fj.eval(t)
                    })
                    .sum::<f64>()
                    * 2.0
                    * PI
                    / n as f64;
                let kk = frequency(i) as f64;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((l2 * (1.0 + kk * kk).sqrt() - expect).abs() < 1e-10, "{i} {j}");
            }
        }
    }

    #[test]
    fn tail_errors() {
        let basis = CircleBasis::new(4);
        let g1 = basis.member(0);
        assert!(projection_tail_error(&basis, &g1, 1).unwrap() < 1e-15);
        let x = g1.add(&basis.member(4)).unwrap();
        assert_relative_eq!(projection_tail_error(&basis, &x, 4).unwrap(), 1.0, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_function(&mut rng, 4);
            let mut prev = f64::INFINITY;
            for d in 0..=basis.size() {
                let e = projection_tail_error(&basis, &x, d).unwrap();
                assert!(e <= prev + 1e-15);
                prev = e;
            }
            assert!(prev < 1e-12);
        }
    }

    #[test]
    fn dual_basis_is_isometric() {
        let basis = DualCircleBasis::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let f = random_functional(&mut rng, 5);
            let c = basis.project(&f, basis.size()).unwrap();
            assert_relative_eq!(c.norm(), h_minus_half_norm(&f), max_relative = 1e-13);
            // coordinates agree with those of the Riesz representative
            let r = CircleBasis::new(5).project(&riesz_map(&f), 11).unwrap();
            assert!((c - r).amax() < 1e-12);
        }
    }

    #[test]
    fn serde_uses_plain_arrays() {
        let f = BoundaryFunction::from_coeffs(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(serde_json::to_string(&f).unwrap(), "[1.0,2.0,3.0]");
        let back: BoundaryFunction = serde_json::from_str("[1.0,2.0,3.0]").unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<BoundaryFunction>("[1.0,2.0]").is_err());
    }

    #[test]
    fn domain_basis_orthonormal() {
        // Diagonal "mass" with weights 1..n; candidates are monomials in a 1-d index.
        let n = 12;
        let diag: Vec<_> = (0..n).map(|i| (i, i, 1.0 + i as f64)).collect();
        let mass = CsrMatrix::from_triplets(n, n, &diag);
        let cands: Vec<_> = (0..5).map(|p| DVector::from_fn(n, |i, _| (i as f64 / n as f64).powi(p))).collect();
        let basis = DomainBasis::gram_schmidt(mass, &cands).unwrap();
        assert_eq!(basis.size(), 5);
        for i in 0..5 {
            for j in 0..5 {
                let ip = basis.inner(&basis.member(i), &basis.member(j));
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let a = [0.3, -1.0, 2.0];
        let x = basis.extend(&a).unwrap();
        let p = basis.project(&x, 3).unwrap();
        assert!((p - DVector::from_column_slice(&a)).amax() < 1e-12);
        assert_relative_eq!(basis.norm(&x), DVector::from_column_slice(&a).norm(), max_relative = 1e-12);
    }
}
