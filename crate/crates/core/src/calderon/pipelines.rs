use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::CalderonDataset;
use super::wmu::{DtnEntryBasis, WmuQuadrature};
use crate::deeponet::{
    mean_loss, sgd_train, sgd_train_glorot, Activation, Dataset, DeepOnetParams, Hyper, Loss, MlpParams, TraceRow,
    Trained,
};
use crate::error::{dim_check, Error, Result};
use crate::fem::DtNMatrix;
use crate::hilbert::{mode_count, BasisKind, BoundaryFunction, CircleBasis, DomainBasis, OrthoBasis};
use crate::measures::GaussianMeasureSpec;

/// Network shape of a DeepONet: `d_lat` inputs, hidden `widths`, `m` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub d_lat: usize,
    pub m: usize,
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Arch {
    pub fn widths_chain(&self) -> Vec<usize> {
        let mut w = vec![self.d_lat];
        w.extend(&self.widths);
        w.push(self.m);
        w
    }

    pub fn init(&self, seed: u64) -> Result<MlpParams> {
        MlpParams::glorot(&self.widths_chain(), self.activation, seed)
    }

    /// Trains a fresh network of this shape, initialized in standardized coordinates.
    pub fn train(&self, init_seed: u64, data: &Dataset, loss: &Loss, hyper: &Hyper) -> Result<Trained> {
        sgd_train_glorot(&self.widths_chain(), self.activation, init_seed, data, loss, hyper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
}

fn pad_rows(y: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, y.ncols());
    out.rows_mut(0, y.nrows()).copy_from(y);
    out
}

fn column_sq_norms(e: &DMatrix<f64>) -> Vec<f64> {
    e.column_iter().map(|c| c.norm_squared()).collect()
}

/// Draws `f ~ μ` and the matching `Λ_a f` for a fixed conductivity, in the orthonormal
/// coordinates of `H^{1/2}` and `H^{-1/2}` (where both norms are Euclidean).
#[derive(Debug, Clone)]
pub struct FixedASamples {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl FixedASamples {
    /// `Λ_a f = D f` with `D` the finite element matrix; this is the discrete flux of the
    /// Dirichlet solution for `f`, computed once per basis function instead of per sample.
    pub fn new(dtn: &DtNMatrix, mu: &GaussianMeasureSpec, base_seed: u64, count: usize) -> Result<Self> {
        let n = mode_count(dtn.k);
        dim_check(mu.len() == n, || format!("measure has {} modes, DtN matrix {n}", mu.len()))?;
        let cols: Vec<DVector<f64>> =
            (0..count as u64).map(|i| mu.sample_coordinates(base_seed.wrapping_add(i))).collect();
        if cols.is_empty() {
            return Err(Error::Argument("no samples requested".into()));
        }
        let inputs = DMatrix::from_columns(&cols);
        let targets = dtn.to_orthonormal().entries * &inputs;
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub fn boundary_functions(&self, k: usize) -> Result<Vec<BoundaryFunction>> {
        let basis = CircleBasis::new(k);
        self.inputs.column_iter().map(|c| basis.extend(c.as_slice())).collect()
    }

    /// `mean ‖Λ_a f‖²_{−1/2}`.
    pub fn target_mean_sq(&self) -> f64 {
        column_sq_norms(&self.targets).iter().sum::<f64>() / self.len() as f64
    }

    /// Per-sample `‖Λ_a f − F f‖²_{−1/2}` for a model acting on the first `d` coordinates and
    /// returning the first `m` output coordinates.
    pub fn squared_errors(
        &self,
        d: usize,
        predict: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    ) -> Result<Vec<f64>> {
        let pred = predict(&self.inputs.rows(0, d).into_owned())?;
        dim_check(pred.nrows() <= self.targets.nrows(), || "prediction longer than the target space".into())?;
        Ok(column_sq_norms(&(&self.targets - pad_rows(&pred, self.targets.nrows()))))
    }

    /// Mean squared error divided by `mean ‖Λ_a f‖²_{−1/2}`.
    pub fn relative_loss(&self, d: usize, predict: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>) -> Result<f64> {
        let e = self.squared_errors(d, predict)?;
        Ok(e.iter().sum::<f64>() / e.len() as f64 / self.target_mean_sq())
    }

    pub fn relative_loss_linear(&self, theta: &DMatrix<f64>) -> Result<f64> {
        dim_check(theta.ncols() <= self.inputs.nrows(), || "linear model wider than the input space".into())?;
        self.relative_loss(theta.ncols(), |x| Ok(theta * x))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DtnFixedReport {
    pub d: usize,
    pub m: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
    /// `heldout_loss / mean ‖Λ_a f‖²_{−1/2}`.
    pub heldout_relative: f64,
    /// Held-out `‖Λ_a f − F f‖_{−1/2}` per sample.
    pub heldout_errors: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

/// Trains `F: H^{1/2} → H^{−1/2}` against `Λ_a` with loss `mean ‖Λ_a f − F f‖²_{−1/2}`.
///
/// `init` overrides the Glorot initialization (used to start from a known matrix).
#[allow(clippy::too_many_arguments)]
pub fn train_dtn_fixed_a(
    dtn: &DtNMatrix,
    mu: &GaussianMeasureSpec,
    arch: &Arch,
    hyper: &Hyper,
    seeds: &Seeds,
    n_train: usize,
    n_test: usize,
    init: Option<MlpParams>,
) -> Result<(DeepOnetParams, DtnFixedReport)> {
    let n = mode_count(dtn.k);
    dim_check(arch.d_lat <= n && arch.m <= n, || {
        format!("d_lat = {} and m = {} must not exceed 2K+1 = {n}", arch.d_lat, arch.m)
    })?;
    let train = FixedASamples::new(dtn, mu, seeds.data, n_train)?;
    let test = FixedASamples::new(dtn, mu, seeds.data.wrapping_add(1 << 32), n_test)?;
    let data = Dataset::new(train.inputs.rows(0, arch.d_lat).into_owned(), train.targets.rows(0, arch.m).into_owned())?;
    let trained = match init {
        Some(p) => sgd_train(&p, &data, &Loss::Euclidean, &hyper.with_seed(seeds.train))?,
        None => arch.train(seeds.init, &data, &Loss::Euclidean, &hyper.with_seed(seeds.train))?,
    };
    let params =
        DeepOnetParams::new(arch.d_lat, arch.m, trained.params, BasisKind::HHalfCircle, BasisKind::HMinusHalfCircle)?;
    let predict = |x: &DMatrix<f64>| params.theta.forward_batch(x);
    let train_errs = train.squared_errors(arch.d_lat, predict)?;
    let test_errs = test.squared_errors(arch.d_lat, predict)?;
    let heldout_loss = test_errs.iter().sum::<f64>() / test_errs.len() as f64;
    let report = DtnFixedReport {
        d: arch.d_lat,
        m: arch.m,
        n_train,
        n_test,
        train_loss: train_errs.iter().sum::<f64>() / train_errs.len() as f64,
        heldout_loss,
        heldout_relative: heldout_loss / test.target_mean_sq(),
        heldout_errors: test_errs.iter().map(|v| v.sqrt()).collect(),
        trace: trained.trace,
    };
    Ok((params, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFit {
    /// `θ ∈ R^{m×d}` minimizing `Σ ‖y_s − θ x_s‖²`.
    pub theta: DMatrix<f64>,
    /// `‖Y − θX‖_F / ‖Y‖_F` on the fitting data.
    pub residual: f64,
    /// Set when the design was rank deficient and small singular values were truncated.
    pub regularized: bool,
}

/// Closed-form least squares `Y ≈ θ X` (samples as columns) through the SVD of `Xᵀ`.
pub fn least_squares_fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LinearFit> {
    dim_check(x.ncols() == y.ncols(), || "inputs and targets differ in sample count".into())?;
    if x.ncols() == 0 {
        return Err(Error::Argument("no samples to fit".into()));
    }
    let svd = x.transpose().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-12 * smax.max(f64::MIN_POSITIVE);
    let regularized = x.ncols() < x.nrows() || svd.singular_values.iter().any(|s| *s <= eps);
    let theta_t = svd.solve(&y.transpose(), eps).map_err(|e| Error::Argument(e.to_string()))?;
    let theta = theta_t.transpose();
    let ynorm = y.norm();
    let residual = if ynorm > 0.0 { (y - &theta * x).norm() / ynorm } else { 0.0 };
    Ok(LinearFit { theta, residual, regularized })
}

/// Least-squares `θ ∈ R^{d×d}` for `P_d Λ_a^φ E_d` from the given boundary samples.
pub fn linear_dtn_fit(dtn: &DtNMatrix, mu_samples: &[BoundaryFunction], d: usize) -> Result<LinearFit> {
    let n = mode_count(dtn.k);
    dim_check(d <= n, || format!("d = {d} exceeds 2K+1 = {n}"))?;
    let basis = CircleBasis::new(dtn.k);
    let cols = mu_samples.iter().map(|f| basis.project(f, n)).collect::<Result<Vec<_>>>()?;
    if cols.is_empty() {
        return Err(Error::Argument("no boundary samples".into()));
    }
    let x = DMatrix::from_columns(&cols);
    let y = dtn.to_orthonormal().entries * &x;
    least_squares_fit(&x.rows(0, d).into_owned(), &y.rows(0, d).into_owned())
}

/// `P_d(a)` for every conductivity of the dataset, as columns.
pub fn conductivity_inputs(ds: &CalderonDataset, basis: &DomainBasis, d: usize) -> Result<DMatrix<f64>> {
    let cols = ds
        .conductivities
        .iter()
        .map(|a| basis.project(&DVector::from_column_slice(&a.nodal_values), d))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Orthonormal entry coordinates of every target matrix, as columns.
pub fn matrix_coordinates(ds: &CalderonDataset, basis: &DtnEntryBasis, m: usize) -> Result<DMatrix<f64>> {
    let cols = ds.targets.iter().map(|t| basis.project(t, m)).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectReport {
    pub d: usize,
    pub m: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Mean `‖Λ_a − F(a)‖²_{W_μ}` over the training set, on the training quadrature.
    pub train_loss: f64,
    /// `(Σ ‖Λ_a − F(a)‖²_{W_μ} / Σ ‖Λ_a‖²_{W_μ})^{1/2}` over held-out `a`, training quadrature.
    pub heldout_relative: f64,
    /// Same figure on a disjoint boundary batch.
    pub heldout_relative_recheck: f64,
    /// Held-out `‖Λ_a − F(a)‖_{W_μ}` per sample on the disjoint batch.
    pub heldout_errors: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

fn relative_wmu(quad: &WmuQuadrature, truth: &[&DtNMatrix], pred: &[DtNMatrix]) -> Result<(f64, Vec<f64>)> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut errs = Vec::with_capacity(pred.len());
    for (t, p) in truth.iter().zip(pred) {
        let e = quad.estimate(&t.sub(p)?)?.squared;
        num += e;
        den += quad.estimate(t)?.squared;
        errs.push(e.sqrt());
    }
    Ok(((num / den).sqrt(), errs))
}

/// Trains `F: a ↦ Λ_a` from `P_d(a)` to the first `m` orthonormal matrix entries, with loss
/// the empirical `W_μ` distance on `quad`. Held-out samples are re-checked on `check`.
#[allow(clippy::too_many_arguments)]
pub fn train_calderon_direct(
    ds: &CalderonDataset,
    in_basis: &DomainBasis,
    quad: &WmuQuadrature,
    check: &WmuQuadrature,
    arch: &Arch,
    hyper: &Hyper,
    seeds: &Seeds,
    n_train: usize,
) -> Result<(DeepOnetParams, DirectReport)> {
    let out_basis = DtnEntryBasis::new(ds.provenance.k);
    dim_check(arch.d_lat <= in_basis.size() && arch.m <= out_basis.size(), || {
        format!(
            "d_lat = {} and m = {} exceed basis sizes {} and {}",
            arch.d_lat,
            arch.m,
            in_basis.size(),
            out_basis.size()
        )
    })?;
    dim_check(quad.truncation() == ds.provenance.k && check.truncation() == ds.provenance.k, || {
        "quadrature truncation differs from the dataset".into()
    })?;
    let (train_idx, test_idx) = ds.split(n_train);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Argument("need both training and held-out samples".into()));
    }
    let x = conductivity_inputs(ds, in_basis, arch.d_lat)?;
    let y = matrix_coordinates(ds, &out_basis, arch.m)?;
    let data = Dataset::new(x, y)?;
    let train = data.select(&train_idx);
    let loss = Loss::Quadratic(quad.quadratic_form(&out_basis.order()[..arch.m]));
    let trained = arch.train(seeds.init, &train, &loss, &hyper.with_seed(seeds.train))?;
    let params = DeepOnetParams::new(arch.d_lat, arch.m, trained.params, BasisKind::L2DomainKl, BasisKind::DtnEntries)?;
    let test = data.select(&test_idx);
    let pred = params.theta.forward_batch(&test.inputs)?;
    let pred: Vec<DtNMatrix> = pred.column_iter().map(|c| out_basis.extend(c.as_slice())).collect::<Result<_>>()?;
    let truth: Vec<&DtNMatrix> = test_idx.iter().map(|&i| &ds.targets[i]).collect();
    let (heldout_relative, _) = relative_wmu(quad, &truth, &pred)?;
    let (heldout_relative_recheck, heldout_errors) = relative_wmu(check, &truth, &pred)?;
    let report = DirectReport {
        d: arch.d_lat,
        m: arch.m,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        train_loss: mean_loss(&params.theta, &train, &loss)?,
        heldout_relative,
        heldout_relative_recheck,
        heldout_errors,
        trace: trained.trace,
    };
    Ok((params, report))
}

/// Inputs farther from the training set than this many nearest-neighbour spacings are
/// flagged as out of distribution.
pub const OOD_RATIO: f64 = 5.0;

/// A trained inverse DeepONet with the training inputs kept for distance checks.
#[derive(Debug, Clone)]
pub struct InverseModel {
    pub params: DeepOnetParams,
    pub k: usize,
    training_inputs: DMatrix<f64>,
    /// Median nearest-neighbour distance within the training inputs.
    pub nn_scale: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Nodal values of the reconstructed conductivity.
    pub field: DVector<f64>,
    pub coefficients: DVector<f64>,
    /// Distance to the nearest training input over `nn_scale`.
    pub distance_ratio: f64,
    pub out_of_distribution: bool,
}

fn nearest_distance(points: &DMatrix<f64>, x: &DVector<f64>, skip: Option<usize>) -> f64 {
    points
        .column_iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(_, c)| (c - x).norm())
        .fold(f64::INFINITY, f64::min)
}

impl InverseModel {
    fn new(params: DeepOnetParams, k: usize, training_inputs: DMatrix<f64>) -> Self {
        let mut nn: Vec<f64> = (0..training_inputs.ncols())
            .map(|j| nearest_distance(&training_inputs, &training_inputs.column(j).into_owned(), Some(j)))
            .filter(|v| v.is_finite())
            .collect();
        nn.sort_by(f64::total_cmp);
        let nn_scale = nn.get(nn.len() / 2).copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        Self { params, k, training_inputs, nn_scale }
    }

    /// `F(B)` for any bilinear form, including ones outside the image of `a ↦ Λ_a`;
    /// those come back flagged.
    pub fn reconstruct(&self, b: &DtNMatrix, out_basis: &DomainBasis) -> Result<Reconstruction> {
        let x = DtnEntryBasis::new(self.k).project(b, self.params.d)?;
        let coefficients = self.params.latent(&x)?;
        let field = out_basis.extend(coefficients.as_slice())?;
        let distance_ratio = nearest_distance(&self.training_inputs, &x, None) / self.nn_scale;
        Ok(Reconstruction { field, coefficients, distance_ratio, out_of_distribution: distance_ratio > OOD_RATIO })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstCase {
    pub index: usize,
    pub relative_error: f64,
    pub true_coefficients: Vec<f64>,
    pub predicted_coefficients: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseReport {
    pub d: usize,
    pub m: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_loss: f64,
    /// `(Σ ‖a − â‖²_{L²} / Σ ‖a‖²_{L²})^{1/2}` over held-out samples.
    pub heldout_relative_l2: f64,
    /// Held-out `‖a − â‖_{L²} / ‖a‖_{L²}` per sample.
    pub heldout_errors: Vec<f64>,
    /// Held-out `|mean(â) − mean(a)| / mean(a)` per sample.
    pub heldout_mean_errors: Vec<f64>,
    pub worst: WorstCase,
    pub trace: Vec<TraceRow>,
}

/// Trains `F: Λ_a ↦ a` from the first `d` orthonormal matrix entries to the first `m`
/// coefficients of `a` in `out_basis`; the loss is the squared `L²(Ω)` distance.
pub fn train_inverse(
    ds: &CalderonDataset,
    out_basis: &DomainBasis,
    arch: &Arch,
    hyper: &Hyper,
    seeds: &Seeds,
    n_train: usize,
) -> Result<(InverseModel, InverseReport)> {
    let in_basis = DtnEntryBasis::new(ds.provenance.k);
    dim_check(arch.d_lat <= in_basis.size() && arch.m <= out_basis.size(), || {
        format!(
            "d_lat = {} and m = {} exceed basis sizes {} and {}",
            arch.d_lat,
            arch.m,
            in_basis.size(),
            out_basis.size()
        )
    })?;
    let (train_idx, test_idx) = ds.split(n_train);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Argument("need both training and held-out samples".into()));
    }
    let x = matrix_coordinates(ds, &in_basis, arch.d_lat)?;
    let fields: Vec<DVector<f64>> =
        ds.conductivities.iter().map(|a| DVector::from_column_slice(&a.nodal_values)).collect();
    let y = DMatrix::from_columns(&fields.iter().map(|a| out_basis.project(a, arch.m)).collect::<Result<Vec<_>>>()?);
    let data = Dataset::new(x, y)?;
    let train = data.select(&train_idx);
    let trained = arch.train(seeds.init, &train, &Loss::Euclidean, &hyper.with_seed(seeds.train))?;
    let params = DeepOnetParams::new(arch.d_lat, arch.m, trained.params, BasisKind::DtnEntries, BasisKind::L2DomainKl)?;
    let train_loss = mean_loss(&params.theta, &train, &Loss::Euclidean)?;
    let model = InverseModel::new(params, ds.provenance.k, train.inputs.clone());

    let ones = DVector::from_element(fields[0].len(), 1.0);
    let area = out_basis.inner(&ones, &ones);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut errors = Vec::new();
    let mut mean_errors = Vec::new();
    let mut worst: Option<WorstCase> = None;
    for &i in &test_idx {
        let rec = model.reconstruct(&ds.targets[i], out_basis)?;
        let a = &fields[i];
        let diff = a - &rec.field;
        let e2 = out_basis.inner(&diff, &diff);
        let n2 = out_basis.inner(a, a);
        num += e2;
        den += n2;
        let rel = (e2 / n2).sqrt();
        errors.push(rel);
        let mean_true = out_basis.inner(a, &ones) / area;
        let mean_pred = out_basis.inner(&rec.field, &ones) / area;
        mean_errors.push((mean_pred - mean_true).abs() / mean_true);
        if worst.as_ref().is_none_or(|w| rel > w.relative_error) {
            worst = Some(WorstCase {
                index: i,
                relative_error: rel,
                true_coefficients: out_basis.project(a, arch.m)?.as_slice().to_vec(),
                predicted_coefficients: rec.coefficients.as_slice().to_vec(),
            });
        }
    }
    let report = InverseReport {
        d: arch.d_lat,
        m: arch.m,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        train_loss,
        heldout_relative_l2: (num / den).sqrt(),
        heldout_errors: errors,
        heldout_mean_errors: mean_errors,
        worst: worst.expect("held-out set is non-empty"),
        trace: trained.trace,
    };
    Ok((model, report))
}
