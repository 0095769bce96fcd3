use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpParams};
use crate::error::{dim_check, Error, Result};
use crate::measures::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub lr: f64,
    /// Learning rate reached at the last epoch by geometric decay; `None` keeps `lr` fixed.
    pub lr_final: Option<f64>,
    pub batch: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Train on centred, rescaled inputs and targets; the affine maps are folded back into
    /// the first and last layers afterwards.
    pub standardize: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_final: None,
            batch: 64,
            epochs: 200,
            optimizer: Optimizer::Adam,
            seed: 0,
            standardize: true,
        }
    }
}

impl Hyper {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Per-sample squared error `‖y − t‖²` or `(y − t)ᵀ H (y − t)`, averaged over samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    Euclidean,
    Quadratic(DMatrix<f64>),
}

impl Loss {
    fn weighted(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Loss::Euclidean => e.clone(),
            Loss::Quadratic(h) => h * e,
        }
    }

    /// Squared error of every column of `e`.
    pub fn per_sample(&self, e: &DMatrix<f64>) -> Vec<f64> {
        let he = self.weighted(e);
        e.column_iter().zip(he.column_iter()).map(|(a, b)| a.dot(&b)).collect()
    }

    fn check(&self, m: usize) -> Result<()> {
        if let Loss::Quadratic(h) = self {
            dim_check(h.nrows() == m && h.ncols() == m, || {
                format!("loss form is {}×{}, outputs have {m} entries", h.nrows(), h.ncols())
            })?;
        }
        Ok(())
    }
}

/// Input/target pairs stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(Error::Argument("empty dataset".into()));
        }
        dim_check(inputs.ncols() == targets.ncols(), || {
            format!("{} inputs but {} targets", inputs.ncols(), targets.ncols())
        })?;
        Ok(Self { inputs, targets })
    }

    pub fn from_columns(inputs: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Argument("empty dataset".into()));
        }
        Self::new(DMatrix::from_columns(inputs), DMatrix::from_columns(targets))
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { inputs: self.inputs.select_columns(idx), targets: self.targets.select_columns(idx) }
    }
}

/// Mean loss of `params` on `data`.
pub fn mean_loss(params: &MlpParams, data: &Dataset, loss: &Loss) -> Result<f64> {
    let errs = sample_losses(params, data, loss)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

pub fn sample_losses(params: &MlpParams, data: &Dataset, loss: &Loss) -> Result<Vec<f64>> {
    loss.check(params.output_width())?;
    dim_check(data.targets.nrows() == params.output_width(), || "target width mismatch".into())?;
    let e = params.forward_batch(&data.inputs)? - &data.targets;
    Ok(loss.per_sample(&e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub best_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    /// Best iterate seen, measured by the full training loss.
    pub params: MlpParams,
    /// One row per epoch, row 0 being the initial parameters.
    pub trace: Vec<TraceRow>,
    pub best_epoch: usize,
}

impl Trained {
    pub fn best_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.best_loss)
    }

    pub fn initial_loss(&self) -> f64 {
        self.trace.first().map_or(f64::NAN, |r| r.loss)
    }
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration,loss,best_loss\n");
    for r in trace {
        out.push_str(&format!("{},{:e},{:e}\n", r.iteration, r.loss, r.best_loss));
    }
    out
}

struct Scaling {
    in_mean: DVector<f64>,
    in_scale: DVector<f64>,
    out_mean: DVector<f64>,
    out_scale: f64,
}

impl Scaling {
    fn identity(d: usize, m: usize) -> Self {
        Self {
            in_mean: DVector::zeros(d),
            in_scale: DVector::from_element(d, 1.0),
            out_mean: DVector::zeros(m),
            out_scale: 1.0,
        }
    }

    fn fit(data: &Dataset) -> Self {
        let n = data.len() as f64;
        let in_mean = data.inputs.column_mean();
        let sds: Vec<f64> = data
            .inputs
            .row_iter()
            .zip(in_mean.iter())
            .map(|(r, mu)| (r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        // features that vary only at rounding level keep the scale of the widest one
        let widest = sds.iter().cloned().fold(0.0, f64::max);
        let floor = 1e-6 * widest;
        let in_scale = DVector::from_iterator(
            sds.len(),
            sds.iter().map(|&sd| {
                if sd > floor {
                    sd
                } else if widest > 0.0 {
                    widest
                } else {
                    1.0
                }
            }),
        );
        let out_mean = data.targets.column_mean();
        let mut ss = 0.0;
        for c in data.targets.column_iter() {
            ss += (c - &out_mean).norm_squared();
        }
        let rms = (ss / (n * data.targets.nrows().max(1) as f64)).sqrt();
        Self { in_mean, in_scale, out_mean, out_scale: if rms > 0.0 { rms } else { 1.0 } }
    }

    fn apply(&self, data: &Dataset) -> Dataset {
        let mut inputs = data.inputs.clone();
        for mut c in inputs.column_iter_mut() {
            c -= &self.in_mean;
            c.component_div_assign(&self.in_scale);
        }
        let mut targets = data.targets.clone();
        for mut c in targets.column_iter_mut() {
            c -= &self.out_mean;
            c /= self.out_scale;
        }
        Dataset { inputs, targets }
    }

    /// Parameters of the original-units network in the standardized coordinates.
    fn to_standard(&self, p: &MlpParams) -> MlpParams {
        let mut p = p.clone();
        let last = p.depth() - 1;
        let layers = p.layers_mut();
        let first = &mut layers[0];
        first.b += &first.w * &self.in_mean;
        for (mut col, s) in first.w.column_iter_mut().zip(self.in_scale.iter()) {
            col *= *s;
        }
        let l = &mut layers[last];
        l.b -= &self.out_mean;
        l.b /= self.out_scale;
        l.w /= self.out_scale;
        p
    }

    fn to_original(&self, p: &MlpParams) -> MlpParams {
        let mut p = p.clone();
        let last = p.depth() - 1;
        let layers = p.layers_mut();
        let l = &mut layers[last];
        l.w *= self.out_scale;
        l.b *= self.out_scale;
        l.b += &self.out_mean;
        let first = &mut layers[0];
        for (mut col, s) in first.w.column_iter_mut().zip(self.in_scale.iter()) {
            col /= *s;
        }
        first.b -= &first.w * &self.in_mean;
        p
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Mini-batch first-order training of `init` on `data`, returning the best iterate.
///
/// Shuffling uses the seeded generator and the batch reduction is sequential, so identical
/// inputs give bit-identical parameters.
pub fn sgd_train(init: &MlpParams, data: &Dataset, loss: &Loss, hyper: &Hyper) -> Result<Trained> {
    train_inner(Start::Original(init), data, loss, hyper)
}

/// Like [`sgd_train`] from a Glorot network drawn in the standardized coordinates, so the
/// untrained model predicts roughly the target mean whatever the data units.
pub fn sgd_train_glorot(
    widths: &[usize],
    activation: Activation,
    init_seed: u64,
    data: &Dataset,
    loss: &Loss,
    hyper: &Hyper,
) -> Result<Trained> {
    let init = MlpParams::glorot(widths, activation, init_seed)?;
    train_inner(Start::Standard(&init), data, loss, hyper)
}

#[derive(Clone, Copy)]
enum Start<'a> {
    Original(&'a MlpParams),
    Standard(&'a MlpParams),
}

fn train_inner(start: Start<'_>, data: &Dataset, loss: &Loss, hyper: &Hyper) -> Result<Trained> {
    let init = match start {
        Start::Original(p) | Start::Standard(p) => p,
    };
    if data.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    if hyper.batch == 0 || !(hyper.lr > 0.0) || hyper.lr_final.is_some_and(|f| !(f > 0.0)) {
        return Err(Error::Argument("batch and learning rate must be positive".into()));
    }
    dim_check(data.inputs.nrows() == init.input_width(), || {
        format!("inputs have {} entries, network expects {}", data.inputs.nrows(), init.input_width())
    })?;
    dim_check(data.targets.nrows() == init.output_width(), || {
        format!("targets have {} entries, network outputs {}", data.targets.nrows(), init.output_width())
    })?;
    loss.check(init.output_width())?;

    let scaling =
        if hyper.standardize { Scaling::fit(data) } else { Scaling::identity(init.input_width(), init.output_width()) };
    let work = scaling.apply(data);
    let unit = scaling.out_scale * scaling.out_scale;
    let mut params = match start {
        Start::Original(p) => scaling.to_standard(p),
        Start::Standard(p) => p.clone(),
    };
    let mut flat = params.flatten();
    let mut adam = Adam { m: vec![0.0; flat.len()], v: vec![0.0; flat.len()], t: 0 };

    let initial = mean_loss(&params, &work, loss)? * unit;
    if !initial.is_finite() {
        return Err(Error::Divergence { iteration: 0, loss: initial });
    }
    let mut best = (initial, params.clone(), 0usize);
    let mut trace = vec![TraceRow { iteration: 0, loss: initial, best_loss: initial }];
    let mut rng = rng_for(hyper.seed);
    let mut order: Vec<usize> = (0..work.len()).collect();
    let mut step = 0usize;

    let decay = match hyper.lr_final {
        Some(f) if hyper.epochs > 1 => (f / hyper.lr).powf(1.0 / (hyper.epochs - 1) as f64),
        _ => 1.0,
    };
    for epoch in 1..=hyper.epochs {
        let lr = hyper.lr * decay.powi(epoch as i32 - 1);
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch) {
            step += 1;
            let batch = work.select(chunk);
            let e = params.forward_batch(&batch.inputs)? - &batch.targets;
            let cot = loss.weighted(&e) * (2.0 / chunk.len() as f64);
            let batch_loss = e.dot(&cot) / 2.0;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { iteration: step, loss: batch_loss * unit });
            }
            let grad = params.gradient_batch(&batch.inputs, &cot)?.flatten();
            match hyper.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in flat.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                Optimizer::Adam => adam.step(&mut flat, &grad, lr),
            }
            params.set_flat(&flat)?;
        }
        let current = mean_loss(&params, &work, loss)? * unit;
        if !current.is_finite() {
            return Err(Error::Divergence { iteration: step, loss: current });
        }
        if current < best.0 {
            best = (current, params.clone(), epoch);
        }
        trace.push(TraceRow { iteration: epoch, loss: current, best_loss: best.0 });
    }
    Ok(Trained { params: scaling.to_original(&best.1), trace, best_epoch: best.2 })
}
