use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::measures::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the activation `s = σ(z)`.
    fn derivative(self, z: f64, s: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - s * s,
        }
    }
}

/// One affine map `x ↦ W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerJson", try_from = "LayerJson")]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<Layer> for LayerJson {
    fn from(l: Layer) -> Self {
        LayerJson { w: l.w.row_iter().map(|r| r.iter().copied().collect()).collect(), b: l.b.as_slice().to_vec() }
    }
}

impl TryFrom<LayerJson> for Layer {
    type Error = Error;
    fn try_from(j: LayerJson) -> Result<Self> {
        let rows = j.w.len();
        let cols = j.w.first().map_or(0, Vec::len);
        dim_check(j.w.iter().all(|r| r.len() == cols), || "ragged weight matrix".into())?;
        Layer::new(DMatrix::from_fn(rows, cols, |r, c| j.w[r][c]), DVector::from_vec(j.b))
    }
}

impl Layer {
    pub fn new(w: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        dim_check(w.nrows() == b.len(), || format!("weight has {} rows but bias has {} entries", w.nrows(), b.len()))?;
        Ok(Self { w, b })
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self { w: DMatrix::zeros(out, inp), b: DVector::zeros(out) }
    }

    pub fn input_width(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.w.nrows()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.w * x;
        for mut col in z.column_iter_mut() {
            col += &self.b;
        }
        z
    }
}

/// `θ = (A_1, …, A_L)` with realization `A_L σ A_{L−1} σ ⋯ σ A_1 x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpJson")]
pub struct MlpParams {
    layers: Vec<Layer>,
    activation: Activation,
}

#[derive(Deserialize)]
struct MlpJson {
    layers: Vec<Layer>,
    activation: Activation,
}

impl TryFrom<MlpJson> for MlpParams {
    type Error = Error;
    fn try_from(j: MlpJson) -> Result<Self> {
        MlpParams::new(j.layers, j.activation)
    }
}

/// Reverse-mode derivatives of `⟨c, f^θ(x)⟩` summed over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub layers: Vec<Layer>,
    /// Cotangent with respect to the inputs, one column per sample.
    pub input: DMatrix<f64>,
}

impl MlpGradient {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.w.as_slice());
        out.extend_from_slice(l.b.as_slice());
    }
    out
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("a network needs at least one layer".into()));
        }
        for (j, pair) in layers.windows(2).enumerate() {
            dim_check(pair[1].input_width() == pair[0].output_width(), || {
                format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    j + 1,
                    pair[0].output_width(),
                    j + 2,
                    pair[1].input_width()
                )
            })?;
        }
        Ok(Self { layers, activation })
    }

    /// Glorot-uniform weights and zero biases for the widths `[d, h_1, …, m]`.
    pub fn glorot(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Argument("need input and output widths".into()));
        }
        let mut rng = rng_for(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer { w: DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-limit..limit)), b: DVector::zeros(w[1]) }
            })
            .collect();
        Self::new(layers, activation)
    }

    /// `x ↦ W x + b` as a one-layer network.
    pub fn affine(w: DMatrix<f64>, b: DVector<f64>, activation: Activation) -> Result<Self> {
        Self::new(vec![Layer::new(w, b)?], activation)
    }

    /// Two-layer relu identity `x = ReLU(x) − ReLU(−x)` on `R^n`.
    pub fn relu_identity(n: usize) -> Self {
        let eye = DMatrix::<f64>::identity(n, n);
        let mut up = DMatrix::zeros(2 * n, n);
        up.rows_mut(0, n).copy_from(&eye);
        up.rows_mut(n, n).copy_from(&(-&eye));
        let mut down = DMatrix::zeros(n, 2 * n);
        down.columns_mut(0, n).copy_from(&eye);
        down.columns_mut(n, n).copy_from(&(-&eye));
        Self {
            layers: vec![Layer { w: up, b: DVector::zeros(2 * n) }, Layer { w: down, b: DVector::zeros(n) }],
            activation: Activation::Relu,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `L`, the number of affine maps.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All weights (column-major) and biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        dim_check(values.len() == self.parameter_count(), || "flat parameter length mismatch".into())?;
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&values[at..at + n]);
            at += n;
            let n = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        dim_check(rows == self.input_width(), || {
            format!("input has {rows} entries, network expects {}", self.input_width())
        })
    }

    /// Forward pass on a batch (one sample per column).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x.nrows())?;
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (j, layer) in self.layers.iter().enumerate() {
            a = layer.apply(&a);
            if j < last {
                a.apply(|v| *v = self.activation.apply(*v));
            }
        }
        Ok(a)
    }

    /// Forward pass and reverse sweep for `Σ_s ⟨c_s, f^θ(x_s)⟩`.
    pub fn gradient_batch(&self, x: &DMatrix<f64>, cotangent: &DMatrix<f64>) -> Result<MlpGradient> {
        self.check_input(x.nrows())?;
        dim_check(cotangent.nrows() == self.output_width() && cotangent.ncols() == x.ncols(), || {
            "cotangent shape does not match the network output".into()
        })?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(x.clone());
        for (j, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&post[j]);
            if j < last {
                post.push(z.map(|v| self.activation.apply(v)));
            }
            pre.push(z);
        }
        let mut grads = vec![Layer::zeros(0, 0); self.layers.len()];
        let mut delta = cotangent.clone();
        for j in (0..self.layers.len()).rev() {
            let w_grad = &delta * post[j].transpose();
            let b_grad = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            let back = self.layers[j].w.tr_mul(&delta);
            grads[j] = Layer { w: w_grad, b: b_grad };
            delta = if j > 0 {
                let act = self.activation;
                back.zip_zip_map(&pre[j - 1], &post[j], |g, z, s| g * act.derivative(z, s))
            } else {
                back
            };
        }
        Ok(MlpGradient { layers: grads, input: delta })
    }
}

/// `f^θ(x)` for a single input.
pub fn mlp_forward(theta: &MlpParams, x: &DVector<f64>) -> Result<DVector<f64>> {
    let y = theta.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
    Ok(y.column(0).into_owned())
}

/// Exact derivatives of `⟨c, f^θ(x)⟩` with respect to every weight, bias and the input.
/// The relu subgradient at 0 is 0.
pub fn mlp_gradient(theta: &MlpParams, x: &DVector<f64>, cotangent: &DVector<f64>) -> Result<MlpGradient> {
    theta.gradient_batch(
        &DMatrix::from_column_slice(x.len(), 1, x.as_slice()),
        &DMatrix::from_column_slice(cotangent.len(), 1, cotangent.as_slice()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_gadget() {
        let id = MlpParams::relu_identity(1);
        for x in [-3.5, 0.0, 2.25] {
            assert_eq!(mlp_forward(&id, &DVector::from_element(1, x)).unwrap()[0], x);
        }
    }

    #[test]
    fn single_layer_is_affine() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let b = DVector::from_vec(vec![0.25, -1.0]);
        let net = MlpParams::affine(w.clone(), b.clone(), Activation::Tanh).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7, 2.0]);
        assert_eq!(mlp_forward(&net, &x).unwrap(), &w * &x + &b);
    }

    #[test]
    fn zero_weights_give_last_bias() {
        let mut net = MlpParams::glorot(&[3, 4, 2], Activation::Tanh, 1).unwrap();
        for l in net.layers_mut() {
            l.w.fill(0.0);
        }
        net.layers_mut()[1].b = DVector::from_vec(vec![1.5, -2.0]);
        let y = mlp_forward(&net, &DVector::from_vec(vec![9.0, 8.0, 7.0])).unwrap();
        assert_eq!(y.as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn chaining_is_checked() {
        let bad = vec![Layer::zeros(3, 2), Layer::zeros(1, 4)];
        assert!(MlpParams::new(bad, Activation::Relu).is_err());
        assert!(MlpParams::new(vec![], Activation::Relu).is_err());
        let net = MlpParams::glorot(&[2, 1], Activation::Relu, 0).unwrap();
        assert!(mlp_forward(&net, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn bias_gradient_of_affine_is_cotangent() {
        let net = MlpParams::glorot(&[3, 2], Activation::Tanh, 4).unwrap();
        let c = DVector::from_vec(vec![0.7, -1.3]);
        let g = mlp_gradient(&net, &DVector::from_vec(vec![1.0, 2.0, 3.0]), &c).unwrap();
        assert_eq!(g.layers[0].b, c);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let net = MlpParams::relu_identity(1);
        let g = mlp_gradient(&net, &DVector::zeros(1), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(g.input[(0, 0)], 0.0);
    }

    #[test]
    fn flat_round_trip_and_json() {
        let mut net = MlpParams::glorot(&[2, 3, 1], Activation::Relu, 9).unwrap();
        let flat = net.flatten();
        assert_eq!(flat.len(), net.parameter_count());
        net.set_flat(&flat).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: MlpParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
    }
}
