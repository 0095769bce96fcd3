//! Feed-forward networks, the relu clipping construction, and DeepONets
//! `E_{W,m} ∘ f^θ ∘ P_{H,d}` between Hilbert spaces with orthonormal bases.

mod gadgets;
mod mlp;
mod train;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use gadgets::{build_clipping, compose};
pub use mlp::{mlp_forward, mlp_gradient, Activation, Layer, MlpGradient, MlpParams};
pub use train::{
    mean_loss, sample_losses, sgd_train, sgd_train_glorot, trace_csv, Dataset, Hyper, Loss, Optimizer, TraceRow,
    Trained,
};

use crate::error::{dim_check, Error, Result};
use crate::hilbert::{BasisKind, OrthoBasis};

/// `F = E_{W,m} ∘ f^θ ∘ P_{H,d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct DeepOnetParams {
    pub d: usize,
    pub m: usize,
    pub theta: MlpParams,
    pub in_basis: BasisKind,
    pub out_basis: BasisKind,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    d: usize,
    m: usize,
    activation: Activation,
    layers: Vec<Layer>,
    in_basis: BasisKind,
    out_basis: BasisKind,
}

impl From<DeepOnetParams> for Checkpoint {
    fn from(p: DeepOnetParams) -> Self {
        Checkpoint {
            d: p.d,
            m: p.m,
            activation: p.theta.activation(),
            layers: p.theta.into_layers(),
            in_basis: p.in_basis,
            out_basis: p.out_basis,
        }
    }
}

impl TryFrom<Checkpoint> for DeepOnetParams {
    type Error = Error;
    fn try_from(c: Checkpoint) -> Result<Self> {
        DeepOnetParams::new(c.d, c.m, MlpParams::new(c.layers, c.activation)?, c.in_basis, c.out_basis)
    }
}

impl DeepOnetParams {
    pub fn new(d: usize, m: usize, theta: MlpParams, in_basis: BasisKind, out_basis: BasisKind) -> Result<Self> {
        dim_check(theta.input_width() == d && theta.output_width() == m, || {
            format!(
                "network maps R^{} → R^{} but the DeepONet needs R^{d} → R^{m}",
                theta.input_width(),
                theta.output_width()
            )
        })?;
        Ok(Self { d, m, theta, in_basis, out_basis })
    }

    /// `f^θ` on latent coordinates.
    pub fn latent(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        mlp_forward(&self.theta, x)
    }

    fn check_bases<I: OrthoBasis, O: OrthoBasis>(&self, inb: &I, outb: &O) -> Result<()> {
        if inb.kind() != self.in_basis || outb.kind() != self.out_basis {
            return Err(Error::Argument(format!(
                "model maps {:?} → {:?}, bases given are {:?} → {:?}",
                self.in_basis,
                self.out_basis,
                inb.kind(),
                outb.kind()
            )));
        }
        dim_check(self.d <= inb.size() && self.m <= outb.size(), || {
            format!("d = {} and m = {} must not exceed basis sizes {} and {}", self.d, self.m, inb.size(), outb.size())
        })
    }
}

/// `E_{W,m}(f^θ(P_{H,d} x))`.
pub fn deeponet_forward<I: OrthoBasis, O: OrthoBasis>(
    p: &DeepOnetParams,
    in_basis: &I,
    out_basis: &O,
    x: &I::Element,
) -> Result<O::Element> {
    p.check_bases(in_basis, out_basis)?;
    let y = p.latent(&in_basis.project(x, p.d)?)?;
    out_basis.extend(y.as_slice())
}
