use std::path::PathBuf;

use dtnet::calderon::{Arch, ConductivityFamily, DtnEntryBasis, Seeds};
use dtnet::deeponet::{Activation, Hyper};
use dtnet::fem::{boundary_resolution, ConductivityField, Mesh};
use dtnet::hilbert::{mode_count, OrthoBasis};
use dtnet::measures::{ConductivityMeasureSpec, EtaConfig, MuConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    DtnFixed,
    CalderonDirect,
    CalderonInverse,
    Decomposition,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::DtnFixed => "dtn_fixed",
            Pipeline::CalderonDirect => "calderon_direct",
            Pipeline::CalderonInverse => "calderon_inverse",
            Pipeline::Decomposition => "decomposition",
        }
    }

    pub fn uses_dataset(self) -> bool {
        matches!(self, Pipeline::CalderonDirect | Pipeline::CalderonInverse)
    }
}

/// The fixed conductivity of the `dtn`, `dtn_fixed` and `decomposition` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Constant {
        value: f64,
    },
    TwoLayer {
        inner: f64,
        outer: f64,
        radius: f64,
    },
    /// One draw from the `eta` measure.
    LogNormal {
        seed: u64,
    },
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::Constant { value: 1.0 }
    }
}

/// Conductivity family of the Calderón datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// The `eta` measure.
    LogNormal,
    Constant {
        lo: f64,
        hi: f64,
    },
    TwoLayer {
        inner_lo: f64,
        inner_hi: f64,
        outer: f64,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_family")]
    pub family: FamilyConfig,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
}

fn default_family() -> FamilyConfig {
    FamilyConfig::LogNormal
}
fn default_count() -> usize {
    200
}
fn default_n_train() -> usize {
    160
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { family: default_family(), count: default_count(), n_train: default_n_train() }
    }
}

/// Monte-Carlo sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Boundary samples for fixed-a training.
    pub n_train: usize,
    pub n_test: usize,
    /// Size of each `W_μ` quadrature batch.
    pub wmu: usize,
    /// Samples per decomposition row.
    pub decomposition: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { n_train: 2000, n_test: 500, wmu: 256, decomposition: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mesh: MeshConfig,
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub mu: MuConfig,
    #[serde(default)]
    pub eta: EtaConfig,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub conductivity: FieldConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub arch: Option<Arch>,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub samples: SampleConfig,
    #[serde(default)]
    pub d_values: Option<Vec<usize>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Seed offsets of the two disjoint `W_μ` batches, relative to `seeds.data`.
pub const QUADRATURE_SEED: u64 = 1 << 40;
pub const RECHECK_SEED: u64 = 1 << 41;

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn k(&self) -> usize {
        self.truncation.k
    }

    pub fn output_dir(&self) -> &PathBuf {
        self.output_dir.as_ref().expect("validated config has an output directory")
    }

    pub fn family(&self) -> Result<ConductivityFamily, CliError> {
        Ok(match &self.dataset.family {
            FamilyConfig::LogNormal => ConductivityFamily::LogNormal(self.eta_spec()?),
            FamilyConfig::Constant { lo, hi } => ConductivityFamily::Constant { lo: *lo, hi: *hi },
            FamilyConfig::TwoLayer { inner_lo, inner_hi, outer, radius } => ConductivityFamily::TwoLayer {
                inner_lo: *inner_lo,
                inner_hi: *inner_hi,
                outer: *outer,
                radius: *radius,
            },
        })
    }

    pub fn eta_spec(&self) -> Result<ConductivityMeasureSpec, CliError> {
        Ok(ConductivityMeasureSpec::from_config(&self.eta)?)
    }

    pub fn field(&self, mesh: &Mesh) -> Result<ConductivityField, CliError> {
        Ok(match &self.conductivity {
            FieldConfig::Constant { value } => ConductivityField::constant(mesh, *value)?,
            FieldConfig::TwoLayer { inner, outer, radius } => {
                ConductivityField::two_layer(mesh, *inner, *outer, *radius)?
            }
            FieldConfig::LogNormal { seed } => {
                let basis = dtnet::measures::kl_basis(mesh, self.eta.kl_modes)?;
                dtnet::measures::sample_conductivity(&self.eta_spec()?, &basis, *seed)?
            }
        })
    }

    /// Size of the output basis of the inverse pipeline.
    fn inverse_out_size(&self) -> usize {
        self.eta.kl_modes
    }

    fn default_arch(&self) -> Arch {
        let n = mode_count(self.k());
        let entries = n * n;
        match self.pipeline {
            Pipeline::DtnFixed | Pipeline::Decomposition => {
                Arch { d_lat: n, m: n, widths: vec![64], activation: Activation::Tanh }
            }
            Pipeline::CalderonDirect => {
                Arch { d_lat: self.eta.kl_modes, m: entries, widths: Vec::new(), activation: Activation::Relu }
            }
            Pipeline::CalderonInverse => {
                Arch { d_lat: entries, m: self.inverse_out_size(), widths: vec![32], activation: Activation::Tanh }
            }
        }
    }

    pub fn d_values(&self) -> Vec<usize> {
        match &self.d_values {
            Some(v) => v.clone(),
            None => [4, 8, 16, 32].into_iter().filter(|d| *d <= mode_count(self.k())).collect(),
        }
    }

    /// Fills the derived defaults and applies the command-line overrides.
    pub fn resolve(mut self, seed: Option<u64>, mesh_h: Option<f64>) -> Self {
        if let Some(s) = seed {
            self.seeds.data = s;
        }
        if let Some(h) = mesh_h {
            self.mesh.h = h;
        }
        if self.arch.is_none() {
            self.arch = Some(self.default_arch());
        }
        if self.d_values.is_none() {
            self.d_values = Some(self.d_values());
        }
        self
    }

    pub fn arch(&self) -> &Arch {
        self.arch.as_ref().expect("resolved config has an architecture")
    }

    /// Checks every field before any computation; all problems are reported together.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs: Vec<String> = Vec::new();
        let mut bad = |field: &str, msg: String| errs.push(format!("{field}: {msg}"));
        let k = self.k();
        let n = mode_count(k);

        if !(self.mesh.h > 0.0 && self.mesh.h <= 0.5) || !(self.mesh.h >= 0.005) {
            bad("mesh.h", format!("must lie in [0.005, 0.5], got {}", self.mesh.h));
        } else if boundary_resolution(self.mesh.h) / 4 < k {
            bad(
                "truncation.K",
                format!(
                    "K = {k} exceeds the resolvable {} modes at h = {}",
                    boundary_resolution(self.mesh.h) / 4,
                    self.mesh.h
                ),
            );
        }
        if k == 0 {
            bad("truncation.K", "must be at least 1".into());
        }
        if !(self.mu.decay_s > 0.0) {
            bad("mu.decay_s", format!("must be positive, got {}", self.mu.decay_s));
        }
        if let Some(m) = self.mu.modes {
            if m == 0 || m > n {
                bad("mu.modes", format!("must lie in 1..={n} for K = {k}, got {m}"));
            }
        }
        if !(self.eta.m_bound > 1.0) || !self.eta.m_bound.is_finite() {
            bad("eta.M", format!("must be finite and above 1, got {}", self.eta.m_bound));
        }
        if self.eta.kl_modes == 0 || self.eta.kl_modes > 64 {
            bad("eta.kl_modes", format!("must lie in 1..=64, got {}", self.eta.kl_modes));
        }
        if !(self.eta.decay > 0.0) {
            bad("eta.decay", format!("must be positive, got {}", self.eta.decay));
        }
        match &self.conductivity {
            FieldConfig::Constant { value } if !(*value > 0.0 && value.is_finite()) => {
                bad("conductivity.value", format!("must be positive, got {value}"))
            }
            FieldConfig::TwoLayer { inner, outer, radius } => {
                if !(*inner > 0.0 && *outer > 0.0 && inner.is_finite() && outer.is_finite()) {
                    bad("conductivity", "inner and outer must be positive".into());
                }
                if !(*radius > 0.0 && *radius < 1.0) {
                    bad("conductivity.radius", format!("must lie in (0, 1), got {radius}"));
                }
            }
            _ => {}
        }
        if self.pipeline.uses_dataset() {
            let ds = &self.dataset;
            if ds.count < 2 {
                bad("dataset.count", format!("must be at least 2, got {}", ds.count));
            }
            if ds.n_train == 0 || ds.n_train >= ds.count {
                bad("dataset.n_train", format!("must lie in 1..{}, got {}", ds.count, ds.n_train));
            }
            match &ds.family {
                FamilyConfig::Constant { lo, hi } if !(*lo > 0.0 && hi >= lo && hi.is_finite()) => {
                    bad("dataset.family", format!("needs 0 < lo ≤ hi, got [{lo}, {hi}]"))
                }
                FamilyConfig::TwoLayer { inner_lo, inner_hi, outer, radius } => {
                    if !(*inner_lo > 0.0 && inner_hi >= inner_lo && *outer > 0.0 && inner_hi.is_finite()) {
                        bad("dataset.family", "needs 0 < inner_lo ≤ inner_hi and outer > 0".into());
                    }
                    if !(*radius > 0.0 && *radius < 1.0) {
                        bad("dataset.family.radius", format!("must lie in (0, 1), got {radius}"));
                    }
                }
                _ => {}
            }
        }
        if let Some(arch) = &self.arch {
            let (din, dout) = match self.pipeline {
                Pipeline::DtnFixed | Pipeline::Decomposition => (n, n),
                Pipeline::CalderonDirect => (self.eta.kl_modes, DtnEntryBasis::new(k).size()),
                Pipeline::CalderonInverse => (DtnEntryBasis::new(k).size(), self.inverse_out_size()),
            };
            if arch.d_lat == 0 || arch.d_lat > din {
                bad("arch.d_lat", format!("must lie in 1..={din} for {}, got {}", self.pipeline.name(), arch.d_lat));
            }
            if arch.m == 0 || arch.m > dout {
                bad("arch.m", format!("must lie in 1..={dout} for {}, got {}", self.pipeline.name(), arch.m));
            }
            if arch.widths.contains(&0) {
                bad("arch.widths", "hidden widths must be positive".into());
            }
        }
        let h = &self.hyper;
        if !(h.lr > 0.0 && h.lr.is_finite()) {
            bad("hyper.lr", format!("must be positive, got {}", h.lr));
        }
        if let Some(f) = h.lr_final {
            if !(f > 0.0 && f.is_finite()) {
                bad("hyper.lr_final", format!("must be positive, got {f}"));
            }
        }
        if h.batch == 0 {
            bad("hyper.batch", "must be positive".into());
        }
        let s = &self.samples;
        if s.n_train == 0 || s.n_test == 0 {
            bad("samples", "n_train and n_test must be positive".into());
        }
        if s.wmu < 2 {
            bad("samples.wmu", format!("the W_mu estimate needs at least 2 samples, got {}", s.wmu));
        }
        if s.decomposition < 2 {
            bad("samples.decomposition", format!("needs at least 2 samples, got {}", s.decomposition));
        }
        if let Some(ds) = &self.d_values {
            if ds.is_empty() {
                bad("d_values", "must not be empty".into());
            }
            for d in ds {
                if *d == 0 || *d > n {
                    bad("d_values", format!("{d} is outside 1..={n}"));
                }
            }
        }
        if self.output_dir.is_none() {
            bad("output_dir", "is required".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs.join("; ")))
        }
    }

    /// SHA-256 of the resolved config without the seeds and the output directory, so runs
    /// differing only in those share a hash.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.seeds = Seeds::default();
        view.hyper.seed = 0;
        view.output_dir = None;
        let text = serde_json::to_string(&view).expect("configs serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }
}
