use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ConductivityField, DirichletSolver, DtNMatrix, LinearSolver, Mesh};
use crate::hilbert::DomainBasis;
use crate::measures::{rng_for, sample_conductivity, ConductivityMeasureSpec};

/// Tolerance of the symmetry check applied to every stored target.
pub const TARGET_SYMMETRY_TOL: f64 = 1e-8;

/// Families of admissible conductivities a dataset is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ConductivityFamily {
    /// Clamped log-normal fields `exp(clamp(g, ±ln M))`.
    LogNormal(ConductivityMeasureSpec),
    /// `a ≡ c` with `c` uniform on `[lo, hi]`.
    Constant { lo: f64, hi: f64 },
    /// `a = inner` on `r < radius`, `outer` elsewhere, `inner` uniform on `[inner_lo, inner_hi]`.
    TwoLayer { inner_lo: f64, inner_hi: f64, outer: f64, radius: f64 },
}

impl ConductivityFamily {
    /// `M` of the smallest `Y_M` containing the family.
    pub fn m_bound(&self) -> f64 {
        match self {
            ConductivityFamily::LogNormal(spec) => spec.m_bound,
            ConductivityFamily::Constant { lo, hi } => hi.max(1.0 / lo),
            ConductivityFamily::TwoLayer { inner_lo, inner_hi, outer, .. } => {
                inner_hi.max(*outer).max(1.0 / inner_lo.min(*outer))
            }
        }
    }

    pub fn sample(&self, mesh: &Mesh, kl: Option<&DomainBasis>, seed: u64) -> Result<ConductivityField> {
        match self {
            ConductivityFamily::LogNormal(spec) => {
                let basis = kl.ok_or_else(|| Error::Argument("log-normal family needs a KL basis".into()))?;
                sample_conductivity(spec, basis, seed)
            }
            ConductivityFamily::Constant { lo, hi } => {
                let c = rng_for(seed).gen_range(*lo..=*hi);
                ConductivityField::constant(mesh, c)
            }
            ConductivityFamily::TwoLayer { inner_lo, inner_hi, outer, radius } => {
                let c = rng_for(seed).gen_range(*inner_lo..=*inner_hi);
                ConductivityField::two_layer(mesh, c, *outer, *radius)
            }
        }
    }
}

/// Seeds and discretization a dataset was generated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mesh_h: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub base_seed: u64,
    pub count: usize,
    pub family: ConductivityFamily,
}

/// Pairs `(a_i, Λ_{a_i})` generated by the finite element solver.
#[derive(Debug, Clone)]
pub struct CalderonDataset {
    pub conductivities: Vec<ConductivityField>,
    pub targets: Vec<DtNMatrix>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Record {
    conductivity: ConductivityField,
    dtn: DtNMatrix,
}

impl CalderonDataset {
    pub fn len(&self) -> usize {
        self.conductivities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conductivities.is_empty()
    }

    /// Checks the `Y_M` clamp and the symmetry of every target.
    pub fn validate(&self) -> Result<()> {
        let m = self.provenance.family.m_bound();
        for (i, (a, t)) in self.conductivities.iter().zip(&self.targets).enumerate() {
            if a.min_value() < (1.0 / m) * (1.0 - 1e-12) || a.max_value() > m * (1.0 + 1e-12) {
                return Err(Error::Argument(format!("sample {i} leaves Y_M with M = {m}")));
            }
            let defect = t.symmetry_defect();
            if defect > TARGET_SYMMETRY_TOL {
                return Err(Error::Assembly(format!("target {i} has symmetry defect {defect:e}")));
            }
        }
        Ok(())
    }

    /// One JSON object per line: `{"conductivity": …, "dtn": …}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (a, t) in self.conductivities.iter().zip(&self.targets) {
            let rec = Record { conductivity: a.clone(), dtn: t.clone() };
            out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, provenance: Provenance) -> Result<Self> {
        let records: Vec<Record> = crate::measures::from_jsonl(text)?;
        let (conductivities, targets) = records.into_iter().map(|r| (r.conductivity, r.dtn)).unzip();
        let ds = Self { conductivities, targets, provenance };
        ds.validate()?;
        Ok(ds)
    }

    /// First `n_train` samples and the rest.
    pub fn split(&self, n_train: usize) -> (Vec<usize>, Vec<usize>) {
        let n_train = n_train.min(self.len());
        ((0..n_train).collect(), (n_train..self.len()).collect())
    }
}

/// `count` samples with seeds `base_seed + i`, solved in parallel.
pub fn generate_dataset(
    mesh: &Mesh,
    family: &ConductivityFamily,
    kl: Option<&DomainBasis>,
    k: usize,
    base_seed: u64,
    count: usize,
) -> Result<CalderonDataset> {
    if count == 0 {
        return Err(Error::Argument("dataset size must be positive".into()));
    }
    let pairs: Vec<(ConductivityField, DtNMatrix)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let a = family.sample(mesh, kl, base_seed.wrapping_add(i))?;
            let d = DirichletSolver::new(mesh, &a, LinearSolver::Cholesky)?.dtn_matrix(k)?;
            Ok((a, d))
        })
        .collect::<Result<_>>()?;
    let (conductivities, targets) = pairs.into_iter().unzip();
    let ds = CalderonDataset {
        conductivities,
        targets,
        provenance: Provenance { mesh_h: mesh.h, k, base_seed, count, family: family.clone() },
    };
    ds.validate()?;
    Ok(ds)
}
