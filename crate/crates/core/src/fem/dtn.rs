use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::hilbert::{frequency, mode_count, multiplier, BoundaryFunction, BoundaryFunctional};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtnBasis {
    /// Entries `⟨Λ_a b_j, b_i⟩` on the raw trigonometric functions.
    Raw,
    /// Entries `⟨Λ_a ê_j, ê_i⟩` on the `H^{1/2}`-orthonormal functions, i.e. the matrix of
    /// the Riesz-composed operator `φ ∘ Λ_a`.
    Orthonormal,
}

/// Finite section of the DtN map as a bilinear form on boundary modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DtnJson", try_from = "DtnJson")]
pub struct DtNMatrix {
    pub entries: DMatrix<f64>,
    pub basis_kind: DtnBasis,
    pub k: usize,
}

#[derive(Serialize, Deserialize)]
struct DtnJson {
    #[serde(rename = "K")]
    k: usize,
    basis_kind: DtnBasis,
    entries: Vec<Vec<f64>>,
}

impl From<DtNMatrix> for DtnJson {
    fn from(m: DtNMatrix) -> Self {
        let entries = m.entries.row_iter().map(|r| r.iter().copied().collect()).collect();
        DtnJson { k: m.k, basis_kind: m.basis_kind, entries }
    }
}

impl TryFrom<DtnJson> for DtNMatrix {
    type Error = Error;
    fn try_from(j: DtnJson) -> Result<Self> {
        let n = mode_count(j.k);
        dim_check(j.entries.len() == n && j.entries.iter().all(|r| r.len() == n), || {
            format!("DtN matrix for K = {} must be {n}×{n}", j.k)
        })?;
        Ok(DtNMatrix { entries: DMatrix::from_fn(n, n, |r, c| j.entries[r][c]), basis_kind: j.basis_kind, k: j.k })
    }
}

/// Column labels `const, c1, s1, c2, s2, …`.
pub fn mode_labels(k: usize) -> Vec<String> {
    (0..mode_count(k))
        .map(|i| match i {
            0 => "const".to_string(),
            i if i % 2 == 1 => format!("c{}", frequency(i)),
            i => format!("s{}", frequency(i)),
        })
        .collect()
}

impl DtNMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn zeros(k: usize, basis_kind: DtnBasis) -> Self {
        let n = mode_count(k);
        Self { entries: DMatrix::zeros(n, n), basis_kind, k }
    }

    pub fn to_orthonormal(&self) -> Self {
        match self.basis_kind {
            DtnBasis::Orthonormal => self.clone(),
            DtnBasis::Raw => Self {
                entries: DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
                    self.entries[(i, j)] / (multiplier(i) * multiplier(j)).sqrt()
                }),
                basis_kind: DtnBasis::Orthonormal,
                k: self.k,
            },
        }
    }

    pub fn to_raw(&self) -> Self {
        match self.basis_kind {
            DtnBasis::Raw => self.clone(),
            DtnBasis::Orthonormal => Self {
                entries: DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
                    self.entries[(i, j)] * (multiplier(i) * multiplier(j)).sqrt()
                }),
                basis_kind: DtnBasis::Raw,
                k: self.k,
            },
        }
    }

    /// Leading `d × d` block (the finite section on the first `d` modes).
    pub fn section(&self, d: usize) -> Result<DMatrix<f64>> {
        dim_check(d <= self.dim(), || format!("section {d} exceeds matrix size {}", self.dim()))?;
        Ok(self.entries.view((0, 0), (d, d)).into_owned())
    }

    /// `max_ij |M_ij − M_ji| / (1 + |M_ii| + |M_jj|)`.
    pub fn symmetry_defect(&self) -> f64 {
        let m = &self.entries;
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                let scale = 1.0 + m[(i, i)].abs() + m[(j, j)].abs();
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs() / scale);
            }
        }
        worst
    }

    /// Largest entry of the constant-mode row/column relative to the Frobenius norm.
    pub fn constant_mode_defect(&self) -> f64 {
        let norm = self.entries.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let row = self.entries.row(0).amax();
        let col = self.entries.column(0).amax();
        row.max(col) / norm
    }

    /// Action on a boundary function, as a functional (raw basis only).
    pub fn apply(&self, f: &BoundaryFunction) -> Result<BoundaryFunctional> {
        let raw = self.to_raw();
        dim_check(f.coeffs().len() == self.dim(), || "function truncation mismatch".into())?;
        let v = &raw.entries * DVector::from_column_slice(f.coeffs());
        BoundaryFunctional::from_coeffs(v.as_slice().to_vec())
    }

    /// `T(f, g) = Λ(f)(g)`.
    pub fn bilinear(&self, f: &BoundaryFunction, g: &BoundaryFunction) -> Result<f64> {
        self.apply(f)?.pairing(g)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { entries: &self.entries * c, basis_kind: self.basis_kind, k: self.k }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        dim_check(self.k == other.k, || "DtN matrices of different truncation".into())?;
        let other = match self.basis_kind {
            DtnBasis::Raw => other.to_raw(),
            DtnBasis::Orthonormal => other.to_orthonormal(),
        };
        Ok(Self { entries: &self.entries - other.entries, basis_kind: self.basis_kind, k: self.k })
    }

    /// Row-major CSV with a header line naming the mode ordering.
    pub fn to_csv(&self) -> String {
        let mut out = mode_labels(self.k).join(",");
        out.push('\n');
        for r in self.entries.row_iter() {
            let row: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, basis_kind: DtnBasis) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Argument("empty CSV".into()))?;
        let n = header.split(',').count();
        if n % 2 == 0 {
            return Err(Error::Dimension(format!("CSV header names {n} modes")));
        }
        let k = n / 2;
        if header.split(',').map(str::to_string).collect::<Vec<_>>() != mode_labels(k) {
            return Err(Error::Argument("CSV header does not follow the mode ordering".into()));
        }
        let mut values = Vec::with_capacity(n * n);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Argument(format!("bad CSV value {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            dim_check(row.len() == n, || "ragged CSV row".into())?;
            values.extend(row);
        }
        dim_check(values.len() == n * n, || "CSV does not hold a square matrix".into())?;
        Ok(Self { entries: DMatrix::from_row_slice(n, n, &values), basis_kind, k })
    }
}
