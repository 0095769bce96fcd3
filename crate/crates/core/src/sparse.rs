//! Compressed sparse row storage and the two symmetric positive definite solvers used by
//! the finite-element code: an envelope (skyline) Cholesky factorization and Jacobi
//! preconditioned conjugate gradients.

use std::ops::Mul;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(p) => self.values[range.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Submatrix with the given rows and columns (both given as index lists).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (ni, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                if col_map[j] != usize::MAX {
                    triplets.push((ni, col_map[j], v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), &triplets)
    }

    pub fn scaled(&self, c: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }
}

impl Mul<&DVector<f64>> for &CsrMatrix {
    type Output = DVector<f64>;
    fn mul(self, rhs: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.mul_vec(rhs.as_slice()))
    }
}

/// Cholesky factor `L` of a symmetric positive definite matrix in envelope storage: row `i`
/// holds `L[i, first[i]..=i]` contiguously.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors `a`, reading only its lower triangle.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension("Cholesky needs a square matrix".into()));
        }
        let first: Vec<usize> =
            (0..n).map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j <= i).min().unwrap_or(i)).collect();
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for (i, f) in first.iter().enumerate() {
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        if total > 400_000_000 {
            return Err(Error::Resource(format!("envelope of {total} entries is too large")));
        }
        let mut data = vec![0.0; total];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[offset[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let start = fi.max(fj);
                let (head, tail) = data.split_at_mut(offset[i]);
                let row_j = &head[offset[j] + start - fj..offset[j] + j - fj];
                let row_i = &tail[..i - fi + 1];
                let dot: f64 = row_i[start - fi..j - fi].iter().zip(row_j).map(|(x, y)| x * y).sum();
                let ljj = head[offset[j] + j - fj];
                tail[j - fi] = (row_i[j - fi] - dot) / ljj;
            }
            let row_i = &mut data[offset[i]..offset[i] + i - fi + 1];
            let diag = row_i[i - fi] - row_i[..i - fi].iter().map(|x| x * x).sum::<f64>();
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Assembly(format!("matrix is not positive definite (pivot {diag:e} at row {i})")));
            }
            row_i[i - fi] = diag.sqrt();
        }
        Ok(Self { first, offset, data })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.offset[i]..self.offset[i + 1]]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let row = self.row(i);
            let dot: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - dot) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            y[i] /= row[i - fi];
            let xi = y[i];
            for (l, yj) in row[..i - fi].iter().zip(&mut y[fi..i]) {
                *yj -= l * xi;
            }
        }
        y
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite `a`.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgOutcome)> {
    let n = a.nrows();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgOutcome { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut rel = 1.0;
    for it in 1..=max_iter {
        let ap = a.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Assembly(format!("non-positive curvature {pap:e} in CG")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        if rel <= tol {
            return Ok((x, CgOutcome { iterations: it, relative_residual: rel }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: rel })
}
