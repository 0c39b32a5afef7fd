//! Compressed sparse row storage for the assembled real matrices.

use std::fmt::Write as _;

use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64;

use crate::error::{OseenError, Result};

/// Accumulates `(row, col, value)` contributions; duplicates are summed in
/// insertion order when compressed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.nrows, self.ncols, self.entries)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    /// Sums duplicate entries. The summation order for each `(row, col)` is the
    /// order of appearance in `entries`, so the result is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in &entries {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // Stable bucket by row, then stable sort each row by column.
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); entries.len()];
        for &(r, c, v) in &entries {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for r in 0..nrows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut last = usize::MAX;
            for &(c, v) in row.iter() {
                if c == last {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = c;
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()].iter().copied().zip(self.data[range].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.indptr[r]..self.indptr[r + 1];
        match self.indices[range.clone()].binary_search(&c) {
            Ok(k) => self.data[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.ncols, self.nrows, self.triplets().map(|(r, c, v)| (c, r, v)).collect())
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(OseenError::Internal(format!(
                "shape mismatch: {}x{} + {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let entries = self
            .triplets()
            .chain(other.triplets().map(|(r, c, v)| (r, c, alpha * v)))
            .collect();
        Ok(CsrMatrix::from_triplets(self.nrows, self.ncols, entries))
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= alpha;
        }
        out
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols && self.triplets().all(|(r, c, v)| (v - self.get(c, r)).abs() <= tol)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn matvec_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| x[c] * v).sum())
            .collect()
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            out[r][c] += v;
        }
        out
    }

    pub fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<_> = self.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| OseenError::Internal(format!("sparse conversion failed: {e:?}")))
    }

    /// `self - shift * other` as a complex matrix.
    pub fn to_faer_complex_shifted(&self, shift: Complex64, other: &CsrMatrix) -> Result<SparseColMat<usize, Complex64>> {
        let triplets: Vec<_> = self
            .triplets()
            .map(|(r, c, v)| Triplet::new(r, c, Complex64::new(v, 0.0)))
            .chain(other.triplets().map(|(r, c, v)| Triplet::new(r, c, -shift * v)))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| OseenError::Internal(format!("sparse conversion failed: {e:?}")))
    }

    /// Matrix Market coordinate text (1-based indices as the format requires).
    pub fn to_matrix_market(&self) -> String {
        let mut out = String::new();
        out.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for (r, c, v) in self.triplets() {
            let _ = writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v);
        }
        out
    }

    pub fn from_matrix_market(text: &str) -> Result<CsrMatrix> {
        let mut lines = text.lines().filter(|l| !l.starts_with('%') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| OseenError::invalid("empty matrix market file"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| OseenError::invalid(format!("bad size line `{header}`"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(OseenError::invalid(format!("bad size line `{header}`")));
        }
        let mut entries = Vec::with_capacity(dims[2]);
        for line in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            let parse_err = || OseenError::invalid(format!("bad entry `{line}`"));
            if t.len() != 3 {
                return Err(parse_err());
            }
            let r: usize = t[0].parse().map_err(|_| parse_err())?;
            let c: usize = t[1].parse().map_err(|_| parse_err())?;
            let v: f64 = t[2].parse().map_err(|_| parse_err())?;
            entries.push((r - 1, c - 1, v));
        }
        Ok(CsrMatrix::from_triplets(dims[0], dims[1], entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(0, 2, 1.0), (1, 0, 2.0), (0, 2, 3.0), (0, 0, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 2), 4.0);
        assert_eq!(m.get(0, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 2.0]);
        let t = m.transpose();
        assert_eq!(t.get(2, 0), 4.0);
    }

    #[test]
    fn matrix_market_roundtrip() {
        let m = CsrMatrix::from_triplets(3, 3, vec![(0, 0, 1.5), (2, 1, -2.25e-7), (1, 2, 3.0)]);
        let text = m.to_matrix_market();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n3 3 3\n"));
        assert_eq!(CsrMatrix::from_matrix_market(&text).unwrap(), m);
    }
}
