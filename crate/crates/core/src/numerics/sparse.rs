use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

/// Compressed sparse row matrix kept in canonical form: column indices are
/// strictly increasing within each row and no explicit zeros are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a canonical matrix from `(row, col, value)` triplets. Duplicates
    /// are summed in input order; entries that end up exactly zero are dropped.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(i, j, v) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidInput(format!(
                    "triplet ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite entry at ({i}, {j})")));
            }
            counts[i + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        // bucket by row (stable), then sort each row by column
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let slot = next[i];
            cols[slot] = j;
            vals[slot] = v;
            next[i] += 1;
        }
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut perm: Vec<usize> = Vec::new();
        for i in 0..n_rows {
            let (lo, hi) = (counts[i], counts[i + 1]);
            perm.clear();
            perm.extend(lo..hi);
            perm.sort_by_key(|&s| cols[s]);
            let mut k = 0;
            while k < perm.len() {
                let col = cols[perm[k]];
                let mut acc = 0.0;
                while k < perm.len() && cols[perm[k]] == col {
                    acc += vals[perm[k]];
                    k += 1;
                }
                if acc != 0.0 {
                    col_indices.push(col);
                    values.push(acc);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Wraps raw CSR arrays, validating the canonical-form invariants.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        row_offsets.push(0);
        for (i, &d) in diag.iter().enumerate() {
            if d != 0.0 {
                col_indices.push(i);
                values.push(d);
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..dense.nrows() {
            for j in 0..dense.ncols() {
                let v = dense[(i, j)];
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n_rows: dense.nrows(),
            n_cols: dense.ncols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates the stored `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        match self.col_indices[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "matvec: input length");
        assert_eq!(y.len(), self.n_rows, "matvec: output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi = acc;
        }
    }

    /// `Aᵀ x` without forming the transpose.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows, "matvec_transpose: input length");
        let mut y = vec![0.0; self.n_cols];
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn checked_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("sparse matvec", self.n_cols, x.len())?;
        Ok(self.matvec(x))
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in increasing order, so transposed rows come out sorted
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                let slot = next[j];
                col_indices[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    /// Sparse product `self * other` (Gustavson row-by-row).
    pub fn matmul(&self, other: &SparseMatrix) -> Result<Self> {
        check_dim("sparse matmul", self.n_cols, other.n_rows)?;
        let n = other.n_cols;
        let mut acc = vec![0.0; n];
        let mut marker = vec![usize::MAX; n];
        let mut pattern: Vec<usize> = Vec::new();
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..self.n_rows {
            pattern.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                if acc[j] != 0.0 {
                    col_indices.push(j);
                    values.push(acc[j]);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows: self.n_rows,
            n_cols: n,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zeros(self.n_rows, self.n_cols);
        }
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= s;
        }
        m
    }

    /// `diag(d) * self`
    pub fn scale_rows(&self, d: &[f64]) -> Result<Self> {
        check_dim("scale_rows", self.n_rows, d.len())?;
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                triplets.push((i, j, d[i] * v));
            }
        }
        Self::from_triplets(self.n_rows, self.n_cols, &triplets)
    }

    /// `a * x + b * y`, merged row by row.
    pub fn linear_combination(a: f64, x: &SparseMatrix, b: f64, y: &SparseMatrix) -> Result<Self> {
        check_dim("linear_combination rows", x.n_rows, y.n_rows)?;
        check_dim("linear_combination cols", x.n_cols, y.n_cols)?;
        let mut row_offsets = Vec::with_capacity(x.n_rows + 1);
        let mut col_indices = Vec::with_capacity(x.nnz().max(y.nnz()));
        let mut values = Vec::with_capacity(x.nnz().max(y.nnz()));
        row_offsets.push(0);
        for i in 0..x.n_rows {
            let mut xs = x.row(i).peekable();
            let mut ys = y.row(i).peekable();
            loop {
                let (col, v) = match (xs.peek().copied(), ys.peek().copied()) {
                    (None, None) => break,
                    (Some((cx, vx)), None) => {
                        xs.next();
                        (cx, a * vx)
                    }
                    (None, Some((cy, vy))) => {
                        ys.next();
                        (cy, b * vy)
                    }
                    (Some((cx, vx)), Some((cy, vy))) => {
                        if cx < cy {
                            xs.next();
                            (cx, a * vx)
                        } else if cy < cx {
                            ys.next();
                            (cy, b * vy)
                        } else {
                            xs.next();
                            ys.next();
                            (cx, a * vx + b * vy)
                        }
                    }
                };
                if v != 0.0 {
                    col_indices.push(col);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows: x.n_rows,
            n_cols: x.n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &SparseMatrix) -> Result<f64> {
        let d = Self::linear_combination(1.0, self, -1.0, other)?;
        Ok(d.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Symmetry defect `max |a_ij - a_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        if self.n_rows != self.n_cols {
            return f64::INFINITY;
        }
        self.max_abs_diff(&self.transpose()).unwrap_or(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.n_rows + 1 {
            return Err(Error::InvalidInput("row_offsets must have n_rows + 1 entries".into()));
        }
        if self.row_offsets[0] != 0 || *self.row_offsets.last().unwrap() != self.values.len() {
            return Err(Error::InvalidInput("row_offsets must start at 0 and end at nnz".into()));
        }
        if self.col_indices.len() != self.values.len() {
            return Err(Error::InvalidInput("col_indices and values differ in length".into()));
        }
        for i in 0..self.n_rows {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::InvalidInput(format!("row_offsets decrease at row {i}")));
            }
            for k in lo..hi {
                if self.col_indices[k] >= self.n_cols {
                    return Err(Error::InvalidInput(format!("column index out of range in row {i}")));
                }
                if k > lo && self.col_indices[k] <= self.col_indices[k - 1] {
                    return Err(Error::InvalidInput(format!("columns not strictly increasing in row {i}")));
                }
                if self.values[k] == 0.0 {
                    return Err(Error::InvalidInput(format!("explicit zero stored in row {i}")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SparseMatrix {
        SparseMatrix::from_triplets(
            3,
            4,
            &[(0, 3, 1.0), (0, 1, 2.0), (2, 0, -1.0), (0, 1, 0.5), (1, 2, 0.0), (2, 2, 3.0)],
        )
        .unwrap()
    }

    #[test]
    fn triplets_are_canonicalized() {
        let m = sample();
        m.validate().unwrap();
        assert_eq!(m.row_offsets(), &[0, 2, 2, 4]);
        assert_eq!(m.col_indices(), &[1, 3, 0, 2]);
        assert_eq!(m.values(), &[2.5, 1.0, -1.0, 3.0]);
    }

    #[test]
    fn cancelling_duplicates_are_dropped() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, -1.0), (1, 1, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn matmul_matches_dense() {
        let a = sample();
        let b = a.transpose();
        let c = a.matmul(&b).unwrap();
        let dense = a.to_dense() * b.to_dense();
        assert_eq!(c.to_dense(), dense);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn from_csr_rejects_unsorted_rows() {
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 1], vec![1], vec![0.0]).is_err());
    }

    fn arb_triplets() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, f64)>)> {
        (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
            (
                Just(r),
                Just(c),
                prop::collection::vec((0..r, 0..c, -5.0f64..5.0), 0..30),
            )
        })
    }

    proptest! {
        #[test]
        fn transpose_twice_is_identity((r, c, t) in arb_triplets()) {
            let m = SparseMatrix::from_triplets(r, c, &t).unwrap();
            prop_assert_eq!(m.transpose().transpose(), m.clone());
            m.transpose().validate().unwrap();
        }

        #[test]
        fn linear_combination_matches_dense((r, c, t) in arb_triplets(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let x = SparseMatrix::from_triplets(r, c, &t).unwrap();
            let y = x.transpose().transpose().scaled(0.5);
            let z = SparseMatrix::linear_combination(a, &x, b, &y).unwrap();
            z.validate().unwrap();
            let dense = x.to_dense() * a + y.to_dense() * b;
            prop_assert!((z.to_dense() - dense).amax() < 1e-12);
        }
    }
}
