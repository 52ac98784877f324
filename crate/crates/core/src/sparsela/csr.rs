use super::SparseError;

/// Square matrix in compressed sparse row form.
///
/// Column indices are strictly increasing within each row. Values are
/// stored as native doubles; reduced formats only appear at kernel
/// boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if row_ptr.len() != n + 1 {
            return Err(SparseError::RowPtrLength { expected: n + 1, got: row_ptr.len() });
        }
        if col_idx.len() != values.len() {
            return Err(SparseError::LengthMismatch { cols: col_idx.len(), vals: values.len() });
        }
        if row_ptr[0] != 0
            || row_ptr[n] != col_idx.len()
            || row_ptr.windows(2).any(|w| w[0] > w[1])
        {
            return Err(SparseError::RowPtrOrder);
        }
        for row in 0..n {
            let cols = &col_idx[row_ptr[row]..row_ptr[row + 1]];
            if let Some(&col) = cols.iter().find(|&&c| c >= n) {
                return Err(SparseError::ColumnOutOfRange { col, n });
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SparseError::UnsortedRow { row });
            }
        }
        Ok(Self { n, row_ptr, col_idx, values })
    }

    /// Assemble from `(row, col, value)` triplets. Duplicates are summed in
    /// the order they were supplied; explicit zeros are kept.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SparseError> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(SparseError::ColumnOutOfRange { col: r.max(c), n });
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        // stable: duplicates keep insertion order, so summation order is fixed
        order.sort_by_key(|&i| (triplets[i].0, triplets[i].1));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for i in order {
            let (r, c, v) = triplets[i];
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::new(n, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self { n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: d.to_vec() }
    }

    /// Keeps every entry of a row-major dense matrix whose value is nonzero.
    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n, "dense matrix must be n*n");
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = dense[i * n + j];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i).unwrap_or(0.0)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[i * self.n + j] = v;
            }
        }
        d
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| (j, i, v)));
        }
        Self::from_triplets(self.n, &triplets).expect("transpose of a valid matrix")
    }

    /// Entry `(i, j)` is stored iff `(j, i)` is, with a bit-identical value.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .all(|(&j, &v)| self.get(j, i).is_some_and(|w| w.to_bits() == v.to_bits()))
        })
    }

    /// Number of stored entries strictly below and strictly above the
    /// diagonal in row `i`.
    pub fn row_split_counts(&self, i: usize) -> (usize, usize) {
        let (cols, _) = self.row(i);
        let lower = cols.iter().filter(|&&j| j < i).count();
        let upper = cols.iter().filter(|&&j| j > i).count();
        (lower, upper)
    }
}
