use crate::linalg::dense::Matrix;
use crate::scalar::Real;

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Assembles from `(row, col, value)` triplets. Duplicates are summed in
    /// the order they were pushed, so two triplet streams with identical
    /// per-entry contribution order produce bitwise identical entries.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (idx, vals) = self.row(i);
        match idx.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => T::zero(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let (idx, vals) = self.row(i);
                idx.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `self * dense`
    pub fn mul_dense(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(x.rows(), self.cols);
        let c = x.cols();
        let mut out = Matrix::zeros(self.rows, c);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&j, &v) in idx.iter().zip(vals) {
                for (o, &xv) in out_row.iter_mut().zip(x.row(j)) {
                    *o += v * xv;
                }
            }
        }
        out
    }

    /// `xᵀ self x`
    pub fn quadratic_form(&self, x: &[T]) -> T {
        crate::linalg::dense::dot(x, &self.mul_vec(x))
    }

    /// `tr(Xᵀ self X)`
    pub fn trace_quadratic(&self, x: &Matrix<T>) -> T {
        let wx = self.mul_dense(x);
        crate::linalg::dense::dot(x.as_slice(), wx.as_slice())
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `self + alpha * diag(d)`; the sparsity pattern must contain the diagonal.
    pub fn add_diagonal(&self, alpha: T, d: &[T]) -> Self {
        assert_eq!(d.len(), self.rows);
        let mut out = self.clone();
        for i in 0..self.rows {
            let (s, e) = (out.indptr[i], out.indptr[i + 1]);
            let p = out.indices[s..e]
                .binary_search(&i)
                .expect("diagonal entry missing from sparsity pattern");
            out.values[s + p] += alpha * d[i];
        }
        out
    }

    /// Entries with `|v| > 0` strictly below the diagonal of a symmetric
    /// pattern, i.e. the undirected edges.
    pub fn lower_pattern(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (idx, vals) = self.row(i);
            idx.iter()
                .zip(vals)
                .filter(move |(&j, _)| j < i)
                .map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn is_symmetric_exact(&self) -> bool {
        (0..self.rows).all(|i| {
            let (idx, vals) = self.row(i);
            idx.iter().zip(vals).all(|(&j, &v)| self.get(j, i) == v)
        })
    }
}
