use crate::linalg::dense::{axpy_slice, dot, Matrix};
use crate::scalar::Real;

/// Dense lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct DenseCholesky<T> {
    n: usize,
    // row-major, only the lower triangle is meaningful
    l: Vec<T>,
}

impl<T: Real> DenseCholesky<T> {
    /// Factors a symmetric matrix given in row-major storage. Returns `None`
    /// when a pivot is not strictly positive.
    pub fn factor(a: &Matrix<T>) -> Option<Self> {
        let n = a.rows();
        assert_eq!(a.cols(), n, "cholesky needs a square matrix");
        let mut l = a.as_slice().to_vec();
        for j in 0..n {
            let lj = &l[j * n..j * n + j];
            let s = l[j * n + j] - dot(lj, lj);
            if !(s > T::zero()) || !s.is_finite() {
                return None;
            }
            let pivot = s.sqrt();
            l[j * n + j] = pivot;
            for i in j + 1..n {
                let (upper, lower) = l.split_at_mut(i * n);
                let row_i = &mut lower[..n];
                row_i[j] = (row_i[j] - dot(&row_i[..j], &upper[j * n..j * n + j])) / pivot;
            }
        }
        Some(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.l[i * self.n + j]
    }

    /// Ratio of the largest to smallest squared pivot, a cheap lower bound on
    /// the 2-norm condition number.
    pub fn condition_estimate(&self) -> T {
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for i in 0..self.n {
            let d = self.at(i, i);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (hi / lo).powi(2)
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            b[i] = (b[i] - dot(row, &b[..i])) / self.at(i, i);
        }
        // Lᵀ x = y, sweeping rows of L so memory access stays contiguous
        for i in (0..n).rev() {
            b[i] /= self.at(i, i);
            let xi = b[i];
            axpy_slice(&mut b[..i], -xi, &self.l[i * n..i * n + i]);
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0, 0.4], vec![2.0, 5.0, 1.0], vec![0.4, 1.0, 3.0]]);
        let chol = DenseCholesky::factor(&a).unwrap();
        let x = chol.solve(&[1.0, -2.0, 0.5]);
        let back = a.matvec(&x);
        for (b, e) in back.iter().zip([1.0f64, -2.0, 0.5]) {
            assert!((b - e).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(DenseCholesky::factor(&a).is_none());
    }
}
