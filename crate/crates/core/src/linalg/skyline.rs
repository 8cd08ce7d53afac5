//! Envelope (skyline) Cholesky factorization for sparse SPD matrices,
//! preceded by a reverse Cuthill–McKee reordering to shrink the profile.

use std::collections::VecDeque;

use crate::linalg::dense::dot;
use crate::linalg::sparse::CsrMatrix;
use crate::scalar::Real;

/// Reverse Cuthill–McKee ordering of a structurally symmetric matrix.
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee<T: Real>(m: &CsrMatrix<T>) -> Vec<usize> {
    let n = m.rows();
    let degree: Vec<usize> = (0..n).map(|i| m.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    while order.len() < n {
        // lowest-degree unvisited vertex seeds the next component
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        let start = pseudo_peripheral(m, start, &degree);
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = m.row(v).0.iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels<T: Real>(m: &CsrMatrix<T>, start: usize) -> (Vec<usize>, usize) {
    let n = m.rows();
    let mut level = vec![usize::MAX; n];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &u in m.row(v).0 {
            if level[u] == usize::MAX {
                level[u] = level[v] + 1;
                queue.push_back(u);
            }
        }
    }
    (level, last)
}

fn pseudo_peripheral<T: Real>(m: &CsrMatrix<T>, start: usize, degree: &[usize]) -> usize {
    let mut current = start;
    let (mut level, _) = bfs_levels(m, current);
    let mut ecc = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
    for _ in 0..8 {
        let candidate = (0..m.rows())
            .filter(|&i| level[i] == ecc)
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        let (cand_level, _) = bfs_levels(m, candidate);
        let cand_ecc = cand_level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if cand_ecc <= ecc {
            break;
        }
        current = candidate;
        level = cand_level;
        ecc = cand_ecc;
    }
    current
}

/// Cholesky factor stored row-by-row over each row's envelope.
#[derive(Clone, Debug)]
pub struct SkylineCholesky<T> {
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SkylineCholesky<T> {
    /// Factors a symmetric positive definite sparse matrix. Returns `None`
    /// on a non-positive pivot.
    pub fn factor(m: &CsrMatrix<T>) -> Option<Self> {
        let n = m.rows();
        assert_eq!(m.cols(), n);
        let perm = reverse_cuthill_mckee(m);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut first = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            first[new] = m.row(old).0.iter().map(|&j| inv_perm[j]).filter(|&j| j <= new).min().unwrap_or(new);
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + (i - first[i] + 1);
        }
        let mut values = vec![T::zero(); offsets[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (idx, vals) = m.row(old);
            for (&j, &v) in idx.iter().zip(vals) {
                let nj = inv_perm[j];
                if nj <= new {
                    values[offsets[new] + nj - first[new]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let start = fi.max(fj);
                let (before, row_i_and_after) = values.split_at_mut(offsets[i]);
                let row_i = &mut row_i_and_after[..i - fi + 1];
                let s = if j == i {
                    let seg = &row_i[start - fi..j - fi];
                    row_i[j - fi] - dot(seg, seg)
                } else {
                    let row_j = &before[offsets[j]..offsets[j + 1]];
                    row_i[j - fi] - dot(&row_i[start - fi..j - fi], &row_j[start - fj..j - fj])
                };
                if j == i {
                    if !(s > T::zero()) || !s.is_finite() {
                        return None;
                    }
                    row_i[i - fi] = s.sqrt();
                } else {
                    let pivot = before[offsets[j + 1] - 1];
                    row_i[j - fi] = s / pivot;
                }
            }
        }
        Some(Self {
            perm,
            inv_perm,
            first,
            offsets,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Stored envelope size, useful for diagnosing fill.
    pub fn envelope_len(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y: Vec<T> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.offsets[i]..self.offsets[i + 1]];
            let s = y[i] - dot(&row[..i - fi], &y[fi..i]);
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.offsets[i]..self.offsets[i + 1]];
            y[i] = y[i] / row[i - fi];
            let yi = y[i];
            for (k, &l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        (0..n).map(|old| y[self.inv_perm[old]]).collect()
    }
}
