//! Laplace–Beltrami eigenbasis of a mesh and the spectral operators built
//! on it (projection, reconstruction, heat diffusion).
//!
//! The smallest eigenpairs of `W φ = λ A φ` are computed by shift-invert
//! Lanczos on `S = (W − σA)⁻¹A`, which is self-adjoint in the `A` inner
//! product. Each Lanczos run finds at most one vector per eigenspace, so
//! converged vectors are locked and the iteration restarts in their
//! `A`-orthogonal complement until a run finds nothing below the current
//! `k`-th eigenvalue. That handles the exact degeneracies of symmetric
//! meshes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::dense::{dot, matmul_slices};
use crate::linalg::{symmetric_eigen, tridiagonal_eigen, CsrMatrix, Matrix, SkylineCholesky};
use crate::mesh::LaplacianPair;
use crate::scalar::Real;

/// Relative pencil residual a Ritz pair must reach to be locked.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

/// Total Lanczos steps allowed per requested eigenpair.
pub const STEPS_PER_EIGENPAIR: usize = 50;

const START_SEED: u64 = 0x5eed_1a9c;

/// First `k` generalized eigenpairs, `A`-orthonormal, ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBasis<T> {
    eigenvalues: Vec<T>,
    eigenfunctions: Matrix<T>,
    mass: Vec<T>,
    /// `A Φ`, so that `Φᵀ A X = (AΦ)ᵀ X`.
    weighted: Matrix<T>,
}

impl<T: Real> SpectralBasis<T> {
    pub fn new(eigenvalues: Vec<T>, eigenfunctions: Matrix<T>, mass: Vec<T>) -> Result<Self> {
        if eigenfunctions.cols() != eigenvalues.len() {
            return Err(Error::dims("SpectralBasis", eigenvalues.len(), eigenfunctions.cols()));
        }
        if eigenfunctions.rows() != mass.len() {
            return Err(Error::dims("SpectralBasis", mass.len(), eigenfunctions.rows()));
        }
        let weighted = eigenfunctions.scale_rows(&mass);
        Ok(Self {
            eigenvalues,
            eigenfunctions,
            mass,
            weighted,
        })
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// `Φ`, `n × k`.
    pub fn eigenfunctions(&self) -> &Matrix<T> {
        &self.eigenfunctions
    }

    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    /// `AΦ`, `n × k`; its transpose is the mass-weighted pseudo-inverse `Φ†`.
    pub fn mass_weighted(&self) -> &Matrix<T> {
        &self.weighted
    }

    pub fn total_area(&self) -> T {
        self.mass.iter().copied().sum()
    }

    /// Leading `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.k() {
            return Err(Error::dims("truncated", format!("k <= {}", self.k()), k));
        }
        Self::new(
            self.eigenvalues[..k].to_vec(),
            self.eigenfunctions.leading_columns(k),
            self.mass.clone(),
        )
    }

    /// `ΦᵀA · signal`, `k × c`.
    pub fn project(&self, signal: &Matrix<T>) -> Result<Matrix<T>> {
        if signal.rows() != self.num_vertices() {
            return Err(Error::dims("project", format!("{} rows", self.num_vertices()), signal.rows()));
        }
        Ok(self.weighted.tr_matmul(signal))
    }

    /// `Φ · coeffs`, `n × c`.
    pub fn unproject(&self, coeffs: &Matrix<T>) -> Result<Matrix<T>> {
        if coeffs.rows() != self.k() {
            return Err(Error::dims("unproject", format!("{} rows", self.k()), coeffs.rows()));
        }
        Ok(self.eigenfunctions.matmul(coeffs))
    }

    /// Per-channel heat diffusion `Φ diag(exp(−Λ t_j)) ΦᵀA x_j`.
    pub fn diffuse(&self, signal: &Matrix<T>, times: &[T]) -> Result<Matrix<T>> {
        if times.len() != signal.cols() {
            return Err(Error::dims("diffuse", format!("{} times", signal.cols()), times.len()));
        }
        if let Some(t) = times.iter().find(|t| !(**t >= T::zero())) {
            return Err(Error::InvalidInput(format!("diffusion time must be >= 0, got {t}")));
        }
        let coeffs = self.project(signal)?;
        let filtered = Matrix::from_fn(self.k(), signal.cols(), |l, j| {
            (-self.eigenvalues[l] * times[j]).exp() * coeffs[(l, j)]
        });
        self.unproject(&filtered)
    }

    /// `‖ΦᵀAΦ − I‖_max`
    pub fn orthonormality_error(&self) -> T {
        let gram = self.weighted.tr_matmul(&self.eigenfunctions);
        gram.max_abs_diff(&Matrix::identity(self.k()))
    }

    /// `‖WΦ − AΦΛ‖_F / ‖WΦ‖_F`
    pub fn relative_residual(&self, stiffness: &CsrMatrix<T>) -> T {
        let wphi = stiffness.mul_dense(&self.eigenfunctions);
        let aphil = self.weighted.scale_cols(&self.eigenvalues);
        let denom = wphi.frobenius_norm();
        let r = wphi.sub(&aphil).frobenius_norm();
        if denom > T::zero() {
            r / denom
        } else {
            r
        }
    }
}

/// Smallest `k` eigenpairs of `W φ = λ A φ`.
pub fn eigendecompose<T: Real>(lap: &LaplacianPair<T>, k: usize) -> Result<SpectralBasis<T>> {
    let n = lap.num_vertices();
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    let w = &lap.stiffness;
    let mass = &lap.mass;
    let trace: T = w.diagonal().into_iter().sum();
    let sigma = -T::lit(1e-8) * trace / T::lit(n as f64);
    let shifted = w.add_diagonal(-sigma, mass);
    let chol = SkylineCholesky::factor(&shifted)
        .ok_or_else(|| Error::ConvergenceFailure("shifted stiffness matrix is not positive definite".into()))?;
    let w_norm = (0..n)
        .map(|i| w.row(i).1.iter().map(|v| v.abs()).sum::<T>())
        .fold(T::zero(), T::max);

    let solver = Lanczos {
        w,
        mass,
        chol: &chol,
        sigma,
        tol: T::lit(RESIDUAL_TOLERANCE) * w_norm,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut locked = Locked::new(n);
    let cap = STEPS_PER_EIGENPAIR * k;
    let mut steps = 0usize;

    loop {
        let complement = n - locked.len();
        if complement == 0 {
            break;
        }
        let verifying = locked.len() >= k;
        let want = if verifying { 1 } else { k - locked.len() };
        let threshold = if verifying { Some(locked.kth_smallest(k)) } else { None };
        let run = solver.run(&locked, want, complement.min(cap.saturating_sub(steps)), &mut rng);
        steps += run.steps;
        let found_below = run
            .converged
            .iter()
            .any(|(lam, _)| threshold.is_none_or(|t| *lam < t - t.abs() * T::lit(1e-10)));
        let converged_any = !run.converged.is_empty();
        for (lam, v) in run.converged {
            locked.push(lam, v, mass);
        }
        if verifying && converged_any && !found_below {
            break;
        }
        if steps >= cap {
            if locked.len() >= k {
                log::warn!("eigensolver step cap reached during verification; accepting {} locked pairs", locked.len());
                break;
            }
            return Err(Error::ConvergenceFailure(format!(
                "{} of {k} eigenpairs converged after {steps} Lanczos steps",
                locked.len()
            )));
        }
    }
    if locked.len() < k {
        return Err(Error::ConvergenceFailure(format!("only {} of {k} eigenpairs found", locked.len())));
    }
    finalize(w, mass, locked, k)
}

struct Lanczos<'a, T> {
    w: &'a CsrMatrix<T>,
    mass: &'a [T],
    chol: &'a SkylineCholesky<T>,
    sigma: T,
    tol: T,
}

struct RunResult<T> {
    converged: Vec<(T, Vec<T>)>,
    steps: usize,
}

/// Locked `A`-orthonormal eigenvectors, stored row-wise.
struct Locked<T> {
    n: usize,
    values: Vec<T>,
    vectors: Vec<T>,
    /// `A v` for each locked `v`.
    weighted: Vec<T>,
}

impl<T: Real> Locked<T> {
    fn new(n: usize) -> Self {
        Self {
            n,
            values: Vec::new(),
            vectors: Vec::new(),
            weighted: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.values.len()
    }

    fn kth_smallest(&self, k: usize) -> T {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[k - 1]
    }

    fn push(&mut self, value: T, mut v: Vec<T>, mass: &[T]) {
        for _ in 0..2 {
            orthogonalize(&mut v, &self.vectors, &self.weighted, self.n);
        }
        let nrm = a_norm(&v, mass);
        if !(nrm > T::lit(1e-6)) {
            // already spanned by the locked set
            return;
        }
        v.iter_mut().for_each(|x| *x /= nrm);
        self.weighted.extend(v.iter().zip(mass).map(|(&x, &m)| x * m));
        self.vectors.extend(v);
        self.values.push(value);
    }
}

fn a_norm<T: Real>(v: &[T], mass: &[T]) -> T {
    v.iter().zip(mass).map(|(&x, &m)| x * x * m).sum::<T>().sqrt()
}

/// One classical Gram–Schmidt pass of `v` against rows of `basis` in the `A`
/// inner product (`weighted` holds the rows premultiplied by `A`).
fn orthogonalize<T: Real>(v: &mut [T], basis: &[T], weighted: &[T], n: usize) {
    let p = basis.len() / n;
    if p == 0 {
        return;
    }
    let coeffs = matmul_slices(p, n, 1, weighted, v);
    let correction = matmul_slices(1, p, n, &coeffs, basis);
    for (x, c) in v.iter_mut().zip(correction) {
        *x -= c;
    }
}

impl<T: Real> Lanczos<'_, T> {
    fn run(&self, locked: &Locked<T>, want: usize, max_steps: usize, rng: &mut ChaCha8Rng) -> RunResult<T> {
        let n = self.mass.len();
        let mut v: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
        for _ in 0..2 {
            orthogonalize(&mut v, &locked.vectors, &locked.weighted, n);
        }
        let nrm = a_norm(&v, self.mass);
        if !(nrm > T::zero()) || max_steps == 0 {
            return RunResult {
                converged: Vec::new(),
                steps: 0,
            };
        }
        v.iter_mut().for_each(|x| *x /= nrm);

        let mut basis: Vec<T> = Vec::new();
        let mut weighted: Vec<T> = Vec::new();
        let mut alpha: Vec<T> = Vec::new();
        let mut beta: Vec<T> = Vec::new();
        let mut next_check = (want + 10).min(max_steps);
        let mut last_count = 0usize;

        for j in 0..max_steps {
            let av: Vec<T> = v.iter().zip(self.mass).map(|(&x, &m)| x * m).collect();
            let mut w = self.chol.solve(&av);
            let a_j = dot(&w, &av);
            for (wi, &vi) in w.iter_mut().zip(&v) {
                *wi -= a_j * vi;
            }
            if j > 0 {
                let b = beta[j - 1];
                let prev = &basis[(j - 1) * n..j * n];
                for (wi, &pi) in w.iter_mut().zip(prev) {
                    *wi -= b * pi;
                }
            }
            basis.extend_from_slice(&v);
            weighted.extend_from_slice(&av);
            alpha.push(a_j);
            for _ in 0..2 {
                orthogonalize(&mut w, &locked.vectors, &locked.weighted, n);
                orthogonalize(&mut w, &basis, &weighted, n);
            }
            let b_j = a_norm(&w, self.mass);
            let m = j + 1;
            let breakdown = !(b_j > T::lit(1e-12) * a_j.abs().max(T::min_positive_value()));
            if m == next_check || m == max_steps || breakdown {
                let converged = self.ritz(&basis, &alpha, &beta, if breakdown { T::zero() } else { b_j }, want, n);
                let top_done = converged.len() >= want.min(m);
                // a single Krylov sequence only sees one direction of each
                // degenerate eigenspace: lock and restart once progress stalls
                let stalled = !converged.is_empty() && converged.len() <= last_count;
                if top_done || stalled || breakdown || m == max_steps {
                    return RunResult { converged, steps: m };
                }
                last_count = converged.len();
                next_check = (m + 5.max(m / 4)).min(max_steps);
            }
            beta.push(b_j);
            v = w.into_iter().map(|x| x / b_j).collect();
        }
        RunResult {
            converged: Vec::new(),
            steps: max_steps,
        }
    }

    /// Converged Ritz pairs among the largest Ritz values of `S` (smallest
    /// pencil eigenvalues). Stops scanning at the first unconverged value
    /// once `want` candidates have been examined.
    fn ritz(&self, basis: &[T], alpha: &[T], beta: &[T], b_last: T, want: usize, n: usize) -> Vec<(T, Vec<T>)> {
        let m = alpha.len();
        let eig = match tridiagonal_eigen(alpha, beta) {
            Some(e) => e,
            None => return Vec::new(),
        };
        let mut out = Vec::new();
        let prefilter = T::lit(1e-4);
        for idx in (0..m).rev() {
            let theta = eig.values[idx];
            let s = &eig.vectors[idx];
            let estimate = (b_last * s[m - 1]).abs();
            let examined = m - idx;
            if !(theta > T::zero()) {
                break;
            }
            let scale = theta.abs().max(T::min_positive_value());
            if estimate / scale > prefilter {
                if examined > want {
                    break;
                }
                continue;
            }
            let y = matmul_slices(1, m, n, s, basis);
            let lambda = self.sigma + T::one() / theta;
            let wy = self.w.mul_vec(&y);
            let res: T = wy
                .iter()
                .zip(&y)
                .zip(self.mass)
                .map(|((&a, &b), &mm)| {
                    let r = a - lambda * mm * b;
                    r * r
                })
                .sum::<T>()
                .sqrt();
            let ynorm = dot(&y, &y).sqrt();
            if res <= self.tol * ynorm {
                out.push((lambda, y));
            } else if examined > want {
                break;
            }
        }
        out
    }
}

/// Rayleigh–Ritz over the locked vectors, then sorting, truncation and sign
/// normalization.
fn finalize<T: Real>(w: &CsrMatrix<T>, mass: &[T], locked: Locked<T>, k: usize) -> Result<SpectralBasis<T>> {
    let n = mass.len();
    // one more orthonormalization pass over the whole locked set
    let mut rows = Locked::new(n);
    for (i, &value) in locked.values.iter().enumerate() {
        rows.push(value, locked.vectors[i * n..(i + 1) * n].to_vec(), mass);
    }
    let p = rows.len();
    if p < k {
        return Err(Error::ConvergenceFailure(format!("only {p} independent eigenvectors for k = {k}")));
    }
    let basis = Matrix::from_vec(p, n, rows.vectors);
    let mut wb = Matrix::zeros(p, n);
    for r in 0..p {
        let wr = w.mul_vec(basis.row(r));
        wb.row_mut(r).copy_from_slice(&wr);
    }
    let h = basis.matmul_tr(&wb);
    let h = Matrix::from_fn(p, p, |i, j| (h[(i, j)] + h[(j, i)]) * T::lit(0.5));
    let eig = symmetric_eigen(&h).ok_or_else(|| Error::ConvergenceFailure("Rayleigh-Ritz eigensolve failed".into()))?;
    let q = eig.vector_matrix();
    let vectors = q.tr_matmul(&basis); // p × n, row i = eigenvector i

    let lambda_max = eig.values.iter().copied().fold(T::zero(), T::max);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut phi = Matrix::zeros(n, k);
    for col in 0..k {
        let mut lam = eig.values[col];
        if lam < T::zero() && lam.abs() <= T::lit(1e-10) * lambda_max {
            lam = T::zero();
        }
        eigenvalues.push(lam);
        let v = vectors.row(col);
        let vmax = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let cutoff = vmax * T::lit(1e-8);
        let sign = match v.iter().find(|x| x.abs() > cutoff) {
            Some(x) if *x < T::zero() => -T::one(),
            _ => T::one(),
        };
        for i in 0..n {
            phi[(i, col)] = sign * v[i];
        }
    }
    let basis = SpectralBasis::new(eigenvalues, phi, mass.to_vec())?;
    let residual = basis.relative_residual(w);
    if !(residual <= T::lit(1e-6)) {
        return Err(Error::ConvergenceFailure(format!("final relative residual {residual:e} exceeds 1e-6")));
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{compute_laplacian, primitives};

    #[test]
    fn constant_mode_first() {
        let mesh = primitives::icosphere::<f64>(2);
        let lap = compute_laplacian(&mesh).unwrap();
        let basis = eigendecompose(&lap, 12).unwrap();
        let ev = basis.eigenvalues();
        assert!(ev[0] <= 1e-6 * ev[11]);
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        let c = 1.0 / lap.total_area.sqrt();
        for i in 0..mesh.num_vertices() {
            assert!((basis.eigenfunctions()[(i, 0)] - c).abs() < 1e-8);
        }
        assert!(basis.orthonormality_error() < 1e-8);
        assert!(basis.relative_residual(&lap.stiffness) < 1e-6);
    }

    #[test]
    fn rejects_k_too_large() {
        let lap = compute_laplacian(&primitives::octahedron::<f64>()).unwrap();
        assert!(matches!(eigendecompose(&lap, 6), Err(Error::KTooLarge { k: 6, n: 6 })));
        assert!(eigendecompose(&lap, 5).is_ok());
    }

    #[test]
    fn deterministic() {
        let lap = compute_laplacian(&primitives::icosphere::<f64>(1)).unwrap();
        let a = eigendecompose(&lap, 10).unwrap();
        let b = eigendecompose(&lap, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diffuse_limits() {
        let mesh = primitives::radial_bumps(&primitives::icosphere::<f64>(1), 0.2, 4, 1);
        let lap = compute_laplacian(&mesh).unwrap();
        let basis = eigendecompose(&lap, 8).unwrap();
        let signal = Matrix::from_fn(mesh.num_vertices(), 2, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let lowpass = basis.unproject(&basis.project(&signal).unwrap()).unwrap();
        let at_zero = basis.diffuse(&signal, &[0.0, 0.0]).unwrap();
        assert!(at_zero.max_abs_diff(&lowpass) < 1e-12);

        let t = 1e6 / basis.eigenvalues()[1];
        let far = basis.diffuse(&signal, &[t, t]).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..mesh.num_vertices()).map(|i| signal[(i, j)] * lap.mass[i]).sum::<f64>() / lap.total_area;
            for i in 0..mesh.num_vertices() {
                assert!((far[(i, j)] - mean).abs() < 1e-9);
            }
        }
        assert!(basis.diffuse(&signal, &[0.1]).is_err());
        assert!(basis.diffuse(&signal, &[-1.0, 0.1]).is_err());
    }
}
