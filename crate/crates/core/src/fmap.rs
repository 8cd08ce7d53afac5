//! Regularized functional-map estimation from descriptors.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::dense::gemm;
use crate::linalg::{DenseCholesky, Matrix};
use crate::scalar::Real;
use crate::spectral::SpectralBasis;

/// Row systems with a pivot-ratio condition estimate above this are retried
/// with jitter.
pub const MAX_CONDITION: f64 = 1e14;
const JITTER_START: f64 = 1e-12;
const JITTER_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// Squared difference of normalized eigenvalues.
    Commutativity,
    /// Distance between eigenvalues mapped onto the resolvent circle.
    Resolvent,
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "commutativity" => Ok(Self::Commutativity),
            "resolvent" => Ok(Self::Resolvent),
            other => Err(Error::InvalidInput(format!(
                "unknown mask kind {other:?} (expected commutativity or resolvent)"
            ))),
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Commutativity => "commutativity",
            Self::Resolvent => "resolvent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub mask_kind: MaskKind,
    pub resolvent_gamma: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            mask_kind: MaskKind::Resolvent,
            resolvent_gamma: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.resolvent_gamma > 0.0 && self.resolvent_gamma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "resolvent_gamma must be positive, got {}",
                self.resolvent_gamma
            )));
        }
        Ok(())
    }
}

/// Functional map `C` taking spectral coefficients on `source` to
/// coefficients on `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap<T> {
    pub matrix: Matrix<T>,
    pub source: String,
    pub target: String,
}

/// `k × k` penalty weights for a map from the `M` spectrum (columns) to the
/// `N` spectrum (rows).
pub fn commutativity_mask<T: Real>(evals_m: &[T], evals_n: &[T], kind: MaskKind, gamma: f64) -> Result<Matrix<T>> {
    if evals_m.len() != evals_n.len() || evals_m.is_empty() {
        return Err(Error::dims("mask spectra", evals_m.len(), evals_n.len()));
    }
    let k = evals_m.len();
    let top = |ev: &[T]| ev.iter().copied().fold(T::zero(), T::max).max(T::min_positive_value());
    let mask = match kind {
        MaskKind::Commutativity => {
            let (sm, sn) = (top(evals_m), top(evals_n));
            Matrix::from_fn(k, k, |i, j| {
                let d = evals_n[i] / sn - evals_m[j] / sm;
                d * d
            })
        }
        MaskKind::Resolvent => {
            let scale = top(evals_m).max(top(evals_n));
            let gamma = T::lit(gamma);
            // 1 / (1 + i x) with x = (λ / λ_max)^γ
            let circle = |l: T| {
                let x = (l.max(T::zero()) / scale).powf(gamma);
                let d = T::one() + x * x;
                (T::one() / d, -x / d)
            };
            let rn: Vec<(T, T)> = evals_n.iter().map(|&l| circle(l)).collect();
            let rm: Vec<(T, T)> = evals_m.iter().map(|&l| circle(l)).collect();
            Matrix::from_fn(k, k, |i, j| {
                let (dr, di) = (rn[i].0 - rm[j].0, rn[i].1 - rm[j].1);
                dr * dr + di * di
            })
        }
    };
    Ok(mask)
}

/// Solves `min_C ‖C A − B‖² + λ Σ M_ij C_ij²` row by row and keeps the
/// factorizations for the adjoint.
fn solve_rows<T: Real>(a: &Matrix<T>, b: &Matrix<T>, mask: &Matrix<T>, lambda: T) -> Result<(Matrix<T>, Vec<DenseCholesky<T>>)> {
    let k = a.rows();
    let gram = a.matmul_tr(a);
    let rhs = a.matmul_tr(b); // column i is A b_i
    let mut c = Matrix::zeros(k, k);
    let mut factors = Vec::with_capacity(k);
    let mut system = gram.clone();
    for i in 0..k {
        system.as_mut_slice().copy_from_slice(gram.as_slice());
        for j in 0..k {
            system[(j, j)] += lambda * mask[(i, j)];
        }
        let chol = factor_with_jitter(&mut system, i)?;
        let x = chol.solve(&rhs.column(i));
        c.row_mut(i).copy_from_slice(&x);
        factors.push(chol);
    }
    if !c.is_finite() {
        return Err(Error::NonFinite("functional map"));
    }
    Ok((c, factors))
}

fn factor_with_jitter<T: Real>(system: &mut Matrix<T>, row: usize) -> Result<DenseCholesky<T>> {
    let max_cond = T::lit(MAX_CONDITION);
    let scale = system.trace().abs().max(T::min_positive_value());
    let mut added = T::zero();
    let mut jitter = JITTER_START;
    let mut last_condition = f64::INFINITY;
    loop {
        if let Some(chol) = DenseCholesky::factor(system) {
            let cond = chol.condition_estimate();
            if cond <= max_cond {
                if added > T::zero() {
                    log::debug!("row {row} system regularized with jitter {:e}", added.to_f64_lossless());
                }
                return Ok(chol);
            }
            last_condition = cond.to_f64_lossless();
        }
        if jitter > JITTER_LIMIT * 1.0001 {
            return Err(Error::SingularSystem {
                row,
                condition: last_condition,
            });
        }
        let target = T::lit(jitter) * scale;
        let n = system.rows();
        for j in 0..n {
            system[(j, j)] += target - added;
        }
        added = target;
        jitter *= 10.0;
    }
}

struct RowSolveAdjoint<T> {
    factors: Vec<DenseCholesky<T>>,
}

impl<T: Real> CustomOp<T> for RowSolveAdjoint<T> {
    fn backward(
        &self,
        grad: &Matrix<T>,
        inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Matrix<T>>>> {
        let (a, b, c) = (inputs[0], inputs[1], output);
        let k = c.rows();
        // u_i = S_i⁻¹ g_i, stacked as rows of U
        let mut u = Matrix::zeros(k, k);
        for (i, chol) in self.factors.iter().enumerate() {
            let x = chol.solve(grad.row(i));
            u.row_mut(i).copy_from_slice(&x);
        }
        let ga = if needs[0] {
            // Uᵀ B − (Uᵀ C + Cᵀ U) A
            let utc = gemm(T::one(), &u, true, c, false);
            let sym = utc.add(&utc.transpose());
            Some(gemm(T::one(), &u, true, b, false).sub(&sym.matmul(a)))
        } else {
            None
        };
        let gb = needs[1].then(|| u.matmul(a));
        Ok(vec![ga, gb])
    }
}

/// Differentiable solve on already projected descriptors `A` (of `M`) and
/// `B` (of `N`), both `k × c`. Returns `C` (`k × k`) with `C A ≈ B`.
pub fn solve_projected<T: Real>(tape: &mut Tape<T>, a: Var, b: Var, mask: &Matrix<T>, lambda: f64) -> Result<Var> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb || mask.shape() != (sa.0, sa.0) {
        return Err(Error::dims(
            "functional map solve",
            format!("A, B {}x{} and mask {}x{}", sa.0, sa.1, sa.0, sa.0),
            format!("B {}x{}, mask {}x{}", sb.0, sb.1, mask.rows(), mask.cols()),
        ));
    }
    if sa.1 == 0 {
        return Err(Error::InvalidInput("descriptors need at least one channel".into()));
    }
    let (c, factors) = solve_rows(tape.value(a), tape.value(b), mask, T::lit(lambda))?;
    Ok(tape.custom(vec![a, b], c, Box::new(RowSolveAdjoint { factors })))
}

/// Differentiable `C_MN` from per-vertex features `F_M` (`n_M × c`) and
/// `F_N` (`n_N × c`).
pub fn solve_fmap_on_tape<T: Real>(
    tape: &mut Tape<T>,
    basis_m: &SpectralBasis<T>,
    basis_n: &SpectralBasis<T>,
    f_m: Var,
    f_n: Var,
    cfg: &SolverConfig,
) -> Result<Var> {
    cfg.validate()?;
    if basis_m.k() != basis_n.k() {
        return Err(Error::dims("functional map bases", basis_m.k(), basis_n.k()));
    }
    if tape.shape(f_m).1 != tape.shape(f_n).1 {
        return Err(Error::dims("feature widths", tape.shape(f_m).1, tape.shape(f_n).1));
    }
    let mask = commutativity_mask(basis_m.eigenvalues(), basis_n.eigenvalues(), cfg.mask_kind, cfg.resolvent_gamma)?;
    let a = project_on_tape(tape, basis_m, f_m)?;
    let b = project_on_tape(tape, basis_n, f_n)?;
    solve_projected(tape, a, b, &mask, cfg.lambda)
}

/// `Φᵀ A F` recorded on the tape.
pub fn project_on_tape<T: Real>(tape: &mut Tape<T>, basis: &SpectralBasis<T>, f: Var) -> Result<Var> {
    if tape.shape(f).0 != basis.num_vertices() {
        return Err(Error::dims("projection", basis.num_vertices(), tape.shape(f).0));
    }
    let weighted = tape.constant(basis.mass_weighted().clone());
    tape.matmul_t(weighted, true, f, false)
}

/// Non-differentiable convenience wrapper around [`solve_fmap_on_tape`].
pub fn solve_fmap<T: Real>(
    basis_m: &SpectralBasis<T>,
    basis_n: &SpectralBasis<T>,
    f_m: &Matrix<T>,
    f_n: &Matrix<T>,
    cfg: &SolverConfig,
) -> Result<Matrix<T>> {
    let mut tape = Tape::new();
    let (fm, fn_) = (tape.constant(f_m.clone()), tape.constant(f_n.clone()));
    let c = solve_fmap_on_tape(&mut tape, basis_m, basis_n, fm, fn_, cfg)?;
    Ok(tape.value(c).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_commutativity_entry() {
        let ev = [0.0f64, 1.0, 2.0];
        let m = commutativity_mask(&ev, &ev, MaskKind::Commutativity, 0.5).unwrap();
        assert!((m[(1, 2)] - 0.25).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(m[(i, i)], 0.0);
        }
    }

    #[test]
    fn resolvent_mask_is_nonnegative_with_zero_diagonal() {
        let em = [0.0, 0.7, 2.0, 5.5];
        let en = [0.0, 0.9, 2.5, 6.0];
        let m = commutativity_mask(&em, &en, MaskKind::Resolvent, 0.5).unwrap();
        assert!(m.as_slice().iter().all(|&x| x >= 0.0));
        let same = commutativity_mask(&em, &em, MaskKind::Resolvent, 0.5).unwrap();
        for i in 0..4 {
            assert_eq!(same[(i, i)], 0.0);
        }
        // x = 1 at λ_max: r = (1 - i)/2, r(0) = 1, |Δ|² = 1/4 + 1/4
        let ends = commutativity_mask(&[0.0f64, 6.0], &[0.0, 6.0], MaskKind::Resolvent, 0.5).unwrap();
        assert!((ends[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_rows_get_jitter() {
        // rank-one A with λ = 0: every row system is singular without jitter
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        let mask = Matrix::zeros(2, 2);
        let (c, _) = solve_rows(&a, &a, &mask, 0.0).unwrap();
        assert!(c.is_finite());
        let back = c.matmul(&a);
        assert!(back.max_abs_diff(&a) < 1e-4);
    }

    #[test]
    fn mask_kind_parses() {
        assert_eq!("resolvent".parse::<MaskKind>().unwrap(), MaskKind::Resolvent);
        assert!("laplacian".parse::<MaskKind>().is_err());
        assert_eq!(MaskKind::Commutativity.to_string(), "commutativity");
    }
}
