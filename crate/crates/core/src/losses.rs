//! Training objectives on functional and point-wise maps.

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, Matrix};
use crate::pointwise::pmap_to_fmap_on_tape;
use crate::scalar::Real;
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub bij: f64,
    pub orth: f64,
    pub couple: f64,
    pub dirichlet: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            bij: 1.0,
            orth: 1.0,
            couple: 1.0,
            dirichlet: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("bij", self.bij), ("orth", self.orth), ("couple", self.couple), ("dirichlet", self.dirichlet)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!("loss weight {name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Whether `N` covers all of `M` or only part of it. In the partial case the
/// ideal functional maps have rank `rank`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partiality {
    Full,
    Partial { rank: usize },
}

/// `round(k · area_N / area_M)` clamped to `[1, k]`.
pub fn estimate_partial_rank(k: usize, area_m: f64, area_n: f64) -> usize {
    let r = (k as f64 * area_n / area_m).round();
    if r.is_finite() {
        (r as usize).clamp(1, k.max(1))
    } else {
        k.max(1)
    }
}

fn truncated_identity<T: Real>(k: usize, rank: usize) -> Matrix<T> {
    Matrix::from_fn(k, k, |i, j| if i == j && i < rank { T::one() } else { T::zero() })
}

fn check_square(tape: &Tape<impl Real>, op: &'static str, vars: &[Var]) -> Result<usize> {
    let k = tape.shape(vars[0]).0;
    for &v in vars {
        if tape.shape(v) != (k, k) {
            return Err(Error::dims(op, format!("{k}x{k}"), format!("{:?}", tape.shape(v))));
        }
    }
    Ok(k)
}

fn target_identity<T: Real>(tape: &mut Tape<T>, k: usize, part: Partiality) -> Result<Var> {
    let rank = match part {
        Partiality::Full => k,
        Partiality::Partial { rank } if (1..=k).contains(&rank) => rank,
        Partiality::Partial { rank } => {
            return Err(Error::InvalidInput(format!("partial rank {rank} outside [1, {k}]")));
        }
    };
    Ok(tape.constant(truncated_identity(k, rank)))
}

/// `‖C_MN C_NM − I‖² + ‖C_NM C_MN − I‖²`; only the second term, against a
/// rank-`r` identity, when `N` is partial.
pub fn bijectivity_loss<T: Real>(tape: &mut Tape<T>, c_mn: Var, c_nm: Var, part: Partiality) -> Result<Var> {
    let k = check_square(tape, "bijectivity loss", &[c_mn, c_nm])?;
    let eye = target_identity(tape, k, part)?;
    let round_m = tape.matmul(c_nm, c_mn)?;
    let dm = tape.sub(round_m, eye)?;
    let lm = tape.squared_norm(dm);
    if let Partiality::Partial { .. } = part {
        return Ok(lm);
    }
    let round_n = tape.matmul(c_mn, c_nm)?;
    let dn = tape.sub(round_n, eye)?;
    let ln = tape.squared_norm(dn);
    tape.add(ln, lm)
}

/// `‖C_MNᵀ C_MN − I‖² + ‖C_NMᵀ C_NM − I‖²`; only the first term, against a
/// rank-`r` identity, when `N` is partial.
pub fn orthogonality_loss<T: Real>(tape: &mut Tape<T>, c_mn: Var, c_nm: Var, part: Partiality) -> Result<Var> {
    let k = check_square(tape, "orthogonality loss", &[c_mn, c_nm])?;
    let eye = target_identity(tape, k, part)?;
    let gram_mn = tape.matmul_t(c_mn, true, c_mn, false)?;
    let d = tape.sub(gram_mn, eye)?;
    let l_mn = tape.squared_norm(d);
    if let Partiality::Partial { .. } = part {
        return Ok(l_mn);
    }
    let gram_nm = tape.matmul_t(c_nm, true, c_nm, false)?;
    let d = tape.sub(gram_nm, eye)?;
    let l_nm = tape.squared_norm(d);
    tape.add(l_mn, l_nm)
}

/// `‖C_MN − Φ_N† Π_NM Φ_M‖²`.
pub fn coupling_loss<T: Real>(
    tape: &mut Tape<T>,
    c_mn: Var,
    pi_nm: Var,
    basis_m: &SpectralBasis<T>,
    basis_n: &SpectralBasis<T>,
) -> Result<Var> {
    let induced = pmap_to_fmap_on_tape(tape, pi_nm, basis_m, basis_n)?;
    if tape.shape(induced) != tape.shape(c_mn) {
        return Err(Error::dims("coupling loss", format!("{:?}", tape.shape(induced)), format!("{:?}", tape.shape(c_mn))));
    }
    let d = tape.sub(c_mn, induced)?;
    Ok(tape.squared_norm(d))
}

struct QuadraticForm<T> {
    stiffness: CsrMatrix<T>,
}

impl<T: Real> CustomOp<T> for QuadraticForm<T> {
    fn backward(
        &self,
        grad: &Matrix<T>,
        inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Matrix<T>>>> {
        let wy = self.stiffness.mul_dense(inputs[0]);
        Ok(vec![Some(wy.scale(T::lit(2.0) * grad.as_slice()[0]))])
    }
}

/// `tr(Yᵀ W Y)` for symmetric `W`, recorded on the tape.
pub fn quadratic_form<T: Real>(tape: &mut Tape<T>, y: Var, stiffness: &CsrMatrix<T>) -> Result<Var> {
    let (n, _) = tape.shape(y);
    if stiffness.rows() != n || stiffness.cols() != n {
        return Err(Error::dims("quadratic form", format!("{n}x{n}"), format!("{}x{}", stiffness.rows(), stiffness.cols())));
    }
    let value = stiffness.trace_quadratic(tape.value(y));
    let op = QuadraticForm {
        stiffness: stiffness.clone(),
    };
    Ok(tape.custom(vec![y], Matrix::filled(1, 1, value), Box::new(op)))
}

/// Dirichlet energy `tr((Π X_M)ᵀ W_N (Π X_M))` of the mapped coordinates.
pub fn dirichlet_loss<T: Real>(tape: &mut Tape<T>, pi_nm: Var, positions_m: &Matrix<T>, stiffness_n: &CsrMatrix<T>) -> Result<Var> {
    if tape.shape(pi_nm).1 != positions_m.rows() {
        return Err(Error::dims("dirichlet loss", positions_m.rows(), tape.shape(pi_nm).1));
    }
    let x = tape.constant(positions_m.clone());
    let y = tape.matmul(pi_nm, x)?;
    quadratic_form(tape, y, stiffness_n)
}

/// Scalar loss nodes for one pair; `dirichlet` is absent when disabled.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub bij: Var,
    pub orth: Var,
    pub couple: Var,
    pub dirichlet: Option<Var>,
}

/// Plain values of the individual terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub total: f64,
    pub bij: f64,
    pub orth: f64,
    pub couple: f64,
    pub dirichlet: f64,
}

impl LossTerms {
    pub fn values<T: Real>(&self, tape: &Tape<T>, total: Var) -> LossValues {
        let get = |v: Var| tape.scalar(v).to_f64_lossless();
        LossValues {
            total: get(total),
            bij: get(self.bij),
            orth: get(self.orth),
            couple: get(self.couple),
            dirichlet: self.dirichlet.map(get).unwrap_or(0.0),
        }
    }
}

/// Weighted sum of the terms.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, terms: &LossTerms, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let mut parts = vec![(terms.bij, weights.bij), (terms.orth, weights.orth), (terms.couple, weights.couple)];
    if let Some(d) = terms.dirichlet {
        parts.push((d, weights.dirichlet));
    }
    let mut total: Option<Var> = None;
    for (v, w) in parts {
        if tape.shape(v) != (1, 1) {
            return Err(Error::dims("total loss term", "1x1", format!("{:?}", tape.shape(v))));
        }
        let scaled = tape.scale(v, T::lit(w));
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let total = total.expect("at least three terms");
    if !tape.scalar(total).is_finite() {
        return Err(Error::NonFinite("total loss"));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms_from(tape: &mut Tape<f64>, values: [f64; 4]) -> LossTerms {
        let [bij, orth, couple, dirichlet] = values.map(|v| tape.constant(Matrix::filled(1, 1, v)));
        LossTerms {
            bij,
            orth,
            couple,
            dirichlet: Some(dirichlet),
        }
    }

    #[test]
    fn hand_evaluated_bijectivity() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::identity(3).scale(2.0));
        let b = t.constant(Matrix::identity(3));
        let l = bijectivity_loss(&mut t, a, b, Partiality::Full).unwrap();
        assert_eq!(t.scalar(l), 6.0);
    }

    #[test]
    fn zero_map_orthogonality_is_twice_k() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::<f64>::zeros(4, 4));
        let l = orthogonality_loss(&mut t, z, z, Partiality::Full).unwrap();
        assert_eq!(t.scalar(l), 8.0);
        let lp = orthogonality_loss(&mut t, z, z, Partiality::Partial { rank: 3 }).unwrap();
        assert_eq!(t.scalar(lp), 3.0);
        assert!(orthogonality_loss(&mut t, z, z, Partiality::Partial { rank: 5 }).is_err());
    }

    #[test]
    fn weighted_total() {
        let mut t = Tape::new();
        let terms = terms_from(&mut t, [0.2, 0.3, 0.1, 0.05]);
        let w = LossWeights {
            dirichlet: 5.0,
            ..LossWeights::default()
        };
        let total = total_loss(&mut t, &terms, &w).unwrap();
        assert!((t.scalar(total) - 0.85).abs() < 1e-15);
        let unit = LossTerms { dirichlet: None, ..terms_from(&mut t, [1.0; 4]) };
        let total = total_loss(&mut t, &unit, &LossWeights::default()).unwrap();
        assert_eq!(t.scalar(total), 3.0);
    }

    #[test]
    fn partial_rank_rule() {
        assert_eq!(estimate_partial_rank(200, 1.0, 1.0), 200);
        assert_eq!(estimate_partial_rank(200, 2.0, 1.0), 100);
        assert_eq!(estimate_partial_rank(10, 1e6, 1.0), 1);
        assert_eq!(estimate_partial_rank(10, 1.0, 3.0), 10);
    }
}
