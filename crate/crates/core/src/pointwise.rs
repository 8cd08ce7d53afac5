//! Soft and hard point-wise maps and their conversion to functional maps.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::dense::gemm;
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::spectral::SpectralBasis;

pub const CORRESPONDENCE_HEADER: &str = "#specmatch-corr v1";

/// Row-stochastic `n_N × n_M` soft assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCorrespondence<T> {
    pub pi: Matrix<T>,
    pub tau: f64,
}

/// For every vertex of `N`, the index of its image on `M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardCorrespondence {
    target: Vec<usize>,
    target_size: usize,
}

impl HardCorrespondence {
    pub fn new(target: Vec<usize>, target_size: usize) -> Result<Self> {
        if let Some(&bad) = target.iter().find(|&&t| t >= target_size) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: target_size,
                context: "correspondence target",
            });
        }
        Ok(Self { target, target_size })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            target: (0..n).collect(),
            target_size: n,
        }
    }

    /// From a vertex relabeling `perm[old] = new`, the map sending each
    /// vertex of the original mesh to its copy in the relabeled mesh.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        Self::new(perm.to_vec(), perm.len())
    }

    pub fn targets(&self) -> &[usize] {
        &self.target
    }

    pub fn source_size(&self) -> usize {
        self.target.len()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    /// Fraction of vertices mapped to the same target as `other`.
    pub fn agreement(&self, other: &Self) -> Result<f64> {
        if self.target.len() != other.target.len() {
            return Err(Error::dims("correspondence agreement", self.target.len(), other.target.len()));
        }
        if self.target.is_empty() {
            return Ok(1.0);
        }
        let same = self.target.iter().zip(&other.target).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.target.len() as f64)
    }

    /// One-hot `n_N × n_M` matrix.
    pub fn to_matrix<T: Real>(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.target.len(), self.target_size);
        for (i, &t) in self.target.iter().enumerate() {
            m[(i, t)] = T::one();
        }
        m
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{CORRESPONDENCE_HEADER} nN={} nM={}", self.target.len(), self.target_size)?;
        for t in &self.target {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(r: impl BufRead, location: Option<&Path>) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::parse(location, "empty correspondence file"))?;
        let rest = header
            .strip_prefix(CORRESPONDENCE_HEADER)
            .ok_or_else(|| Error::parse(location, format!("expected header {CORRESPONDENCE_HEADER:?}, found {header:?}")))?;
        let mut n_n = None;
        let mut n_m = None;
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::parse(location, format!("malformed header field {field:?}")))?;
            let value: usize = value
                .parse()
                .map_err(|_| Error::parse(location, format!("header field {key} is not a count: {value:?}")))?;
            match key {
                "nN" => n_n = Some(value),
                "nM" => n_m = Some(value),
                _ => return Err(Error::parse(location, format!("unknown header field {key:?}"))),
            }
        }
        let (n_n, n_m) = match (n_n, n_m) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::parse(location, "header must give nN and nM")),
        };
        let mut target = Vec::with_capacity(n_n);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let t: usize = line
                .parse()
                .map_err(|_| Error::parse(location, format!("line {}: expected a vertex index, found {line:?}", lineno + 2)))?;
            target.push(t);
        }
        if target.len() != n_n {
            return Err(Error::parse(location, format!("header promises {n_n} entries, file has {}", target.len())));
        }
        Self::new(target, n_m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), Some(path))
    }
}

/// Differentiable `softmax(F_N F_Mᵀ / τ)` on the tape.
pub fn soft_pmap_on_tape<T: Real>(tape: &mut Tape<T>, f_n: Var, f_m: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let scores = tape.matmul_t(f_n, false, f_m, true)?;
    let scaled = tape.scale(scores, T::lit(1.0 / tau));
    tape.softmax_rows(scaled)
}

pub fn soft_pmap<T: Real>(f_n: &Matrix<T>, f_m: &Matrix<T>, tau: f64) -> Result<SoftCorrespondence<T>> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(f_n.clone()), tape.constant(f_m.clone()));
    let pi = soft_pmap_on_tape(&mut tape, a, b, tau)?;
    Ok(SoftCorrespondence {
        pi: tape.value(pi).clone(),
        tau,
    })
}

fn check_pi_shape<T: Real>(shape: (usize, usize), basis_m: &SpectralBasis<T>, basis_n: &SpectralBasis<T>) -> Result<()> {
    let expected = (basis_n.num_vertices(), basis_m.num_vertices());
    if shape != expected || basis_m.k() != basis_n.k() {
        return Err(Error::dims(
            "point-wise map",
            format!("{}x{} with equal k", expected.0, expected.1),
            format!("{}x{} (k {} vs {})", shape.0, shape.1, basis_n.k(), basis_m.k()),
        ));
    }
    Ok(())
}

/// Differentiable `Φ_N† Π Φ_M`.
pub fn pmap_to_fmap_on_tape<T: Real>(
    tape: &mut Tape<T>,
    pi: Var,
    basis_m: &SpectralBasis<T>,
    basis_n: &SpectralBasis<T>,
) -> Result<Var> {
    check_pi_shape(tape.shape(pi), basis_m, basis_n)?;
    let phi_m = tape.constant(basis_m.eigenfunctions().clone());
    let weighted_n = tape.constant(basis_n.mass_weighted().clone());
    let moved = tape.matmul(pi, phi_m)?;
    tape.matmul_t(weighted_n, true, moved, false)
}

/// `Φ_N† Π Φ_M` for a dense soft map.
pub fn pmap_to_fmap<T: Real>(pi: &Matrix<T>, basis_m: &SpectralBasis<T>, basis_n: &SpectralBasis<T>) -> Result<Matrix<T>> {
    check_pi_shape(pi.shape(), basis_m, basis_n)?;
    let moved = pi.matmul(basis_m.eigenfunctions());
    Ok(gemm(T::one(), basis_n.mass_weighted(), true, &moved, false))
}

/// `Φ_N† Π Φ_M` for a hard map, gathering rows instead of multiplying.
pub fn hard_to_fmap<T: Real>(
    map: &HardCorrespondence,
    basis_m: &SpectralBasis<T>,
    basis_n: &SpectralBasis<T>,
) -> Result<Matrix<T>> {
    check_pi_shape((map.source_size(), map.target_size()), basis_m, basis_n)?;
    let phi_m = basis_m.eigenfunctions();
    let moved = Matrix::from_fn(map.source_size(), basis_m.k(), |i, j| phi_m[(map.targets()[i], j)]);
    Ok(gemm(T::one(), basis_n.mass_weighted(), true, &moved, false))
}

/// Row `i` of the result is the index of the row of `reference` closest to
/// row `i` of `query` in Euclidean distance, the smallest index on ties.
pub fn nearest_rows<T: Real>(query: &Matrix<T>, reference: &Matrix<T>) -> Result<Vec<usize>> {
    if query.cols() != reference.cols() {
        return Err(Error::dims("nearest neighbour features", reference.cols(), query.cols()));
    }
    if reference.rows() == 0 {
        return Err(Error::InvalidInput("nearest neighbour search over an empty set".into()));
    }
    let out = (0..query.rows())
        .map(|i| {
            let q = query.row(i);
            let mut best = (T::infinity(), 0usize);
            for j in 0..reference.rows() {
                let d: T = q
                    .iter()
                    .zip(reference.row(j))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect();
    Ok(out)
}

/// Nearest neighbour in feature space for every vertex of `N`.
pub fn nn_pmap<T: Real>(f_n: &Matrix<T>, f_m: &Matrix<T>) -> Result<HardCorrespondence> {
    HardCorrespondence::new(nearest_rows(f_n, f_m)?, f_m.rows())
}

/// Hard map from a soft one through the spectral domain: nearest rows of
/// `Φ_N (Φ_N† Π Φ_M)` among rows of `Φ_M`.
pub fn spectral_filtered_pmap<T: Real>(
    pi: &Matrix<T>,
    basis_m: &SpectralBasis<T>,
    basis_n: &SpectralBasis<T>,
) -> Result<HardCorrespondence> {
    let c = pmap_to_fmap(pi, basis_m, basis_n)?;
    let emb_n = basis_n.eigenfunctions().matmul(&c);
    HardCorrespondence::new(nearest_rows(&emb_n, basis_m.eigenfunctions())?, basis_m.num_vertices())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_two_by_two_softmax() {
        let f = Matrix::identity(2);
        let s = soft_pmap::<f64>(&f, &f, 1.0).unwrap();
        let e = std::f64::consts::E;
        let expect = Matrix::from_rows(&[vec![e / (e + 1.0), 1.0 / (e + 1.0)], vec![1.0 / (e + 1.0), e / (e + 1.0)]]);
        assert!(s.pi.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn single_target_rows_are_exactly_one() {
        let f_n = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let f_m = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]);
        let s = soft_pmap(&f_n, &f_m, 0.07).unwrap();
        assert!(s.pi.as_slice().iter().all(|&x| x == 1.0));
        assert_eq!(nn_pmap(&f_n, &f_m).unwrap().targets(), &[0, 0, 0, 0]);
    }

    #[test]
    fn nn_ties_pick_smallest_index() {
        let f_m = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0]]);
        let f_n = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(nn_pmap(&f_n, &f_m).unwrap().targets(), &[0, 0]);
        assert_eq!(nn_pmap(&f_m, &f_m).unwrap().targets(), &[0, 1, 0]);
    }

    #[test]
    fn correspondence_file_round_trip() {
        let map = HardCorrespondence::new(vec![2, 0, 1, 1], 3).unwrap();
        let mut buf = Vec::new();
        map.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#specmatch-corr v1 nN=4 nM=3\n"));
        assert_eq!(HardCorrespondence::read(&buf[..], None).unwrap(), map);
    }

    #[test]
    fn malformed_correspondence_files() {
        let bad = [
            "2\n0\n",
            "#specmatch-corr v1 nN=2\n0\n1\n",
            "#specmatch-corr v1 nN=2 nM=2\n0\n",
            "#specmatch-corr v1 nN=1 nM=2\nx\n",
            "#specmatch-corr v2 nN=1 nM=2\n0\n",
        ];
        for text in bad {
            assert!(matches!(HardCorrespondence::read(text.as_bytes(), None), Err(Error::Parse { .. })), "{text}");
        }
        let out_of_range = "#specmatch-corr v1 nN=1 nM=2\n5\n";
        assert!(matches!(
            HardCorrespondence::read(out_of_range.as_bytes(), None),
            Err(Error::IndexOutOfRange { .. })
        ));
    }
}
